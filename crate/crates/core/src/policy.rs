//! The one-step action generator and a behavior-cloning baseline.

use crate::batch::Batch;
use crate::diffusion::{posterior_mean, DiffusionSchedule, LossAndGrad, NoiseDraws, NoiseModel};
use crate::error::{Error, Result};
use crate::mathcore::{Activation, Checkpoint, FeedForwardNet, Matrix, NetShape, SeededRng};

/// Anything that maps a state to an action.
pub trait Actor {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>>;
}

/// Box bounds on actions, applied when acting in an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
            return Err(Error::config("action bounds must pair up with low <= high"));
        }
        Ok(Self { low, high })
    }

    pub fn clip(&self, a: &mut [f64]) {
        for ((v, l), h) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// Deterministic state-to-action network trained through the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorPolicy {
    net: FeedForwardNet,
    bounds: ActionBounds,
}

impl GeneratorPolicy {
    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        bounds: ActionBounds,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let shape = mlp_shape(state_dim, hidden, bounds.low.len(), activation)?;
        Ok(Self {
            net: FeedForwardNet::new(shape, rng),
            bounds,
        })
    }

    pub fn from_net(net: FeedForwardNet, bounds: ActionBounds) -> Result<Self> {
        if net.shape().output_dim() != bounds.low.len() {
            return Err(Error::invalid("policy output dim does not match action bounds"));
        }
        Ok(Self { net, bounds })
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn state_dim(&self) -> usize {
        self.net.shape().input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.shape().output_dim()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let net = FeedForwardNet::from_params(self.net.shape().clone(), params.to_vec())?;
        Ok(Self {
            net,
            bounds: self.bounds.clone(),
        })
    }

    /// Unclipped action, one forward pass.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(s)
    }

    pub fn act_batch(&self, states: &Matrix) -> Result<Matrix> {
        self.net.forward_batch(states)
    }

    /// Action clipped to the environment bounds.
    pub fn act_clipped(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.act(s)?;
        self.bounds.clip(&mut a);
        Ok(a)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        net_checkpoint("generator", &self.net, &self.bounds)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_role("generator")?;
        let (net, bounds) = net_from_checkpoint(ckpt)?;
        Self::from_net(net, bounds)
    }
}

impl Actor for GeneratorPolicy {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.act_clipped(s)
    }
}

/// Mean over the batch of `||mu_t(a_t, a0') - mu_t(a_t, a0_hat)||^2` with
/// `a0' = policy(s)` and `a0_hat = a_t - sigma_t eps_model(s, a_t, t)`.
///
/// The noise model is only read: the returned gradient covers the policy's
/// parameters alone.
pub fn policy_loss(
    policy: &GeneratorPolicy,
    model: &NoiseModel,
    batch: &Batch,
    sched: &DiffusionSchedule,
    rng: &mut SeededRng,
) -> Result<LossAndGrad> {
    batch.require_non_empty()?;
    let draws = NoiseDraws::sample(batch.len(), policy.action_dim(), sched, rng);
    let mut grad = vec![0.0; policy.params().len()];
    let loss = policy_loss_with(policy, model, batch, sched, &draws, 1.0, &mut grad)?;
    Ok(LossAndGrad { loss, grad })
}

/// [`policy_loss`] for given draws; adds the gradient of `scale * loss` into
/// `grad` and returns the unscaled loss.
pub fn policy_loss_with(
    policy: &GeneratorPolicy,
    model: &NoiseModel,
    batch: &Batch,
    sched: &DiffusionSchedule,
    draws: &NoiseDraws,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    batch.require_non_empty()?;
    if draws.ts.len() != batch.len() || draws.eps.rows() != batch.len() {
        return Err(Error::invalid("noise draws do not match batch size"));
    }
    let noisy = draws.diffuse(&batch.actions, sched);
    let eps_hat = model.predict_batch(&batch.states, &noisy, &draws.ts)?;
    let shape = policy.net.shape();
    let cache = shape.forward_cached(policy.params(), &batch.states)?;
    let generated = cache.output();
    let n = batch.len() as f64;
    let mut upstream = Matrix::zeros(generated.rows(), generated.cols());
    let mut total = 0.0;
    for (r, &t) in draws.ts.iter().enumerate() {
        let sigma = sched.sigma(t);
        let a_t = noisy.row(r);
        let a0_hat: Vec<f64> = a_t
            .iter()
            .zip(eps_hat.row(r))
            .map(|(x, e)| x - sigma * e)
            .collect();
        let target = posterior_mean(a_t, &a0_hat, t, sched)?;
        let mean = posterior_mean(a_t, generated.row(r), t, sched)?;
        // d mu_t / d a0' = beta_t^2 / sigma_t^2 per coordinate.
        let coef = sched.posterior_coef(t);
        for ((u, m), y) in upstream.row_mut(r).iter_mut().zip(&mean).zip(&target) {
            let d = m - y;
            total += d * d;
            *u = 2.0 * d * coef * scale / n;
        }
    }
    shape.backward(policy.params(), &cache, &upstream, grad)?;
    Ok(total / n)
}

/// Plain behavior cloning with a squared-error loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BcBaseline {
    net: FeedForwardNet,
    bounds: ActionBounds,
}

impl BcBaseline {
    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        bounds: ActionBounds,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let shape = mlp_shape(state_dim, hidden, bounds.low.len(), activation)?;
        Ok(Self {
            net: FeedForwardNet::new(shape, rng),
            bounds,
        })
    }

    pub fn from_net(net: FeedForwardNet, bounds: ActionBounds) -> Result<Self> {
        if net.shape().output_dim() != bounds.low.len() {
            return Err(Error::invalid("baseline output dim does not match action bounds"));
        }
        Ok(Self { net, bounds })
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let net = FeedForwardNet::from_params(self.net.shape().clone(), params.to_vec())?;
        Ok(Self {
            net,
            bounds: self.bounds.clone(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        net_checkpoint("bc", &self.net, &self.bounds)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_role("bc")?;
        let (net, bounds) = net_from_checkpoint(ckpt)?;
        Self::from_net(net, bounds)
    }
}

impl Actor for BcBaseline {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.net.forward(s)?;
        self.bounds.clip(&mut a);
        Ok(a)
    }
}

/// Batch mean of `||b(s) - a0||^2`.
pub fn bc_loss(baseline: &BcBaseline, batch: &Batch) -> Result<LossAndGrad> {
    batch.require_non_empty()?;
    let shape = baseline.net.shape();
    let cache = shape.forward_cached(baseline.params(), &batch.states)?;
    let pred = cache.output();
    if pred.cols() != batch.actions.cols() {
        return Err(Error::invalid("baseline output dim does not match batch actions"));
    }
    let n = batch.len() as f64;
    let mut upstream = Matrix::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    for ((u, p), a) in upstream
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(batch.actions.as_slice())
    {
        let d = p - a;
        total += d * d;
        *u = 2.0 * d / n;
    }
    let mut grad = vec![0.0; baseline.params().len()];
    shape.backward(baseline.params(), &cache, &upstream, &mut grad)?;
    Ok(LossAndGrad {
        loss: total / n,
        grad,
    })
}

fn mlp_shape(input: usize, hidden: &[usize], output: usize, act: Activation) -> Result<NetShape> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(output);
    NetShape::new(widths, act)
}

fn net_checkpoint(role: &str, net: &FeedForwardNet, bounds: &ActionBounds) -> Checkpoint {
    let mut ckpt = Checkpoint::new(role, net.shape().clone(), net.params().to_vec());
    ckpt.meta.insert("action_low".into(), bounds.low.clone().into());
    ckpt.meta.insert("action_high".into(), bounds.high.clone().into());
    ckpt
}

fn net_from_checkpoint(ckpt: &Checkpoint) -> Result<(FeedForwardNet, ActionBounds)> {
    let net = FeedForwardNet::from_params(ckpt.shape.clone(), ckpt.params.clone())?;
    let bounds = ActionBounds::new(ckpt.meta_f64_vec("action_low")?, ckpt.meta_f64_vec("action_high")?)?;
    Ok((net, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{LossNorm, NoiseModelArch};
    use proptest::prelude::*;

    fn bounds(d: usize) -> ActionBounds {
        ActionBounds::new(vec![-1.0; d], vec![1.0; d]).unwrap()
    }

    fn policy() -> GeneratorPolicy {
        GeneratorPolicy::new(3, &[8, 8], Activation::Silu, bounds(2), &mut SeededRng::new(1)).unwrap()
    }

    fn model() -> NoiseModel {
        let arch = NoiseModelArch {
            hidden: vec![8],
            embed_dim: 2,
            activation: Activation::Silu,
        };
        NoiseModel::new(3, 2, 10, &arch, LossNorm::L1, &mut SeededRng::new(2)).unwrap()
    }

    fn sched() -> DiffusionSchedule {
        DiffusionSchedule::new(10, 0.05, 0.6).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = SeededRng::new(seed);
        let s = Matrix::from_vec(n, 3, rng.gaussian(3 * n)).unwrap();
        let a = Matrix::from_vec(n, 2, rng.gaussian(2 * n)).unwrap();
        Batch::new(s, a).unwrap()
    }

    #[test]
    fn zero_net_acts_with_bias() {
        let shape = NetShape::new(vec![3, 4, 2], Activation::Silu).unwrap();
        let mut net = FeedForwardNet::zeros(shape);
        net.set_bias(1, &[0.3, -0.2]).unwrap();
        let p = GeneratorPolicy::from_net(net, bounds(2)).unwrap();
        for s in [[0.0; 3], [1.0, 2.0, 3.0]] {
            assert_eq!(p.act(&s).unwrap(), vec![0.3, -0.2]);
        }
    }

    #[test]
    fn act_is_deterministic_and_checks_dim() {
        let p = policy();
        assert_eq!(p.act(&[0.1, 0.2, 0.3]).unwrap(), p.act(&[0.1, 0.2, 0.3]).unwrap());
        assert!(matches!(p.act(&[0.1]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn clipping_only_at_execution() {
        let shape = NetShape::new(vec![3, 2], Activation::Silu).unwrap();
        let mut net = FeedForwardNet::zeros(shape);
        net.set_bias(0, &[3.0, -3.0]).unwrap();
        let p = GeneratorPolicy::from_net(net, bounds(2)).unwrap();
        assert_eq!(p.act(&[0.0; 3]).unwrap(), vec![3.0, -3.0]);
        assert_eq!(p.act_clipped(&[0.0; 3]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn loss_is_zero_when_policy_matches_denoised_action() {
        // One example; pick the policy bias so that it outputs exactly a0_hat.
        let m = model();
        let s = sched();
        let b = Batch::from_pairs(&[(vec![0.2, -0.1, 0.5], vec![0.4, -0.6])]).unwrap();
        let draws = NoiseDraws {
            ts: vec![4],
            eps: Matrix::from_rows(&[[0.3, 1.2]]).unwrap(),
        };
        let a_t = draws.diffuse(&b.actions, &s);
        let eps = m.predict(b.states.row(0), a_t.row(0), 4).unwrap();
        let a0_hat: Vec<f64> = a_t.row(0).iter().zip(&eps).map(|(x, e)| x - s.sigma(4) * e).collect();
        let mut net = FeedForwardNet::zeros(NetShape::new(vec![3, 2], Activation::Silu).unwrap());
        net.set_bias(0, &a0_hat).unwrap();
        let p = GeneratorPolicy::from_net(net, bounds(2)).unwrap();
        let mut grad = vec![0.0; p.params().len()];
        let loss = policy_loss_with(&p, &m, &b, &s, &draws, 1.0, &mut grad).unwrap();
        assert!(loss < 1e-28, "{loss}");
    }

    #[test]
    fn loss_reduces_to_weighted_residual() {
        let m = model();
        let p = policy();
        let s = sched();
        let b = batch(64, 5);
        let draws = NoiseDraws::sample(64, 2, &s, &mut SeededRng::new(6));
        let mut grad = vec![0.0; p.params().len()];
        let loss = policy_loss_with(&p, &m, &b, &s, &draws, 1.0, &mut grad).unwrap();

        let a_t = draws.diffuse(&b.actions, &s);
        let eps = m.predict_batch(&b.states, &a_t, &draws.ts).unwrap();
        let gen = p.act_batch(&b.states).unwrap();
        let mut reduced = 0.0;
        for (r, &t) in draws.ts.iter().enumerate() {
            let w = (s.beta(t).powi(2) / s.sigma(t).powi(2)).powi(2);
            for c in 0..2 {
                let a0_hat = a_t.row(r)[c] - s.sigma(t) * eps.row(r)[c];
                reduced += w * (gen.row(r)[c] - a0_hat).powi(2);
            }
        }
        reduced /= 64.0;
        assert!((loss - reduced).abs() < 1e-10, "{loss} vs {reduced}");
    }

    #[test]
    fn hand_evaluated_single_example() {
        let m = model();
        let p = policy();
        let s = sched();
        let st = [0.3, -0.7, 1.1];
        let a0 = [0.5, 0.25];
        let e = [-0.4, 0.9];
        let t = 7;
        let b = Batch::from_pairs(&[(st.to_vec(), a0.to_vec())]).unwrap();
        let draws = NoiseDraws {
            ts: vec![t],
            eps: Matrix::from_rows(&[e]).unwrap(),
        };
        let a_t: Vec<f64> = a0.iter().zip(&e).map(|(a, x)| a + s.sigma(t) * x).collect();
        let eh = m.predict(&st, &a_t, t).unwrap();
        let gen = p.act(&st).unwrap();
        let (s_prev2, beta2, sig2) = (s.sigma(t - 1).powi(2), s.beta(t).powi(2), s.sigma(t).powi(2));
        let mut expected = 0.0;
        for c in 0..2 {
            let a0_hat = a_t[c] - s.sigma(t) * eh[c];
            let mu_gen = (s_prev2 * a_t[c] + beta2 * gen[c]) / sig2;
            let mu_hat = (s_prev2 * a_t[c] + beta2 * a0_hat) / sig2;
            expected += (mu_gen - mu_hat).powi(2);
        }
        let mut grad = vec![0.0; p.params().len()];
        let loss = policy_loss_with(&p, &m, &b, &s, &draws, 1.0, &mut grad).unwrap();
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let m = model();
        let p = policy();
        let s = sched();
        let b = batch(4, 9);
        let draws = NoiseDraws::sample(4, 2, &s, &mut SeededRng::new(10));
        let mut grad = vec![0.0; p.params().len()];
        policy_loss_with(&p, &m, &b, &s, &draws, 1.0, &mut grad).unwrap();
        let h = 1e-5;
        let mut scratch = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let mut q = p.clone();
            q.params_mut()[i] += h;
            let up = policy_loss_with(&q, &m, &b, &s, &draws, 1.0, &mut scratch).unwrap();
            q.params_mut()[i] -= 2.0 * h;
            let down = policy_loss_with(&q, &m, &b, &s, &draws, 1.0, &mut scratch).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * grad[i].abs().max(1e-5), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn policy_loss_leaves_noise_model_untouched() {
        let m = model();
        let before = m.params().to_vec();
        let p = policy();
        let out = policy_loss(&p, &m, &batch(16, 3), &sched(), &mut SeededRng::new(4)).unwrap();
        assert_eq!(out.grad.len(), p.params().len());
        assert_eq!(m.params(), before.as_slice());
    }

    #[test]
    fn empty_batches_rejected() {
        let empty = Batch::new(Matrix::zeros(0, 3), Matrix::zeros(0, 2)).unwrap();
        assert!(policy_loss(&policy(), &model(), &empty, &sched(), &mut SeededRng::new(0)).is_err());
        let bc = BcBaseline::new(3, &[4], Activation::Silu, bounds(2), &mut SeededRng::new(0)).unwrap();
        assert!(matches!(bc_loss(&bc, &empty), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bc_loss_arithmetic() {
        let shape = NetShape::new(vec![1, 1], Activation::Silu).unwrap();
        let mut net = FeedForwardNet::zeros(shape);
        net.set_bias(0, &[1.0]).unwrap();
        let bc = BcBaseline::from_net(net, ActionBounds::new(vec![-5.0], vec![5.0]).unwrap()).unwrap();
        let b = Batch::from_pairs(&[(vec![0.0], vec![0.0]), (vec![1.0], vec![2.0])]).unwrap();
        assert_eq!(bc_loss(&bc, &b).unwrap().loss, 1.0);
        let perfect = Batch::from_pairs(&[(vec![0.0], vec![1.0])]).unwrap();
        assert_eq!(bc_loss(&bc, &perfect).unwrap().loss, 0.0);
    }

    #[test]
    fn checkpoints_round_trip() {
        let p = policy();
        assert_eq!(GeneratorPolicy::from_checkpoint(&p.to_checkpoint()).unwrap(), p);
        assert!(BcBaseline::from_checkpoint(&p.to_checkpoint()).is_err());
    }

    proptest! {
        // With the oracle noise (eps_hat = eps) the target is a0 itself, so the
        // loss is the posterior-weighted squared error to the dataset action.
        #[test]
        fn oracle_denoiser_gives_weighted_mse(t in 1usize..=10, a0 in -2.0f64..2.0, gen in -2.0f64..2.0, e in -3.0f64..3.0) {
            let s = sched();
            let a_t = a0 + s.sigma(t) * e;
            let a0_hat = a_t - s.sigma(t) * e;
            let lhs = (posterior_mean(&[a_t], &[gen], t, &s).unwrap()[0]
                - posterior_mean(&[a_t], &[a0_hat], t, &s).unwrap()[0]).powi(2);
            let rhs = s.posterior_coef(t).powi(2) * (gen - a0).powi(2);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
