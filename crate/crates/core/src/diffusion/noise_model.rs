use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{
    Activation, Checkpoint, EmbeddingRecord, ForwardCache, Matrix, NetShape, SeededRng,
};

/// Norm used for the noise-prediction residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    /// Sum of absolute residuals.
    #[default]
    L1,
    /// Sum of squared residuals.
    L2,
}

/// Hidden widths and step-embedding width for a [`NoiseModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModelArch {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for NoiseModelArch {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            embed_dim: 32,
            activation: Activation::Silu,
        }
    }
}

/// Noise predictor `eps(s, a_t, t)`.
///
/// The step `t` enters through a learned table with one row per step
/// `0..=T`, concatenated to `[s, a_t]`. All learnable values (network then
/// table) sit in one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    state_dim: usize,
    action_dim: usize,
    steps: usize,
    embed_dim: usize,
    shape: NetShape,
    params: Vec<f64>,
    norm: LossNorm,
}

/// Cached forward pass of a [`NoiseModel`] over a batch.
pub(crate) struct NoiseForward {
    cache: ForwardCache,
    ts: Vec<usize>,
}

impl NoiseForward {
    pub(crate) fn output(&self) -> &Matrix {
        self.cache.output()
    }
}

impl NoiseModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        steps: usize,
        arch: &NoiseModelArch,
        norm: LossNorm,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || steps == 0 {
            return Err(Error::config("noise model dims and step count must be positive"));
        }
        let mut widths = vec![state_dim + action_dim + arch.embed_dim];
        widths.extend_from_slice(&arch.hidden);
        widths.push(action_dim);
        let shape = NetShape::new(widths, arch.activation)?;
        let mut params = shape.init_params(rng);
        let table_len = (steps + 1) * arch.embed_dim;
        params.extend((0..table_len).map(|_| rng.normal()));
        Ok(Self {
            state_dim,
            action_dim,
            steps,
            embed_dim: arch.embed_dim,
            shape,
            params,
            norm,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Largest step the embedding table covers.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn norm(&self) -> LossNorm {
        self.norm
    }

    pub fn set_norm(&mut self, norm: LossNorm) {
        self.norm = norm;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same architecture with a different parameter vector (e.g. an EMA
    /// shadow).
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::invalid("parameter count does not match noise model"));
        }
        let mut out = self.clone();
        out.params.copy_from_slice(params);
        Ok(out)
    }

    fn net_len(&self) -> usize {
        self.shape.num_params()
    }

    fn embedding(&self, t: usize) -> &[f64] {
        let off = self.net_len() + t * self.embed_dim;
        &self.params[off..off + self.embed_dim]
    }

    fn check_batch(&self, states: &Matrix, actions: &Matrix, ts: &[usize]) -> Result<()> {
        if states.cols() != self.state_dim || actions.cols() != self.action_dim {
            return Err(Error::invalid(format!(
                "noise model expects state dim {} and action dim {}, got {} and {}",
                self.state_dim,
                self.action_dim,
                states.cols(),
                actions.cols()
            )));
        }
        if states.rows() != actions.rows() || ts.len() != states.rows() {
            return Err(Error::invalid("states, actions and steps have different lengths"));
        }
        if let Some(&t) = ts.iter().find(|&&t| t > self.steps) {
            return Err(Error::invalid(format!(
                "diffusion step {t} outside 0..={}",
                self.steps
            )));
        }
        Ok(())
    }

    fn inputs(&self, states: &Matrix, actions: &Matrix, ts: &[usize]) -> Matrix {
        let width = self.shape.input_dim();
        let mut x = Matrix::zeros(states.rows(), width);
        for (r, &t) in ts.iter().enumerate() {
            let row = x.row_mut(r);
            row[..self.state_dim].copy_from_slice(states.row(r));
            row[self.state_dim..self.state_dim + self.action_dim].copy_from_slice(actions.row(r));
            row[self.state_dim + self.action_dim..].copy_from_slice(self.embedding(t));
        }
        x
    }

    /// Predicted noise for one `(s, a_t, t)`.
    pub fn predict(&self, s: &[f64], a_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let states = Matrix::from_vec(1, s.len(), s.to_vec())?;
        let actions = Matrix::from_vec(1, a_t.len(), a_t.to_vec())?;
        Ok(self.predict_batch(&states, &actions, &[t])?.into_vec())
    }

    pub fn predict_batch(&self, states: &Matrix, actions: &Matrix, ts: &[usize]) -> Result<Matrix> {
        self.check_batch(states, actions, ts)?;
        let x = self.inputs(states, actions, ts);
        self.shape.forward(&self.params[..self.net_len()], &x)
    }

    /// Batched prediction with every row at the same step.
    pub fn predict_at(&self, states: &Matrix, actions: &Matrix, t: usize) -> Result<Matrix> {
        let ts = vec![t; states.rows()];
        self.predict_batch(states, actions, &ts)
    }

    pub(crate) fn forward_cached(
        &self,
        states: &Matrix,
        actions: &Matrix,
        ts: &[usize],
    ) -> Result<NoiseForward> {
        self.check_batch(states, actions, ts)?;
        let x = self.inputs(states, actions, ts);
        let cache = self.shape.forward_cached(&self.params[..self.net_len()], &x)?;
        Ok(NoiseForward {
            cache,
            ts: ts.to_vec(),
        })
    }

    /// Adds the parameter gradient of `upstream · output` into `grad`.
    pub(crate) fn backward(
        &self,
        fwd: &NoiseForward,
        upstream: &Matrix,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer does not match noise model"));
        }
        let n_net = self.net_len();
        let (net_grad, table_grad) = grad.split_at_mut(n_net);
        let dx = self
            .shape
            .backward(&self.params[..n_net], &fwd.cache, upstream, net_grad)?;
        let off = self.state_dim + self.action_dim;
        for (r, &t) in fwd.ts.iter().enumerate() {
            let g = &mut table_grad[t * self.embed_dim..(t + 1) * self.embed_dim];
            for (gi, d) in g.iter_mut().zip(&dx.row(r)[off..]) {
                *gi += d;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let n_net = self.net_len();
        let mut ckpt = Checkpoint::new("denoiser", self.shape.clone(), self.params[..n_net].to_vec());
        ckpt.embedding = Some(EmbeddingRecord {
            rows: self.steps + 1,
            width: self.embed_dim,
            values: self.params[n_net..].to_vec(),
        });
        ckpt.meta.insert("state_dim".into(), self.state_dim.into());
        ckpt.meta.insert("action_dim".into(), self.action_dim.into());
        ckpt.meta.insert(
            "loss_norm".into(),
            serde_json::to_value(self.norm).expect("norm serializes"),
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_role("denoiser")?;
        let emb = ckpt
            .embedding
            .as_ref()
            .ok_or_else(|| Error::invalid("denoiser checkpoint has no step embedding"))?;
        if emb.rows == 0 || emb.values.len() != emb.rows * emb.width {
            return Err(Error::invalid("malformed step embedding table"));
        }
        let state_dim = ckpt.meta_usize("state_dim")?;
        let action_dim = ckpt.meta_usize("action_dim")?;
        let norm: LossNorm = match ckpt.meta.get("loss_norm") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::invalid(format!("bad loss_norm: {e}")))?,
            None => LossNorm::default(),
        };
        if ckpt.shape.input_dim() != state_dim + action_dim + emb.width
            || ckpt.shape.output_dim() != action_dim
        {
            return Err(Error::invalid("denoiser checkpoint dims are inconsistent"));
        }
        let mut params = ckpt.params.clone();
        params.extend_from_slice(&emb.values);
        Ok(Self {
            state_dim,
            action_dim,
            steps: emb.rows - 1,
            embed_dim: emb.width,
            shape: ckpt.shape.clone(),
            params,
            norm,
        })
    }
}
