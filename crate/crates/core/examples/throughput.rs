use std::time::Instant;

use smile_core::mathcore::{Activation, Matrix, NetShape, SeededRng};

fn main() {
    let width: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(256);
    let shape = NetShape::new(vec![38, width, width, width, 2], Activation::Silu).unwrap();
    let mut rng = SeededRng::new(0);
    let params = shape.init_params(&mut rng);
    let x = Matrix::from_vec(128, 38, rng.gaussian(128 * 38)).unwrap();
    let up = Matrix::from_vec(128, 2, rng.gaussian(256)).unwrap();
    let mut grad = vec![0.0; params.len()];
    let reps = 200;
    let start = Instant::now();
    for _ in 0..reps {
        let cache = shape.forward_cached(&params, &x).unwrap();
        shape.backward(&params, &cache, &up, &mut grad).unwrap();
    }
    let el = start.elapsed().as_secs_f64() / reps as f64;
    let flops = 6.0 * shape.num_params() as f64 * 128.0;
    println!("width {width}: {:.3} ms per fwd+bwd batch of 128, {:.1} GFLOP/s", el * 1e3, flops / el / 1e9);
}
