#![allow(dead_code)]

use ddcd::autograd::{Tape, Var};
use ddcd::nn::{Binding, Mode, ParamStore};
use ddcd::{ModelConfig, Network, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

/// Desk network at f64 with seeded parameters.
pub fn desk64() -> (Network<f64>, ParamStore<f64>) {
    let net = Network::<f64>::new(ModelConfig::desk()).unwrap();
    let store = net.init_params(1);
    (net, store)
}

/// Binds `names` to existing tape nodes so gradient checks can perturb parameters.
pub fn bind_with<'s>(store: &'s ParamStore<f64>, names: &[&str], vars: &[Var]) -> Binding<'s, f64> {
    let mut b = Binding::new(store, Mode::Train, false);
    for (n, &v) in names.iter().zip(vars) {
        b.preset(*n, v);
    }
    b
}

/// Scalar probe `Σ R ⊙ y` with a fixed random `R`.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let r = randn(tape.value(y).shape(), seed);
    tape.weighted_sum(y, &r).unwrap()
}
