//! Central finite-difference verification of tape gradients.
//!
//! The numeric side only ever evaluates the forward function; it shares no
//! code with any backward closure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference half step.
    pub step: f64,
    /// Probe coordinates per input tensor.
    pub probes_per_input: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            probes_per_input: 20,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_error(&self, floor: f64) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / denom
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub floor: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes
            .iter()
            .map(|p| p.rel_error(self.floor))
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| {
            a.rel_error(self.floor)
                .partial_cmp(&b.rel_error(self.floor))
                .expect("finite errors")
        })
    }

    /// Fraction of probes whose analytic gradient is not exactly zero.
    pub fn nonzero_fraction(&self) -> f64 {
        let nz = self.probes.iter().filter(|p| p.analytic != 0.0).count();
        nz as f64 / self.probes.len().max(1) as f64
    }
}

/// Compares `d f / d inputs` from the tape against central differences.
///
/// `f` must push a one-element output and be a pure function of the
/// input values.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::shape("gradient check needs a scalar output"));
        }
        Ok(v.data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut probes = Vec::new();
    for (input, t) in inputs.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let zero = Tensor::zeros(t.shape().to_vec());
        let analytic = grads.get(vars[input]).unwrap_or(&zero);
        let count = opts.probes_per_input.min(t.len());
        let mut picked: Vec<usize> = if count == t.len() {
            (0..t.len()).collect()
        } else {
            (0..count).map(|_| rng.random_range(0..t.len())).collect()
        };
        picked.sort_unstable();
        for index in picked {
            let orig = t.data()[index];
            work[input].data_mut()[index] = orig + opts.step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - opts.step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;
            probes.push(Probe {
                input,
                index,
                analytic: analytic.data()[index],
                numeric: (plus - minus) / (2.0 * opts.step),
            });
        }
    }
    Ok(GradCheckReport {
        probes,
        floor: opts.floor,
    })
}
