//! Central finite-difference verification of backward passes.
//!
//! The operation under test is reduced to a scalar with fixed random weights,
//! `L = Σ w ⊙ op(inputs)`, and every checked input element's analytic
//! derivative is compared against `(L(x+ε) − L(x−ε)) / 2ε`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen elements per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
    /// Multiplies every backward rule; used to confirm that faults are caught.
    pub fault_scale: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            tolerance: 1e-5,
            max_per_input: None,
            seed: 0,
            fault_scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
    /// Set when a non-finite value was met.
    pub failure: Option<String>,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn grad_check<Op>(
    op: Op,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    Op: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut tape = match cfg.fault_scale {
        Some(s) => Tape::with_fault(s),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = op(&mut tape, &vars)?;
    let out_shape = tape.shape(out).to_vec();
    if !tape.value(out).all_finite() {
        return Ok(non_finite("forward output".into()));
    }
    let weights = Tensor::<f64>::uniform(&out_shape, -1.0, 1.0, &mut rng);
    let loss = tape.weighted_sum(out, weights.clone())?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = op(&mut t, &vs)?;
        Ok(t.value(o).clone())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
        failure: None,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = match grads.get(vars[i]) {
            Some(g) => g.clone(),
            None => Tensor::zeros(input.shape()),
        };
        if !analytic.all_finite() {
            return Ok(non_finite(format!("analytic gradient of input {i}")));
        }
        let elements: Vec<usize> = match cfg.max_per_input {
            Some(m) if m < input.numel() => {
                let mut idx = sample(&mut rng, input.numel(), m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..input.numel()).collect(),
        };
        for j in elements {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + cfg.eps;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - cfg.eps;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            if !fp.all_finite() || !fm.all_finite() {
                return Ok(non_finite(format!(
                    "perturbed output at input {i}, element {j}"
                )));
            }
            // Differencing before the reduction keeps untouched outputs
            // exactly cancelled instead of adding their rounding noise.
            let numeric = fp.sub(&fm)?.dot(&weights)? / (2.0 * cfg.eps);
            let err = relative_error(analytic.data()[j], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_relative_error <= cfg.tolerance;
    Ok(report)
}

fn non_finite(location: String) -> GradCheckReport {
    GradCheckReport {
        max_relative_error: f64::INFINITY,
        worst: None,
        checked: 0,
        passed: false,
        failure: Some(format!("non-finite value in {location}")),
    }
}
