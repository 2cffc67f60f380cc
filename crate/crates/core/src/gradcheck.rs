//! Central finite-difference gradient checking.
//!
//! Everything here uses forward evaluation only, so it can vouch for the
//! tape's backward rules without sharing any code with them.

use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::{Tape, Tensor, Var};

/// Gradients smaller than this are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, index: usize, step: f64) -> f64 {
    let bump = |delta: f64| {
        let mut data = x.to_vec();
        data[index] += delta;
        f(&Tensor::new(x.shape().to_vec(), data).expect("same shape"))
    };
    (bump(step) - bump(-step)) / (2.0 * step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(input, element, analytic, numeric)` for every checked coordinate.
    pub samples: Vec<(usize, usize, f64, f64)>,
    pub max_relative_error: f64,
    /// Coordinates passed over because `x ± step` crossed a `relu`/`abs`
    /// kink, where a finite difference does not estimate the derivative.
    pub skipped: usize,
}

/// Compares tape gradients of a scalar-valued graph with central differences.
///
/// `build` receives one leaf per input and returns a scalar node. For each
/// input, `points` elements (or all, if fewer) are checked, drawn at random
/// without replacement. Elements whose perturbation changes the graph's
/// kink pattern are replaced by fresh draws.
pub fn check<R: Rng>(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    points: usize,
    step: f64,
    rng: &mut R,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).expect("scalar output");
    let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).expect("leaf")).collect();
    let pattern = tape.kink_pattern();

    let eval = |which: usize, x: &Tensor| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| tape.constant(if i == which { x.clone() } else { t.clone() }))
            .collect();
        let out = build(&mut tape, &vars);
        (tape.value(out).item().expect("scalar output"), tape.kink_pattern() == pattern)
    };

    let mut samples = Vec::new();
    let mut skipped = 0;
    let mut max_relative_error: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let n = input.len();
        let mut accepted = 0;
        for index in sample(rng, n, n) {
            if accepted == points {
                break;
            }
            let bump = |delta: f64| {
                let mut data = input.to_vec();
                data[index] += delta;
                eval(which, &Tensor::new(input.shape().to_vec(), data).expect("same shape"))
            };
            let ((plus, smooth_plus), (minus, smooth_minus)) = (bump(step), bump(-step));
            if !(smooth_plus && smooth_minus) {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads[which].data()[index];
            max_relative_error = max_relative_error.max(relative_error(analytic, numeric));
            samples.push((which, index, analytic, numeric));
            accepted += 1;
        }
    }
    GradCheckReport {
        samples,
        max_relative_error,
        skipped,
    }
}
