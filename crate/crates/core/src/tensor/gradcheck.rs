//! Central-difference gradient checking against the tape's backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Coordinates sampled per input (all of them when the input is smaller).
    pub samples_per_input: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples_per_input: 32,
            step: 1e-5,
            seed: 0,
        }
    }
}

fn eval<F, E>(f: &F, inputs: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.scalar(loss))
}

/// Maximum relative error `|a - n| / max(τ, |a| + |n|)` between analytic
/// gradients and central differences, over sampled coordinates of every input.
///
/// Rounding in the two loss evaluations leaves about `ε·|L|/h` of noise in the
/// difference quotient, so the floor is `τ = 1e-6·max(1, |L|)`: coordinates
/// whose gradient is buried in that noise are compared absolutely.
///
/// `f` builds a scalar loss from leaves holding `inputs`; it is rebuilt for
/// every perturbation.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let floor = 1e-6 * tape.scalar(loss).abs().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let n = inputs[k].numel();
        let analytic: Vec<f64> = match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; n],
        };
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGradient { input: k }.into());
        }
        let coords: Vec<usize> = if n <= opts.samples_per_input {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples_per_input).into_vec()
        };
        for j in coords {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + opts.step;
            let up = eval(&f, &probe)?;
            probe[k].data_mut()[j] = orig - opts.step;
            let down = eval(&f, &probe)?;
            probe[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            if !numeric.is_finite() {
                return Err(TensorError::NonFiniteGradient { input: k }.into());
            }
            let a = analytic[j];
            let err = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
