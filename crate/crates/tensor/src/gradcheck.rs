use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst probe.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst probe.
    pub worst_values: (f64, f64),
    pub probes: usize,
}

fn evaluate<F>(params: &ParamStore, forward: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let loss = forward(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares tape gradients against central differences at `probes`
/// uniformly drawn parameter coordinates and returns the worst relative
/// error `|a - b| / max(|a|, |b|, 1e-8)`.
///
/// `forward` receives a fresh tape and the bound parameter handles (in
/// store order) and must return a scalar loss.
pub fn finite_diff_check<F>(
    params: &ParamStore,
    forward: F,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let total = params.num_values();
    if total == 0 {
        return Err(TensorError::InvalidArgument("no parameters to probe".into()));
    }
    let first = evaluate(params, &forward)?;
    let second = evaluate(params, &forward)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let loss = forward(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe_params = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        probes,
    };
    for _ in 0..probes {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= params.tensors()[which].len() {
            flat -= params.tensors()[which].len();
            which += 1;
        }
        let analytic = grads.as_slice()[which].data()[flat];
        let orig = params.tensors()[which].data()[flat];

        probe_params.tensors_mut()[which].data_mut()[flat] = orig + h;
        let plus = evaluate(&probe_params, &forward)?;
        probe_params.tensors_mut()[which].data_mut()[flat] = orig - h;
        let minus = evaluate(&probe_params, &forward)?;
        probe_params.tensors_mut()[which].data_mut()[flat] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            let id = params.ids().nth(which).expect("probe index in range");
            report.worst = Some((params.name(id).to_string(), flat));
            report.worst_values = (analytic, numeric);
        }
    }
    Ok(report)
}
