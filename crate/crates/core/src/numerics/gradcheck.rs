use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Gradients, ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per parameter array; `None` probes all of them.
    pub probes_per_array: Option<usize>,
    pub seed: u64,
    /// Denominator floor so near-zero gradients compare absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            probes_per_array: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|numeric|, floor)` over probes.
    pub max_rel_error: f64,
    pub worst_array: Option<String>,
    pub worst_index: usize,
    pub probes: usize,
    /// Probes dropped because they straddle a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares `analytic` gradients against central finite differences of `value`.
pub fn gradient_check(
    params: &ParamSet,
    value: impl Fn(&ParamSet) -> Result<f64>,
    analytic: impl Fn(&ParamSet) -> Result<Gradients>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    run(params, |p| Ok((value(p)?, 0)), analytic, config)
}

/// Like [`gradient_check`] for piecewise-smooth graphs: `value` also returns a
/// fingerprint of the active linear pieces (see [`Tape::relu_pattern`]). A
/// probe whose ± evaluations leave the base point's piece straddles a kink,
/// where no derivative exists; it is counted in `skipped` instead.
pub fn gradient_check_piecewise(
    params: &ParamSet,
    value: impl Fn(&ParamSet) -> Result<(f64, u64)>,
    analytic: impl Fn(&ParamSet) -> Result<Gradients>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    run(params, value, analytic, config)
}

fn run(
    params: &ParamSet,
    value: impl Fn(&ParamSet) -> Result<(f64, u64)>,
    analytic: impl Fn(&ParamSet) -> Result<Gradients>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let grads = analytic(params)?;
    let (_, base) = value(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_array: None,
        worst_index: 0,
        probes: 0,
        skipped: 0,
    };
    for id in 0..params.len() {
        let n = params.by_id(id).len();
        let coords: Vec<usize> = match config.probes_per_array {
            Some(k) if k < n => {
                let mut picked = index::sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.by_id(id).data()[i];
            probe.by_id_mut(id).data_mut()[i] = orig + config.step;
            let (plus, p_plus) = value(&probe)?;
            probe.by_id_mut(id).data_mut()[i] = orig - config.step;
            let (minus, p_minus) = value(&probe)?;
            probe.by_id_mut(id).data_mut()[i] = orig;
            if p_plus != base || p_minus != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = grads.by_id(id).data()[i];
            let err = (a - numeric).abs() / numeric.abs().max(config.floor);
            report.probes += 1;
            if report.worst_array.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_array = Some(params.names()[id].clone());
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// [`gradient_check`] for a scalar graph built on a fresh tape.
pub fn check_graph(
    params: &ParamSet,
    graph: impl Fn(&mut Tape) -> Result<Var>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    gradient_check_piecewise(
        params,
        |p| {
            let mut tape = Tape::new(p);
            let out = graph(&mut tape)?;
            Ok((tape.value(out).sum(), tape.relu_pattern()))
        },
        |p| {
            let mut tape = Tape::new(p);
            let out = graph(&mut tape)?;
            tape.backward(out, None)
        },
        config,
    )
}
