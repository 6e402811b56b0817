//! Central finite-difference checks of tape gradients.
//!
//! The numeric side re-evaluates the forward closure with each parameter
//! entry nudged by ±h and never touches the backward rules. Values that
//! entered the base pass through a detach point are replayed unchanged, so
//! the numeric derivative is the partial derivative with the detached
//! branch held constant, which is what stop-gradient promises.
//!
//! Entries whose ±h evaluations flip any non-smooth choice (a relu side, a
//! max-pool winner, a nearest neighbor) relative to the base pass sit on a
//! kink; they are skipped and counted instead of compared.

mod suite;

pub use suite::{run_suite, toy_config, CaseReport};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Precision, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct FdConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub rel_tol: f64,
    /// Magnitude below which errors are measured against this floor
    /// instead of the gradient itself.
    pub floor: f64,
    /// Entries checked per parameter; larger tensors are subsampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            floor: 1e-5,
            max_entries: 64,
            seed: 0,
        }
    }
}

/// Outcome of checking one parameter tensor.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub name: String,
    pub checked: usize,
    /// Entries skipped because the stencil crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdReport {
    pub fn passed(&self, cfg: &FdConfig) -> bool {
        self.checked > 0 && self.max_rel_error <= cfg.rel_tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks the gradient of a scalar-valued closure with respect to `ids`.
///
/// The store is perturbed in place and restored before returning.
pub fn check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    cfg: &FdConfig,
    f: F,
) -> Result<Vec<FdReport>>
where
    F: for<'t> Fn(&Bound<'t>) -> Result<Var<'t>>,
{
    let (analytic, log, base_fp) = {
        let tape = Tape::with_precision(Precision::F64).tracking_selections();
        let bound = Bound::new(&tape, store);
        let out = f(&bound)?;
        let fp = tape.selection_fingerprint();
        let grads = tape.backward(out)?;
        (bound.gradients(&grads), tape.detached_values(), fp)
    };

    let eval = |store: &ParamStore| -> Result<(f64, bool)> {
        let tape = Tape::replaying(Precision::F64, log.clone()).tracking_selections();
        let bound = Bound::new(&tape, store);
        let v = f(&bound)?.item()?;
        Ok((v, tape.selection_fingerprint() == base_fp))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(ids.len());
    for &id in ids {
        let numel = store.get(id).numel();
        let mut entries: Vec<usize> = if numel > cfg.max_entries {
            sample(&mut rng, numel, cfg.max_entries).into_vec()
        } else {
            (0..numel).collect()
        };
        entries.sort_unstable();
        let mut report = FdReport {
            name: store.name(id).to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for e in entries {
            let orig = store.get(id).data()[e];
            store.get_mut(id).data_mut()[e] = orig + cfg.step;
            let plus = eval(store);
            store.get_mut(id).data_mut()[e] = orig - cfg.step;
            let minus = eval(store);
            store.get_mut(id).data_mut()[e] = orig;
            let ((plus, smooth_p), (minus, smooth_m)) = (plus?, minus?);
            if !(smooth_p && smooth_m) {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[id.index()].data()[e];
            let err = relative_error(a, numeric, cfg.floor);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("finite difference of {}", report.name)));
            }
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_entry = e;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
