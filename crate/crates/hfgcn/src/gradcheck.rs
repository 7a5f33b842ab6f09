//! Finite-difference verification of analytic gradients.

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Controls for [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter tensor (all coordinates when the
    /// tensor is smaller).
    pub samples_per_tensor: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples_per_tensor: 24,
            seed: 0x9d2c_5681,
        }
    }
}

/// Worst coordinate found by a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients against central differences.
///
/// `f` evaluates the scalar loss from the current store values; the caller
/// must already have populated `store` gradients for the same loss (one
/// forward + backward). Relative error per coordinate is
/// `|analytic - numeric| / max(1, |numeric|)`; the maximum over sampled
/// coordinates is returned.
pub fn finite_diff_check<F>(
    f: &mut F,
    store: &mut ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let base = f(store)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss is {base}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };

    for pi in 0..store.len() {
        let n = store.get(crate::autodiff::ParamId(pi)).value.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > opts.samples_per_tensor {
            coords.shuffle(&mut rng);
            coords.truncate(opts.samples_per_tensor);
            coords.sort_unstable();
        }
        for &ci in &coords {
            let id = crate::autodiff::ParamId(pi);
            let original = store.get(id).value.data()[ci];

            store.get_mut(id).value.data_mut()[ci] = original + opts.step;
            let plus = f(store)?;
            store.get_mut(id).value.data_mut()[ci] = original - opts.step;
            let minus = f(store)?;
            store.get_mut(id).value.data_mut()[ci] = original;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(
                    "perturbed loss is not finite during gradient check".into(),
                ));
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = store.get(id).grad.data()[ci];
            let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_coord = ci;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Session};
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_loss_is_exact_for_central_differences() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap(), true);
        let mut f = |s: &ParamStore| -> crate::error::Result<f64> {
            Ok(s.get(w).value.data().iter().map(|x| x * x).sum())
        };
        let g: Vec<f64> = store.get(w).value.data().iter().map(|x| 2.0 * x).collect();
        store.get_mut(w).grad = Tensor::from_vec(&[3], g).unwrap();

        let report = finite_diff_check(&mut f, &mut store, &GradCheckOptions::default()).unwrap();
        assert!(
            report.max_rel_error < 1e-10,
            "quadratic check should be near-exact, got {}",
            report.max_rel_error
        );
    }

    #[test]
    fn tape_gradient_passes_check() {
        // loss = sum over joints of tanh(w-mixed x), through the tape
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[2, 2], vec![0.4, -0.2, 0.9, 0.1]).unwrap(), true);
        let x = Tensor::from_vec(&[1, 2, 3], vec![0.3, -1.0, 0.5, 0.7, 0.2, -0.6]).unwrap();

        let run = |s: &ParamStore, want_backward: Option<&mut ParamStore>| -> crate::error::Result<f64> {
            let mut sess = Session::new();
            let xid = sess.constant(x.clone());
            let wid = sess.param(s, w);
            let y = sess.tape.conv1x1(xid, wid, None)?;
            let t = sess.tape.tanh(y)?;
            let m = sess.tape.mean_axes(t, &[0, 1, 2])?;
            let loss = sess.tape.value(m).data()[0];
            if let Some(store) = want_backward {
                sess.backward(m, store)?;
            }
            Ok(loss)
        };

        let snapshot = store.clone();
        store.zero_grads();
        let mut for_grads = store.clone();
        run(&snapshot, Some(&mut for_grads)).unwrap();
        store = for_grads;

        let mut f = |s: &ParamStore| run(s, None);
        let report = finite_diff_check(&mut f, &mut store, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-8, "got {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[2], vec![0.7, -0.4]).unwrap(), true);
        let mut f = |s: &ParamStore| -> crate::error::Result<f64> {
            Ok(s.get(w).value.data().iter().map(|x| x * x).sum())
        };
        store.get_mut(w).grad =
            Tensor::from_vec(&[2], vec![2.0 * 0.7 * 1.5, 2.0 * -0.4 * 1.5]).unwrap();
        let report = finite_diff_check(&mut f, &mut store, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error > 1e-2);
    }
}
