//! Correlation between uncertainty and a reference signal (an OoD label or a
//! per-sample squared error), and confidence intervals over repeated runs.

use ndarray::ArrayView2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::rng;

/// Pearson product-moment correlation. With a 0/1 `y` this is the
/// point-biserial correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} values", x.len()), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Undefined(format!("need at least 3 samples, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::Undefined("first variable has zero variance".into()));
    }
    if syy <= 0.0 {
        return Err(Error::Undefined("second variable has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Closed-form point-biserial coefficient
/// `(M₁ − M₀)/s · √(n₁n₀/n²)` with `s` the population std of `values`.
pub fn point_biserial(values: &[f64], labels: &[bool]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::shape(format!("{} values", values.len()), labels.len()));
    }
    let n = values.len() as f64;
    let n1 = labels.iter().filter(|&&l| l).count() as f64;
    let n0 = n - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::Undefined("labels are all equal".into()));
    }
    let mean = values.iter().sum::<f64>() / n;
    let s = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if s <= 0.0 {
        return Err(Error::Undefined("values have zero variance".into()));
    }
    let m1 = values.iter().zip(labels).filter(|(_, &l)| l).map(|(v, _)| v).sum::<f64>() / n1;
    let m0 = values.iter().zip(labels).filter(|(_, &l)| !l).map(|(v, _)| v).sum::<f64>() / n0;
    Ok((m1 - m0) / s * (n1 * n0 / (n * n)).sqrt())
}

/// Row-wise mean over outputs of the squared prediction error.
pub fn per_sample_squared_error(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Vec<f64>> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    Ok(pred
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, t)| {
            let sq: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            sq / p.len().max(1) as f64
        })
        .collect())
}

/// Two-sided 97.5% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// `mean ± t₀.₉₇₅,R−1 · s/√R` over per-run correlations.
pub fn confidence_interval(per_run: &[f64]) -> Result<(f64, f64)> {
    let r = per_run.len();
    if r < 2 {
        return Err(Error::Invalid(format!("need at least 2 runs for an interval, got {r}")));
    }
    let mean = per_run.iter().sum::<f64>() / r as f64;
    let var = per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    let half = t_quantile_975(r - 1) * var.sqrt() / (r as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// Percentile interval for the mean over runs of per-run correlations, where
/// each replicate resamples the samples of every run with replacement.
/// `runs` holds `(uncertainty, reference)` per run. The interval is widened to
/// contain the observed mean.
pub fn bootstrap_interval(runs: &[(Vec<f64>, Vec<f64>)], replicates: usize, seed: u64) -> Result<(f64, f64)> {
    if runs.is_empty() || replicates < 2 {
        return Err(Error::Invalid("bootstrap needs at least one run and two replicates".into()));
    }
    let observed: Vec<f64> = runs.iter().map(|(u, y)| pearson(u, y)).collect::<Result<_>>()?;
    let observed_mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut rng = rng::rng(seed);
    let mut means = Vec::with_capacity(replicates);
    let (mut ux, mut uy) = (Vec::new(), Vec::new());
    while means.len() < replicates {
        let mut total = 0.0;
        let mut ok = true;
        for (u, y) in runs {
            ux.clear();
            uy.clear();
            for _ in 0..u.len() {
                let k = rng.random_range(0..u.len());
                ux.push(u[k]);
                uy.push(y[k]);
            }
            match pearson(&ux, &uy) {
                Ok(rho) => total += rho,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            means.push(total / runs.len() as f64);
        }
    }
    means.sort_by(f64::total_cmp);
    let pick = |q: f64| means[((q * (replicates - 1) as f64).round() as usize).min(replicates - 1)];
    Ok((pick(0.025).min(observed_mean), pick(0.975).max(observed_mean)))
}

/// Mean correlation over runs with its 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub method: String,
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Number of runs aggregated.
    pub n: usize,
}

impl CorrelationReport {
    /// Student-t interval across runs.
    pub fn from_runs(method: impl Into<String>, per_run: &[f64]) -> Result<Self> {
        let (ci_low, ci_high) = confidence_interval(per_run)?;
        Ok(CorrelationReport {
            method: method.into(),
            rho: per_run.iter().sum::<f64>() / per_run.len() as f64,
            ci_low,
            ci_high,
            n: per_run.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&x, &[0.0, 0.0, 1.0, 1.0]).unwrap();
        // hand value: 2/√5
        assert!((r - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.8944).abs() < 1e-4);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::Undefined(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn squared_error_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(per_sample_squared_error(t.view(), t.view()).unwrap(), vec![0.0, 0.0]);
        assert_eq!(per_sample_squared_error(array![[4.0]].view(), array![[1.0]].view()).unwrap(), vec![9.0]);
        assert_eq!(per_sample_squared_error(array![[1.0, 3.0]].view(), array![[0.0, 0.0]].view()).unwrap(), vec![5.0]);
        assert!(per_sample_squared_error(t.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn t_interval_examples() {
        assert!((t_quantile_975(1) - 12.706_204_736).abs() < 1e-6);
        let (lo, hi) = confidence_interval(&[0.3, 0.3, 0.3]).unwrap();
        assert_eq!((lo, hi), (0.3, 0.3));
        let (lo, hi) = confidence_interval(&[0.4, 0.6]).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
        assert!(((hi - lo) / 2.0 - 1.2706).abs() < 1e-3);
        assert!(confidence_interval(&[0.1]).is_err());
    }

    #[test]
    fn bootstrap_interval_contains_mean() {
        let u: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() + if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..40).map(|i| (i % 2 == 0) as u8 as f64).collect();
        let runs = vec![(u.clone(), y.clone()), (u, y)];
        let (lo, hi) = bootstrap_interval(&runs, 200, 3).unwrap();
        let rho = pearson(&runs[0].0, &runs[0].1).unwrap();
        assert!(lo <= rho && rho <= hi);
        assert!(hi - lo < 0.5);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in prop::collection::vec(-100.0f64..100.0, 5..40),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let xt: Vec<f64> = xs.iter().map(|v| v * scale + shift).collect();
                let xn: Vec<f64> = xs.iter().map(|v| -v * scale).collect();
                prop_assert!((pearson(&xt, &ys).unwrap() - r).abs() < 1e-12);
                prop_assert!((pearson(&xn, &ys).unwrap() + r).abs() < 1e-12);
            }
        }

        #[test]
        fn pearson_matches_point_biserial(
            values in prop::collection::vec(-10.0f64..10.0, 4..60),
            labels in prop::collection::vec(any::<bool>(), 60),
        ) {
            let labels = &labels[..values.len()];
            let y: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
            if let (Ok(a), Ok(b)) = (pearson(&values, &y), point_biserial(&values, labels)) {
                prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            }
        }

        #[test]
        fn squared_error_non_negative(vals in prop::collection::vec(-5.0f64..5.0, 6)) {
            let p = ndarray::Array2::from_shape_vec((3, 2), vals.clone()).unwrap();
            let t = ndarray::Array2::from_shape_vec((3, 2), vals.iter().map(|v| v * 0.5).collect()).unwrap();
            let e = per_sample_squared_error(p.view(), t.view()).unwrap();
            for (row, err) in e.iter().enumerate() {
                prop_assert!(*err >= 0.0);
                let same = p.row(row) == t.row(row);
                prop_assert_eq!(*err == 0.0, same);
            }
        }
    }
}
