//! Levenberg-Marquardt least squares with a finite-difference Jacobian,
//! plus the Gaussian-line fit used by both spectroscopy branches.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative change in the residual sum of squares treated as converged.
    pub tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            tolerance: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// `(JᵀJ)⁻¹ · RSS / (n - p)`; `None` when the normal matrix is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub rss: f64,
    pub iterations: usize,
}

impl LmFit {
    pub fn std_error(&self, k: usize) -> f64 {
        self.covariance
            .as_ref()
            .map(|c| c[(k, k)].max(0.0).sqrt())
            .unwrap_or(f64::INFINITY)
    }
}

fn residuals<F>(model: &F, x: &[f64], y: &[f64], p: &[f64]) -> DVector<f64>
where
    F: Fn(&[f64], f64) -> f64,
{
    DVector::from_iterator(x.len(), x.iter().zip(y).map(|(&xi, &yi)| yi - model(p, xi)))
}

fn jacobian<F>(model: &F, x: &[f64], p: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64], f64) -> f64,
{
    let mut jac = DMatrix::zeros(x.len(), p.len());
    let mut shifted = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-3);
        shifted[j] = p[j] + h;
        let up: Vec<f64> = x.iter().map(|&xi| model(&shifted, xi)).collect();
        shifted[j] = p[j] - h;
        for (i, &xi) in x.iter().enumerate() {
            jac[(i, j)] = (up[i] - model(&shifted, xi)) / (2.0 * h);
        }
        shifted[j] = p[j];
    }
    jac
}

/// Minimises `Σ (y - model(p, x))²` starting from `p0`.
///
/// Parameters should be pre-scaled to order unity; the finite-difference
/// step is relative with an absolute floor of 1e-9.
pub fn levenberg_marquardt<F>(
    model: F,
    x: &[f64],
    y: &[f64],
    p0: &[f64],
    opts: LmOptions,
) -> Result<LmFit>
where
    F: Fn(&[f64], f64) -> f64,
{
    let n = x.len();
    let np = p0.len();
    if n <= np {
        return Err(Error::FitFailure {
            reason: format!("{n} points cannot constrain {np} parameters"),
            iterations: 0,
            rss: f64::NAN,
        });
    }
    let mut p = p0.to_vec();
    let mut r = residuals(&model, x, y, &p);
    let mut rss = r.norm_squared();
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&model, x, &p);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = residuals(&model, x, y, &trial);
            let rss_trial = r_trial.norm_squared();
            if rss_trial.is_finite() && rss_trial <= rss {
                let rel = (rss - rss_trial) / rss.max(f64::MIN_POSITIVE);
                p = trial;
                r = r_trial;
                rss = rss_trial;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < opts.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged || rss == 0.0 {
            // no downhill step left: a minimum to working precision
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            reason: "iteration limit reached".into(),
            iterations,
            rss,
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailure {
            reason: "non-finite parameters".into(),
            iterations,
            rss,
        });
    }
    let jac = jacobian(&model, x, &p);
    let jtj = jac.transpose() * &jac;
    let sigma2 = rss / (n - np) as f64;
    let covariance = jtj.try_inverse().map(|inv| inv * sigma2);
    Ok(LmFit {
        params: p,
        covariance,
        rss,
        iterations,
    })
}

/// Gaussian line on a flat floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    /// Standard deviation.
    pub sigma: f64,
    pub floor: f64,
    pub r_squared: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.floor + self.amplitude * (-0.5 * ((x - self.center) / self.sigma).powi(2)).exp()
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Least-squares `floor + A·exp(-(x-c)²/(2σ²))` fit with R².
pub fn fit_gaussian(x: &[f64], y: &[f64]) -> Result<GaussianFit> {
    if x.len() != y.len() || x.len() < 5 {
        return Err(Error::FitFailure {
            reason: "need at least 5 matching samples".into(),
            iterations: 0,
            rss: f64::NAN,
        });
    }
    let floor0 = median(y);
    let (k, &peak) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let amp0 = peak - floor0;
    if !(amp0 > 0.0) {
        return Err(Error::FitFailure {
            reason: "no peak above the floor".into(),
            iterations: 0,
            rss: f64::NAN,
        });
    }
    // half-maximum crossings for the starting width
    let half = floor0 + 0.5 * amp0;
    let lo = (0..k).rev().find(|&i| y[i] < half).unwrap_or(0);
    let hi = (k..y.len()).find(|&i| y[i] < half).unwrap_or(y.len() - 1);
    let step = (x[x.len() - 1] - x[0]).abs() / (x.len() - 1) as f64;
    let sigma0 = ((x[hi] - x[lo]).abs() / 2.3548).max(step);

    // fit in scaled units so the Jacobian is well conditioned
    let xs: Vec<f64> = x.iter().map(|v| (v - x[k]) / sigma0).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / amp0).collect();
    let model = |p: &[f64], xi: f64| p[3] + p[0] * (-0.5 * ((xi - p[1]) / p[2]).powi(2)).exp();
    let fit = levenberg_marquardt(
        model,
        &xs,
        &ys,
        &[1.0, 0.0, 1.0, floor0 / amp0],
        LmOptions::default(),
    )?;
    let p = &fit.params;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let out = GaussianFit {
        amplitude: p[0] * amp0,
        center: x[k] + p[1] * sigma0,
        sigma: p[2].abs() * sigma0,
        floor: p[3] * amp0,
        r_squared: 0.0,
    };
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - out.eval(xi)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(GaussianFit { r_squared, ..out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_gaussian() {
        let x: Vec<f64> = (0..400).map(|i| i as f64 * 0.25e6).collect();
        let truth = GaussianFit {
            amplitude: 3.0,
            center: 41.3e6,
            sigma: 2.2e6,
            floor: 0.1,
            r_squared: 1.0,
        };
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
        let fit = fit_gaussian(&x, &y).unwrap();
        assert!((fit.center - truth.center).abs() < 1.0);
        assert!((fit.sigma / truth.sigma - 1.0).abs() < 1e-6);
        assert!((fit.amplitude - 3.0).abs() < 1e-6);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn flat_data_has_no_peak() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y = vec![2.0; 50];
        assert!(matches!(fit_gaussian(&x, &y), Err(Error::FitFailure { .. })));
    }

    #[test]
    fn straight_line_fit_converges() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let fit = levenberg_marquardt(|p, x| p[0] * x + p[1], &x, &y, &[1.0, 0.0], LmOptions::default()).unwrap();
        assert!((fit.params[0] - 2.0).abs() < 1e-8);
        assert!((fit.params[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn underdetermined_is_an_error() {
        let r = levenberg_marquardt(|p, x| p[0] * x + p[1], &[1.0, 2.0], &[1.0, 2.0], &[0.0, 0.0], LmOptions::default());
        assert!(r.is_err());
    }
}
