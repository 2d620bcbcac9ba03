//! Censored likelihood, maximum-likelihood fitting, scores and Fisher
//! information.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::{marginal_quantile, CdfConvention, JointKernel, ParamVector, Scale};
use crate::quadrature::{adaptive_cubature, CubatureOptions, Rect};
use crate::simplex::{minimize, NelderMeadOptions};

pub type Matrix5 = SMatrix<f64, 5, 5>;
pub type Vector5 = SVector<f64, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub u: f64,
    pub failed: bool,
}

/// Bivariate field data terminated at age `t0` or usage `u0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub t0: f64,
    pub u0: f64,
}

impl Dataset {
    /// Validates the censoring invariants. A dataset without failures is
    /// accepted here; fitting rejects it.
    pub fn new(observations: Vec<Observation>, t0: f64, u0: f64) -> Result<Self> {
        if !(t0 > 0.0) || !(u0 > 0.0) {
            return Err(Error::Domain(format!(
                "termination thresholds must be > 0, got ({t0}, {u0})"
            )));
        }
        for (i, o) in observations.iter().enumerate() {
            // A censored unit sits at the window, which may be unbounded on one scale.
            let finite = o.t.is_finite() && o.u.is_finite();
            if (o.failed && !finite) || !(o.t >= 0.0 && o.u >= 0.0) {
                return Err(Error::Domain(format!(
                    "observation {i}: ({}, {}) must be nonnegative, and finite for a failure",
                    o.t, o.u
                )));
            }
            if o.failed && (o.t >= t0 || o.u >= u0) {
                return Err(Error::Domain(format!(
                    "observation {i}: failure at ({}, {}) lies outside [0, {t0}) x [0, {u0})",
                    o.t, o.u
                )));
            }
        }
        Ok(Dataset {
            observations,
            t0,
            u0,
        })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// Number of failures.
    pub fn d(&self) -> usize {
        self.observations.iter().filter(|o| o.failed).count()
    }

    pub fn n_censored(&self) -> usize {
        self.n() - self.d()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter().filter(|o| o.failed)
    }
}

/// Log-probability that a unit survives past the observation window.
pub(crate) fn log_censor_prob(k: &JointKernel, t0: f64, u0: f64, conv: CdfConvention) -> f64 {
    match conv {
        CdfConvention::SurvivalComplement => -k.hazard(t0, u0),
        CdfConvention::Joint => {
            // 1 - P(T <= t0, U <= u0) = R_T(t0) + R_U(u0) - R(t0, u0)
            let rt = (-k.marginal_hazard_t(t0)).exp();
            let ru = (-k.marginal_hazard_u(u0)).exp();
            let r = (-k.hazard(t0, u0)).exp();
            let p = rt + ru - r;
            if p > 0.0 {
                p.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

fn log_likelihood_kernel(data: &Dataset, k: &JointKernel, conv: CdfConvention) -> f64 {
    let mut ll = 0.0;
    for o in data.failures() {
        if o.t <= 0.0 || o.u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += k.log_pdf(o.t, o.u);
    }
    let nc = data.n_censored();
    if nc > 0 {
        ll += nc as f64 * log_censor_prob(k, data.t0, data.u0, conv);
    }
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

/// Censored log-likelihood under the default CDF convention.
pub fn log_likelihood(data: &Dataset, psi: &ParamVector) -> Result<f64> {
    log_likelihood_with(data, psi, CdfConvention::default())
}

/// Censored log-likelihood. A zero density at a failure gives `-inf`, not
/// an error, so optimizers can back away.
pub fn log_likelihood_with(data: &Dataset, psi: &ParamVector, conv: CdfConvention) -> Result<f64> {
    psi.validate()?;
    Ok(log_likelihood_kernel(data, &JointKernel::new(psi), conv))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleResult {
    pub psi_hat: ParamVector,
    /// `None` when the observed information is singular or indefinite.
    pub std_errors: Option<[f64; 5]>,
    pub log_lik: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MleOptions {
    pub convention: CdfConvention,
    pub simplex: NelderMeadOptions,
    /// Simplex restarts from the incumbent; the search stops earlier once a
    /// restart no longer improves the log-likelihood.
    pub max_restarts: usize,
    /// Central-difference step for the Hessian, relative to `max(1, |psi_j|)`.
    pub hessian_step: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            convention: CdfConvention::default(),
            simplex: NelderMeadOptions {
                x_tol: 1e-9,
                f_tol: 0.0,
                max_iter: 20_000,
                step: 0.2,
            },
            max_restarts: 20,
            hessian_step: 1e-4,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(ln eta_t, ln lambda_t, ln eta_u, ln lambda_u, logit theta)`.
pub fn to_unconstrained(psi: &ParamVector) -> [f64; 5] {
    // theta = 1 maps to a large finite logit.
    let th = psi.theta.min(1.0 - 1e-12);
    [psi.eta_t.ln(), psi.lambda_t.ln(), psi.eta_u.ln(), psi.lambda_u.ln(), logit(th)]
}

pub fn from_unconstrained(z: &[f64]) -> ParamVector {
    ParamVector::from_array([z[0].exp(), z[1].exp(), z[2].exp(), z[3].exp(), sigmoid(z[4])])
}

/// Maximum-likelihood fit under the default options.
pub fn fit_mle(data: &Dataset, init: &ParamVector) -> Result<MleResult> {
    fit_mle_with(data, init, &MleOptions::default())
}

pub fn fit_mle_with(data: &Dataset, init: &ParamVector, opts: &MleOptions) -> Result<MleResult> {
    init.validate()?;
    if data.d() == 0 {
        return Err(Error::InsufficientData(
            "no failures: the likelihood is not identifiable".into(),
        ));
    }
    let conv = opts.convention;
    let objective = |z: &[f64]| {
        let psi = from_unconstrained(z);
        if !psi.is_valid() {
            return f64::INFINITY;
        }
        -log_likelihood_kernel(data, &JointKernel::new(&psi), conv)
    };
    let mut z = to_unconstrained(init).to_vec();
    let mut best = objective(&z);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_restarts.max(1) {
        let m = minimize(objective, &z, &opts.simplex);
        iterations += m.iterations;
        let improved = best - m.f;
        if m.f <= best {
            z = m.x;
            best = m.f;
        }
        converged = m.converged;
        if m.converged && improved.abs() < 1e-10 {
            break;
        }
    }
    let psi_hat = from_unconstrained(&z);
    if !best.is_finite() {
        return Ok(MleResult {
            psi_hat,
            std_errors: None,
            log_lik: -best,
            converged: false,
            iterations,
        });
    }
    let h = observed_information(data, &psi_hat, conv, opts.hessian_step);
    let std_errors = h.and_then(|info| standard_errors(&info));
    Ok(MleResult {
        psi_hat,
        std_errors,
        log_lik: -best,
        converged,
        iterations,
    })
}

/// Negative Hessian of the log-likelihood by central differences in the
/// natural parameters.
pub fn observed_information(
    data: &Dataset,
    psi: &ParamVector,
    conv: CdfConvention,
    rel_step: f64,
) -> Option<Matrix5> {
    let base = psi.to_array();
    let steps: Vec<f64> = base.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let ll = |a: [f64; 5]| log_likelihood_kernel(data, &JointKernel::new(&ParamVector::from_array(a)), conv);
    let f0 = ll(base);
    let mut h = Matrix5::zeros();
    for i in 0..5 {
        for j in i..5 {
            let v = if i == j {
                let mut p = base;
                let mut m = base;
                p[i] += steps[i];
                m[i] -= steps[i];
                (ll(p) - 2.0 * f0 + ll(m)) / (steps[i] * steps[i])
            } else {
                let eval = |si: f64, sj: f64| {
                    let mut a = base;
                    a[i] += si * steps[i];
                    a[j] += sj * steps[j];
                    ll(a)
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * steps[i] * steps[j])
            };
            h[(i, j)] = -v;
            h[(j, i)] = -v;
        }
    }
    if h.iter().all(|v| v.is_finite()) {
        Some(h)
    } else {
        None
    }
}

/// Square roots of the diagonal of the inverse information, when it is
/// positive definite.
pub fn standard_errors(info: &Matrix5) -> Option<[f64; 5]> {
    let chol = info.cholesky()?;
    let inv = chol.inverse();
    let mut se = [0.0; 5];
    for (j, s) in se.iter_mut().enumerate() {
        let v = inv[(j, j)];
        if !(v > 0.0) || !v.is_finite() {
            return None;
        }
        *s = v.sqrt();
    }
    Some(se)
}

/// Method-of-moments Weibull fit `(eta, lambda)` from sample mean and
/// variance, solving the coefficient-of-variation equation for the shape.
pub fn weibull_moments(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData("need at least two values".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(mean > 0.0) || !(var > 0.0) {
        return Err(Error::InsufficientData("degenerate sample".into()));
    }
    let cv2 = var / (mean * mean);
    let g = |lambda: f64| {
        let g1 = gamma(1.0 + 1.0 / lambda);
        gamma(1.0 + 2.0 / lambda) / (g1 * g1) - 1.0 - cv2
    };
    // The squared CV decreases in the shape.
    let (mut lo, mut hi) = (0.05, 200.0);
    if g(lo) < 0.0 || g(hi) > 0.0 {
        return Err(Error::Bracketing(format!("moment shape for cv^2 = {cv2}")));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = (lo * hi).sqrt();
    Ok((mean / gamma(1.0 + 1.0 / lambda), lambda))
}

/// Complete-sample Weibull MLE `(eta, lambda)`.
pub fn weibull_mle(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 || xs.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InsufficientData(
            "Weibull MLE needs at least two positive finite values".into(),
        ));
    }
    let n = xs.len() as f64;
    let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n;
    // Profile score in the shape: sum x^k ln x / sum x^k - 1/k - mean ln x.
    let score = |k: f64| {
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1) = (0.0, 0.0);
        for &l in &logs {
            let w = (k * (l - m)).exp();
            s0 += w;
            s1 += w * l;
        }
        s1 / s0 - 1.0 / k - mean_log
    };
    let (mut lo, mut hi) = (1e-3, 1e3);
    if score(lo) > 0.0 || score(hi) < 0.0 {
        return Err(Error::Bracketing("Weibull shape".into()));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if score(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = (lo * hi).sqrt();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s0: f64 = logs.iter().map(|l| (k * (l - m)).exp()).sum();
    let eta = (m * k + (s0 / n).ln()) / k;
    Ok((eta.exp(), k))
}

/// Marginal method-of-moments fits on the failures with `theta = 0.5`.
pub fn default_init(data: &Dataset) -> Result<ParamVector> {
    let ts: Vec<f64> = data.failures().map(|o| o.t).collect();
    let us: Vec<f64> = data.failures().map(|o| o.u).collect();
    let (eta_t, lambda_t) = weibull_moments(&ts)?;
    let (eta_u, lambda_u) = weibull_moments(&us)?;
    ParamVector::new(eta_t, lambda_t, eta_u, lambda_u, 0.5)
}

/// Finite-difference stencils for the parameter gradient of any function of
/// a `JointKernel`. Stencil kernels depend only on `psi`, so they are built
/// once and reused across evaluation points.
pub struct ScoreStencil {
    /// Per parameter: `(kernel, weight)` pairs whose weighted sum is the
    /// derivative.
    terms: [Vec<(JointKernel, f64)>; 5],
}

impl ScoreStencil {
    /// Central differences with step `1e-5 * max(1, |psi_j|)`; near the
    /// `theta = 1` edge the `theta` column switches to a second-order
    /// backward difference so no stencil point leaves the support.
    pub fn new(psi: &ParamVector) -> Self {
        let base = psi.to_array();
        let terms = std::array::from_fn(|j| {
            let h = 1e-5 * base[j].abs().max(1.0);
            let at = |delta: f64| {
                let mut a = base;
                a[j] += delta;
                JointKernel::new(&ParamVector::from_array(a))
            };
            if j == 4 && base[j] + h > 1.0 {
                vec![
                    (at(0.0), 1.5 / h),
                    (at(-h), -2.0 / h),
                    (at(-2.0 * h), 0.5 / h),
                ]
            } else {
                vec![(at(h), 0.5 / h), (at(-h), -0.5 / h)]
            }
        });
        ScoreStencil { terms }
    }

    pub fn gradient<F: Fn(&JointKernel) -> f64>(&self, f: F) -> [f64; 5] {
        std::array::from_fn(|j| self.terms[j].iter().map(|(k, w)| w * f(k)).sum())
    }

    /// `d/dpsi log f(t, u)` at a failure point.
    pub fn failure_score(&self, t: f64, u: f64) -> [f64; 5] {
        self.gradient(|k| k.log_pdf(t, u))
    }

    /// `d/dpsi log P(censored)`.
    pub fn censored_score(&self, t0: f64, u0: f64, conv: CdfConvention) -> [f64; 5] {
        self.gradient(|k| log_censor_prob(k, t0, u0, conv))
    }
}

#[derive(Debug, Clone)]
pub struct ScoreMoments {
    /// Expected per-unit score.
    pub mean: [f64; 5],
    /// Per-unit information `E[s s^T]`.
    pub outer: Matrix5,
    /// Achieved absolute quadrature error.
    pub quad_error: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct InformationOptions {
    pub convention: CdfConvention,
    pub cubature: CubatureOptions,
}

impl Default for InformationOptions {
    fn default() -> Self {
        InformationOptions {
            convention: CdfConvention::default(),
            cubature: CubatureOptions {
                order: 7,
                abs_tol: 1e-8,
                rel_tol: 1e-8,
                max_evals: 4_000_000,
            },
        }
    }
}

/// First and second score moments of one censored observation: the
/// failure region `[0, t0] x [0, u0]` by adaptive cubature plus the
/// censoring atom.
pub fn score_moments(psi: &ParamVector, t0: f64, u0: f64, opts: &InformationOptions) -> Result<ScoreMoments> {
    psi.validate()?;
    if !(t0 > 0.0 && u0 > 0.0) {
        return Err(Error::Domain(format!("censoring thresholds ({t0}, {u0}) must be > 0")));
    }
    // An unbounded window is truncated where each marginal tail is below
    // 1e-14; the remainder is carried by the censoring atom.
    let t0 = if t0.is_finite() { t0 } else { marginal_quantile(Scale::Age, 1.0 - 1e-14, psi)? };
    let u0 = if u0.is_finite() { u0 } else { marginal_quantile(Scale::Usage, 1.0 - 1e-14, psi)? };
    let k = JointKernel::new(psi);
    let stencil = ScoreStencil::new(psi);
    // 5 mean entries then the 15 upper-triangular outer-product entries.
    let res = adaptive_cubature(20, Rect::new(0.0, t0, 0.0, u0), &opts.cubature, |t, u, out| {
        let f = k.pdf(t, u);
        if f == 0.0 || !f.is_finite() {
            return;
        }
        let s = stencil.failure_score(t, u);
        let mut idx = 5;
        for i in 0..5 {
            out[i] = s[i] * f;
            for j in i..5 {
                out[idx] = s[i] * s[j] * f;
                idx += 1;
            }
        }
    })?;
    let pc = log_censor_prob(&k, t0, u0, opts.convention).exp();
    let sc = if pc > 0.0 {
        stencil.censored_score(t0, u0, opts.convention)
    } else {
        [0.0; 5]
    };
    let mut mean = [0.0; 5];
    let mut outer = Matrix5::zeros();
    let mut idx = 5;
    for i in 0..5 {
        mean[i] = res.value[i] + pc * sc[i];
        for j in i..5 {
            let v = res.value[idx] + pc * sc[i] * sc[j];
            outer[(i, j)] = v;
            outer[(j, i)] = v;
            idx += 1;
        }
    }
    Ok(ScoreMoments {
        mean,
        outer,
        quad_error: res.error,
        evals: res.evals,
    })
}

/// Fisher information of `n` independent censored observations.
pub fn fisher_information(psi: &ParamVector, t0: f64, u0: f64, n: usize) -> Result<Matrix5> {
    fisher_information_with(psi, t0, u0, n, &InformationOptions::default())
}

pub fn fisher_information_with(
    psi: &ParamVector,
    t0: f64,
    u0: f64,
    n: usize,
    opts: &InformationOptions,
) -> Result<Matrix5> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    Ok(score_moments(psi, t0, u0, opts)?.outer * n as f64)
}

/// Expected per-observation score; zero up to quadrature error.
pub fn expected_score(psi: &ParamVector, t0: f64, u0: f64) -> Result<[f64; 5]> {
    Ok(score_moments(psi, t0, u0, &InformationOptions::default())?.mean)
}
