//! Priors, random-walk Metropolis–Hastings on the transformed parameters,
//! and posterior-predictive summaries.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::inference::{
    fisher_information_with, from_unconstrained, log_likelihood_with, to_unconstrained, Dataset,
    InformationOptions, Matrix5,
};
use crate::model::{CdfConvention, JointKernel, LifePoint, ParamVector, Scale};

/// Gamma(a_j, b_j) priors (shape, rate) on the four positive parameters and
/// Beta(a_5, b_5) on `theta`, in `ParamVector` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorHyper {
    pub a: [f64; 5],
    pub b: [f64; 5],
}

impl PriorHyper {
    pub fn new(a: [f64; 5], b: [f64; 5]) -> Result<Self> {
        for (j, v) in a.iter().chain(&b).enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::Config(format!("hyperparameter #{j} = {v} must be > 0")));
            }
        }
        Ok(PriorHyper { a, b })
    }
}

/// Method-of-moments hyperparameters: prior means at `psi_hat`, prior
/// variances at `variances`.
pub fn elicit_hyperparams(psi_hat: &ParamVector, variances: &[f64; 5]) -> Result<PriorHyper> {
    psi_hat.validate()?;
    let m = psi_hat.to_array();
    let mut a = [0.0; 5];
    let mut b = [0.0; 5];
    for j in 0..4 {
        let v = variances[j];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("variance #{j} = {v} must be > 0")));
        }
        a[j] = m[j] * m[j] / v;
        b[j] = m[j] / v;
    }
    let (mt, v) = (m[4], variances[4]);
    if !(v > 0.0) || mt >= 1.0 || mt * (1.0 - mt) <= v {
        return Err(Error::Config(format!(
            "Beta moments infeasible: mean {mt}, variance {v} (need mean(1-mean) > variance)"
        )));
    }
    let k = mt * (1.0 - mt) / v - 1.0;
    a[4] = mt * k;
    b[4] = (1.0 - mt) * k;
    PriorHyper::new(a, b)
}

/// Log prior density; `-inf` outside the support.
pub fn log_prior(psi: &ParamVector, hyper: &PriorHyper) -> f64 {
    let x = psi.to_array();
    let mut lp = 0.0;
    for j in 0..4 {
        if !(x[j] > 0.0) || !x[j].is_finite() {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (hyper.a[j], hyper.b[j]);
        lp += a * b.ln() - ln_gamma(a) + (a - 1.0) * x[j].ln() - b * x[j];
    }
    let th = x[4];
    let (a, b) = (hyper.a[4], hyper.b[4]);
    if !(th > 0.0 && th <= 1.0) {
        return f64::NEG_INFINITY;
    }
    let log_1m = (-th).ln_1p();
    let tail = if b == 1.0 { 0.0 } else { (b - 1.0) * log_1m };
    let v = (a - 1.0) * th.ln() + tail - ln_beta(a, b);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp + v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations N, burn-in included.
    pub n_iter: usize,
    /// Discarded iterations N0.
    pub burn_in: usize,
    pub seed: u64,
    /// Multiplier on the transformed inverse-Fisher covariance.
    pub proposal_scale: f64,
    #[serde(default)]
    pub convention: CdfConvention,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 50_000,
            burn_in: 10_000,
            seed: 20_240_601,
            proposal_scale: 1.0,
            convention: CdfConvention::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::Config("proposal_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Retained draws in sampling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub draws: Vec<ParamVector>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
}

impl PosteriorChain {
    /// A chain made of given draws, e.g. a point mass for plug-in analysis.
    pub fn from_draws(draws: Vec<ParamVector>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::InsufficientData("a chain needs at least one draw".into()));
        }
        for d in &draws {
            d.validate()?;
        }
        let k = draws.len();
        Ok(PosteriorChain {
            draws,
            acceptance_rate: 1.0,
            seed: 0,
            n_iter: k,
            burn_in: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn mean(&self) -> [f64; 5] {
        let mut m = [0.0; 5];
        for d in &self.draws {
            for (acc, v) in m.iter_mut().zip(d.to_array()) {
                *acc += v;
            }
        }
        m.map(|v| v / self.draws.len() as f64)
    }

    /// `k` draws at evenly spaced positions; the whole chain if `k >= len`.
    pub fn thin(&self, k: usize) -> PosteriorChain {
        let n = self.draws.len();
        let draws = if k == 0 || k >= n {
            self.draws.clone()
        } else {
            (0..k).map(|i| self.draws[i * n / k]).collect()
        };
        PosteriorChain {
            draws,
            ..self.clone()
        }
    }
}

/// Output of [`random_walk`].
#[derive(Debug, Clone)]
pub struct WalkOutput {
    /// States after burn-in.
    pub samples: Vec<Vec<f64>>,
    /// Acceptance rate over the post-burn-in iterations.
    pub acceptance_rate: f64,
}

/// Random-walk Metropolis with Gaussian increments `L * N(0, I)`, `L` the
/// lower Cholesky factor of the proposal covariance. States where the log
/// target is `-inf` or NaN are always rejected.
pub fn random_walk<F, R>(
    mut log_target: F,
    z0: &[f64],
    chol: &DMatrix<f64>,
    n_iter: usize,
    burn_in: usize,
    rng: &mut R,
) -> WalkOutput
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dim = z0.len();
    assert_eq!(chol.nrows(), dim, "proposal dimension mismatch");
    let mut z = z0.to_vec();
    let mut lp = log_target(&z);
    let mut samples = Vec::with_capacity(n_iter.saturating_sub(burn_in));
    let mut accepted = 0usize;
    let mut eps = DVector::<f64>::zeros(dim);
    for it in 0..n_iter {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let step = chol * &eps;
        let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let lc = log_target(&cand);
        let log_u: f64 = rng.gen::<f64>().ln();
        let accept = !lc.is_nan() && lc > f64::NEG_INFINITY && log_u < lc - lp;
        if accept {
            z = cand;
            lp = lc;
        }
        if it >= burn_in {
            if accept {
                accepted += 1;
            }
            samples.push(z.clone());
        }
    }
    let kept = n_iter.saturating_sub(burn_in);
    WalkOutput {
        samples,
        acceptance_rate: if kept == 0 { 0.0 } else { accepted as f64 / kept as f64 },
    }
}

/// Bounds on the post-burn-in acceptance rate outside which the proposal is
/// treated as mis-scaled.
pub const ACCEPTANCE_BOUNDS: (f64, f64) = (0.01, 0.95);

/// Post-burn-in iterations below which the acceptance guard is skipped;
/// a handful of steps says nothing about proposal scaling.
pub const ACCEPTANCE_GUARD_MIN: usize = 100;

/// Proposal covariance on `(ln eta_t, ln lambda_t, ln eta_u, ln lambda_u,
/// logit theta)`: the delta-method image `D I^-1 D` of the inverse Fisher
/// information, `D = diag(1/psi_j, 1/(theta (1 - theta)))`, times `scale`.
pub fn proposal_covariance(info: &Matrix5, psi: &ParamVector, scale: f64) -> Result<DMatrix<f64>> {
    let mut reg = *info;
    let inv = match reg.cholesky() {
        Some(c) => c.inverse(),
        None => {
            for j in 0..5 {
                reg[(j, j)] += 1e-8;
            }
            reg.cholesky()
                .ok_or_else(|| Error::Singular("Fisher information is not positive definite".into()))?
                .inverse()
        }
    };
    let x = psi.to_array();
    let th = x[4].min(1.0 - 1e-9);
    let d = [1.0 / x[0], 1.0 / x[1], 1.0 / x[2], 1.0 / x[3], 1.0 / (th * (1.0 - th))];
    Ok(DMatrix::from_fn(5, 5, |i, j| scale * d[i] * inv[(i, j)] * d[j]))
}

/// Log posterior in the transformed space, Jacobian included.
pub fn log_posterior_transformed(
    z: &[f64],
    data: &Dataset,
    hyper: &PriorHyper,
    conv: CdfConvention,
) -> f64 {
    let psi = from_unconstrained(z);
    if !psi.is_valid() || psi.theta >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let lp = log_prior(&psi, hyper);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    let ll = match log_likelihood_with(data, &psi, conv) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    let log_jac = z[0] + z[1] + z[2] + z[3] + psi.theta.ln() + (-psi.theta).ln_1p();
    ll + lp + log_jac
}

/// Metropolis–Hastings draws from the posterior of `psi`, with the
/// proposal shape fixed at the Fisher information evaluated at `psi0`.
pub fn mh_sample(data: &Dataset, hyper: &PriorHyper, psi0: &ParamVector, cfg: &McmcConfig) -> Result<PosteriorChain> {
    cfg.validate()?;
    psi0.validate()?;
    let info_opts = InformationOptions {
        convention: cfg.convention,
        ..Default::default()
    };
    let info = fisher_information_with(psi0, data.t0, data.u0, data.n().max(1), &info_opts)?;
    let cov = proposal_covariance(&info, psi0, cfg.proposal_scale)?;
    let chol = cov
        .clone()
        .cholesky()
        .or_else(|| (cov + DMatrix::identity(5, 5) * 1e-8).cholesky())
        .ok_or_else(|| Error::Singular("proposal covariance".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z0 = to_unconstrained(psi0);
    let out = random_walk(
        |z| log_posterior_transformed(z, data, hyper, cfg.convention),
        &z0,
        &chol,
        cfg.n_iter,
        cfg.burn_in,
        &mut rng,
    );
    let (lo, hi) = ACCEPTANCE_BOUNDS;
    let kept = cfg.n_iter - cfg.burn_in;
    if kept >= ACCEPTANCE_GUARD_MIN && (out.acceptance_rate < lo || out.acceptance_rate > hi) {
        return Err(Error::AcceptanceRate {
            rate: out.acceptance_rate,
            lo,
            hi,
        });
    }
    let draws: Vec<ParamVector> = out.samples.iter().map(|z| from_unconstrained(z)).collect();
    for d in &draws {
        debug_assert!(d.is_valid());
        d.validate()?;
    }
    Ok(PosteriorChain {
        draws,
        acceptance_rate: out.acceptance_rate,
        seed: cfg.seed,
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
    })
}

/// Per-draw kernels for repeated predictive evaluation.
#[derive(Debug, Clone)]
pub struct Predictive {
    kernels: Vec<JointKernel>,
}

impl Predictive {
    pub fn new(chain: &PosteriorChain) -> Self {
        Predictive {
            kernels: chain.draws.iter().map(JointKernel::new).collect(),
        }
    }

    pub fn kernels(&self) -> &[JointKernel] {
        &self.kernels
    }

    fn average<F: Fn(&JointKernel) -> f64>(&self, f: F) -> f64 {
        self.kernels.iter().map(f).sum::<f64>() / self.kernels.len() as f64
    }

    pub fn pdf(&self, t: f64, u: f64) -> f64 {
        self.average(|k| k.pdf(t, u))
    }

    pub fn cdf(&self, conv: CdfConvention, t: f64, u: f64) -> f64 {
        self.average(|k| k.cdf(conv, t, u))
    }

    pub fn marginal_cdf(&self, scale: Scale, x: f64) -> f64 {
        self.average(|k| k.marginal_cdf(scale, x))
    }

    /// Root of the averaged marginal CDF by bisection to absolute `1e-8`.
    pub fn quantile(&self, scale: Scale, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!("probability {prob} must lie in (0, 1)")));
        }
        let mut hi = self
            .kernels
            .iter()
            .map(|k| k.psi.marginal(scale).0)
            .fold(0.0, f64::max);
        let mut tries = 0;
        while self.marginal_cdf(scale, hi) < prob {
            hi *= 2.0;
            tries += 1;
            if tries > 200 || !hi.is_finite() {
                return Err(Error::Bracketing(format!("{scale:?} quantile at {prob}")));
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if self.marginal_cdf(scale, mid) < prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn open_point(p: LifePoint) -> Result<()> {
    if !(p.t > 0.0 && p.u > 0.0) || !p.t.is_finite() || !p.u.is_finite() {
        return Err(Error::Domain(format!(
            "predictive density needs a point in the open quadrant, got ({}, {})",
            p.t, p.u
        )));
    }
    Ok(())
}

fn nonempty(chain: &PosteriorChain) -> Result<()> {
    if chain.is_empty() {
        return Err(Error::InsufficientData("empty chain".into()));
    }
    Ok(())
}

/// Posterior-predictive density: the average of the joint density over draws.
pub fn predictive_pdf(p: LifePoint, chain: &PosteriorChain) -> Result<f64> {
    nonempty(chain)?;
    open_point(p)?;
    Ok(Predictive::new(chain).pdf(p.t, p.u))
}

/// Posterior-predictive CDF under the default convention.
pub fn predictive_cdf(p: LifePoint, chain: &PosteriorChain) -> Result<f64> {
    predictive_cdf_with(p, chain, CdfConvention::default())
}

pub fn predictive_cdf_with(p: LifePoint, chain: &PosteriorChain, conv: CdfConvention) -> Result<f64> {
    nonempty(chain)?;
    let p = LifePoint::new(p.t, p.u)?;
    Ok(Predictive::new(chain).cdf(conv, p.t, p.u))
}

pub fn predictive_quantile(scale: Scale, prob: f64, chain: &PosteriorChain) -> Result<f64> {
    nonempty(chain)?;
    Predictive::new(chain).quantile(scale, prob)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub acceptance_rate: f64,
    pub draws: usize,
}

const CHAIN_HEADER: [&str; 5] = ParamVector::NAMES;

/// Writes the chain CSV and its JSON sidecar (`.json` next to it).
pub fn write_chain(chain: &PosteriorChain, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CHAIN_HEADER)?;
    for d in &chain.draws {
        w.write_record(d.to_array().iter().map(|v| format!("{v:?}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = ChainMeta {
        seed: chain.seed,
        n_iter: chain.n_iter,
        burn_in: chain.burn_in,
        acceptance_rate: chain.acceptance_rate,
        draws: chain.len(),
    };
    let side = path.with_extension("json");
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_chain(path: &Path) -> Result<PosteriorChain> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut draws = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut a = [0.0; 5];
        for (j, slot) in a.iter_mut().enumerate() {
            let cell = rec.get(j).unwrap_or("");
            *slot = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("'{cell}' is not a number"),
            })?;
        }
        let psi = ParamVector::from_array(a);
        psi.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        draws.push(psi);
    }
    if draws.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no draws", path.display())));
    }
    let side = path.with_extension("json");
    let meta: Option<ChainMeta> = match fs::read_to_string(&side) {
        Ok(s) => Some(serde_json::from_str(&s)?),
        Err(_) => None,
    };
    let k = draws.len();
    Ok(match meta {
        Some(m) => PosteriorChain {
            draws,
            acceptance_rate: m.acceptance_rate,
            seed: m.seed,
            n_iter: m.n_iter,
            burn_in: m.burn_in,
        },
        None => PosteriorChain {
            draws,
            acceptance_rate: 1.0,
            seed: 0,
            n_iter: k,
            burn_in: 0,
        },
    })
}

/// One `iteration,value` CSV per parameter, named `trace_<param>.csv`.
/// Iterations count from the first retained draw, i.e. `burn_in + 1`.
pub fn write_traces(chain: &PosteriorChain, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (j, name) in ParamVector::NAMES.iter().enumerate() {
        let path = dir.join(format!("trace_{name}.csv"));
        let mut s = String::from("iteration,value\n");
        for (i, d) in chain.draws.iter().enumerate() {
            s.push_str(&format!("{},{:?}\n", chain.burn_in + i + 1, d.to_array()[j]));
        }
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn elicitation_roundtrip() {
        let psi = ParamVector::new(1.5, 1.0, 0.7, 0.9, 0.2).unwrap();
        let v = [0.04, 0.01, 0.02, 0.03, 0.0005];
        let h = elicit_hyperparams(&psi, &v).unwrap();
        let m = psi.to_array();
        for j in 0..4 {
            assert_relative_eq!(h.a[j] / h.b[j], m[j], max_relative = 1e-13);
            assert_relative_eq!(h.a[j] / (h.b[j] * h.b[j]), v[j], max_relative = 1e-13);
        }
        let (a, b) = (h.a[4], h.b[4]);
        assert_relative_eq!(a / (a + b), 0.2, max_relative = 1e-13);
        assert_relative_eq!(a * b / ((a + b).powi(2) * (a + b + 1.0)), v[4], max_relative = 1e-12);
    }

    #[test]
    fn infeasible_beta_moments() {
        let psi = ParamVector::new(1.0, 1.0, 1.0, 1.0, 0.282).unwrap();
        assert!(elicit_hyperparams(&psi, &[0.1, 0.1, 0.1, 0.1, 0.4199]).is_err());
    }

    #[test]
    fn exponential_uniform_prior() {
        let h = PriorHyper::new([1.0; 5], [1.0; 5]).unwrap();
        let psi = ParamVector::new(0.3, 1.2, 2.0, 0.5, 0.7).unwrap();
        assert_relative_eq!(log_prior(&psi, &h), -(0.3 + 1.2 + 2.0 + 0.5), max_relative = 1e-14);
    }

    #[test]
    fn theta_one_outside_beta_support() {
        let h = PriorHyper::new([2.0; 5], [3.0; 5]).unwrap();
        let psi = ParamVector::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(log_prior(&psi, &h), f64::NEG_INFINITY);
    }

    #[test]
    fn flat_target_always_accepts() {
        let chol = DMatrix::identity(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = random_walk(|_| 0.0, &[0.0, 0.0, 0.0], &chol, 2000, 100, &mut rng);
        assert_eq!(out.acceptance_rate, 1.0);
        assert_eq!(out.samples.len(), 1900);
    }

    #[test]
    fn degenerate_chain_predictives() {
        let psi = ParamVector::new(1.2, 1.4, 0.8, 1.1, 0.4).unwrap();
        let chain = PosteriorChain::from_draws(vec![psi; 4]).unwrap();
        let p = LifePoint { t: 0.7, u: 0.3 };
        assert_relative_eq!(
            predictive_pdf(p, &chain).unwrap(),
            crate::model::joint_pdf(p, &psi).unwrap(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            predictive_cdf(p, &chain).unwrap(),
            crate::model::joint_distribution(p, &psi).unwrap(),
            max_relative = 1e-14
        );
        let q = predictive_quantile(Scale::Usage, 0.1, &chain).unwrap();
        let exact = crate::model::marginal_quantile(Scale::Usage, 0.1, &psi).unwrap();
        assert!((q - exact).abs() < 1e-8);
        assert_eq!(predictive_cdf(LifePoint { t: 0.0, u: 0.0 }, &chain).unwrap(), 0.0);
    }

    #[test]
    fn thinning() {
        let psi = ParamVector::new(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let chain = PosteriorChain::from_draws(vec![psi; 10]).unwrap();
        assert_eq!(chain.thin(3).len(), 3);
        assert_eq!(chain.thin(50).len(), 10);
    }
}
