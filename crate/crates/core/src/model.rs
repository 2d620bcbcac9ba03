//! Bivariate Weibull lifetime model built by the multivariate-extension
//! construction (a Gumbel survival copula with parameter `1/theta`).
//!
//! With marginal cumulative hazards `H_T(t) = (t/eta_t)^lambda_t` and
//! `H_U(u) = (u/eta_u)^lambda_u`, the joint reliability is
//!
//! ```text
//! R(t, u) = exp(-[H_T(t)^(1/theta) + H_U(u)^(1/theta)]^theta)
//! ```
//!
//! All evaluations go through log space: the power sum is formed with
//! log-sum-exp because `lambda/theta` reaches ~30 for strongly dependent fits.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five model parameters in the canonical order
/// `(eta_t, lambda_t, eta_u, lambda_u, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Age scale.
    pub eta_t: f64,
    /// Age shape.
    pub lambda_t: f64,
    /// Usage scale.
    pub eta_u: f64,
    /// Usage shape.
    pub lambda_u: f64,
    /// Dependence, `0 < theta <= 1`; `theta = 1` is independence.
    pub theta: f64,
}

impl ParamVector {
    pub const NAMES: [&'static str; 5] = ["eta_t", "lambda_t", "eta_u", "lambda_u", "theta"];

    pub fn new(eta_t: f64, lambda_t: f64, eta_u: f64, lambda_u: f64, theta: f64) -> Result<Self> {
        let psi = ParamVector {
            eta_t,
            lambda_t,
            eta_u,
            lambda_u,
            theta,
        };
        psi.validate()?;
        Ok(psi)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and > 0")));
            }
        }
        if self.theta > 1.0 {
            return Err(Error::InvalidParams(format!(
                "theta = {} must lie in (0, 1]",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.eta_t, self.lambda_t, self.eta_u, self.lambda_u, self.theta]
    }

    /// Builds a vector without validation. Used for finite-difference
    /// perturbations, which may step just outside the support.
    pub fn from_array(a: [f64; 5]) -> Self {
        ParamVector {
            eta_t: a[0],
            lambda_t: a[1],
            eta_u: a[2],
            lambda_u: a[3],
            theta: a[4],
        }
    }

    /// `(scale, shape)` of the requested marginal.
    pub fn marginal(&self, scale: Scale) -> (f64, f64) {
        match scale {
            Scale::Age => (self.eta_t, self.lambda_t),
            Scale::Usage => (self.eta_u, self.lambda_u),
        }
    }
}

/// An (age, usage) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifePoint {
    pub t: f64,
    pub u: f64,
}

impl LifePoint {
    pub fn new(t: f64, u: f64) -> Result<Self> {
        let p = LifePoint { t, u };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !self.t.is_finite() || !self.u.is_finite() {
            return Err(Error::Domain(format!("non-finite point ({}, {})", self.t, self.u)));
        }
        if self.t < 0.0 || self.u < 0.0 {
            return Err(Error::Domain(format!("negative point ({}, {})", self.t, self.u)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Age,
    Usage,
}

/// Which function plays the role of the bivariate CDF `F(t, u)` in the
/// likelihood censoring term, the posterior-predictive CDF and the cost
/// mass factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CdfConvention {
    /// `P(T <= t, U <= u)`; the censoring probability is then the mass
    /// outside the observation rectangle.
    #[default]
    Joint,
    /// `1 - R(t, u)`, the survival complement written in the original model
    /// description. Kept for compatibility runs.
    SurvivalComplement,
}

impl CdfConvention {
    pub fn cdf(&self, p: LifePoint, psi: &ParamVector) -> Result<f64> {
        match self {
            CdfConvention::Joint => joint_distribution(p, psi),
            CdfConvention::SurvivalComplement => joint_cdf(p, psi),
        }
    }
}

/// Precomputed per-parameter constants for hot loops. Callers are
/// responsible for passing a valid `ParamVector` and nonnegative points.
#[derive(Debug, Clone, Copy)]
pub struct JointKernel {
    pub psi: ParamVector,
    ln_eta_t: f64,
    ln_eta_u: f64,
    /// `lambda_t / theta`
    k_t: f64,
    /// `lambda_u / theta`
    k_u: f64,
    ln_lambdas: f64,
    /// `(1 - theta) / theta`
    c_theta: f64,
}

impl JointKernel {
    pub fn new(psi: &ParamVector) -> Self {
        JointKernel {
            psi: *psi,
            ln_eta_t: psi.eta_t.ln(),
            ln_eta_u: psi.eta_u.ln(),
            k_t: psi.lambda_t / psi.theta,
            k_u: psi.lambda_u / psi.theta,
            ln_lambdas: psi.lambda_t.ln() + psi.lambda_u.ln(),
            c_theta: (1.0 - psi.theta) / psi.theta,
        }
    }

    #[inline]
    fn log_a(&self, t: f64) -> f64 {
        if t <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.k_t * (t.ln() - self.ln_eta_t)
        }
    }

    #[inline]
    fn log_b(&self, u: f64) -> f64 {
        if u <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.k_u * (u.ln() - self.ln_eta_u)
        }
    }

    /// Joint cumulative hazard `[a + b]^theta`.
    #[inline]
    pub fn hazard(&self, t: f64, u: f64) -> f64 {
        let ls = log_sum_exp(self.log_a(t), self.log_b(u));
        if ls == f64::NEG_INFINITY {
            0.0
        } else {
            (self.psi.theta * ls).exp()
        }
    }

    #[inline]
    pub fn reliability(&self, t: f64, u: f64) -> f64 {
        (-self.hazard(t, u)).exp()
    }

    #[inline]
    pub fn marginal_hazard_t(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (self.psi.lambda_t * (t.ln() - self.ln_eta_t)).exp()
        }
    }

    #[inline]
    pub fn marginal_hazard_u(&self, u: f64) -> f64 {
        if u <= 0.0 {
            0.0
        } else {
            (self.psi.lambda_u * (u.ln() - self.ln_eta_u)).exp()
        }
    }

    /// `P(T <= t, U <= u) = 1 - R(t,0) - R(0,u) + R(t,u)`, formed with
    /// `expm1` so small probabilities keep their precision.
    #[inline]
    pub fn distribution(&self, t: f64, u: f64) -> f64 {
        let v = -(-self.marginal_hazard_t(t)).exp_m1() - (-self.marginal_hazard_u(u)).exp_m1()
            + (-self.hazard(t, u)).exp_m1();
        v.clamp(0.0, 1.0)
    }

    /// `1 - R(t, u)`.
    #[inline]
    pub fn survival_complement(&self, t: f64, u: f64) -> f64 {
        -(-self.hazard(t, u)).exp_m1()
    }

    #[inline]
    pub fn cdf(&self, convention: CdfConvention, t: f64, u: f64) -> f64 {
        match convention {
            CdfConvention::Joint => self.distribution(t, u),
            CdfConvention::SurvivalComplement => self.survival_complement(t, u),
        }
    }

    /// Log density on the open quadrant `t, u > 0`.
    #[inline]
    pub fn log_pdf(&self, t: f64, u: f64) -> f64 {
        let la = self.log_a(t);
        let lb = self.log_b(u);
        let ls = log_sum_exp(la, lb);
        let h = (self.psi.theta * ls).exp();
        self.ln_lambdas + la - t.ln() + lb - u.ln() + (self.psi.theta - 2.0) * ls
            + (h + self.c_theta).ln()
            - h
    }

    #[inline]
    pub fn pdf(&self, t: f64, u: f64) -> f64 {
        self.log_pdf(t, u).exp()
    }

    pub fn marginal_cdf(&self, scale: Scale, x: f64) -> f64 {
        let h = match scale {
            Scale::Age => self.marginal_hazard_t(x),
            Scale::Usage => self.marginal_hazard_u(x),
        };
        -(-h).exp_m1()
    }
}

#[inline]
pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m.is_infinite() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn checked(p: LifePoint, psi: &ParamVector) -> Result<JointKernel> {
    psi.validate()?;
    p.check()?;
    Ok(JointKernel::new(psi))
}

/// `R(t, u) = P(T >= t, U >= u)`.
pub fn joint_reliability(p: LifePoint, psi: &ParamVector) -> Result<f64> {
    Ok(checked(p, psi)?.reliability(p.t, p.u))
}

/// `1 - R(t, u)`.
pub fn joint_cdf(p: LifePoint, psi: &ParamVector) -> Result<f64> {
    Ok(checked(p, psi)?.survival_complement(p.t, p.u))
}

/// `P(T <= t, U <= u)`, the rectangle probability `[0,t] x [0,u]`.
pub fn joint_distribution(p: LifePoint, psi: &ParamVector) -> Result<f64> {
    Ok(checked(p, psi)?.distribution(p.t, p.u))
}

/// Log of the joint density. The density lives on the open quadrant; on an
/// axis it is returned only where its limit is finite.
pub fn log_joint_pdf(p: LifePoint, psi: &ParamVector) -> Result<f64> {
    let k = checked(p, psi)?;
    if p.t > 0.0 && p.u > 0.0 {
        return Ok(k.log_pdf(p.t, p.u));
    }
    if p.t == 0.0 && p.u == 0.0 {
        return Err(Error::Domain("density is not defined at the origin".into()));
    }
    // One coordinate on an axis: the density behaves like x^(lambda/theta - 1).
    let exponent = if p.t == 0.0 { k.k_t - 1.0 } else { k.k_u - 1.0 };
    if exponent < 0.0 {
        return Err(Error::Domain(format!(
            "density is singular on the axis at ({}, {}) (exponent {exponent:.4})",
            p.t, p.u
        )));
    }
    if exponent > 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    // lambda/theta == 1 exactly: the axis term is a finite constant.
    let (t, u) = if p.t == 0.0 {
        (f64::MIN_POSITIVE, p.u)
    } else {
        (p.t, f64::MIN_POSITIVE)
    };
    Ok(k.log_pdf(t, u))
}

pub fn joint_pdf(p: LifePoint, psi: &ParamVector) -> Result<f64> {
    Ok(log_joint_pdf(p, psi)?.exp())
}

pub fn marginal_cdf(scale: Scale, x: f64, psi: &ParamVector) -> Result<f64> {
    psi.validate()?;
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("marginal argument {x} must be finite and >= 0")));
    }
    Ok(JointKernel::new(psi).marginal_cdf(scale, x))
}

/// Weibull density of one marginal.
pub fn marginal_pdf(scale: Scale, x: f64, psi: &ParamVector) -> Result<f64> {
    psi.validate()?;
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("marginal density needs x > 0, got {x}")));
    }
    let (eta, lambda) = psi.marginal(scale);
    let z = x / eta;
    Ok(lambda / eta * z.powf(lambda - 1.0) * (-z.powf(lambda)).exp())
}

/// Inverse marginal CDF, `eta * (-ln(1 - prob))^(1/lambda)`.
pub fn marginal_quantile(scale: Scale, prob: f64, psi: &ParamVector) -> Result<f64> {
    psi.validate()?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability {prob} must lie in (0, 1)")));
    }
    let (eta, lambda) = psi.marginal(scale);
    Ok(eta * (-(-prob).ln_1p()).powf(1.0 / lambda))
}

/// Draws one lifetime pair.
///
/// Uses the frailty representation of the Gumbel copula: with `V` positive
/// stable of index `theta` (Laplace transform `exp(-s^theta)`) and `E1, E2`
/// unit exponentials, `Z_i = E_i / V` has joint survival
/// `exp(-(z1 + z2)^theta)`. The stable variate comes from Kanter's
/// representation.
pub fn sample<R: Rng + ?Sized>(psi: &ParamVector, rng: &mut R) -> LifePoint {
    let theta = psi.theta;
    let v = if theta >= 1.0 {
        1.0
    } else {
        positive_stable(theta, rng)
    };
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    let z1 = e1 / v;
    let z2 = e2 / v;
    LifePoint {
        t: psi.eta_t * z1.powf(theta / psi.lambda_t),
        u: psi.eta_u * z2.powf(theta / psi.lambda_u),
    }
}

fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let angle: f64 = loop {
        let x = rng.gen::<f64>() * std::f64::consts::PI;
        if x > 0.0 {
            break x;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * angle).sin();
    let b = ((1.0 - alpha) * angle).sin();
    let s = angle.sin();
    a / s.powf(1.0 / alpha) * (b / w).powf((1.0 - alpha) / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn psi1() -> ParamVector {
        ParamVector::new(1.015, 1.522, 0.930, 0.722, 0.172).unwrap()
    }

    #[test]
    fn reliability_at_origin_is_one() {
        let r = joint_reliability(LifePoint::new(0.0, 0.0).unwrap(), &psi1()).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(joint_cdf(LifePoint { t: 0.0, u: 0.0 }, &psi1()).unwrap(), 0.0);
        assert_eq!(joint_distribution(LifePoint { t: 0.0, u: 0.0 }, &psi1()).unwrap(), 0.0);
    }

    #[test]
    fn reliability_vanishes_far_out() {
        let psi = psi1();
        let x = 10.0 * psi.eta_t.max(psi.eta_u);
        let r = joint_reliability(LifePoint { t: x, u: x }, &psi).unwrap();
        assert!(r < 1e-6);
    }

    #[test]
    fn independence_factorizes() {
        let psi = ParamVector::new(1.3, 2.1, 0.8, 0.9, 1.0).unwrap();
        for &(t, u) in &[(0.3, 0.2), (1.0, 1.5), (2.2, 0.05)] {
            let p = LifePoint { t, u };
            let r = joint_reliability(p, &psi).unwrap();
            let expect = (-(t / 1.3f64).powf(2.1)).exp() * (-(u / 0.8f64).powf(0.9)).exp();
            assert_relative_eq!(r, expect, max_relative = 1e-13);
            let f = joint_pdf(p, &psi).unwrap();
            let g = marginal_pdf(Scale::Age, t, &psi).unwrap()
                * marginal_pdf(Scale::Usage, u, &psi).unwrap();
            assert_relative_eq!(f, g, max_relative = 1e-10);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ParamVector::new(1.0, 1.0, 1.0, 1.0, 1.2).is_err());
        assert!(ParamVector::new(0.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(ParamVector::new(1.0, f64::NAN, 1.0, 1.0, 0.5).is_err());
        assert!(LifePoint::new(f64::INFINITY, 1.0).is_err());
        assert!(LifePoint::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn singular_axis_is_rejected() {
        // lambda_u / theta = 0.5 / 0.9 < 1 so the density blows up at u = 0.
        let psi = ParamVector::new(1.0, 2.0, 1.0, 0.5, 0.9).unwrap();
        assert!(joint_pdf(LifePoint { t: 0.5, u: 0.0 }, &psi).is_err());
        // lambda_t / theta > 1: the density tends to zero on the t = 0 axis.
        assert_eq!(joint_pdf(LifePoint { t: 0.0, u: 0.5 }, &psi).unwrap(), 0.0);
        assert!(joint_pdf(LifePoint { t: 0.0, u: 0.0 }, &psi).is_err());
    }

    #[test]
    fn quantile_examples() {
        let psi = ParamVector::new(2.0, 3.0, 1.0, 1.0, 0.5).unwrap();
        let q = marginal_quantile(Scale::Age, 1.0 - (-1.0f64).exp(), &psi).unwrap();
        assert_relative_eq!(q, 2.0, max_relative = 1e-14);
        let psi = ParamVector::new(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let q = marginal_quantile(Scale::Age, 0.5, &psi).unwrap();
        assert_relative_eq!(q, std::f64::consts::LN_2, max_relative = 1e-14);
        assert!(marginal_quantile(Scale::Age, 1.0, &psi).is_err());
        assert!(marginal_quantile(Scale::Age, 0.0, &psi).is_err());
    }

    #[test]
    fn usage_quantile_matches_bisection() {
        let psi = psi1();
        let q = marginal_quantile(Scale::Usage, 0.1, &psi).unwrap();
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if marginal_cdf(Scale::Usage, mid, &psi).unwrap() < 0.1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(q, 0.5 * (lo + hi), max_relative = 1e-12);
    }

    #[test]
    fn sampler_matches_joint_survival() {
        let psi = psi1();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let pts: Vec<LifePoint> = (0..n).map(|_| sample(&psi, &mut rng)).collect();
        for &(t, u) in &[(0.5, 0.3), (1.0, 0.5), (0.2, 0.8), (2.0, 0.1)] {
            let emp = pts.iter().filter(|p| p.t >= t && p.u >= u).count() as f64 / n as f64;
            let r = joint_reliability(LifePoint { t, u }, &psi).unwrap();
            let se = (r * (1.0 - r) / n as f64).sqrt();
            assert!((emp - r).abs() < 4.0 * se, "({t},{u}): {emp} vs {r}");
        }
    }
}
