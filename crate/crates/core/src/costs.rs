//! Economic benefit, warranty cost and dissatisfaction cost of a combined
//! free-replacement / pro-rata policy on age and usage, and their
//! posterior-predictive expectations.
//!
//! Every region appearing in the cost expressions is a cell of the grid
//! `{0, t_w1, t_w2, L_t} x {0, u_w1, u_w2, L_u}`, and every integrand is a
//! density times a weight `c0 + ct*t + cu*u + ctu*t*u`. So per draw we only
//! need the four moments of the density on each cell. They follow from
//! the joint distribution `P` by integration by parts, which leaves corner
//! values of `P`, one-dimensional integrals of `P` along cell edges, and
//! for the `t*u` moment the integral of `P` over the cell. Moments are
//! linear in the density, so they are averaged over the chain once and the
//! weights are applied to the averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{PosteriorChain, Predictive};
use crate::model::{CdfConvention, JointKernel, LifePoint, Scale};
use crate::quadrature::{GaussLegendre, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarrantyRegion {
    pub t_w1: f64,
    pub t_w2: f64,
    pub u_w1: f64,
    pub u_w2: f64,
}

impl WarrantyRegion {
    pub fn new(t_w1: f64, t_w2: f64, u_w1: f64, u_w2: f64) -> Result<Self> {
        let r = WarrantyRegion {
            t_w1,
            t_w2,
            u_w1,
            u_w2,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("thresholds {a:?} must be finite and >= 0")));
        }
        if self.t_w1 > self.t_w2 || self.u_w1 > self.u_w2 {
            return Err(Error::Domain(format!(
                "thresholds must satisfy t_w1 <= t_w2 and u_w1 <= u_w2, got {a:?}"
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.t_w1, self.t_w2, self.u_w1, self.u_w2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// Unit sale price.
    pub s: f64,
    /// Unit production cost.
    pub c: f64,
    /// Unit profit, `s - c`.
    pub a1: f64,
    /// Market size.
    pub m: f64,
    /// Benefit rate on age.
    pub a2: f64,
    /// Benefit rate on usage.
    pub a3: f64,
    pub q1t: f64,
    pub q2t: f64,
    pub q1u: f64,
    pub q2u: f64,
    /// Consumer-expected age.
    pub lt: f64,
    /// Consumer-expected usage.
    pub lu: f64,
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [("s", self.s), ("m", self.m), ("a2", self.a2), ("a3", self.a3), ("lt", self.lt), ("lu", self.lu)];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and > 0")));
            }
        }
        if !self.c.is_finite() || !self.a1.is_finite() {
            return Err(Error::Config("c and a1 must be finite".into()));
        }
        if (self.a1 - (self.s - self.c)).abs() > 1e-9 * self.s.abs().max(1.0) {
            return Err(Error::Config(format!(
                "a1 = {} must equal s - c = {}",
                self.a1,
                self.s - self.c
            )));
        }
        for (scale, q1, q2) in [("age", self.q1t, self.q2t), ("usage", self.q1u, self.q2u)] {
            if !(0.0 <= q2 && q2 <= q1 && q1 <= 1.0) {
                return Err(Error::Config(format!(
                    "{scale} proportions must satisfy 0 <= q2 <= q1 <= 1, got q1 = {q1}, q2 = {q2}"
                )));
            }
        }
        Ok(())
    }

    /// Checks the thresholds stay inside the consumer-expected life.
    pub fn check_region(&self, region: &WarrantyRegion) -> Result<()> {
        region.validate()?;
        if region.t_w2 >= self.lt || region.u_w2 >= self.lu {
            return Err(Error::Config(format!(
                "thresholds must stay below the expected life: t_w2 = {} (L_t = {}), u_w2 = {} (L_u = {})",
                region.t_w2, self.lt, region.u_w2, self.lu
            )));
        }
        Ok(())
    }
}

/// Prices, market size and proportions, before benefit calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Economics {
    pub s: f64,
    pub c: f64,
    pub m: f64,
    pub q1t: f64,
    pub q2t: f64,
    pub q1u: f64,
    pub q2u: f64,
    /// Benefit ratio reached at the age reference threshold.
    pub qstar_t: f64,
    pub qstar_u: f64,
}

impl Default for Economics {
    fn default() -> Self {
        Economics {
            s: 700.0,
            c: 500.0,
            m: 1.0,
            q1t: 0.10,
            q2t: 0.05,
            q1u: 0.10,
            q2u: 0.05,
            qstar_t: 0.75,
            qstar_u: 0.75,
        }
    }
}

/// Expected life and reference warranty thresholds, usually predictive
/// quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifeReference {
    pub lt: f64,
    pub lu: f64,
    pub t_w: f64,
    pub u_w: f64,
}

impl LifeReference {
    /// Marginal predictive quantiles at `life_prob` and `reference_prob`.
    pub fn from_chain(chain: &PosteriorChain, life_prob: f64, reference_prob: f64) -> Result<Self> {
        let p = Predictive::new(chain);
        Ok(LifeReference {
            lt: p.quantile(Scale::Age, life_prob)?,
            lu: p.quantile(Scale::Usage, life_prob)?,
            t_w: p.quantile(Scale::Age, reference_prob)?,
            u_w: p.quantile(Scale::Usage, reference_prob)?,
        })
    }
}

impl CostConfig {
    /// Builds a configuration, solving for the benefit rates from the
    /// reference thresholds.
    pub fn calibrated(e: &Economics, refs: &LifeReference) -> Result<Self> {
        let cfg = CostConfig {
            s: e.s,
            c: e.c,
            a1: e.s - e.c,
            m: e.m,
            a2: calibrate_benefit_rate(refs.t_w, e.qstar_t)?,
            a3: calibrate_benefit_rate(refs.u_w, e.qstar_u)?,
            q1t: e.q1t,
            q2t: e.q2t,
            q1u: e.q1u,
            q2u: e.q2u,
            lt: refs.lt,
            lu: refs.lu,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `h(A, x) = (1 - exp(-A x / 2)) / (1 - exp(-A x))`, which simplifies to
/// the logistic function of `A x / 2`.
pub fn benefit_ratio(a: f64, x: f64) -> f64 {
    1.0 / (1.0 + (-0.5 * a * x).exp())
}

/// The rate `A` with `h(A, x_w) = q_star`.
pub fn calibrate_benefit_rate(x_w: f64, q_star: f64) -> Result<f64> {
    if !(x_w > 0.0 && x_w.is_finite()) {
        return Err(Error::Domain(format!("reference threshold {x_w} must be > 0")));
    }
    if !(q_star > 0.5 && q_star < 1.0) {
        return Err(Error::Domain(format!("reference proportion {q_star} must lie in (0.5, 1)")));
    }
    Ok(-(2.0 / x_w) * ((1.0 - q_star) / q_star).ln())
}

pub fn economic_benefit(region: &WarrantyRegion, cfg: &CostConfig) -> f64 {
    let mt = 0.5 * (region.t_w1 + region.t_w2);
    let mu = 0.5 * (region.u_w1 + region.u_w2);
    cfg.a1 * cfg.m * (-(-cfg.a2 * mt).exp_m1()) * (-(-cfg.a3 * mu).exp_m1())
}

/// Reimbursement for a failure at `p`.
pub fn per_unit_warranty_cost(p: LifePoint, region: &WarrantyRegion, s: f64) -> f64 {
    prorata(p.t, region.t_w1, region.t_w2) * prorata(p.u, region.u_w1, region.u_w2) * s
}

/// 1 up to `x1`, linear down to 0 at `x2`, 0 beyond.
fn prorata(x: f64, x1: f64, x2: f64) -> f64 {
    if x <= x1 {
        1.0
    } else if x < x2 {
        (x2 - x) / (x2 - x1)
    } else {
        0.0
    }
}

/// Per-scale dissatisfaction proportion: `q1` up to `x1`, linear to `q2` at
/// `x2`, linear to 0 at `l`, 0 beyond.
pub fn dissatisfaction_proportion(x: f64, x1: f64, x2: f64, l: f64, q1: f64, q2: f64) -> f64 {
    if x <= x1 {
        q1
    } else if x <= x2 {
        q1 - (q1 - q2) * (x - x1) / (x2 - x1)
    } else if x <= l {
        q2 * (l - x) / (l - x2)
    } else {
        0.0
    }
}

/// `(S/2) [D^T(t) + D^U(u)]` with the per-scale proportions above.
pub fn per_unit_dissatisfaction(p: LifePoint, region: &WarrantyRegion, cfg: &CostConfig) -> f64 {
    let dt = dissatisfaction_proportion(p.t, region.t_w1, region.t_w2, cfg.lt, cfg.q1t, cfg.q2t);
    let du = dissatisfaction_proportion(p.u, region.u_w1, region.u_w2, cfg.lu, cfg.q1u, cfg.q2u);
    0.5 * cfg.s * (dt + du)
}

/// Which bracketed factor goes with which cell in the dissatisfaction
/// expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissatisfactionForm {
    /// Each case factor on its own case rectangle; every factor is the
    /// generic per-scale proportion, so the integrand is continuous.
    #[default]
    CaseConsistent,
    /// The expectation exactly as displayed: cases II and III swap factors,
    /// case IV interpolates with `(L - x)/(L - x2)`, case V divides by
    /// `L_u - t_w2` and case IX by `u_w2 - u_w1`.
    DisplayLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostOptions {
    pub convention: CdfConvention,
    pub form: DissatisfactionForm,
    /// Gauss–Legendre nodes for edge integrals of `P`.
    pub line_nodes: usize,
    /// Nodes per axis for the cell integral of `P`.
    pub area_nodes: usize,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            convention: CdfConvention::default(),
            form: DissatisfactionForm::default(),
            line_nodes: 32,
            area_nodes: 20,
        }
    }
}

/// `c0 + ct t + cu u + ctu t u`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Affine {
    pub c0: f64,
    pub ct: f64,
    pub cu: f64,
    pub ctu: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            c0: c,
            ..Default::default()
        }
    }

    /// `alpha + beta x` on the age axis.
    fn in_t(alpha: f64, beta: f64) -> Self {
        Affine {
            c0: alpha,
            ct: beta,
            ..Default::default()
        }
    }

    fn in_u(alpha: f64, beta: f64) -> Self {
        Affine {
            c0: alpha,
            cu: beta,
            ..Default::default()
        }
    }

    fn plus(self, o: Affine) -> Affine {
        Affine {
            c0: self.c0 + o.c0,
            ct: self.ct + o.ct,
            cu: self.cu + o.cu,
            ctu: self.ctu + o.ctu,
        }
    }

    fn apply(&self, m: &Moments) -> f64 {
        let mut v = self.c0 * m.m0 + self.ct * m.mt + self.cu * m.mu;
        if self.ctu != 0.0 {
            v += self.ctu * m.mtu;
        }
        v
    }
}

/// `int f`, `int t f`, `int u f`, `int t u f` over a rectangle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m0: f64,
    pub mt: f64,
    pub mu: f64,
    pub mtu: f64,
}

impl Moments {
    fn add_scaled(&mut self, o: &Moments, w: f64) {
        self.m0 += w * o.m0;
        self.mt += w * o.mt;
        self.mu += w * o.mu;
        self.mtu += w * o.mtu;
    }
}

/// Quadrature rules used by the moment reduction.
#[derive(Debug, Clone)]
pub struct MomentRules {
    line: GaussLegendre,
    area: GaussLegendre,
}

impl MomentRules {
    pub fn new(line_nodes: usize, area_nodes: usize) -> Self {
        MomentRules {
            line: GaussLegendre::new(line_nodes.max(1)),
            area: GaussLegendre::new(area_nodes.max(1)),
        }
    }
}

impl Default for MomentRules {
    fn default() -> Self {
        let o = CostOptions::default();
        MomentRules::new(o.line_nodes, o.area_nodes)
    }
}

/// Gauss–Legendre on `[lo, hi]`; from the origin the nodes are pulled
/// towards it with `x = hi s^3`, since the marginal CDFs behave like
/// `x^shape` there.
fn graded<F: Fn(f64) -> f64>(rule: &GaussLegendre, lo: f64, hi: f64, f: F) -> f64 {
    if lo == 0.0 {
        rule.integrate(0.0, 1.0, |s| 3.0 * hi * s * s * f(hi * s * s * s))
    } else {
        rule.integrate(lo, hi, f)
    }
}

/// Density moments of one draw on `rect`. `with_tu` enables the `t u`
/// moment, which needs an extra cell integral.
pub fn box_moments(k: &JointKernel, rect: Rect, rules: &MomentRules, with_tu: bool) -> Moments {
    let Rect { x0: a, x1: b, y0: c, y1: d } = rect;
    if !(b > a) || !(d > c) {
        return Moments::default();
    }
    let p = |t: f64, u: f64| k.distribution(t, u);
    let (pac, pad, pbc, pbd) = (p(a, c), p(a, d), p(b, c), p(b, d));
    // Edge integrals; P vanishes on the axes.
    let lt = |y: f64| if y == 0.0 { 0.0 } else { graded(&rules.line, a, b, |t| p(t, y)) };
    let lu = |x: f64| if x == 0.0 { 0.0 } else { graded(&rules.line, c, d, |u| p(x, u)) };
    let (lt_c, lt_d, lu_a, lu_b) = (lt(c), lt(d), lu(a), lu(b));
    let m0 = pbd - pad - pbc + pac;
    let mt = (b * (pbd - pbc) - a * (pad - pac)) - (lt_d - lt_c);
    let mu = (d * (pbd - pad) - c * (pbc - pac)) - (lu_b - lu_a);
    let mtu = if with_tu {
        let area = graded(&rules.area, a, b, |t| graded(&rules.area, c, d, |u| p(t, u)));
        d * (b * pbd - a * pad - lt_d) - c * (b * pbc - a * pac - lt_c) - b * lu_b + a * lu_a + area
    } else {
        0.0
    };
    Moments { m0, mt, mu, mtu }
}

/// Grid `{0, t_w1, t_w2, L_t} x {0, u_w1, u_w2, L_u}` quantities averaged
/// over the chain.
#[derive(Debug, Clone)]
struct GridSummary {
    ts: [f64; 4],
    us: [f64; 4],
    /// Convention CDF at grid nodes, zero on the axes.
    f: [[f64; 4]; 4],
    cells: [[Moments; 3]; 3],
}

impl GridSummary {
    fn mass(&self, i: usize, j: usize) -> f64 {
        self.f[i + 1][j + 1] - self.f[i][j + 1] - self.f[i + 1][j] + self.f[i][j]
    }

    fn width_t(&self, i: usize) -> f64 {
        self.ts[i + 1] - self.ts[i]
    }

    fn width_u(&self, j: usize) -> f64 {
        self.us[j + 1] - self.us[j]
    }

    fn degenerate(&self, i: usize, j: usize) -> bool {
        !(self.width_t(i) > 0.0 && self.width_u(j) > 0.0)
    }
}

/// Per-term expected costs at one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub economic_benefit: f64,
    pub warranty: f64,
    pub dissatisfaction: f64,
    pub utility: f64,
    pub warranty_terms: [f64; 4],
    pub dissatisfaction_terms: [f64; 9],
}

/// Expected-utility evaluator for a fixed chain and configuration.
#[derive(Debug, Clone)]
pub struct UtilityModel {
    kernels: Vec<JointKernel>,
    pub cfg: CostConfig,
    pub opts: CostOptions,
    rules: MomentRules,
}

impl UtilityModel {
    pub fn new(chain: &PosteriorChain, cfg: &CostConfig, opts: &CostOptions) -> Result<Self> {
        if chain.is_empty() {
            return Err(Error::InsufficientData("empty chain".into()));
        }
        cfg.validate()?;
        Ok(UtilityModel {
            kernels: Predictive::new(chain).kernels().to_vec(),
            cfg: *cfg,
            opts: *opts,
            rules: MomentRules::new(opts.line_nodes, opts.area_nodes),
        })
    }

    /// The same model on a different quadrature rule.
    pub fn with_nodes(&self, line_nodes: usize, area_nodes: usize) -> Self {
        let mut m = self.clone();
        m.opts.line_nodes = line_nodes;
        m.opts.area_nodes = area_nodes;
        m.rules = MomentRules::new(line_nodes, area_nodes);
        m
    }

    pub fn draws(&self) -> usize {
        self.kernels.len()
    }

    fn summarize(&self, r: &WarrantyRegion) -> GridSummary {
        let ts = [0.0, r.t_w1, r.t_w2, self.cfg.lt];
        let us = [0.0, r.u_w1, r.u_w2, self.cfg.lu];
        let mut f = [[0.0; 4]; 4];
        let mut cells = [[Moments::default(); 3]; 3];
        let w = 1.0 / self.kernels.len() as f64;
        for k in &self.kernels {
            for i in 1..4 {
                for j in 1..4 {
                    f[i][j] += w * k.cdf(self.opts.convention, ts[i], us[j]);
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let rect = Rect::new(ts[i], ts[i + 1], us[j], us[j + 1]);
                    // Only the pro-rata box weight has a t*u term.
                    let m = box_moments(k, rect, &self.rules, i == 1 && j == 1);
                    cells[i][j].add_scaled(&m, w);
                }
            }
        }
        GridSummary { ts, us, f, cells }
    }

    pub fn breakdown(&self, region: &WarrantyRegion) -> Result<CostBreakdown> {
        self.cfg.check_region(region)?;
        let g = self.summarize(region);
        let warranty_terms = self.warranty_terms(&g);
        let dissatisfaction_terms = self.dissatisfaction_terms(&g)?;
        let eb = economic_benefit(region, &self.cfg);
        let warranty: f64 = warranty_terms.iter().sum();
        let dissatisfaction: f64 = dissatisfaction_terms.iter().sum();
        Ok(CostBreakdown {
            economic_benefit: eb,
            warranty,
            dissatisfaction,
            utility: eb - warranty - dissatisfaction,
            warranty_terms,
            dissatisfaction_terms,
        })
    }

    pub fn utility(&self, region: &WarrantyRegion) -> Result<f64> {
        Ok(self.breakdown(region)?.utility)
    }

    fn warranty_terms(&self, g: &GridSummary) -> [f64; 4] {
        let scale = self.cfg.m * self.cfg.s;
        let (t1, t2) = (g.ts[1], g.ts[2]);
        let (u1, u2) = (g.us[1], g.us[2]);
        let mut out = [0.0; 4];
        // Free-replacement box: the integral is the CDF itself.
        out[0] = scale * g.f[1][1] * g.f[1][1];
        if !g.degenerate(1, 0) {
            let dt = t2 - t1;
            let w = Affine::in_t(t2 / dt, -1.0 / dt);
            out[1] = scale * g.mass(1, 0) * w.apply(&g.cells[1][0]);
        }
        if !g.degenerate(0, 1) {
            let du = u2 - u1;
            let w = Affine::in_u(u2 / du, -1.0 / du);
            out[2] = scale * g.mass(0, 1) * w.apply(&g.cells[0][1]);
        }
        if !g.degenerate(1, 1) {
            let s = 1.0 / ((t2 - t1) * (u2 - u1));
            let w = Affine {
                c0: t2 * u2 * s,
                ct: -u2 * s,
                cu: -t2 * s,
                ctu: s,
            };
            out[3] = scale * g.mass(1, 1) * w.apply(&g.cells[1][1]);
        }
        out
    }

    fn dissatisfaction_terms(&self, g: &GridSummary) -> Result<[f64; 9]> {
        let c = &self.cfg;
        let scale = 0.5 * c.m * c.s;
        let (t1, t2, lt) = (g.ts[1], g.ts[2], g.ts[3]);
        let (u1, u2, lu) = (g.us[1], g.us[2], g.us[3]);
        // Per-scale factors on each segment, as affine maps.
        let t_free = Affine::constant(c.q1t);
        let u_free = Affine::constant(c.q1u);
        let t_interp = || {
            let k = (c.q1t - c.q2t) / (t2 - t1);
            Affine::in_t(c.q1t + k * t1, -k)
        };
        let u_interp = || {
            let k = (c.q1u - c.q2u) / (u2 - u1);
            Affine::in_u(c.q1u + k * u1, -k)
        };
        let t_post = || Affine::in_t(c.q2t * lt / (lt - t2), -c.q2t / (lt - t2));
        let u_post = || Affine::in_u(c.q2u * lu / (lu - u2), -c.q2u / (lu - u2));
        let literal = self.opts.form == DissatisfactionForm::DisplayLiteral;

        let mut out = [0.0; 9];
        out[0] = scale * g.f[1][1] * (c.q1t + c.q1u) * g.f[1][1];

        // (term index, mass cell, integral cell, factor)
        let mut terms: Vec<(usize, (usize, usize), Box<dyn Fn() -> Result<Affine>>)> = Vec::new();
        if literal {
            terms.push((1, (1, 0), Box::new(move || Ok(t_free.plus(u_interp())))));
            terms.push((2, (0, 1), Box::new(move || Ok(t_interp().plus(u_free)))));
            terms.push((
                3,
                (1, 1),
                Box::new(move || {
                    let kt = (c.q1t - c.q2t) / (lt - t2);
                    let ku = (c.q1u - c.q2u) / (lu - u2);
                    Ok(Affine {
                        c0: c.q1t - kt * lt + c.q1u - ku * lu,
                        ct: kt,
                        cu: ku,
                        ctu: 0.0,
                    })
                }),
            ));
            terms.push((
                4,
                (0, 2),
                Box::new(move || {
                    let den = lu - t2;
                    if den == 0.0 {
                        return Err(Error::Domain("case V denominator L_u - t_w2 is zero".into()));
                    }
                    Ok(t_free.plus(Affine::in_u(c.q2u * lu / den, -c.q2u / den)))
                }),
            ));
            terms.push((
                8,
                (2, 2),
                Box::new(move || {
                    let den = u2 - u1;
                    if den == 0.0 {
                        return Err(Error::Domain("case IX denominator u_w2 - u_w1 is zero".into()));
                    }
                    Ok(t_post().plus(Affine::in_u(c.q2u * lu / den, -c.q2u / den)))
                }),
            ));
        } else {
            terms.push((1, (0, 1), Box::new(move || Ok(t_free.plus(u_interp())))));
            terms.push((2, (1, 0), Box::new(move || Ok(t_interp().plus(u_free)))));
            terms.push((3, (1, 1), Box::new(move || Ok(t_interp().plus(u_interp())))));
            terms.push((4, (0, 2), Box::new(move || Ok(t_free.plus(u_post())))));
            terms.push((8, (2, 2), Box::new(move || Ok(t_post().plus(u_post())))));
        }
        terms.push((5, (2, 0), Box::new(move || Ok(t_post().plus(u_free)))));
        terms.push((6, (1, 2), Box::new(move || Ok(t_interp().plus(u_post())))));
        terms.push((7, (2, 1), Box::new(move || Ok(t_post().plus(u_interp())))));

        for (idx, (i, j), factor) in terms {
            if g.degenerate(i, j) {
                continue;
            }
            let w = factor()?;
            out[idx] = scale * g.mass(i, j) * w.apply(&g.cells[i][j]);
        }
        Ok(out)
    }
}

pub fn expected_warranty_cost(region: &WarrantyRegion, chain: &PosteriorChain, cfg: &CostConfig) -> Result<f64> {
    Ok(UtilityModel::new(chain, cfg, &CostOptions::default())?.breakdown(region)?.warranty)
}

pub fn expected_dissatisfaction_cost(
    region: &WarrantyRegion,
    chain: &PosteriorChain,
    cfg: &CostConfig,
) -> Result<f64> {
    Ok(UtilityModel::new(chain, cfg, &CostOptions::default())?.breakdown(region)?.dissatisfaction)
}

pub fn expected_utility(region: &WarrantyRegion, chain: &PosteriorChain, cfg: &CostConfig) -> Result<f64> {
    UtilityModel::new(chain, cfg, &CostOptions::default())?.utility(region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamVector;
    use crate::quadrature::{adaptive_cubature, CubatureOptions};
    use approx::assert_relative_eq;

    fn cfg() -> CostConfig {
        CostConfig {
            s: 700.0,
            c: 500.0,
            a1: 200.0,
            m: 1.0,
            a2: 10.95,
            a3: 27.91,
            q1t: 0.10,
            q2t: 0.05,
            q1u: 0.10,
            q2u: 0.05,
            lt: 1.020,
            lu: 0.6547,
        }
    }

    fn psi() -> ParamVector {
        ParamVector::new(1.522, 1.015, 0.722, 0.930, 0.172).unwrap()
    }

    #[test]
    fn calibration_roundtrip() {
        for &(x, q) in &[(0.2006, 0.75), (0.0787, 0.75), (3.0, 0.51), (0.01, 0.99)] {
            let a = calibrate_benefit_rate(x, q).unwrap();
            assert!((benefit_ratio(a, x) - q).abs() < 1e-12);
            let direct = (1.0 - (-a * x / 2.0).exp()) / (1.0 - (-a * x).exp());
            assert!((direct - q).abs() < 1e-12);
        }
        assert!(calibrate_benefit_rate(1.0, 0.5).is_err());
        assert!(calibrate_benefit_rate(1.0, 1.0).is_err());
    }

    #[test]
    fn benefit_limits() {
        let c = cfg();
        assert_eq!(economic_benefit(&WarrantyRegion::new(0.0, 0.0, 0.1, 0.2).unwrap(), &c), 0.0);
        let big = WarrantyRegion::new(1e6, 1e6, 1e6, 1e6).unwrap();
        assert!((economic_benefit(&big, &c) - 200.0).abs() < 1e-9);
    }

    #[test]
    fn per_unit_costs() {
        let r = WarrantyRegion::new(0.2, 0.6, 0.1, 0.3).unwrap();
        assert_eq!(per_unit_warranty_cost(LifePoint { t: 0.1, u: 0.05 }, &r, 700.0), 700.0);
        assert_eq!(per_unit_warranty_cost(LifePoint { t: 0.6, u: 0.05 }, &r, 700.0), 0.0);
        assert_relative_eq!(
            per_unit_warranty_cost(LifePoint { t: 0.4, u: 0.2 }, &r, 700.0),
            175.0,
            max_relative = 1e-14
        );
        let c = cfg();
        assert_relative_eq!(
            per_unit_dissatisfaction(LifePoint { t: 0.1, u: 0.05 }, &r, &c),
            70.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            per_unit_dissatisfaction(LifePoint { t: 0.6, u: 0.3 }, &r, &c),
            350.0 * 0.10,
            max_relative = 1e-12
        );
        assert_eq!(per_unit_dissatisfaction(LifePoint { t: 2.0, u: 1.0 }, &r, &c), 0.0);
    }

    #[test]
    fn moments_match_density_cubature() {
        let k = JointKernel::new(&psi());
        let rules = MomentRules::default();
        let opts = CubatureOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..Default::default()
        };
        for rect in [
            Rect::new(0.1435, 0.9373, 0.1105, 0.2048),
            Rect::new(0.0, 0.1435, 0.2048, 0.6547),
            Rect::new(0.9373, 1.02, 0.0, 0.1105),
        ] {
            let m = box_moments(&k, rect, &rules, true);
            let r = adaptive_cubature(4, rect, &opts, |t, u, out| {
                let f = k.pdf(t, u);
                out[0] = f;
                out[1] = t * f;
                out[2] = u * f;
                out[3] = t * u * f;
            })
            .unwrap();
            for (got, want) in [m.m0, m.mt, m.mu, m.mtu].iter().zip(&r.value) {
                assert!((got - want).abs() < 1e-9 + 1e-7 * want.abs(), "{rect:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn frw_only_region_cost() {
        let chain = PosteriorChain::from_draws(vec![psi()]).unwrap();
        let r = WarrantyRegion::new(0.3, 0.3, 0.15, 0.15).unwrap();
        let w = expected_warranty_cost(&r, &chain, &cfg()).unwrap();
        let f = crate::model::joint_distribution(LifePoint { t: 0.3, u: 0.15 }, &psi()).unwrap();
        assert_relative_eq!(w, 700.0 * f * f, max_relative = 1e-12);
        let null = WarrantyRegion::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(expected_warranty_cost(&null, &chain, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn region_beyond_expected_life_is_rejected() {
        let chain = PosteriorChain::from_draws(vec![psi()]).unwrap();
        let r = WarrantyRegion::new(0.3, 1.5, 0.15, 0.2).unwrap();
        assert!(matches!(expected_utility(&r, &chain, &cfg()), Err(Error::Config(_))));
    }
}
