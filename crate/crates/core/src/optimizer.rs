//! Multi-start simplex search for the utility-maximizing warranty region,
//! and sensitivity scans over cost and censoring settings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{CostConfig, CostOptions, Economics, LifeReference, UtilityModel, WarrantyRegion};
use crate::data::RawRecord;
use crate::error::{Error, Result};
use crate::inference::{logit, sigmoid};
use crate::mcmc::PosteriorChain;
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::simplex::{minimize, NelderMeadOptions};

/// Upper thresholds stay below this fraction of the expected life.
pub const INTERIOR_GUARD: f64 = 0.999;

/// Relative gap below which a lower threshold counts as equal to its upper one.
const DEGENERATE_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub region: WarrantyRegion,
    pub utility: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    /// The optimum has `t_w1 = t_w2` or `u_w1 = u_w2` up to a small gap,
    /// i.e. no pro-rata band on that scale.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub n_restarts: usize,
    pub seed: u64,
    pub x_tol: f64,
    pub max_iter: usize,
    /// Initial simplex step in transformed coordinates.
    pub step: f64,
    /// Quadrature nodes (line, area) used while searching; the reported
    /// utility always uses the model's own rule.
    pub search_nodes: (usize, usize),
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            n_restarts: 16,
            seed: 20240601,
            x_tol: 1e-6,
            max_iter: 2000,
            step: 0.5,
            search_nodes: (16, 10),
        }
    }
}

/// Maps `z` to a region with `0 < t_w1 < t_w2 < guard * L_t` and likewise
/// for usage.
pub fn region_from_z(z: &[f64], lt: f64, lu: f64) -> WarrantyRegion {
    let t2 = INTERIOR_GUARD * lt * sigmoid(z[1]);
    let u2 = INTERIOR_GUARD * lu * sigmoid(z[3]);
    WarrantyRegion {
        t_w1: t2 * sigmoid(z[0]),
        t_w2: t2,
        u_w1: u2 * sigmoid(z[2]),
        u_w2: u2,
    }
}

/// Inverse of [`region_from_z`], with ratios clipped away from 0 and 1.
pub fn z_from_region(r: &WarrantyRegion, lt: f64, lu: f64) -> [f64; 4] {
    let clip = |p: f64| if p.is_finite() { p.clamp(1e-6, 1.0 - 1e-6) } else { 0.5 };
    [
        logit(clip(r.t_w1 / r.t_w2)),
        logit(clip(r.t_w2 / (INTERIOR_GUARD * lt))),
        logit(clip(r.u_w1 / r.u_w2)),
        logit(clip(r.u_w2 / (INTERIOR_GUARD * lu))),
    ]
}

fn lex_less(a: &WarrantyRegion, b: &WarrantyRegion) -> bool {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

fn is_degenerate(r: &WarrantyRegion) -> bool {
    r.t_w2 - r.t_w1 <= DEGENERATE_GAP * r.t_w2 || r.u_w2 - r.u_w1 <= DEGENERATE_GAP * r.u_w2
}

/// Starting points: `init`, then Latin-hypercube draws of the four ratios
/// used by the reparameterization.
fn starting_points(init: &WarrantyRegion, lt: f64, lu: f64, opts: &OptimOptions) -> Vec<[f64; 4]> {
    let n = opts.n_restarts.max(1);
    let mut out = vec![z_from_region(init, lt, lu)];
    let k = n - 1;
    if k == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut strata: Vec<usize> = (0..k).collect();
        strata.shuffle(&mut rng);
        columns.push(
            strata
                .into_iter()
                .map(|s| (s as f64 + rng.gen::<f64>()) / k as f64)
                .collect(),
        );
    }
    for i in 0..k {
        let z = [0, 1, 2, 3].map(|d| logit(0.02 + 0.96 * columns[d][i]));
        out.push(z);
    }
    out
}

/// Maximizes `objective` over feasible regions. Evaluation errors count as
/// `-inf`. Restarts run in parallel and are reduced in a fixed order.
pub fn maximize<F>(objective: F, lt: f64, lu: f64, init: &WarrantyRegion, opts: &OptimOptions) -> Result<OptimResult>
where
    F: Fn(&WarrantyRegion) -> Result<f64> + Sync,
{
    maximize_with_report(&objective, &objective, lt, lu, init, opts)
}

/// As [`maximize`], searching on `search` and ranking restart endpoints by
/// `report`, whose value is returned.
pub fn maximize_with_report<F, G>(
    search: &F,
    report: &G,
    lt: f64,
    lu: f64,
    init: &WarrantyRegion,
    opts: &OptimOptions,
) -> Result<OptimResult>
where
    F: Fn(&WarrantyRegion) -> Result<f64> + Sync,
    G: Fn(&WarrantyRegion) -> Result<f64> + Sync,
{
    if !(lt > 0.0 && lu > 0.0 && lt.is_finite() && lu.is_finite()) {
        return Err(Error::Config(format!("expected life ({lt}, {lu}) must be finite and > 0")));
    }
    init.validate()?;
    if init.t_w2 >= lt || init.u_w2 >= lu {
        return Err(Error::Config("initial region exceeds the expected life".into()));
    }
    let starts = starting_points(init, lt, lu, opts);
    let nm = NelderMeadOptions {
        x_tol: opts.x_tol,
        f_tol: 0.0,
        max_iter: opts.max_iter,
        step: opts.step,
    };
    let runs: Vec<(WarrantyRegion, f64, usize, bool)> = starts
        .par_iter()
        .map(|z0| {
            let f = |z: &[f64]| {
                let r = region_from_z(z, lt, lu);
                assert!(
                    r.t_w1 <= r.t_w2 && r.u_w1 <= r.u_w2 && r.t_w2 < lt && r.u_w2 < lu,
                    "infeasible candidate {r:?}"
                );
                match search(&r) {
                    Ok(v) if v.is_finite() => -v,
                    _ => f64::INFINITY,
                }
            };
            let mut m = minimize(f, z0, &nm);
            let mut iterations = m.iterations;
            // A fresh, smaller simplex around the incumbent guards against collapse.
            if m.f.is_finite() {
                let polish = NelderMeadOptions { step: 0.1 * nm.step, ..nm };
                let again = minimize(f, &m.x, &polish);
                iterations += again.iterations;
                let converged = again.converged;
                if again.f <= m.f {
                    m = again;
                }
                m.converged = converged;
            }
            let region = region_from_z(&m.x, lt, lu);
            let u = if m.f.is_finite() {
                report(&region).ok().filter(|v| v.is_finite()).unwrap_or(f64::NEG_INFINITY)
            } else {
                f64::NEG_INFINITY
            };
            (region, u, iterations, m.converged)
        })
        .collect();

    let mut best: Option<(WarrantyRegion, f64, bool)> = None;
    let mut iterations = 0;
    for (region, u, it, conv) in &runs {
        iterations += it;
        if !u.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((br, bu, _)) => *u > *bu || (*u == *bu && lex_less(region, br)),
        };
        if better {
            best = Some((*region, *u, *conv));
        }
    }
    Ok(match best {
        Some((region, utility, converged)) => OptimResult {
            region,
            utility,
            iterations,
            converged,
            restarts_used: runs.len(),
            degenerate: is_degenerate(&region),
        },
        None => OptimResult {
            region: *init,
            utility: f64::NAN,
            iterations,
            converged: false,
            restarts_used: runs.len(),
            degenerate: is_degenerate(init),
        },
    })
}

/// Maximizes the expected utility of `model`.
pub fn optimize_model(model: &UtilityModel, init: &WarrantyRegion, opts: &OptimOptions) -> Result<OptimResult> {
    let (line, area) = opts.search_nodes;
    let coarse = model.with_nodes(line, area);
    maximize_with_report(
        &|r: &WarrantyRegion| coarse.utility(r),
        &|r: &WarrantyRegion| model.utility(r),
        model.cfg.lt,
        model.cfg.lu,
        init,
        opts,
    )
}

pub fn optimize_region(
    chain: &PosteriorChain,
    cfg: &CostConfig,
    init: &WarrantyRegion,
    n_restarts: usize,
) -> Result<OptimResult> {
    let model = UtilityModel::new(chain, cfg, &CostOptions::default())?;
    let opts = OptimOptions {
        n_restarts,
        ..Default::default()
    };
    optimize_model(&model, init, &opts)
}

/// A starting region built from the reference thresholds.
pub fn initial_region(refs: &LifeReference) -> WarrantyRegion {
    let t2 = (2.0 * refs.t_w).min(0.5 * refs.lt);
    let u2 = (2.0 * refs.u_w).min(0.5 * refs.lu);
    WarrantyRegion {
        t_w1: 0.5 * t2,
        t_w2: t2,
        u_w1: 0.5 * u2,
        u_w2: u2,
    }
}

/// Parameter name to value; see [`OVERRIDE_KEYS`].
pub type Overrides = BTreeMap<String, f64>;

/// Recognized override keys. `s` keeps the unit profit fixed; `q1`/`q2`
/// set both scales; `qstar*` recalibrate the benefit rates; `t0`/`u0`
/// rerun the whole pipeline on re-censored data.
pub const OVERRIDE_KEYS: [&str; 14] = [
    "s", "m", "q1t", "q2t", "q1u", "q2u", "q1", "q2", "qstar", "qstar_t", "qstar_u", "t0", "u0", "c",
];

/// Applies the economic overrides; censoring keys are ignored here.
pub fn apply_overrides(base: &Economics, ov: &Overrides) -> Result<Economics> {
    let mut e = *base;
    for (k, &v) in ov {
        match k.as_str() {
            "s" => {
                let a1 = e.s - e.c;
                e.s = v;
                e.c = v - a1;
            }
            "c" => e.c = v,
            "m" => e.m = v,
            "q1t" => e.q1t = v,
            "q2t" => e.q2t = v,
            "q1u" => e.q1u = v,
            "q2u" => e.q2u = v,
            "q1" => {
                e.q1t = v;
                e.q1u = v;
            }
            "q2" => {
                e.q2t = v;
                e.q2u = v;
            }
            "qstar" => {
                e.qstar_t = v;
                e.qstar_u = v;
            }
            "qstar_t" => e.qstar_t = v,
            "qstar_u" => e.qstar_u = v,
            "t0" | "u0" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown override '{other}'; expected one of {OVERRIDE_KEYS:?}"
                )))
            }
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub varied: Overrides,
    /// Reference quantities the row was optimized under.
    pub refs: Option<LifeReference>,
    pub a2: Option<f64>,
    pub a3: Option<f64>,
    pub result: Option<OptimResult>,
    pub error: Option<String>,
}

impl SensitivityRow {
    fn failed(varied: Overrides, e: Error) -> Self {
        SensitivityRow {
            varied,
            refs: None,
            a2: None,
            a3: None,
            result: None,
            error: Some(e.to_string()),
        }
    }
}

/// Everything a scan row may vary.
#[derive(Debug, Clone)]
pub struct ScanContext<'a> {
    pub chain: &'a PosteriorChain,
    pub economics: Economics,
    pub refs: LifeReference,
    pub cost: CostOptions,
    pub optim: OptimOptions,
    /// Draws used by the objective; the whole chain if 0.
    pub optimizer_draws: usize,
    /// Raw records and pipeline settings, needed by censoring rows.
    pub pipeline: Option<(&'a [RawRecord], &'a PipelineConfig)>,
}

fn scan_row(ctx: &ScanContext<'_>, ov: &Overrides) -> Result<SensitivityRow> {
    let econ = apply_overrides(&ctx.economics, ov)?;
    if ov.contains_key("t0") || ov.contains_key("u0") {
        let (records, base) = ctx
            .pipeline
            .ok_or_else(|| Error::Config("censoring overrides need the raw data and pipeline settings".into()))?;
        let mut pc = base.clone();
        pc.t0 = ov.get("t0").copied().unwrap_or(pc.t0);
        pc.u0 = ov.get("u0").copied().unwrap_or(pc.u0);
        pc.economics = econ;
        let out = run_pipeline(records, &pc)?;
        return Ok(SensitivityRow {
            varied: ov.clone(),
            refs: Some(out.refs),
            a2: Some(out.cost.a2),
            a3: Some(out.cost.a3),
            result: Some(out.optimum),
            error: None,
        });
    }
    let cfg = CostConfig::calibrated(&econ, &ctx.refs)?;
    let chain = ctx.chain.thin(ctx.optimizer_draws);
    let model = UtilityModel::new(&chain, &cfg, &ctx.cost)?;
    let result = optimize_model(&model, &initial_region(&ctx.refs), &ctx.optim)?;
    Ok(SensitivityRow {
        varied: ov.clone(),
        refs: Some(ctx.refs),
        a2: Some(cfg.a2),
        a3: Some(cfg.a3),
        result: Some(result),
        error: None,
    })
}

/// One optimization per grid point, in grid order. Row failures are
/// recorded in the row and the scan continues.
pub fn sensitivity_scan(ctx: &ScanContext<'_>, grid: &[Overrides]) -> Vec<SensitivityRow> {
    grid.iter()
        .map(|ov| scan_row(ctx, ov).unwrap_or_else(|e| SensitivityRow::failed(ov.clone(), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparameterization_roundtrip() {
        let r = WarrantyRegion::new(0.1435, 0.9373, 0.1105, 0.2048).unwrap();
        let back = region_from_z(&z_from_region(&r, 1.02, 0.6547), 1.02, 0.6547);
        for (a, b) in r.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn concave_stub() {
        let target = [0.2, 0.5, 0.1, 0.3];
        let f = |r: &WarrantyRegion| {
            Ok(-r.to_array().iter().zip(target).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        };
        let init = WarrantyRegion::new(0.05, 0.1, 0.05, 0.1).unwrap();
        let res = maximize(f, 1.0, 0.6, &init, &OptimOptions { n_restarts: 4, ..Default::default() }).unwrap();
        for (a, b) in res.region.to_array().iter().zip(target) {
            assert!((a - b).abs() < 1e-4, "{:?}", res.region);
        }
        assert_eq!(res.restarts_used, 4);
    }

    #[test]
    fn failing_objective_is_not_converged() {
        let init = WarrantyRegion::new(0.05, 0.1, 0.05, 0.1).unwrap();
        let res = maximize(|_| Err(Error::Domain("x".into())), 1.0, 1.0, &init, &OptimOptions { n_restarts: 2, ..Default::default() }).unwrap();
        assert!(!res.converged);
        assert_eq!(res.region, init);
    }

    #[test]
    fn s_override_keeps_profit() {
        let e = Economics::default();
        let ov: Overrides = [("s".to_string(), 1100.0)].into_iter().collect();
        let e2 = apply_overrides(&e, &ov).unwrap();
        assert_eq!(e2.s - e2.c, e.s - e.c);
        let bad: Overrides = [("zz".to_string(), 1.0)].into_iter().collect();
        assert!(apply_overrides(&e, &bad).is_err());
    }
}
