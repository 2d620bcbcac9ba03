use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use warranty_core::costs::{
    CostBreakdown, CostConfig, CostOptions, DissatisfactionForm, LifeReference, UtilityModel,
};
use warranty_core::data::{self, apply_censoring, marginal_diagnostics, FitDiagnostics};
use warranty_core::inference::{default_init, fit_mle_with, Dataset, MleOptions, MleResult};
use warranty_core::mcmc::{elicit_hyperparams, read_chain, write_chain, write_traces, PosteriorChain, PriorHyper};
use warranty_core::model::{CdfConvention, ParamVector};
use warranty_core::optimizer::{initial_region, optimize_model, sensitivity_scan, OptimResult, Overrides, ScanContext};
use warranty_core::pipeline::sample_posterior;
use warranty_core::Error;

use crate::config::RunConfig;
use crate::report::{ensure_dir, sig6, table, write_json};

/// Failure of a command: either a hard error or a finished run whose result
/// is flagged (non-convergence), both mapped to exit codes by the caller.
#[derive(Debug)]
pub enum Outcome {
    Ok,
    NotConverged(String),
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub literal_d: bool,
}

#[derive(Serialize)]
struct NamedParams {
    eta_t: f64,
    lambda_t: f64,
    eta_u: f64,
    lambda_u: f64,
    theta: f64,
}

impl From<[f64; 5]> for NamedParams {
    fn from(a: [f64; 5]) -> Self {
        NamedParams {
            eta_t: a[0],
            lambda_t: a[1],
            eta_u: a[2],
            lambda_u: a[3],
            theta: a[4],
        }
    }
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    d: usize,
    t0: Option<f64>,
    u0: Option<f64>,
    convention: CdfConvention,
    psi_hat: NamedParams,
    std_errors: Option<NamedParams>,
    log_lik: f64,
    converged: bool,
    iterations: usize,
    diagnostics: Option<FitDiagnostics>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, Error> {
    let (t0, u0) = cfg.window();
    apply_censoring(&cfg.records()?, t0, u0, cfg.data.pad_to_n)
}

fn param_table(psi: &ParamVector, se: Option<[f64; 5]>) -> String {
    let rows: Vec<Vec<String>> = ParamVector::NAMES
        .iter()
        .zip(psi.to_array())
        .enumerate()
        .map(|(j, (name, v))| {
            vec![
                name.to_string(),
                sig6(v),
                se.map(|s| sig6(s[j])).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    table(&["parameter", "estimate", "std_error"], &rows)
}

pub fn fit(ctx: &Ctx) -> Result<Outcome, Error> {
    let pc = ctx.cfg.pipeline()?;
    let (data, fit) = fit_only(&ctx.cfg)?;
    let diagnostics = (data.d() >= data::MIN_DIAGNOSTIC_FAILURES)
        .then(|| marginal_diagnostics(&data).ok())
        .flatten();
    let report = FitReport {
        n: data.n(),
        d: data.d(),
        t0: finite(pc.t0),
        u0: finite(pc.u0),
        convention: pc.convention,
        psi_hat: fit.psi_hat.to_array().into(),
        std_errors: fit.std_errors.map(Into::into),
        log_lik: fit.log_lik,
        converged: fit.converged,
        iterations: fit.iterations,
        diagnostics,
    };
    ensure_dir(&ctx.out)?;
    write_json(&ctx.out.join("fit.json"), &report)?;
    println!("n = {}, failures = {}, log-likelihood = {}", data.n(), data.d(), sig6(fit.log_lik));
    print!("{}", param_table(&fit.psi_hat, fit.std_errors));
    Ok(if fit.converged {
        Outcome::Ok
    } else {
        Outcome::NotConverged("likelihood maximization did not converge".into())
    })
}

fn fit_only(cfg: &RunConfig) -> Result<(Dataset, MleResult), Error> {
    let data = dataset(cfg)?;
    let opts = MleOptions {
        convention: cfg.model.convention,
        ..Default::default()
    };
    let fit = fit_mle_with(&data, &default_init(&data)?, &opts)?;
    Ok((data, fit))
}

#[derive(Serialize)]
struct SampleReport {
    draws: usize,
    acceptance_rate: f64,
    seed: u64,
    n_iter: usize,
    burn_in: usize,
    hyper: PriorHyper,
    posterior_mean: NamedParams,
    reference: LifeReference,
}

/// Samples a chain and writes it with its traces.
fn sample_chain(ctx: &Ctx) -> Result<(PosteriorChain, PriorHyper), Error> {
    let pc = ctx.cfg.pipeline()?;
    let (data, fit) = fit_only(&ctx.cfg)?;
    let hyper = match pc.hyper {
        Some(h) => h,
        None => {
            let se = fit.std_errors.ok_or_else(|| {
                Error::Singular("observed information at the MLE; configure [prior] explicitly".into())
            })?;
            elicit_hyperparams(&fit.psi_hat, &se.map(|s| s * s))?
        }
    };
    let chain = sample_posterior(&data, &fit, &hyper, &pc)?;
    ensure_dir(&ctx.out)?;
    write_chain(&chain, &ctx.out.join("chain.csv"))?;
    write_traces(&chain, &ctx.out.join("traces"))?;
    Ok((chain, hyper))
}

fn reference(ctx: &Ctx, chain: &PosteriorChain) -> Result<LifeReference, Error> {
    let r = &ctx.cfg.reference;
    let mut refs = LifeReference::from_chain(&chain.thin(r.quantile_draws), r.life_prob, r.reference_prob)?;
    refs.lt = r.lt.unwrap_or(refs.lt);
    refs.lu = r.lu.unwrap_or(refs.lu);
    refs.t_w = r.t_w.unwrap_or(refs.t_w);
    refs.u_w = r.u_w.unwrap_or(refs.u_w);
    Ok(refs)
}

fn refs_table(refs: &LifeReference) -> String {
    table(
        &["quantity", "value"],
        &[
            vec!["L_t".into(), sig6(refs.lt)],
            vec!["L_u".into(), sig6(refs.lu)],
            vec!["t_w".into(), sig6(refs.t_w)],
            vec!["u_w".into(), sig6(refs.u_w)],
        ],
    )
}

pub fn sample(ctx: &Ctx) -> Result<Outcome, Error> {
    let (chain, hyper) = sample_chain(ctx)?;
    let refs = reference(ctx, &chain)?;
    let report = SampleReport {
        draws: chain.len(),
        acceptance_rate: chain.acceptance_rate,
        seed: chain.seed,
        n_iter: chain.n_iter,
        burn_in: chain.burn_in,
        hyper,
        posterior_mean: chain.mean().into(),
        reference: refs,
    };
    write_json(&ctx.out.join("sample.json"), &report)?;
    println!(
        "{} draws, acceptance rate {}",
        chain.len(),
        sig6(chain.acceptance_rate)
    );
    print!("{}", refs_table(&refs));
    Ok(Outcome::Ok)
}

fn load_or_sample(ctx: &Ctx, chain_path: Option<&Path>) -> Result<PosteriorChain, Error> {
    match chain_path.or(ctx.cfg.optimizer.chain.as_deref()) {
        Some(p) => read_chain(p),
        None => Ok(sample_chain(ctx)?.0),
    }
}

#[derive(Serialize)]
struct Variant {
    form: DissatisfactionForm,
    result: OptimResult,
    breakdown: CostBreakdown,
}

#[derive(Serialize)]
struct OptimizeReport {
    reference: LifeReference,
    cost: CostConfig,
    draws: usize,
    variants: Vec<Variant>,
}

fn forms(ctx: &Ctx) -> Vec<DissatisfactionForm> {
    if ctx.literal_d {
        vec![DissatisfactionForm::CaseConsistent, DissatisfactionForm::DisplayLiteral]
    } else {
        vec![ctx.cfg.cost.form]
    }
}

pub fn optimize(ctx: &Ctx, chain_path: Option<&Path>) -> Result<Outcome, Error> {
    let chain = load_or_sample(ctx, chain_path)?;
    let refs = reference(ctx, &chain)?;
    let cost = CostConfig::calibrated(&ctx.cfg.economics, &refs)?;
    let thinned = chain.thin(ctx.cfg.optimizer.draws);
    let opts = ctx.cfg.optim_options();
    let mut variants = Vec::new();
    for form in forms(ctx) {
        let model = UtilityModel::new(&thinned, &cost, &CostOptions { form, ..ctx.cfg.cost_options() })?;
        let result = optimize_model(&model, &initial_region(&refs), &opts)?;
        let breakdown = model.breakdown(&result.region)?;
        variants.push(Variant { form, result, breakdown });
    }
    ensure_dir(&ctx.out)?;
    let report = OptimizeReport {
        reference: refs,
        cost,
        draws: thinned.len(),
        variants,
    };
    write_json(&ctx.out.join("optimize.json"), &report)?;
    print!("{}", refs_table(&refs));
    println!("A2 = {}, A3 = {}", sig6(cost.a2), sig6(cost.a3));
    let rows: Vec<Vec<String>> = report
        .variants
        .iter()
        .map(|v| {
            let r = v.result.region;
            vec![
                format!("{:?}", v.form),
                sig6(r.t_w1),
                sig6(r.t_w2),
                sig6(r.u_w1),
                sig6(r.u_w2),
                sig6(v.breakdown.economic_benefit),
                sig6(v.breakdown.warranty),
                sig6(v.breakdown.dissatisfaction),
                sig6(v.result.utility),
            ]
        })
        .collect();
    print!(
        "{}",
        table(&["form", "t_w1", "t_w2", "u_w1", "u_w2", "EB", "E[W]", "E[D]", "utility"], &rows)
    );
    match report.variants.iter().find(|v| !v.result.converged) {
        Some(v) => Ok(Outcome::NotConverged(format!("optimizer did not converge ({:?})", v.form))),
        None => Ok(Outcome::Ok),
    }
}

/// Reads a grid CSV: a header of override keys and one row per point.
pub fn read_grid(path: &Path) -> Result<(Vec<String>, Vec<Overrides>), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let keys: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut grid = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut ov = BTreeMap::new();
        for (k, v) in keys.iter().zip(rec.iter()) {
            let x: f64 = v.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("'{v}' is not a number"),
            })?;
            ov.insert(k.clone(), x);
        }
        grid.push(ov);
    }
    Ok((keys, grid))
}

pub fn sensitivity(ctx: &Ctx, grid_path: &Path, chain_path: Option<&Path>) -> Result<Outcome, Error> {
    let (keys, grid) = read_grid(grid_path)?;
    let records = ctx.cfg.records()?;
    let mut pc = ctx.cfg.pipeline()?;
    if ctx.literal_d {
        pc.cost.form = DissatisfactionForm::DisplayLiteral;
    }
    let needs_chain = grid.iter().any(|ov| !ov.contains_key("t0") && !ov.contains_key("u0"));
    let chain = if needs_chain {
        Some(load_or_sample(ctx, chain_path)?)
    } else {
        None
    };
    let rows = match &chain {
        Some(chain) => {
            let refs = reference(ctx, chain)?;
            let scan = ScanContext {
                chain,
                economics: pc.economics,
                refs,
                cost: pc.cost,
                optim: pc.optim,
                optimizer_draws: pc.optimizer_draws,
                pipeline: Some((&records, &pc)),
            };
            sensitivity_scan(&scan, &grid)
        }
        None => {
            // Only censoring rows: the base chain is never used.
            let empty = PosteriorChain::from_draws(vec![ParamVector::new(1.0, 1.0, 1.0, 1.0, 0.5)?])?;
            let scan = ScanContext {
                chain: &empty,
                economics: pc.economics,
                refs: LifeReference {
                    lt: 1.0,
                    lu: 1.0,
                    t_w: 0.1,
                    u_w: 0.1,
                },
                cost: pc.cost,
                optim: pc.optim,
                optimizer_draws: pc.optimizer_draws,
                pipeline: Some((&records, &pc)),
            };
            sensitivity_scan(&scan, &grid)
        }
    };

    ensure_dir(&ctx.out)?;
    let csv_path = ctx.out.join("sensitivity.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Config(format!("{}: {e}", csv_path.display())))?;
    let fixed = [
        "t_w", "u_w", "a2", "a3", "t_w1", "t_w2", "u_w1", "u_w2", "utility", "converged", "degenerate", "error",
    ];
    let mut header: Vec<&str> = keys.iter().map(String::as_str).collect();
    header.extend(fixed);
    w.write_record(&header)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut human = Vec::new();
    for row in &rows {
        let mut rec: Vec<String> = keys.iter().map(|k| row.varied[k].to_string()).collect();
        let res = row.result.as_ref();
        rec.push(opt(row.refs.map(|r| r.t_w)));
        rec.push(opt(row.refs.map(|r| r.u_w)));
        rec.push(opt(row.a2));
        rec.push(opt(row.a3));
        for v in [
            res.map(|r| r.region.t_w1),
            res.map(|r| r.region.t_w2),
            res.map(|r| r.region.u_w1),
            res.map(|r| r.region.u_w2),
            res.map(|r| r.utility),
        ] {
            rec.push(opt(v));
        }
        rec.push(res.map(|r| r.converged.to_string()).unwrap_or_default());
        rec.push(res.map(|r| r.degenerate.to_string()).unwrap_or_default());
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec)?;

        let mut h: Vec<String> = keys.iter().map(|k| sig6(row.varied[k])).collect();
        match res {
            Some(r) => {
                h.extend([r.region.t_w1, r.region.t_w2, r.region.u_w1, r.region.u_w2, r.utility].map(sig6));
            }
            None => h.push(format!("failed: {}", row.error.clone().unwrap_or_default())),
        }
        human.push(h);
    }
    w.flush().map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    write_json(&ctx.out.join("sensitivity.json"), &rows)?;
    let mut hh: Vec<&str> = keys.iter().map(String::as_str).collect();
    hh.extend(["t_w1", "t_w2", "u_w1", "u_w2", "utility"]);
    print!("{}", table(&hh, &human));
    Ok(Outcome::Ok)
}

pub fn diagnostics(ctx: &Ctx) -> Result<Outcome, Error> {
    let data = dataset(&ctx.cfg)?;
    let diag = marginal_diagnostics(&data)?;
    ensure_dir(&ctx.out)?;
    write_json(&ctx.out.join("diagnostics.json"), &diag)?;
    for (name, pts) in [("qq_age.csv", &diag.qq_age), ("qq_usage.csv", &diag.qq_usage)] {
        let path = ctx.out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        w.write_record(["theoretical", "sample"])?;
        for (a, b) in pts {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush().map_err(|e| Error::Io { path, source: e })?;
    }
    let [(eta_t, lam_t), (eta_u, lam_u)] = diag.marginal_mles;
    let rows = vec![
        vec!["age".into(), sig6(eta_t), sig6(lam_t), sig6(diag.ad_stat_age), sig6(diag.ad_p_age)],
        vec!["usage".into(), sig6(eta_u), sig6(lam_u), sig6(diag.ad_stat_usage), sig6(diag.ad_p_usage)],
    ];
    println!("failures = {}, Pearson r = {}", diag.n_failures, sig6(diag.pearson_r));
    print!("{}", table(&["marginal", "scale", "shape", "A2", "p_value"], &rows));
    Ok(Outcome::Ok)
}
