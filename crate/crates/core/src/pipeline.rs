//! End-to-end run: censor, fit, elicit, sample, derive reference
//! thresholds, calibrate and optimize.

use serde::{Deserialize, Serialize};

use crate::costs::{CostBreakdown, CostConfig, CostOptions, Economics, LifeReference, UtilityModel};
use crate::data::{apply_censoring, RawRecord};
use crate::error::{Error, Result};
use crate::inference::{default_init, fit_mle_with, MleOptions, MleResult};
use crate::mcmc::{elicit_hyperparams, mh_sample, McmcConfig, PosteriorChain, PriorHyper};
use crate::model::CdfConvention;
use crate::optimizer::{self, optimize_model, OptimOptions, OptimResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub t0: f64,
    pub u0: f64,
    /// Total fleet size when censored units are not listed.
    pub pad_to_n: Option<usize>,
    pub convention: CdfConvention,
    pub mcmc: McmcConfig,
    /// Fixed prior; elicited from the fit when absent.
    pub hyper: Option<PriorHyper>,
    pub life_prob: f64,
    pub reference_prob: f64,
    pub economics: Economics,
    pub cost: CostOptions,
    pub optim: OptimOptions,
    /// Draws used for predictive quantiles; all if 0.
    pub quantile_draws: usize,
    /// Draws used by the optimizer objective; all if 0.
    pub optimizer_draws: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            t0: f64::INFINITY,
            u0: f64::INFINITY,
            pad_to_n: None,
            convention: CdfConvention::default(),
            mcmc: McmcConfig::default(),
            hyper: None,
            life_prob: 0.5,
            reference_prob: 0.1,
            economics: Economics::default(),
            cost: CostOptions::default(),
            optim: OptimOptions::default(),
            quantile_draws: 2000,
            optimizer_draws: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub n: usize,
    pub d: usize,
    pub fit: MleResult,
    pub hyper: PriorHyper,
    pub acceptance_rate: f64,
    pub refs: LifeReference,
    pub cost: CostConfig,
    pub optimum: OptimResult,
    pub breakdown: CostBreakdown,
}

/// Fit and prior for censored data.
pub fn fit_and_elicit(
    records: &[RawRecord],
    cfg: &PipelineConfig,
) -> Result<(crate::inference::Dataset, MleResult, PriorHyper)> {
    let data = apply_censoring(records, cfg.t0, cfg.u0, cfg.pad_to_n)?;
    let opts = MleOptions {
        convention: cfg.convention,
        ..Default::default()
    };
    let fit = fit_mle_with(&data, &default_init(&data)?, &opts)?;
    let hyper = match cfg.hyper {
        Some(h) => h,
        None => {
            let se = fit
                .std_errors
                .ok_or_else(|| Error::Singular("observed information at the MLE".into()))?;
            elicit_hyperparams(&fit.psi_hat, &se.map(|s| s * s))?
        }
    };
    Ok((data, fit, hyper))
}

pub fn sample_posterior(
    data: &crate::inference::Dataset,
    fit: &MleResult,
    hyper: &PriorHyper,
    cfg: &PipelineConfig,
) -> Result<PosteriorChain> {
    let mcmc = McmcConfig {
        convention: cfg.convention,
        ..cfg.mcmc
    };
    mh_sample(data, hyper, &fit.psi_hat, &mcmc)
}

/// Reference quantities, calibrated costs and the optimum for a chain.
pub fn optimize_chain(
    chain: &PosteriorChain,
    cfg: &PipelineConfig,
) -> Result<(LifeReference, CostConfig, OptimResult, CostBreakdown)> {
    let refs = LifeReference::from_chain(&chain.thin(cfg.quantile_draws), cfg.life_prob, cfg.reference_prob)?;
    let cost = CostConfig::calibrated(&cfg.economics, &refs)?;
    let opts = CostOptions {
        convention: cfg.convention,
        ..cfg.cost
    };
    let model = UtilityModel::new(&chain.thin(cfg.optimizer_draws), &cost, &opts)?;
    let optimum = optimize_model(&model, &optimizer::initial_region(&refs), &cfg.optim)?;
    let breakdown = model.breakdown(&optimum.region)?;
    Ok((refs, cost, optimum, breakdown))
}

pub fn run_pipeline(records: &[RawRecord], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (data, fit, hyper) = fit_and_elicit(records, cfg)?;
    let chain = sample_posterior(&data, &fit, &hyper, cfg)?;
    let (refs, cost, optimum, breakdown) = optimize_chain(&chain, cfg)?;
    Ok(PipelineOutput {
        n: data.n(),
        d: data.d(),
        fit,
        hyper,
        acceptance_rate: chain.acceptance_rate,
        refs,
        cost,
        optimum,
        breakdown,
    })
}
