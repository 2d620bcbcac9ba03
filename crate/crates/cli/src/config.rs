use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warranty_core::costs::{CostOptions, DissatisfactionForm, Economics};
use warranty_core::data::{self, RawRecord, Schema};
use warranty_core::mcmc::{McmcConfig, PriorHyper};
use warranty_core::model::CdfConvention;
use warranty_core::optimizer::OptimOptions;
use warranty_core::pipeline::PipelineConfig;
use warranty_core::Error;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV file; takes precedence over `bundled`.
    pub path: Option<PathBuf>,
    /// `dataset1` or `dataset2`.
    pub bundled: String,
    pub age_col: String,
    pub usage_col: String,
    pub scale_factor: f64,
    /// Censoring window; the bundled first dataset defaults to its own.
    pub t0: Option<f64>,
    pub u0: Option<f64>,
    pub pad_to_n: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = Schema::default();
        DataSection {
            path: None,
            bundled: "dataset1".into(),
            age_col: s.age_col,
            usage_col: s.usage_col,
            scale_factor: s.scale_factor,
            t0: None,
            u0: None,
            pad_to_n: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub convention: CdfConvention,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub proposal_scale: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        let m = McmcConfig::default();
        McmcSection {
            n_iter: m.n_iter,
            burn_in: m.burn_in,
            seed: m.seed,
            proposal_scale: m.proposal_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub a: [f64; 5],
    pub b: [f64; 5],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub life_prob: f64,
    pub reference_prob: f64,
    /// Fixed values replacing the predictive quantiles.
    pub lt: Option<f64>,
    pub lu: Option<f64>,
    pub t_w: Option<f64>,
    pub u_w: Option<f64>,
    pub quantile_draws: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        ReferenceSection {
            life_prob: p.life_prob,
            reference_prob: p.reference_prob,
            lt: None,
            lu: None,
            t_w: None,
            u_w: None,
            quantile_draws: p.quantile_draws,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub form: DissatisfactionForm,
    pub line_nodes: usize,
    pub area_nodes: usize,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostOptions::default();
        CostSection {
            form: c.form,
            line_nodes: c.line_nodes,
            area_nodes: c.area_nodes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub n_restarts: usize,
    pub seed: u64,
    pub x_tol: f64,
    pub max_iter: usize,
    pub step: f64,
    pub search_line_nodes: usize,
    pub search_area_nodes: usize,
    /// Chain draws used by the objective; 0 means all.
    pub draws: usize,
    /// Reuse a chain written by `sample` instead of sampling again.
    pub chain: Option<PathBuf>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimOptions::default();
        OptimizerSection {
            n_restarts: o.n_restarts,
            seed: o.seed,
            x_tol: o.x_tol,
            max_iter: o.max_iter,
            step: o.step,
            search_line_nodes: o.search_nodes.0,
            search_area_nodes: o.search_nodes.1,
            draws: PipelineConfig::default().optimizer_draws,
            chain: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub mcmc: McmcSection,
    pub prior: Option<PriorSection>,
    pub economics: Economics,
    pub reference: ReferenceSection,
    pub cost: CostSection,
    pub optimizer: OptimizerSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# unserializable config: {e}"))
    }

    pub fn records(&self) -> Result<Vec<RawRecord>, Error> {
        match &self.data.path {
            Some(p) => {
                let schema = Schema {
                    age_col: self.data.age_col.clone(),
                    usage_col: self.data.usage_col.clone(),
                    scale_factor: self.data.scale_factor,
                };
                data::load_dataset(p, &schema)
            }
            None => {
                let recs = match self.data.bundled.as_str() {
                    "dataset1" => data::bundled_dataset1(),
                    "dataset2" => data::bundled_dataset2(),
                    other => {
                        return Err(Error::Config(format!(
                            "unknown bundled dataset '{other}'; expected dataset1 or dataset2"
                        )))
                    }
                };
                if self.data.scale_factor != 1.0 {
                    return Ok(recs
                        .into_iter()
                        .map(|r| RawRecord {
                            age: r.age.map(|v| v * self.data.scale_factor),
                            usage: r.usage.map(|v| v * self.data.scale_factor),
                            ..r
                        })
                        .collect());
                }
                Ok(recs)
            }
        }
    }

    pub fn window(&self) -> (f64, f64) {
        let default = if self.data.path.is_none() && self.data.bundled == "dataset1" {
            data::DATASET1_WINDOW
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        (self.data.t0.unwrap_or(default.0), self.data.u0.unwrap_or(default.1))
    }

    pub fn optim_options(&self) -> OptimOptions {
        let o = &self.optimizer;
        OptimOptions {
            n_restarts: o.n_restarts,
            seed: o.seed,
            x_tol: o.x_tol,
            max_iter: o.max_iter,
            step: o.step,
            search_nodes: (o.search_line_nodes, o.search_area_nodes),
        }
    }

    pub fn cost_options(&self) -> CostOptions {
        CostOptions {
            convention: self.model.convention,
            form: self.cost.form,
            line_nodes: self.cost.line_nodes,
            area_nodes: self.cost.area_nodes,
        }
    }

    pub fn prior(&self) -> Result<Option<PriorHyper>, Error> {
        self.prior.map(|p| PriorHyper::new(p.a, p.b)).transpose()
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, Error> {
        let (t0, u0) = self.window();
        Ok(PipelineConfig {
            t0,
            u0,
            pad_to_n: self.data.pad_to_n,
            convention: self.model.convention,
            mcmc: McmcConfig {
                n_iter: self.mcmc.n_iter,
                burn_in: self.mcmc.burn_in,
                seed: self.mcmc.seed,
                proposal_scale: self.mcmc.proposal_scale,
                convention: self.model.convention,
            },
            hyper: self.prior()?,
            life_prob: self.reference.life_prob,
            reference_prob: self.reference.reference_prob,
            economics: self.economics,
            cost: self.cost_options(),
            optim: self.optim_options(),
            quantile_draws: self.reference.quantile_draws,
            optimizer_draws: self.optimizer.draws,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.window(), (5.0, 2.0));
    }

    #[test]
    fn echo_roundtrip() {
        let mut c = RunConfig::default();
        c.economics.s = 900.0;
        c.model.convention = CdfConvention::SurvivalComplement;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[economics]\nprice = 3\n").is_err());
    }
}
