//! Run configuration: one flat TOML document holding every tunable.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ajl::{AjlLevelScope, AjlParams};
use crate::error::{Error, Result};
use crate::lm::{BonferroniScope, LmParams};
use crate::preprocess::FilterParams;
use crate::weights::{WeightFunction, WeightKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bonferroni {
    None,
    WithinDay,
    AcrossDays,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub time: DateTime<Utc>,
    pub label: String,
}

/// Market events used to annotate jump timelines.
pub fn default_events() -> Vec<EventAnnotation> {
    [
        ("2019-07-12T00:15:00Z", "Trump tweets"),
        ("2019-10-25T10:13:00Z", "Xi Jinping statement"),
        ("2020-03-12T13:35:00Z", "Black Thursday"),
        ("2020-05-11T19:30:00Z", "Third BTC halving"),
        ("2020-09-03T13:49:00Z", "Whale transfers"),
        ("2020-12-22T22:13:00Z", "SEC v. Ripple"),
    ]
    .into_iter()
    .map(|(t, label)| EventAnnotation {
        time: t.parse().expect("valid event timestamp"),
        label: label.to_string(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub coverage: f64,
    pub sd_cutoff: f64,
    pub bounceback_reversal: f64,
    pub dedup_window: usize,
    pub lm_c: f64,
    /// Fixed subsampling lag; chosen per day when absent.
    pub lm_k: Option<usize>,
    pub bonferroni: Bonferroni,
    pub ajl_p: u32,
    pub ajl_k_n: usize,
    pub ajl_g: WeightKind,
    pub ajl_h: WeightKind,
    pub mc_paths: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub events: Vec<EventAnnotation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.999,
            coverage: 0.95,
            sd_cutoff: 10.0,
            bounceback_reversal: 0.75,
            dedup_window: 10,
            lm_c: 0.05,
            lm_k: None,
            bonferroni: Bonferroni::WithinDay,
            ajl_p: 4,
            ajl_k_n: 100,
            ajl_g: WeightKind::Parabola,
            ajl_h: WeightKind::Triangle,
            mc_paths: 200,
            seed: 20_210_101,
            threads: 0,
            events: default_events(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(Error::Config(format!("coverage must lie in (0, 1], got {}", self.coverage)));
        }
        if !(self.sd_cutoff > 0.0) {
            return Err(Error::Config(format!("sd_cutoff must be > 0, got {}", self.sd_cutoff)));
        }
        if !(self.bounceback_reversal > 0.0 && self.bounceback_reversal <= 1.0) {
            return Err(Error::Config(format!(
                "bounceback_reversal must lie in (0, 1], got {}",
                self.bounceback_reversal
            )));
        }
        self.lm_params(1).validate()?;
        self.ajl_params(1).map(|_| ())?;
        crate::ajl::ajl_constants(
            &WeightFunction::builtin(self.ajl_g),
            &WeightFunction::builtin(self.ajl_h),
            self.ajl_p,
        )?;
        Ok(())
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            sd_cutoff: self.sd_cutoff,
            bounceback_reversal: self.bounceback_reversal,
        }
    }

    /// LM parameters for a run over `days` symbol-days.
    pub fn lm_params(&self, days: usize) -> LmParams {
        LmParams {
            k: self.lm_k,
            m: None,
            c: self.lm_c,
            alpha: self.alpha,
            bonferroni: match self.bonferroni {
                Bonferroni::None => BonferroniScope::None,
                Bonferroni::WithinDay => BonferroniScope::WithinDay,
                Bonferroni::AcrossDays => BonferroniScope::AcrossDays { days: days.max(1) },
            },
        }
    }

    pub fn ajl_params(&self, days: usize) -> Result<AjlParams> {
        if self.ajl_p < 4 || self.ajl_p % 2 != 0 {
            return Err(Error::Config(format!("ajl_p must be an even integer >= 4, got {}", self.ajl_p)));
        }
        Ok(AjlParams {
            p: self.ajl_p,
            k_n: self.ajl_k_n,
            g: WeightFunction::builtin(self.ajl_g),
            h: WeightFunction::builtin(self.ajl_h),
            alpha: self.alpha,
            scope: match self.bonferroni {
                Bonferroni::AcrossDays => AjlLevelScope::AcrossDays { days: days.max(1) },
                _ => AjlLevelScope::WithinDay,
            },
            mc_paths: self.mc_paths,
            seed: self.seed,
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded. Thread count does
    /// not affect results and is excluded.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            threads: 0,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
