//! Run configuration read from a TOML file. Every field has a default, and
//! command-line flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use vaxplan::allocate::{PriorityGroup, PriorityTable, ReestimateSettings, DEFAULT_GAP};
use vaxplan::epimodel::{EpiParams, ModelVariant, DEFAULT_SUBSTEPS};
use vaxplan::estimate::{DeConfig, FitnessWeights};

use crate::Failure;

/// A calendar date written either as a TOML date or as a quoted ISO string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DateValue {
    Date(toml::value::Datetime),
    Text(String),
}

impl DateValue {
    pub fn parse(&self) -> Result<NaiveDate, Failure> {
        let text = match self {
            DateValue::Date(d) => d.to_string(),
            DateValue::Text(s) => s.clone(),
        };
        parse_date(&text)
    }
}

pub fn parse_date(text: &str) -> Result<NaiveDate, Failure> {
    text.parse()
        .map_err(|_| Failure::Config(format!("`{text}` is not an ISO date (YYYY-MM-DD)")))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub fit: FitSection,
    pub simulate: SimulateSection,
    pub campaign: CampaignSection,
    pub equilibria: EquilibriaSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: ModelVariant,
    pub population: Option<f64>,
    pub sigma: f64,
    pub rho: f64,
    pub mu: f64,
    pub immunity: Vec<f64>,
    pub substeps: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: ModelVariant::Seir4,
            population: None,
            sigma: 0.2,
            rho: 0.1,
            mu: 0.0,
            immunity: vec![0.6, 0.9],
            substeps: DEFAULT_SUBSTEPS,
        }
    }
}

impl ModelSection {
    pub fn params(&self, population: f64, immunity: &[f64]) -> Result<EpiParams, Failure> {
        let p = EpiParams::new(population, self.sigma, self.rho, immunity.to_vec()).with_mu(self.mu);
        p.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Interior segment breaks; weekly segments when absent.
    pub breaks: Option<Vec<DateValue>>,
    pub first: DeConfig,
    pub later: DeConfig,
    pub weights: FitnessWeights,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            breaks: None,
            first: DeConfig::first_segment(),
            later: DeConfig::later_segment(),
            weights: FitnessWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Daily first doses, and second doses once the second segment starts.
    pub doses: f64,
    pub to: Option<DateValue>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { doses: 0.0, to: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainChoice {
    Known,
    Reestimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub start: Option<DateValue>,
    pub end: Option<DateValue>,
    pub budgets: Vec<u64>,
    pub gap: u32,
    pub immunity: Vec<f64>,
    /// CSV with `label,proportion` rows; the built-in ten-group table when absent.
    pub priority: Option<PathBuf>,
    pub populations: BTreeMap<String, f64>,
    pub gain: GainChoice,
    pub reestimate_every: u32,
    pub window: u32,
    pub de: DeConfig,
}

impl Default for CampaignSection {
    fn default() -> Self {
        let re = ReestimateSettings::default();
        CampaignSection {
            start: None,
            end: None,
            budgets: Vec::new(),
            gap: DEFAULT_GAP,
            immunity: vec![0.54, 0.95],
            priority: None,
            populations: BTreeMap::new(),
            gain: GainChoice::Reestimate,
            reestimate_every: re.every,
            window: re.window,
            de: re.de,
        }
    }
}

impl CampaignSection {
    pub fn priority_table(&self, base: &Path) -> Result<PriorityTable, Failure> {
        let Some(path) = &self.priority else {
            return Ok(PriorityTable::valencia());
        };
        let path = base.join(path);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let mut groups = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Failure::Config(format!("{}:{}: expected `label,proportion`", path.display(), k + 1));
            let (label, proportion) = line.rsplit_once(',').ok_or_else(bad)?;
            groups.push(PriorityGroup {
                label: label.trim().to_owned(),
                proportion: proportion.trim().parse().map_err(|_| bad())?,
            });
        }
        PriorityTable::new(groups).map_err(|e| Failure::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriaSection {
    pub beta: Option<f64>,
    /// Total removal rate.
    pub gamma: Option<f64>,
    pub doses: [f64; 2],
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    pub fn substeps(&self) -> u32 {
        self.model.substeps
    }
}
