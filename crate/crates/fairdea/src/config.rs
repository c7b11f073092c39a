//! Pipeline configuration, read from a single JSON document. Every field has a
//! default, so `{}` is a valid config that audits a synthetic cohort.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fairdea_core::cohort::default_groups;
use fairdea_core::conformal::CrossfitSettings;
use fairdea_core::dea::DeaSettings;
use fairdea_core::mediation::MediationSpec;
use fairdea_core::mmd::Estimator;
use fairdea_core::resample::{ProportionTarget, ResampleError};
use fairdea_core::synth::{default_registry_spec, GroupMomentSpec, SynthOptions};
use fairdea_core::{GroupLabel, Measure};
use serde::{Deserialize, Serialize};

use crate::error::StageError;

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Cohort CSV to audit. When absent the synth stage generates one.
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Schema column names in the input cohort file.
    pub columns: ColumnMap,
    /// Group set in reporting order.
    pub groups: Vec<GroupLabel>,
    pub synth: SynthConfig,
    pub resample: ResampleConfig,
    pub debias: DebiasConfig,
    pub dea: DeaConfig,
    pub conformal: CrossfitSettings,
    pub mmd: MmdConfig,
    pub mediation: MediationConfig,
    pub plot: PlotConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            input: None,
            out: None,
            columns: ColumnMap::default(),
            groups: default_groups(),
            synth: SynthConfig::default(),
            resample: ResampleConfig::default(),
            debias: DebiasConfig::default(),
            dea: DeaConfig::default(),
            conformal: CrossfitSettings::default(),
            mmd: MmdConfig::default(),
            mediation: MediationConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub id: String,
    pub group: String,
    pub x1: String,
    pub x2: String,
    pub y1: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            group: "group".into(),
            x1: "x1".into(),
            x2: "x2".into(),
            y1: "y1".into(),
        }
    }
}

impl ColumnMap {
    pub fn names(&self) -> [&str; 5] {
        [&self.id, &self.group, &self.x1, &self.x2, &self.y1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub groups: Vec<GroupMomentSpec>,
    pub options: SynthOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: default_registry_spec(),
            options: SynthOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub group: GroupLabel,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    pub enabled: bool,
    pub proportions: Vec<Share>,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        let proportions = ProportionTarget::census_2020()
            .entries()
            .iter()
            .map(|(group, share)| Share {
                group: group.clone(),
                share: *share,
            })
            .collect();
        Self {
            enabled: true,
            proportions,
        }
    }
}

impl ResampleConfig {
    pub fn target(&self) -> Result<ProportionTarget, ResampleError> {
        ProportionTarget::new(
            self.proportions
                .iter()
                .map(|s| (s.group.clone(), s.share))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasConfig {
    /// When false, DEA runs on the raw measures.
    pub enabled: bool,
    pub folds: usize,
    pub confounders: BTreeMap<Measure, Vec<String>>,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut confounders = BTreeMap::new();
        confounders.insert(
            Measure::X1,
            names(&["pra", "blood_a", "blood_b", "blood_ab", "male", "age"]),
        );
        confounders.insert(Measure::X2, names(&["donor_age"]));
        confounders.insert(
            Measure::Y1,
            names(&[
                "age",
                "donor_age",
                "pra",
                "male",
                "hla_mismatch",
                "cold_ischemia",
                "prior_transplant",
            ]),
        );
        Self {
            enabled: true,
            folds: fairdea_core::debias::DEFAULT_FOLDS,
            confounders,
        }
    }
}

impl DebiasConfig {
    pub fn confounders_for(&self, m: Measure) -> &[String] {
        self.confounders.get(&m).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeaConfig {
    pub tol: f64,
    pub frontier_tol: f64,
    /// Adjusted measures are shifted to `v − min + fraction · range`.
    pub shift_fraction: f64,
}

impl Default for DeaConfig {
    fn default() -> Self {
        let s = DeaSettings::default();
        Self {
            tol: s.tol,
            frontier_tol: s.frontier_tol,
            shift_fraction: 1e-3,
        }
    }
}

impl DeaConfig {
    pub fn settings(&self) -> DeaSettings {
        DeaSettings {
            tol: self.tol,
            frontier_tol: self.frontier_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdConfig {
    pub enabled: bool,
    pub iters: usize,
    /// Family-wise level; each pair is tested at `alpha / C(G, 2)`.
    pub alpha: f64,
    pub estimator: Estimator,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            iters: 1000,
            alpha: 0.05,
            estimator: Estimator::V,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediationConfig {
    pub enabled: bool,
    pub bootstrap: usize,
    /// Use the adjusted waitlist duration instead of the raw one.
    pub use_debiased: bool,
    pub spec: MediationSpec,
}

impl Default for MediationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            bootstrap: 1000,
            use_debiased: false,
            spec: MediationSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub bins: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            bins: fairdea_core::plot::DEFAULT_BINS,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = fs::read_to_string(path).map_err(|source| StageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|source| StageError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), StageError> {
        let invalid = |msg: String| Err(StageError::Invalid(msg));
        if self.groups.len() < 2 {
            return invalid(format!(
                "need at least two groups, got {}",
                self.groups.len()
            ));
        }
        if self.resample.enabled {
            self.resample.target()?;
        }
        let names = self.columns.names();
        if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
            return invalid("columns map two schema fields to the same column".into());
        }
        if self.plot.bins == 0 {
            return invalid("plot.bins must be positive".into());
        }
        if self.dea.shift_fraction.is_nan() || self.dea.shift_fraction <= 0.0 {
            return invalid(format!(
                "dea.shift_fraction must be positive, got {}",
                self.dea.shift_fraction
            ));
        }
        if self.mediation.enabled && !self.groups.contains(&self.mediation.spec.reference) {
            return invalid(format!(
                "mediation reference {} is not in the group set",
                self.mediation.spec.reference
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trips() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"mmd": {"iters": 99}, "mediation": {"enabled": false}}"#)
                .unwrap();
        assert_eq!(c.mmd.iters, 99);
        assert_eq!(c.mmd.alpha, 0.05);
        assert!(!c.mediation.enabled);
        assert_eq!(c.mediation.bootstrap, 1000);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn bad_proportions_rejected() {
        let mut c = PipelineConfig::default();
        c.resample.proportions[0].share = 0.5;
        assert!(c.validate().is_err());
    }
}
