//! The audit report: resolved config, per-stage seeds and one section per
//! stage, each either a result or a `{"status": "skipped"}` marker.

use serde_json::{json, Map, Value};

use crate::config::PipelineConfig;
use crate::pipeline;

pub const ARTIFACTS: [&str; 11] = [
    pipeline::COHORT,
    pipeline::RESAMPLED,
    pipeline::DEBIASED,
    pipeline::DEA_SCORES,
    pipeline::FRONTIER,
    pipeline::HISTOGRAM,
    pipeline::INTERVALS,
    pipeline::UNIT_INTERVALS,
    pipeline::MMD,
    pipeline::MEDIATION,
    pipeline::REPORT,
];

/// The output directory is left out so reports from different directories
/// compare equal.
pub fn assemble(
    config: &PipelineConfig,
    seeds: Map<String, Value>,
    stages: Map<String, Value>,
) -> Value {
    let mut config = config.clone();
    config.out = None;
    json!({
        "master_seed": config.seed,
        "seed_derivation": "stage seed = derive_seed(master_seed, stage name)",
        "seeds": seeds,
        "groups": config.groups,
        "config": config,
        "stages": stages,
    })
}

/// Stage names whose section is missing or is neither ok nor skipped.
pub fn incomplete_sections(report: &Value) -> Vec<String> {
    pipeline_stage_names()
        .filter(|s| {
            let status = report["stages"][s]["status"].as_str();
            !matches!(status, Some("ok") | Some("skipped"))
        })
        .map(str::to_string)
        .collect()
}

fn pipeline_stage_names() -> impl Iterator<Item = &'static str> {
    crate::error::Stage::PIPELINE.into_iter().map(|s| s.name())
}
