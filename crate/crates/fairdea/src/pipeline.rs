//! Audit stages. Each stage reads the artifact of the stage before it from
//! disk and writes its own, so any stage can be rerun alone. A stage returns
//! its report section as JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fairdea_core::cohort::PositiveShift;
use fairdea_core::conformal::crossfit_intervals;
use fairdea_core::dea::{efficiency_all, frontier_plot_data, DeaInstance};
use fairdea_core::debias::crossfit_debias;
use fairdea_core::linalg::Matrix;
use fairdea_core::mediation::{bootstrap_ci, Effect};
use fairdea_core::mmd::{pairwise_tests, PermutationSettings};
use fairdea_core::plot::efficiency_histogram;
use fairdea_core::resample::{describe_quotas, resample};
use fairdea_core::seed::derive_seed;
use fairdea_core::synth::generate_with;
use fairdea_core::{Cohort, GroupLabel, Measure};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::PipelineConfig;
use crate::csvio::{
    read_cohort, read_cohort_mapped, read_rows, write_cohort, write_json, write_rows,
};
use crate::error::{InStage, PipelineError, Stage, StageError};

pub const COHORT: &str = "cohort.csv";
pub const RESAMPLED: &str = "resampled.csv";
pub const DEBIASED: &str = "debiased.csv";
pub const DEA_SCORES: &str = "dea_scores.csv";
pub const FRONTIER: &str = "frontier.csv";
pub const HISTOGRAM: &str = "efficiency_hist.csv";
pub const INTERVALS: &str = "intervals.csv";
pub const UNIT_INTERVALS: &str = "unit_intervals.csv";
pub const MMD: &str = "mmd.csv";
pub const MEDIATION: &str = "mediation.csv";
pub const REPORT: &str = "report.json";

/// Shared state of one run: configuration, output directory and master seed.
pub struct Context<'a> {
    pub config: &'a PipelineConfig,
    pub out: &'a Path,
    pub master_seed: u64,
}

impl Context<'_> {
    /// Every stage draws from its own labeled sub-seed of the master seed.
    pub fn seed(&self, stage: Stage) -> u64 {
        derive_seed(self.master_seed, stage.name())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn groups(&self) -> &[GroupLabel] {
        &self.config.groups
    }

    /// Default input of a stage when none is given: the artifact of the stage
    /// before it in pipeline order.
    pub fn default_input(&self, stage: Stage) -> PathBuf {
        let c = self.config;
        match stage {
            Stage::Resample => c.input.clone().unwrap_or_else(|| self.path(COHORT)),
            Stage::Debias => self.path(RESAMPLED),
            Stage::Dea if c.debias.enabled => self.path(DEBIASED),
            Stage::Dea => self.path(RESAMPLED),
            Stage::Conformal | Stage::Mmd => self.path(DEA_SCORES),
            Stage::Mediation if c.mediation.use_debiased => self.path(DEBIASED),
            Stage::Mediation => self.path(RESAMPLED),
            _ => self.path(COHORT),
        }
    }
}

pub fn skipped(reason: &str) -> Value {
    json!({ "status": "skipped", "reason": reason })
}

fn adjusted_key(m: Measure) -> String {
    format!("{}_adj", m.key())
}

fn group_counts_json(cohort: &Cohort) -> Value {
    let mut map = Map::new();
    for (g, n) in cohort.group_counts() {
        map.insert(g.to_string(), json!(n));
    }
    Value::Object(map)
}

pub fn synth(ctx: &Context) -> Result<Value, StageError> {
    let seed = ctx.seed(Stage::Synth);
    let cfg = &ctx.config.synth;
    let cohort = generate_with(&cfg.groups, seed, &cfg.options)?;
    let cohort = Cohort::new(cohort.into_records(), ctx.groups().to_vec())?;
    write_cohort(&ctx.path(COHORT), &cohort, &[])?;
    Ok(json!({
        "status": "ok",
        "seed": seed,
        "records": cohort.len(),
        "group_counts": group_counts_json(&cohort),
    }))
}

/// Ingests the cohort. Files other than the synth artifact are read through
/// the configured column map.
pub fn resample_stage(ctx: &Context, input: &Path) -> Result<Value, StageError> {
    let cohort = if input == ctx.path(COHORT) {
        read_cohort(input, ctx.groups())?
    } else {
        read_cohort_mapped(input, ctx.groups(), &ctx.config.columns)?
    };
    let out = ctx.path(RESAMPLED);
    if !ctx.config.resample.enabled {
        write_cohort(&out, &cohort, &[])?;
        return Ok(skipped(
            "disabled in config; cohort passed through unchanged",
        ));
    }
    let seed = ctx.seed(Stage::Resample);
    let target = ctx.config.resample.target()?;
    let resampled = resample(&cohort, &target, seed)?;
    write_cohort(&out, &resampled, &[])?;
    let before = cohort.group_counts();
    let after = resampled.group_counts();
    Ok(json!({
        "status": "ok",
        "seed": seed,
        "records_before": cohort.len(),
        "records_after": resampled.len(),
        "before": group_counts_json(&cohort),
        "after": group_counts_json(&resampled),
        "kept": describe_quotas(&before, &after),
        "proportions": ctx.config.resample.proportions,
    }))
}

pub fn debias(ctx: &Context, input: &Path) -> Result<Value, StageError> {
    if !ctx.config.debias.enabled {
        return Ok(skipped("disabled in config; DEA uses raw measures"));
    }
    let cohort = read_cohort(input, ctx.groups())?;
    let seed = ctx.seed(Stage::Debias);
    let cfg = &ctx.config.debias;
    let members = cohort.members_by_group();
    let mut columns = Vec::new();
    let mut outcomes = Map::new();
    for m in Measure::ALL {
        let confounders = cfg.confounders_for(m);
        let r = crossfit_debias(&cohort, m, confounders, cfg.folds, seed)?;
        let mut means = Map::new();
        for (g, idx) in cohort.group_set().iter().zip(&members) {
            let v: Vec<f64> = idx.iter().map(|&i| r.adjusted[i]).collect();
            means.insert(g.to_string(), json!(fairdea_core::stats::mean(&v)));
        }
        outcomes.insert(
            m.key().to_string(),
            json!({
                "confounders": confounders,
                "mean_adjusted": means,
                "folds": r.per_fold,
            }),
        );
        columns.push((adjusted_key(m), r.adjusted));
    }
    let extra: Vec<(&str, &[f64])> = columns
        .iter()
        .map(|(n, v)| (n.as_str(), v.as_slice()))
        .collect();
    write_cohort(&ctx.path(DEBIASED), &cohort, &extra)?;
    Ok(json!({
        "status": "ok",
        "seed": seed,
        "folds": cfg.folds,
        "outcomes": outcomes,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub group: GroupLabel,
    pub theta: f64,
    pub on_frontier: bool,
}

#[derive(Serialize)]
struct FrontierRow<'a> {
    id: &'a str,
    group: &'a GroupLabel,
    theta: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    x1_projected: f64,
    x2_projected: f64,
    y1_projected: f64,
}

pub fn dea(ctx: &Context, input: &Path) -> Result<Value, StageError> {
    let cohort = read_cohort(input, ctx.groups())?;
    let adjusted = ctx.config.debias.enabled;
    let mut shifts = Map::new();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(3);
    for m in Measure::ALL {
        if adjusted {
            let key = adjusted_key(m);
            let raw = cohort
                .confounder_column(&key)
                .map_err(|_| StageError::MissingColumn {
                    path: input.to_path_buf(),
                    column: key.clone(),
                })?;
            let shift = PositiveShift::for_column(&raw, ctx.config.dea.shift_fraction)?;
            shifts.insert(key, json!(shift));
            columns.push(raw.iter().map(|&v| shift.apply(v)).collect());
        } else {
            columns.push(cohort.measure(m));
        }
    }
    let n = cohort.len();
    let inputs = Matrix::from_fn(n, 2, |i, j| columns[j][i]);
    let outputs = Matrix::from_fn(n, 1, |i, _| columns[2][i]);
    let ids: Vec<String> = cohort.records().iter().map(|r| r.id.clone()).collect();
    let instance = DeaInstance::new(inputs, outputs, ids)?;
    let settings = ctx.config.dea.settings();
    let scores = efficiency_all(&instance, &settings)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let records = cohort.records();
    let rows: Vec<ScoreRow> = records
        .iter()
        .zip(&scores)
        .map(|(r, s)| ScoreRow {
            id: r.id.clone(),
            group: r.group.clone(),
            theta: s.theta,
            on_frontier: s.on_frontier,
        })
        .collect();
    write_rows(&ctx.path(DEA_SCORES), &rows)?;

    let points = frontier_plot_data(&instance, &scores, &[true, true, false])?;
    let frontier: Vec<FrontierRow> = points
        .iter()
        .zip(records)
        .zip(&scores)
        .map(|((p, r), s)| FrontierRow {
            id: &p.id,
            group: &r.group,
            theta: s.theta,
            x1: p.raw[0],
            x2: p.raw[1],
            y1: p.raw[2],
            x1_projected: p.projected[0],
            x2_projected: p.projected[1],
            y1_projected: p.projected[2],
        })
        .collect();
    write_rows(&ctx.path(FRONTIER), &frontier)?;

    let thetas: Vec<f64> = scores.iter().map(|s| s.theta).collect();
    let hist = efficiency_histogram(
        &thetas,
        cohort.group_indices(),
        cohort.group_set(),
        ctx.config.plot.bins,
    );
    write_rows(&ctx.path(HISTOGRAM), &hist)?;

    let mut means = Map::new();
    for (g, idx) in cohort.group_set().iter().zip(cohort.members_by_group()) {
        let v: Vec<f64> = idx.iter().map(|&i| thetas[i]).collect();
        means.insert(g.to_string(), json!(fairdea_core::stats::mean(&v)));
    }
    Ok(json!({
        "status": "ok",
        "measures": if adjusted { "adjusted" } else { "raw" },
        "tol": settings.tol,
        "frontier_tol": settings.frontier_tol,
        "shift_fraction": ctx.config.dea.shift_fraction,
        "shift_rule": "adjusted measures enter as v - min + shift_fraction * range",
        "shifts": shifts,
        "units": n,
        "reference_units": instance.reference_len(),
        "frontier_units": scores.iter().filter(|s| s.on_frontier).count(),
        "mean_theta": means,
    }))
}

fn read_scores(ctx: &Context, input: &Path) -> Result<(Vec<ScoreRow>, Vec<usize>), StageError> {
    let rows: Vec<ScoreRow> = read_rows(input)?;
    let groups = rows
        .iter()
        .enumerate()
        .map(|(row, r)| {
            ctx.groups()
                .iter()
                .position(|g| g == &r.group)
                .ok_or_else(|| StageError::UnknownGroup {
                    path: input.to_path_buf(),
                    row,
                    group: r.group.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((rows, groups))
}

#[derive(Serialize)]
struct IntervalRow<'a> {
    group: &'a GroupLabel,
    size: usize,
    mean_efficiency: f64,
    lower: f64,
    upper: f64,
    coverage: f64,
}

#[derive(Serialize)]
struct UnitIntervalRow<'a> {
    id: &'a str,
    group: &'a GroupLabel,
    theta: f64,
    lower: f64,
    upper: f64,
    covered: bool,
}

pub fn conformal(ctx: &Context, input: &Path) -> Result<Value, StageError> {
    let (rows, groups) = read_scores(ctx, input)?;
    let thetas: Vec<f64> = rows.iter().map(|r| r.theta).collect();
    let seed = ctx.seed(Stage::Conformal);
    let settings = ctx.config.conformal;
    let result = crossfit_intervals(&thetas, &groups, ctx.groups(), &settings, seed)?;
    let table: Vec<IntervalRow> = result
        .summaries
        .iter()
        .map(|s| IntervalRow {
            group: &s.group,
            size: s.size,
            mean_efficiency: s.mean_efficiency,
            lower: s.mean_lower,
            upper: s.mean_upper,
            coverage: s.coverage,
        })
        .collect();
    write_rows(&ctx.path(INTERVALS), &table)?;
    let units: Vec<UnitIntervalRow> = rows
        .iter()
        .zip(&result.intervals)
        .zip(&result.covered)
        .map(|((r, iv), &covered)| UnitIntervalRow {
            id: &r.id,
            group: &r.group,
            theta: r.theta,
            lower: iv.lower,
            upper: iv.upper,
            covered,
        })
        .collect();
    write_rows(&ctx.path(UNIT_INTERVALS), &units)?;
    Ok(json!({
        "status": "ok",
        "seed": seed,
        "alpha": settings.alpha,
        "folds": settings.folds,
        "ridge_lambda": settings.ridge_lambda,
        "randomized": settings.randomized,
        "groups": result.summaries,
    }))
}

pub fn mmd(ctx: &Context, input: &Path) -> Result<Value, StageError> {
    let cfg = ctx.config.mmd;
    if !cfg.enabled {
        return Ok(skipped("disabled in config"));
    }
    let (rows, groups) = read_scores(ctx, input)?;
    let mut samples: Vec<(GroupLabel, Vec<f64>)> = ctx
        .groups()
        .iter()
        .map(|g| (g.clone(), Vec::new()))
        .collect();
    for (r, &g) in rows.iter().zip(&groups) {
        samples[g].1.push(r.theta);
    }
    let seed = ctx.seed(Stage::Mmd);
    let settings = PermutationSettings {
        iters: cfg.iters,
        estimator: cfg.estimator,
    };
    let tests = pairwise_tests(&samples, cfg.alpha, &settings, seed)?;
    write_rows(&ctx.path(MMD), &tests)?;
    let pairs = tests.len();
    Ok(json!({
        "status": "ok",
        "seed": seed,
        "iters": cfg.iters,
        "estimator": cfg.estimator,
        "alpha": cfg.alpha,
        "pair_alpha": cfg.alpha / pairs as f64,
        "bandwidth": "median heuristic on each pair's pooled scores",
        "tests": tests,
    }))
}

#[derive(Serialize)]
struct EffectRow<'a> {
    group: &'a GroupLabel,
    effect: &'static str,
    estimate: f64,
    se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    proportion_mediated: Option<f64>,
}

pub fn mediation(ctx: &Context, input: &Path) -> Result<Value, StageError> {
    let cfg = &ctx.config.mediation;
    if !cfg.enabled {
        return Ok(skipped("disabled in config"));
    }
    let cohort = read_cohort(input, ctx.groups())?;
    let mut spec = cfg.spec.clone();
    if cfg.use_debiased {
        if let Some(m) = Measure::from_key(&spec.outcome) {
            spec.outcome = adjusted_key(m);
        }
    }
    let seed = ctx.seed(Stage::Mediation);
    let table = bootstrap_ci(&cohort, &spec, cfg.bootstrap, seed)?;
    let mut rows = Vec::with_capacity(3 * table.len());
    for t in &table {
        let parts: [(&'static str, &Effect); 3] = [
            ("total", &t.total),
            ("indirect", &t.indirect),
            ("direct", &t.direct),
        ];
        for (effect, e) in parts {
            rows.push(EffectRow {
                group: &t.group,
                effect,
                estimate: e.estimate,
                se: e.se,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                proportion_mediated: t.proportion_mediated,
            });
        }
    }
    write_rows(&ctx.path(MEDIATION), &rows)?;
    Ok(json!({
        "status": "ok",
        "seed": seed,
        "outcome": spec.outcome,
        "reference": spec.reference,
        "bootstrap": cfg.bootstrap,
        "ci": "percentile, 2.5% and 97.5%",
        "effects": table,
    }))
}

/// Runs one stage with its default input unless `input` is given.
pub fn run_stage(
    ctx: &Context,
    stage: Stage,
    input: Option<&Path>,
) -> Result<Value, PipelineError> {
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.default_input(stage));
    let section = match stage {
        Stage::Synth => synth(ctx),
        Stage::Resample => resample_stage(ctx, &input),
        Stage::Debias => debias(ctx, &input),
        Stage::Dea => dea(ctx, &input),
        Stage::Conformal => conformal(ctx, &input),
        Stage::Mmd => mmd(ctx, &input),
        Stage::Mediation => mediation(ctx, &input),
        Stage::Config | Stage::Report => Err(StageError::Invalid(format!(
            "{stage} is not a runnable stage"
        ))),
    };
    section.in_stage(stage)
}

pub fn ensure_dir(out: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out)
        .map_err(|source| StageError::Io {
            path: out.to_path_buf(),
            source,
        })
        .in_stage(Stage::Config)
}

/// Runs every stage in order and writes `report.json`. Wall-clock timings go
/// to stderr so the artifacts depend only on config and seed.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<Value, PipelineError> {
    config.validate().in_stage(Stage::Config)?;
    ensure_dir(out)?;
    let ctx = Context {
        config,
        out,
        master_seed: config.seed,
    };
    let mut stages = Map::new();
    let mut seeds = Map::new();
    for stage in Stage::PIPELINE {
        seeds.insert(stage.name().to_string(), json!(ctx.seed(stage)));
        let start = Instant::now();
        let section = if stage == Stage::Synth && config.input.is_some() {
            skipped("input cohort supplied")
        } else {
            run_stage(&ctx, stage, None)?
        };
        eprintln!("{stage}: {:.2}s", start.elapsed().as_secs_f64());
        stages.insert(stage.name().to_string(), section);
    }
    let report = crate::report::assemble(config, seeds, stages);
    write_json(&ctx.path(REPORT), &report).in_stage(Stage::Report)?;
    Ok(report)
}
