//! Grid search, drop-one-role ablation, and CSV metric tables.

mod report;

pub use report::{
    read_ablation_csv, read_failures_csv, read_results_csv, read_selection_csv, read_summary_csv,
    write_ablation_csv, write_failures_csv, write_history_csv, write_results_csv,
    write_selection_csv, write_summary_csv, AblationRow,
    RoleDrop, RunFailure, RunRecord,
};

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::masks::MaskRole;
use crate::model::{evaluate, train, Checkpoint, ModelConfig, ModelError};

/// Layer counts tried by the standard grid.
pub const DEFAULT_LAYERS: [usize; 4] = [2, 4, 6, 8];
/// Regular-head counts tried by the standard grid.
pub const DEFAULT_EXTRA_HEADS: [usize; 2] = [1, 3];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment has no datasets")]
    NoDatasets,
    #[error("experiment grid is empty")]
    EmptyGrid,
    #[error("experiment needs at least one seed")]
    NoSeeds,
    #[error("cannot ablate {0}: it is not one of the configured guided roles")]
    RoleNotEnabled(MaskRole),
    #[error("jobs must be at least 1")]
    ZeroJobs,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub datasets: Vec<Dataset>,
    /// Every field except `layers`, `extra_heads`, and `seed` is taken from
    /// here for each run.
    pub base: ModelConfig,
    pub layers: Vec<usize>,
    pub extra_heads: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    /// The standard grid over `base`: layers {2,4,6,8} × extra heads {1,3}.
    pub fn default_grid(datasets: Vec<Dataset>, base: ModelConfig, seeds: Vec<u64>) -> Self {
        Self {
            datasets,
            base,
            layers: DEFAULT_LAYERS.to_vec(),
            extra_heads: DEFAULT_EXTRA_HEADS.to_vec(),
            seeds,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.datasets.is_empty() {
            return Err(HarnessError::NoDatasets);
        }
        if self.layers.is_empty() || self.extra_heads.is_empty() {
            return Err(HarnessError::EmptyGrid);
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        Ok(())
    }

    /// Grid points in the order they are run and tie-broken.
    pub fn grid(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|&l| self.extra_heads.iter().map(move |&e| (l, e)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker slots; each run is single-threaded.
    pub jobs: usize,
    /// Fill `wall_seconds`. Off by default so result files are reproducible.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, timing: false }
    }
}

/// The resolved configuration of one run, written next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset: String,
    pub config: ModelConfig,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// One planned training run.
#[derive(Debug, Clone)]
struct Job {
    manifest: RunManifest,
    dataset: usize,
}

#[derive(Debug, Clone)]
pub struct CompletedRun {
    pub manifest: RunManifest,
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub enum RunOutcome {
    Completed(Box<CompletedRun>),
    Failed {
        manifest: RunManifest,
        failure: RunFailure,
    },
}

impl RunOutcome {
    pub fn manifest(&self) -> &RunManifest {
        match self {
            RunOutcome::Completed(run) => &run.manifest,
            RunOutcome::Failed { manifest, .. } => manifest,
        }
    }

    pub fn record(&self) -> Option<&RunRecord> {
        match self {
            RunOutcome::Completed(run) => Some(&run.record),
            RunOutcome::Failed { .. } => None,
        }
    }
}

fn roles_label(roles: &[MaskRole]) -> String {
    roles.iter().map(|r| r.name()).collect::<Vec<_>>().join("+")
}

fn run_one(job: &Job, data: &Dataset, timing: bool) -> RunOutcome {
    let cfg = &job.manifest.config;
    let start = Instant::now();
    let result = (|| -> Result<(Checkpoint, f64, f64), ModelError> {
        let ckpt = train(cfg, &data.train, &data.dev)?;
        let dev = evaluate(&ckpt, &data.dev)?.accuracy;
        let test = evaluate(&ckpt, &data.test)?.accuracy;
        Ok((ckpt, dev, test))
    })();
    let manifest = job.manifest.clone();
    match result {
        Ok((checkpoint, dev_acc, test_acc)) => {
            let record = RunRecord {
                run_id: manifest.run_id.clone(),
                dataset: manifest.dataset.clone(),
                layers: cfg.layers,
                heads: cfg.heads(),
                guided_heads: cfg.guided_heads(),
                roles: roles_label(&cfg.roles),
                seed: cfg.seed,
                dev_acc,
                test_acc,
                epochs: checkpoint.meta.epochs_run,
                wall_seconds: timing.then(|| start.elapsed().as_secs_f64()),
            };
            RunOutcome::Completed(Box::new(CompletedRun {
                manifest,
                record,
                checkpoint,
            }))
        }
        Err(e) => {
            let failure = RunFailure {
                run_id: manifest.run_id.clone(),
                dataset: manifest.dataset.clone(),
                layers: cfg.layers,
                heads: cfg.heads(),
                seed: cfg.seed,
                error: e.to_string(),
            };
            RunOutcome::Failed { manifest, failure }
        }
    }
}

/// Runs `jobs` on a pool of `opts.jobs` threads. Output order matches
/// input order regardless of scheduling.
fn run_all(jobs: &[Job], datasets: &[Dataset], opts: RunOptions) -> Result<Vec<RunOutcome>, HarnessError> {
    if opts.jobs == 0 {
        return Err(HarnessError::ZeroJobs);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build()?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|j| run_one(j, &datasets[j.dataset], opts.timing))
            .collect()
    }))
}

/// The grid point chosen for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub dataset: String,
    pub layers: usize,
    pub extra_heads: usize,
    /// Mean over the seeds that completed.
    pub dev_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub runs: Vec<RunOutcome>,
    /// One entry per dataset with at least one completed grid point.
    pub selected: Vec<Selection>,
}

impl GridResult {
    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().filter_map(|r| r.record().cloned()).collect()
    }

    pub fn failures(&self) -> Vec<RunFailure> {
        self.runs
            .iter()
            .filter_map(|r| match r {
                RunOutcome::Failed { failure, .. } => Some(failure.clone()),
                RunOutcome::Completed(_) => None,
            })
            .collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Trains every (dataset, layers, extra heads, seed) point and selects, per
/// dataset, the grid point with the best mean dev accuracy (earlier grid
/// point on ties). Failed runs are recorded and skipped.
pub fn run_grid(spec: &ExperimentSpec, opts: RunOptions) -> Result<GridResult, HarnessError> {
    spec.validate()?;
    let grid = spec.grid();
    let mut jobs = Vec::new();
    for (di, data) in spec.datasets.iter().enumerate() {
        for &(layers, extra) in &grid {
            for &seed in &spec.seeds {
                let config = ModelConfig {
                    layers,
                    extra_heads: extra,
                    seed,
                    ..spec.base.clone()
                };
                jobs.push(Job {
                    manifest: RunManifest {
                        run_id: format!("{}-L{layers}-E{extra}-s{seed}", data.name),
                        dataset: data.name.clone(),
                        config,
                    },
                    dataset: di,
                });
            }
        }
    }
    let runs = run_all(&jobs, &spec.datasets, opts)?;

    let mut selected = Vec::new();
    for data in &spec.datasets {
        let mut best: Option<Selection> = None;
        for &(layers, extra) in &grid {
            let recs: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| {
                    let m = r.manifest();
                    m.dataset == data.name && m.config.layers == layers && m.config.extra_heads == extra
                })
                .filter_map(RunOutcome::record)
                .collect();
            if recs.is_empty() {
                continue;
            }
            let dev: Vec<f64> = recs.iter().map(|r| r.dev_acc).collect();
            let test: Vec<f64> = recs.iter().map(|r| r.test_acc).collect();
            let candidate = Selection {
                dataset: data.name.clone(),
                layers,
                extra_heads: extra,
                dev_acc: mean(&dev),
                test_acc: mean(&test),
            };
            if best.as_ref().is_none_or(|b| candidate.dev_acc > b.dev_acc) {
                best = Some(candidate);
            }
        }
        selected.extend(best);
    }
    Ok(GridResult { runs, selected })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// One entry per ablated role, in the order requested.
    pub drops: Vec<RoleDrop>,
    /// Mean test accuracy of the full model.
    pub full_acc: Option<f64>,
    /// Mean test accuracy of the all-regular-heads baseline.
    pub baseline_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    /// Full runs, then baseline runs, then one run per ablated role, each
    /// block ordered by dataset then seed.
    pub runs: Vec<RunOutcome>,
    /// One row per (role, dataset, seed) whose full and ablated runs both
    /// completed.
    pub rows: Vec<AblationRow>,
    pub report: AblationReport,
}

impl AblationResult {
    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().filter_map(|r| r.record().cloned()).collect()
    }

    pub fn failures(&self) -> Vec<RunFailure> {
        self.runs
            .iter()
            .filter_map(|r| match r {
                RunOutcome::Failed { failure, .. } => Some(failure.clone()),
                RunOutcome::Completed(_) => None,
            })
            .collect()
    }
}

/// `cfg` with the guided slot for `role` turned into a regular head.
pub fn ablate_role(cfg: &ModelConfig, role: MaskRole) -> Result<ModelConfig, HarnessError> {
    let slot = cfg
        .roles
        .iter()
        .position(|&r| r == role && r != MaskRole::Padding)
        .ok_or(HarnessError::RoleNotEnabled(role))?;
    let mut out = cfg.clone();
    out.roles[slot] = MaskRole::Padding;
    Ok(out)
}

/// `cfg` with every head regular and the head count unchanged.
pub fn baseline_of(cfg: &ModelConfig) -> ModelConfig {
    ModelConfig {
        roles: Vec::new(),
        extra_heads: cfg.heads(),
        ..cfg.clone()
    }
}

/// Trains the full model (`spec.base` at the first grid point), the
/// all-regular baseline, and one drop-one-role model per entry of `roles`,
/// for every dataset and seed. Ablated runs differ from their full run
/// only in the substituted mask.
pub fn run_ablation(
    spec: &ExperimentSpec,
    roles: &[MaskRole],
    opts: RunOptions,
) -> Result<AblationResult, HarnessError> {
    spec.validate()?;
    let full_cfg = ModelConfig {
        layers: spec.layers[0],
        extra_heads: spec.extra_heads[0],
        ..spec.base.clone()
    };
    for &r in roles {
        ablate_role(&full_cfg, r)?;
    }

    let mut jobs = Vec::new();
    let mut plan = |tag: &str, cfg: &ModelConfig| {
        for (di, data) in spec.datasets.iter().enumerate() {
            for &seed in &spec.seeds {
                jobs.push(Job {
                    manifest: RunManifest {
                        run_id: format!("{}-{tag}-s{seed}", data.name),
                        dataset: data.name.clone(),
                        config: ModelConfig { seed, ..cfg.clone() },
                    },
                    dataset: di,
                });
            }
        }
    };
    plan("full", &full_cfg);
    plan("baseline", &baseline_of(&full_cfg));
    for &r in roles {
        plan(&format!("no-{}", r.name()), &ablate_role(&full_cfg, r)?);
    }
    let runs = run_all(&jobs, &spec.datasets, opts)?;

    let block = spec.datasets.len() * spec.seeds.len();
    let test_acc = |o: &RunOutcome| o.record().map(|r| r.test_acc);
    let mean_of = |outs: &[RunOutcome]| {
        let accs: Vec<f64> = outs.iter().filter_map(test_acc).collect();
        (!accs.is_empty()).then(|| mean(&accs))
    };
    let full = &runs[..block];
    let mut rows = Vec::new();
    let mut drops = Vec::new();
    for (ri, &role) in roles.iter().enumerate() {
        let ablated = &runs[(2 + ri) * block..(3 + ri) * block];
        let mut role_drops = Vec::new();
        for (f, a) in full.iter().zip(ablated) {
            let (Some(fr), Some(ar)) = (f.record(), a.record()) else {
                continue;
            };
            let drop = fr.test_acc - ar.test_acc;
            role_drops.push(drop);
            rows.push(AblationRow {
                role,
                dataset: fr.dataset.clone(),
                seed: fr.seed,
                full_acc: fr.test_acc,
                ablated_acc: ar.test_acc,
                drop,
            });
        }
        drops.push(RoleDrop {
            role,
            mean_drop: if role_drops.is_empty() { f64::NAN } else { mean(&role_drops) },
            std_drop: std_dev(&role_drops),
            count: role_drops.len(),
        });
    }
    let report = AblationReport {
        drops,
        full_acc: mean_of(full),
        baseline_acc: mean_of(&runs[block..2 * block]),
    };
    Ok(AblationResult { runs, rows, report })
}

/// Writes each run's manifest, checkpoint, and epoch history under
/// `dir/<run_id>/`.
pub fn write_run_artifacts(dir: &Path, runs: &[RunOutcome]) -> Result<(), HarnessError> {
    for run in runs {
        let m = run.manifest();
        let run_dir = dir.join(&m.run_id);
        std::fs::create_dir_all(&run_dir)?;
        std::fs::write(run_dir.join("manifest.toml"), m.to_toml())?;
        if let RunOutcome::Completed(done) = run {
            std::fs::write(run_dir.join("model.ckpt"), done.checkpoint.to_bytes())?;
            let file = std::fs::File::create(run_dir.join("history.csv"))?;
            write_history_csv(file, &done.checkpoint.meta.history)?;
        }
    }
    Ok(())
}
