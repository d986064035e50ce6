//! `gattn`: build masks, train and evaluate guided-attention encoders, and
//! run grid and ablation experiments.

mod data;
mod table;

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use guided_attn::corpus::Vocabulary;
use guided_attn::harness::{
    run_ablation, run_grid, write_ablation_csv, write_failures_csv, write_history_csv,
    write_results_csv, write_run_artifacts, write_selection_csv, write_summary_csv,
    ExperimentSpec, RunManifest, RunOptions, DEFAULT_EXTRA_HEADS, DEFAULT_LAYERS,
};
use guided_attn::masks::{build_mask, render_grid, write_dump_line, MaskRole};
use guided_attn::model::{evaluate, train, Checkpoint, ModelConfig};
use guided_attn::synth::{local_pattern_task, SynthSpec};
use serde::Serialize;

use crate::data::{load_dataset, load_file, load_split, warn_unparsed};
use crate::table::{Format, Table};

#[derive(Debug, Parser)]
#[command(name = "gattn", version, about = "Role-guided multi-head attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one sparse mask record per sentence and role.
    Masks(MasksArgs),
    /// Print the mask grids of one sentence.
    Inspect(InspectArgs),
    /// Train one model on a data directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a data directory.
    Eval(EvalArgs),
    /// Train every grid point and select by dev accuracy.
    Grid(GridArgs),
    /// Drop-one-role ablation against the full model and an unguided baseline.
    Ablate(AblateArgs),
    /// Generate the adjacency task as a data directory.
    Synth(SynthArgs),
}

/// Comma-separated guided roles; `none` for an empty list.
#[derive(Debug, Clone)]
struct RoleList(Vec<MaskRole>);

fn parse_roles(s: &str) -> Result<RoleList, String> {
    if s.trim().is_empty() || s.trim() == "none" {
        return Ok(RoleList(Vec::new()));
    }
    let mut roles = Vec::new();
    for name in s.split(',') {
        let role: MaskRole = name.trim().parse().map_err(|e| format!("{e}"))?;
        if !MaskRole::GUIDED.contains(&role) {
            return Err(format!("{role} is not a guided role (expected rarew, seprat, depsyn, majrel, relpos)"));
        }
        if roles.contains(&role) {
            return Err(format!("{role} listed twice"));
        }
        roles.push(role);
    }
    Ok(RoleList(roles))
}

#[derive(Debug, Args)]
struct MasksArgs {
    /// CoNLL-U or plain-text corpus; IDF is computed over this file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_roles, default_value = "rarew,seprat,depsyn,majrel,relpos")]
    roles: RoleList,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sentence id (`# sent_id`, or the 1-based ordinal when absent).
    #[arg(long)]
    id: String,
    #[arg(long, value_parser = parse_roles, default_value = "rarew,seprat,depsyn,majrel,relpos")]
    roles: RoleList,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

/// Config file plus per-key overrides.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML file with model configuration keys; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Guided head roles in head order.
    #[arg(long, value_parser = parse_roles)]
    roles: Option<RoleList>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Override one config key, e.g. `--set d_model=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut table = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("cannot parse {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
            let value = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.trim().to_string(), value);
        }
        let mut cfg = ModelConfig::from_toml(&table.to_string()).context("invalid configuration")?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(roles) = &self.roles {
            cfg.roles = roles.0.clone();
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory holding train and dev splits.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    extra_heads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory holding the training split (for the vocabulary check) and
    /// the split to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write eval.csv and predictions.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Data directories, one per dataset.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of seeds, counting up from the configured seed.
    #[arg(long, default_value_t = 1)]
    repeats: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Record wall-clock seconds per run (makes results.csv vary between runs).
    #[arg(long)]
    timing: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

impl ExperimentArgs {
    fn seeds(&self, base: u64) -> Result<Vec<u64>> {
        if self.repeats == 0 {
            bail!("--repeats must be at least 1");
        }
        Ok((0..self.repeats).map(|i| base + i).collect())
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            jobs: self.jobs,
            timing: self.timing,
        }
    }
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated layer counts.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Comma-separated regular-head counts.
    #[arg(long, value_delimiter = ',')]
    extra_heads: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    extra_heads: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    dev: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 12)]
    length: usize,
}

/// Top-level record of a grid or ablation invocation.
#[derive(Debug, Serialize)]
struct ExperimentManifest {
    command: &'static str,
    datasets: Vec<String>,
    seeds: Vec<u64>,
    layers: Vec<usize>,
    extra_heads: Vec<usize>,
    config: ModelConfig,
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_csv_file(path: &Path, write: impl FnOnce(File) -> Result<(), csv::Error>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write(file).with_context(|| format!("cannot write {}", path.display()))
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.2}")
}

fn cmd_masks(args: &MasksArgs) -> Result<()> {
    let sentences = load_file(&args.data)?;
    warn_unparsed(&args.data.display().to_string(), &sentences, &args.roles.0);
    let vocab = Vocabulary::build(&sentences)?;
    let mut dump = String::new();
    for s in &sentences {
        for &role in &args.roles.0 {
            dump.push_str(&write_dump_line(&s.id, &build_mask(role, s, &vocab)));
            dump.push('\n');
        }
    }
    create_out(&args.out)?;
    let path = args.out.join("masks.dump");
    fs::write(&path, dump).with_context(|| format!("cannot write {}", path.display()))?;
    println!(
        "wrote {} records for {} sentences to {}",
        sentences.len() * args.roles.0.len(),
        sentences.len(),
        path.display()
    );
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let sentences = load_file(&args.data)?;
    warn_unparsed(&args.data.display().to_string(), &sentences, &args.roles.0);
    let vocab = Vocabulary::build(&sentences)?;
    let Some(s) = sentences.iter().find(|s| s.id == args.id) else {
        bail!("no sentence with id {:?} in {}", args.id, args.data.display());
    };
    match args.format {
        Format::Text => {
            for (k, &role) in args.roles.0.iter().enumerate() {
                if k > 0 {
                    println!();
                }
                print!("{}", render_grid(&build_mask(role, s, &vocab), s.forms()));
            }
        }
        Format::Csv => {
            let mut t = Table::new(&["role", "query", "key"]);
            for &role in &args.roles.0 {
                for (i, j) in build_mask(role, s, &vocab).open_entries() {
                    t.row(vec![role.to_string(), (i + 1).to_string(), (j + 1).to_string()]);
                }
            }
            t.print(Format::Csv)?;
        }
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(l) = args.layers {
        cfg.layers = l;
    }
    if let Some(e) = args.extra_heads {
        cfg.extra_heads = e;
    }
    cfg.validate().context("invalid configuration")?;
    let train_set = load_split(&args.data, "train")?;
    let dev_set = load_split(&args.data, "dev")?;
    warn_unparsed("train split", &train_set, &cfg.roles);

    let ckpt = train(&cfg, &train_set, &dev_set)?;
    create_out(&args.out)?;
    let dataset = args
        .data
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("data")
        .to_string();
    let manifest = RunManifest {
        run_id: "train".into(),
        dataset,
        config: cfg,
    };
    fs::write(args.out.join("manifest.toml"), manifest.to_toml())?;
    ckpt.save(args.out.join("model.ckpt"))?;
    write_csv_file(&args.out.join("history.csv"), |f| write_history_csv(f, &ckpt.meta.history))?;

    let mut t = Table::new(&["epoch", "train_loss", "dev_loss", "dev_acc"]);
    for h in &ckpt.meta.history {
        t.row(vec![
            h.epoch.to_string(),
            format!("{:.6}", h.train_loss),
            format!("{:.6}", h.dev_loss),
            fmt_acc(h.dev_accuracy),
        ]);
    }
    t.print(args.format)?;
    if args.format == Format::Text {
        println!("best epoch {}; checkpoint {}", ckpt.meta.best_epoch, args.out.join("model.ckpt").display());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model).with_context(|| format!("cannot load {}", args.model.display()))?;
    let train_set = load_split(&args.data, "train")?;
    let data_hash = Vocabulary::build(&train_set)?.hash();
    if data_hash != ckpt.vocab_hash {
        bail!(
            "vocabulary hash mismatch: checkpoint was trained on {} but {} gives {}",
            ckpt.vocab_hash,
            args.data.display(),
            data_hash
        );
    }
    let split = load_split(&args.data, &args.split)?;
    warn_unparsed(&format!("{} split", args.split), &split, &ckpt.config.roles);
    let m = evaluate(&ckpt, &split)?;

    let mut t = Table::new(&["split", "correct", "total", "accuracy", "loss"]);
    t.row(vec![
        args.split.clone(),
        m.correct.to_string(),
        m.total.to_string(),
        fmt_acc(m.accuracy),
        format!("{:.6}", m.loss),
    ]);
    t.print(args.format)?;
    if let Some(out) = &args.out {
        create_out(out)?;
        let mut full = Table::new(&["split", "correct", "total", "accuracy", "loss"]);
        full.row(vec![
            args.split.clone(),
            m.correct.to_string(),
            m.total.to_string(),
            m.accuracy.to_string(),
            m.loss.to_string(),
        ]);
        full.write_csv(&out.join("eval.csv"))?;
        let mut preds = Table::new(&["sentence_id", "label", "prediction"]);
        for (s, p) in split.iter().zip(&m.predictions) {
            let label = s.label.map(|l| l.to_string()).unwrap_or_default();
            preds.row(vec![s.id.clone(), label, p.to_string()]);
        }
        preds.write_csv(&out.join("predictions.csv"))?;
    }
    Ok(())
}

fn write_manifest(out: &Path, manifest: &ExperimentManifest) -> Result<()> {
    let text = toml::to_string(manifest).context("cannot serialize manifest")?;
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let exp = &args.exp;
    let base = exp.config.resolve()?;
    let spec = ExperimentSpec {
        datasets: Vec::new(),
        base: base.clone(),
        layers: args.layers.clone().unwrap_or_else(|| DEFAULT_LAYERS.to_vec()),
        extra_heads: args.extra_heads.clone().unwrap_or_else(|| DEFAULT_EXTRA_HEADS.to_vec()),
        seeds: exp.seeds(base.seed)?,
    };
    let errors: Vec<String> = spec
        .grid()
        .iter()
        .filter_map(|&(layers, extra_heads)| {
            ModelConfig {
                layers,
                extra_heads,
                ..base.clone()
            }
            .validate()
            .err()
            .map(|e| e.to_string())
        })
        .collect();
    if errors.len() == spec.grid().len() {
        bail!("invalid configuration: no grid point is valid ({})", errors[0]);
    }
    let datasets = exp.data.iter().map(|d| load_dataset(d)).collect::<Result<Vec<_>>>()?;
    for d in &datasets {
        warn_unparsed(&d.name, &d.train, &base.roles);
    }
    let spec = ExperimentSpec { datasets, ..spec };
    let result = run_grid(&spec, exp.options())?;

    create_out(&exp.out)?;
    write_manifest(
        &exp.out,
        &ExperimentManifest {
            command: "grid",
            datasets: exp.data.iter().map(|d| d.display().to_string()).collect(),
            seeds: spec.seeds.clone(),
            layers: spec.layers.clone(),
            extra_heads: spec.extra_heads.clone(),
            config: base,
        },
    )?;
    write_run_artifacts(&exp.out.join("runs"), &result.runs)?;
    write_csv_file(&exp.out.join("results.csv"), |f| write_results_csv(f, &result.records()))?;
    write_csv_file(&exp.out.join("failures.csv"), |f| write_failures_csv(f, &result.failures()))?;
    write_csv_file(&exp.out.join("selected.csv"), |f| write_selection_csv(f, &result.selected))?;

    for f in result.failures() {
        eprintln!("warning: run {} failed: {}", f.run_id, f.error);
    }
    let mut t = Table::new(&["dataset", "layers", "extra_heads", "dev_acc", "test_acc"]);
    for s in &result.selected {
        t.row(vec![
            s.dataset.clone(),
            s.layers.to_string(),
            s.extra_heads.to_string(),
            fmt_acc(s.dev_acc),
            fmt_acc(s.test_acc),
        ]);
    }
    t.print(exp.format)
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let exp = &args.exp;
    let mut base = exp.config.resolve()?;
    if let Some(l) = args.layers {
        base.layers = l;
    }
    if let Some(e) = args.extra_heads {
        base.extra_heads = e;
    }
    base.validate().context("invalid configuration")?;
    let roles: Vec<MaskRole> = base.roles.iter().copied().filter(|&r| r != MaskRole::Padding).collect();
    if roles.is_empty() {
        bail!("nothing to ablate: the configuration has no guided roles");
    }
    let datasets = exp.data.iter().map(|d| load_dataset(d)).collect::<Result<Vec<_>>>()?;
    for d in &datasets {
        warn_unparsed(&d.name, &d.train, &base.roles);
    }
    let spec = ExperimentSpec {
        datasets,
        base: base.clone(),
        layers: vec![base.layers],
        extra_heads: vec![base.extra_heads],
        seeds: exp.seeds(base.seed)?,
    };
    let result = run_ablation(&spec, &roles, exp.options())?;

    create_out(&exp.out)?;
    write_manifest(
        &exp.out,
        &ExperimentManifest {
            command: "ablate",
            datasets: exp.data.iter().map(|d| d.display().to_string()).collect(),
            seeds: spec.seeds.clone(),
            layers: spec.layers.clone(),
            extra_heads: spec.extra_heads.clone(),
            config: base,
        },
    )?;
    write_run_artifacts(&exp.out.join("runs"), &result.runs)?;
    write_csv_file(&exp.out.join("results.csv"), |f| write_results_csv(f, &result.records()))?;
    write_csv_file(&exp.out.join("failures.csv"), |f| write_failures_csv(f, &result.failures()))?;
    write_csv_file(&exp.out.join("ablation.csv"), |f| write_ablation_csv(f, &result.rows))?;
    write_csv_file(&exp.out.join("summary.csv"), |f| write_summary_csv(f, &result.report.drops))?;

    for f in result.failures() {
        eprintln!("warning: run {} failed: {}", f.run_id, f.error);
    }
    let mut t = Table::new(&["role", "mean_drop", "std_drop", "count"]);
    for d in &result.report.drops {
        t.row(vec![d.role.to_string(), fmt_acc(d.mean_drop), fmt_acc(d.std_drop), d.count.to_string()]);
    }
    t.print(exp.format)?;
    if exp.format == Format::Text {
        let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), fmt_acc);
        println!(
            "full model {}  unguided baseline {}",
            show(result.report.full_acc),
            show(result.report.baseline_acc)
        );
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        train: args.train,
        dev: args.dev,
        test: args.test,
        vocab: args.vocab,
        length: args.length,
        seed: args.seed,
    };
    let data = local_pattern_task(&spec)?;
    create_out(&args.out)?;
    for (name, split) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        let mut text = String::new();
        for s in split {
            let label = s.label.expect("generated sentences are labelled");
            text.push_str(&format!("{label}\t{}\n", s.forms().collect::<Vec<_>>().join(" ")));
        }
        fs::write(args.out.join(format!("{name}.txt")), text)?;
    }
    println!(
        "wrote {} train, {} dev, {} test sentences to {}",
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        args.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Masks(a) => cmd_masks(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
