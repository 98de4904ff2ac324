//! Command-line entry points: train, eval, ablate, sweep, embed, generate-data.

mod manifest;

pub use manifest::{sha256_file, RunManifest};

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::augment::{Template, WordOrder};
use crate::data::{self, SyntheticData, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, EvalSets};
use crate::numerics::write_atomic;
use crate::trainer::{self, Model, TrainConfig};

/// Default π grid for `sweep`.
pub const DEFAULT_PI_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.5, 1.0];

#[derive(Parser, Debug)]
#[command(name = "eventcl", version, about = "Prompt-template contrastive event representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an encoder and write a checkpoint plus run manifest.
    Train(TrainCmd),
    /// Evaluate one or more checkpoints and print the metric report.
    Eval(EvalCmd),
    /// Train the four ablation variants with a shared seed and tabulate them.
    Ablate(ExperimentCmd),
    /// Train across prompt-insertion probabilities and tabulate the results.
    Sweep(SweepCmd),
    /// Write unit embeddings for a JSON-lines event file.
    Embed(EmbedCmd),
    /// Generate the synthetic corpus and evaluation sets.
    GenerateData(GenerateCmd),
}

/// Training knobs shared by train, ablate, and sweep. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prompt-template insertion probability.
    #[arg(long)]
    pub pi: Option<f64>,
    /// Contrastive and prototype temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// none | bare_labels | colon_labels | is_labels
    #[arg(long)]
    pub template: Option<Template>,
    /// spo | pso
    #[arg(long = "word-order")]
    pub word_order: Option<WordOrder>,
    #[arg(long = "no-prompt")]
    pub no_prompt: bool,
    #[arg(long = "no-mlm")]
    pub no_mlm: bool,
    #[arg(long = "no-cp")]
    pub no_cp: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory (defaults to $EVENTCL_OUT, then `runs`).
    #[arg(long, env = "EVENTCL_OUT")]
    pub out: Option<PathBuf>,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p).map_err(|e| match e {
                Error::Io(io) => Error::Input(format!("cannot read config {}: {io}", p.display())),
                other => other,
            })?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.pi {
            cfg.insertion_probability = v;
        }
        if let Some(v) = self.tau {
            cfg.temperature = v;
        }
        if let Some(v) = self.template {
            cfg.template = v;
        }
        if let Some(v) = self.word_order {
            cfg.word_order = v;
        }
        if self.no_prompt {
            cfg.enable_prompt = false;
        }
        if self.no_mlm {
            cfg.enable_mlm = false;
        }
        if self.no_cp {
            cfg.enable_cp = false;
        }
        if let Some(v) = self.steps {
            cfg.steps = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

/// Dataset locations. Individual paths override files inside `--data`.
#[derive(Args, Debug, Clone, Default)]
pub struct DataFlags {
    /// Directory holding the standard dataset file names (as written by generate-data).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long = "hard-original")]
    pub hard_original: Option<PathBuf>,
    #[arg(long = "hard-extended")]
    pub hard_extended: Option<PathBuf>,
    #[arg(long)]
    pub transitive: Option<PathBuf>,
    #[arg(long)]
    pub mcnc: Option<PathBuf>,
}

impl DataFlags {
    fn path(&self, explicit: &Option<PathBuf>, file: &str, what: &str) -> Result<PathBuf> {
        let p = match (explicit, &self.data) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join(file),
            (None, None) => {
                return Err(Error::Input(format!("no {what} given (use --data or --{what})")))
            }
        };
        if !p.is_file() {
            return Err(Error::Input(format!("{what} file {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn corpus_path(&self) -> Result<PathBuf> {
        self.path(&self.corpus, SyntheticData::CORPUS_FILE, "corpus")
    }

    /// Paths of the four evaluation sets, in report order.
    pub fn eval_paths(&self) -> Result<[PathBuf; 4]> {
        Ok([
            self.path(&self.hard_original, SyntheticData::HARD_ORIGINAL_FILE, "hard-original")?,
            self.path(&self.hard_extended, SyntheticData::HARD_EXTENDED_FILE, "hard-extended")?,
            self.path(&self.transitive, SyntheticData::TRANSITIVE_FILE, "transitive")?,
            self.path(&self.mcnc, SyntheticData::MCNC_FILE, "mcnc")?,
        ])
    }

    pub fn load_eval_sets(&self) -> Result<(EvalSets, [PathBuf; 4])> {
        let paths = self.eval_paths()?;
        let sets = EvalSets {
            hard_original: data::load_hard_pairs(&paths[0])?,
            hard_extended: data::load_hard_pairs(&paths[1])?,
            transitive: data::load_transitive(&paths[2])?,
            mcnc: data::load_mcnc(&paths[3])?,
        };
        Ok((sets, paths))
    }
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Checkpoint(s) to evaluate; repeat for several.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the case-study cosine table (TSV) for the original hard pairs.
    #[arg(long = "dump-cases")]
    pub dump_cases: Option<PathBuf>,
    /// Write a TSV of π against the similarity metrics, one row per checkpoint.
    #[arg(long = "sweep-table")]
    pub sweep_table: Option<PathBuf>,
    /// Write a TSV of alignment and uniformity, one row per checkpoint.
    #[arg(long = "align-table")]
    pub align_table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentCmd {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    /// Comma-separated π values.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PI_GRID.to_vec())]
    pub grid: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct EmbedCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON-lines events to embed.
    #[arg(long)]
    pub events: PathBuf,
    /// Output JSON-lines file (stdout when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateCmd {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of synonym clusters to use (at most the built-in count).
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long = "events-per-cluster")]
    pub events_per_cluster: Option<usize>,
    #[arg(long = "mcnc-instances")]
    pub mcnc_instances: Option<usize>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(c) => cmd_train(&c).map(|_| ()),
        Command::Eval(c) => cmd_eval(&c),
        Command::Ablate(c) => cmd_ablate(&c),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Embed(c) => cmd_embed(&c),
        Command::GenerateData(c) => cmd_generate(&c),
    }
}

/// Trains one configuration into `out`, writing the checkpoint and manifest.
pub fn train_run(cfg: &TrainConfig, corpus_path: &Path, out: &Path, command: &str) -> Result<RunManifest> {
    let started = Instant::now();
    let corpus = data::load_events(corpus_path)?;
    let outcome = trainer::train(&corpus, cfg, Some(out))?;
    let checkpoint = outcome.checkpoint.expect("output directory was given");
    let manifest = RunManifest::new(
        command,
        cfg,
        &[corpus_path],
        &checkpoint,
        &outcome.metrics,
        started.elapsed().as_secs_f64(),
    )?;
    manifest.write(&out.join(RunManifest::FILE))?;
    Ok(manifest)
}

fn cmd_train(c: &TrainCmd) -> Result<RunManifest> {
    let cfg = c.train.resolve()?;
    let corpus = c.data.corpus_path()?;
    let out = c.train.out_dir();
    let m = train_run(&cfg, &corpus, &out, "train")?;
    eprintln!("checkpoint written to {}", m.checkpoint.display());
    Ok(m)
}

fn evaluate_checkpoint(path: &Path, sets: &EvalSets) -> Result<(Model, EvalReport)> {
    let model = Model::load(path)?;
    let report = eval::evaluate(sets, &model)?;
    Ok((model, report))
}

/// `π` the checkpoint was trained with, or NaN when its metadata lacks one.
fn checkpoint_pi(path: &Path) -> Result<f64> {
    let ckpt = crate::numerics::Checkpoint::load(path)?;
    let cfg = ckpt.metadata.get("train_config");
    let enabled = cfg
        .and_then(|c| c.get("enable_prompt"))
        .and_then(|v| v.as_bool())
        .unwrap_or(true);
    let pi = cfg
        .and_then(|c| c.get("insertion_probability"))
        .and_then(|v| v.as_f64())
        .unwrap_or(f64::NAN);
    Ok(if enabled { pi } else { 0.0 })
}

fn tsv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join("\t");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join("\t"));
        s.push('\n');
    }
    s
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn cmd_eval(c: &EvalCmd) -> Result<()> {
    let (sets, _) = c.data.load_eval_sets()?;
    let mut reports = Vec::new();
    for path in &c.checkpoint {
        let (model, report) = evaluate_checkpoint(path, &sets)?;
        if let Some(dump) = &c.dump_cases {
            let rows = eval::case_study_dump(&eval::hard_pair_cases(&sets.hard_original), &model)?;
            write_atomic(dump, eval::case_table_tsv(&rows).as_bytes())?;
        }
        reports.push((path.clone(), report));
    }
    let json = if reports.len() == 1 {
        reports[0].1.to_json()?
    } else {
        let all: Vec<_> = reports
            .iter()
            .map(|(p, r)| serde_json::json!({ "checkpoint": p, "report": r }))
            .collect();
        serde_json::to_string_pretty(&all)?
    };
    println!("{json}");
    if let Some(p) = &c.report {
        write_atomic(p, format!("{json}\n").as_bytes())?;
    }
    if let Some(p) = &c.sweep_table {
        let mut rows = Vec::new();
        for (path, r) in &reports {
            rows.push(vec![
                fmt(checkpoint_pi(path)?),
                fmt(r.original_acc),
                fmt(r.extended_acc),
                fmt(r.transitive_rho),
            ]);
        }
        let header = ["pi", "original_acc", "extended_acc", "transitive_rho"];
        write_atomic(p, tsv(&header, &rows).as_bytes())?;
    }
    if let Some(p) = &c.align_table {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|(path, r)| vec![path.display().to_string(), fmt(r.align), fmt(r.uniform)])
            .collect();
        write_atomic(p, tsv(&["checkpoint", "align", "uniform"], &rows).as_bytes())?;
    }
    Ok(())
}

/// The four ablation variants: name and the config change each applies.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    vec![
        ("full", base.clone()),
        (
            "w/o Prompt Template",
            TrainConfig {
                enable_prompt: false,
                insertion_probability: 0.0,
                ..base.clone()
            },
        ),
        (
            "w/o SPO Word Order",
            TrainConfig {
                word_order: WordOrder::Pso,
                ..base.clone()
            },
        ),
        (
            "w/o EventMLM",
            TrainConfig {
                enable_mlm: false,
                ..base.clone()
            },
        ),
    ]
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn cmd_ablate(c: &ExperimentCmd) -> Result<()> {
    let base = c.train.resolve()?;
    let corpus = c.data.corpus_path()?;
    let (sets, _) = c.data.load_eval_sets()?;
    let root = c.train.out_dir().join("ablate");
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for (name, cfg) in ablation_variants(&base) {
        let dir = root.join(slug(name));
        let m = train_run(&cfg, &corpus, &dir, "ablate")?;
        let (_, r) = evaluate_checkpoint(&m.checkpoint, &sets)?;
        rows.push(vec![name.to_string(), fmt(r.original_acc), fmt(r.extended_acc), fmt(r.transitive_rho)]);
        json_rows.push(serde_json::json!({
            "variant": name,
            "original_acc": r.original_acc,
            "extended_acc": r.extended_acc,
            "transitive_rho": r.transitive_rho,
        }));
    }
    let table = tsv(&["variant", "original_acc", "extended_acc", "transitive_rho"], &rows);
    print!("{table}");
    write_atomic(&root.join("ablation.tsv"), table.as_bytes())?;
    write_atomic(
        &root.join("ablation.json"),
        serde_json::to_string_pretty(&json_rows)?.as_bytes(),
    )?;
    Ok(())
}

fn cmd_sweep(c: &SweepCmd) -> Result<()> {
    let base = c.train.resolve()?;
    let corpus = c.data.corpus_path()?;
    let (sets, _) = c.data.load_eval_sets()?;
    let root = c.train.out_dir().join("sweep");
    let mut rows = Vec::new();
    for &pi in &c.grid {
        let cfg = TrainConfig {
            insertion_probability: pi,
            enable_prompt: true,
            ..base.clone()
        };
        cfg.validate()?;
        let dir = root.join(format!("pi-{pi}"));
        let m = train_run(&cfg, &corpus, &dir, "sweep")?;
        let (_, r) = evaluate_checkpoint(&m.checkpoint, &sets)?;
        rows.push(vec![fmt(pi), fmt(r.original_acc), fmt(r.extended_acc), fmt(r.transitive_rho)]);
    }
    let table = tsv(&["pi", "original_acc", "extended_acc", "transitive_rho"], &rows);
    print!("{table}");
    write_atomic(&root.join("sweep.tsv"), table.as_bytes())
}

fn cmd_embed(c: &EmbedCmd) -> Result<()> {
    let model = Model::load(&c.checkpoint)?;
    if !c.events.is_file() {
        return Err(Error::Input(format!("events file {} does not exist", c.events.display())));
    }
    let events = data::load_events(&c.events)?;
    let mut out = String::new();
    if !events.is_empty() {
        let raw = eval::Embedder::embed_events(&model, &events)?;
        for (e, v) in events.iter().zip(raw) {
            let line = serde_json::json!({ "event": e, "vector": eval::normalize(&v)? });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    match &c.output {
        Some(p) => write_atomic(p, out.as_bytes()),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_generate(c: &GenerateCmd) -> Result<()> {
    let mut spec = SyntheticSpec {
        seed: c.seed,
        ..Default::default()
    };
    if let Some(k) = c.clusters {
        spec.num_synonym_clusters = k;
    }
    if let Some(n) = c.events_per_cluster {
        spec.events_per_cluster = n;
    }
    if let Some(n) = c.mcnc_instances {
        spec.mcnc_instances = n;
    }
    let data = data::generate_synthetic(&spec)?;
    data.write(&c.out)?;
    eprintln!(
        "wrote {} corpus events, {} + {} hard pairs, {} transitive pairs, {} MCNC instances to {}",
        data.corpus.len(),
        data.hard_original.len(),
        data.hard_extended.len(),
        data.transitive.len(),
        data.mcnc.len(),
        c.out.display()
    );
    Ok(())
}
