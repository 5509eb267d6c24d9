//! `xdisease`: validate corpora, run scope-comparison backtests, build
//! reports and analyse analogue neighbourhoods.

mod config;
mod output;

use std::fmt::Write as _;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use xdisease::eval::{
    self, attach_ratios, composition_report, read_composition_log, read_scores, run_backtest, scope_comparison_report,
    write_composition_log, write_composition_report, write_forecasts, write_scores, BacktestOutput, BacktestPlan,
    Forecaster, ScoreRecord,
};
use xdisease::synthetic::Scenario;
use xdisease::{load_corpus, write_corpus, Corpus, ScopeKind, StreamKey, TrainingScope};

use config::{ConfigFile, GbtOverrides, RunConfig};
use output::{csv_bytes, write_atomic};

#[derive(Parser)]
#[command(name = "xdisease", version, about = "Cross-disease training-scope backtests for weekly surveillance data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus and report per-stream counts, taxonomy coverage and gaps.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run rolling-origin backtests for every (target, scope, model) cell.
    Backtest(RunArgs),
    /// Compare training scopes from a completed backtest's scores.
    Report(RunArgs),
    /// Summarise neighbourhood composition logged by analogue backtests.
    AnalyzeNeighborhoods(RunArgs),
    /// Write the synthetic corpora used by the acceptance tests.
    GenSynthetic {
        /// One of positive-transfer, negative-transfer, self-similar, protocol, or all.
        #[arg(long, default_value = "all")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Target stream patterns `source/disease/subtype/location`, `*` as wildcard.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    scopes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for grid cells.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    all_data_fraction: Option<f64>,
    /// Fixed analogue neighbourhood size.
    #[arg(long)]
    neighbors: Option<usize>,
    /// First forecast year for analogue backtests; 0 disables the floor.
    #[arg(long)]
    moa_earliest_year: Option<i32>,
    #[arg(long)]
    log_composition: Option<bool>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    #[arg(long)]
    feature_fraction: Option<f64>,
    /// Score CSV read by `report` (default: `<output>/scores.csv`).
    #[arg(long)]
    scores: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let flags = ConfigFile {
            corpus: self.corpus.clone(),
            targets: self.targets.clone(),
            scopes: self.scopes.clone(),
            models: self.models.clone(),
            seed: self.seed,
            output: self.output.clone(),
            jobs: self.jobs,
            all_data_fraction: self.all_data_fraction,
            neighbors: self.neighbors,
            moa_earliest_year: self.moa_earliest_year,
            log_composition: self.log_composition,
            gbt: GbtOverrides {
                n_trees: self.n_trees,
                learning_rate: self.learning_rate,
                max_depth: self.max_depth,
                min_samples_leaf: self.min_samples_leaf,
                feature_fraction: self.feature_fraction,
                ..Default::default()
            },
        };
        RunConfig::resolve(file.merge(flags))
    }
}

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { corpus } => cmd_validate(&corpus),
        Command::Backtest(args) => args.config().map_err(input).and_then(|c| cmd_backtest(&c)),
        Command::Report(args) => args.config().map_err(input).and_then(|c| cmd_report(&c, args.scores.as_deref())),
        Command::AnalyzeNeighborhoods(args) => {
            let out = args.output.clone().or_else(|| args.config.as_ref().and_then(|p| ConfigFile::load(p).ok()?.output));
            match out {
                Some(dir) => cmd_analyze_neighborhoods(&dir),
                None => Err(input(anyhow!("no output directory given (config key `output` or --output)"))),
            }
        }
        Command::GenSynthetic { scenario, seed, out } => cmd_gen_synthetic(&scenario, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_validate(root: &Path) -> Outcome {
    let corpus = load_corpus(root).map_err(input)?;
    let mut text = String::new();
    macro_rules! outln {
        ($($t:tt)*) => { let _ = writeln!(text, $($t)*); };
    }
    outln!("series: {}", corpus.len());
    outln!("source,disease,subtype,location,unit,start,end,weeks,missing,longest_gap");
    for s in corpus.series() {
        let mut longest = 0;
        let mut run = 0;
        for v in &s.values {
            run = if v.is_none() { run + 1 } else { 0 };
            longest = longest.max(run);
        }
        outln!(
            "{},{},{},{},{},{},{},{},{},{}",
            s.key.source,
            s.key.disease,
            s.key.subtype_str(),
            s.key.location,
            s.unit.as_str(),
            s.start_date,
            s.date_at(s.len() - 1),
            s.len(),
            s.n_missing(),
            longest
        );
    }
    outln!("disease,mode_of_transmission,series");
    for (disease, mode) in corpus.taxonomy().diseases() {
        let n = corpus.series().iter().filter(|s| s.key.disease == disease).count();
        outln!("{disease},{},{n}", mode.as_str());
    }
    let total: usize = corpus.series().iter().map(|s| s.len()).sum();
    let missing: usize = corpus.series().iter().map(|s| s.n_missing()).sum();
    outln!("weeks: {total}, missing: {missing}");
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

#[derive(Clone)]
struct Cell {
    target: StreamKey,
    scope: ScopeKind,
    model: Forecaster,
}

impl Cell {
    fn file_stem(&self) -> String {
        format!("{}__{}__{}", self.target.slug(), self.scope, self.model)
    }
}

struct Skipped {
    target: String,
    scope: String,
    model: String,
    reason: String,
}

/// Splits the root seed into an independent seed per cell.
fn cell_seed(root: u64, cell: &Cell) -> u64 {
    let mut z = root ^ cell.target.digest() ^ ((cell.scope as u64) << 8) ^ ((cell.model as u64) << 16);
    // splitmix64 finaliser
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn plan_for(cfg: &RunConfig, cell: &Cell) -> anyhow::Result<BacktestPlan> {
    let seed = cell_seed(cfg.seed, cell);
    let mut scope = TrainingScope::new(cell.scope, seed);
    if cell.scope == ScopeKind::AllData {
        scope = scope.with_fraction(cfg.all_data_fraction)?;
    }
    let mut plan = BacktestPlan::new(cell.target.clone(), cell.model, scope);
    plan.moa.neighbors = cfg.neighbors;
    plan.moa.earliest_year = cfg.moa_earliest_year;
    plan.moa.log_composition = cfg.log_composition && cell.scope == ScopeKind::AllData;
    plan.gbt = cfg.gbt;
    plan.gbt.seed = seed;
    Ok(plan)
}

/// Runs one cell and writes its files. A panic inside the backtest is
/// contained to the cell.
fn run_cell(corpus: &Corpus, cfg: &RunConfig, cell: &Cell) -> Result<ScoreRecord, (String, bool)> {
    let plan = plan_for(cfg, cell).map_err(|e| (e.to_string(), false))?;
    let out: BacktestOutput = match catch_unwind(AssertUnwindSafe(|| run_backtest(corpus, &plan))) {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => return Err((e.to_string(), false)),
        Err(_) => return Err(("backtest panicked".into(), true)),
    };
    let stem = cell.file_stem();
    let write = || -> anyhow::Result<()> {
        write_atomic(&cfg.output.join("forecasts").join(format!("{stem}.csv")), &csv_bytes(|w| write_forecasts(w, &out.records))?)?;
        write_atomic(&cfg.output.join("scores").join(format!("{stem}.csv")), &csv_bytes(|w| write_scores(w, std::slice::from_ref(&out.score)))?)?;
        if !out.composition.is_empty() {
            let path = cfg.output.join("composition").join(format!("{}.csv", cell.target.slug()));
            write_atomic(&path, &csv_bytes(|w| write_composition_log(w, &out.composition))?)?;
        }
        Ok(())
    };
    write().map_err(|e| (format!("writing outputs: {e:#}"), true))?;
    Ok(out.score)
}

fn cmd_backtest(cfg: &RunConfig) -> Outcome {
    let corpus = load_corpus(&cfg.corpus).map_err(input)?;
    let mut skipped = Vec::new();
    let targets: Vec<StreamKey> = match &cfg.targets {
        None => corpus.series().iter().map(|s| s.key.clone()).collect(),
        Some(patterns) => {
            let mut keys = std::collections::BTreeSet::new();
            for p in patterns {
                let matched = corpus.matching(p);
                if matched.is_empty() {
                    skipped.push(Skipped {
                        target: p.to_string(),
                        scope: "*".into(),
                        model: "*".into(),
                        reason: "no stream matches the target pattern".into(),
                    });
                }
                keys.extend(matched.into_iter().cloned());
            }
            keys.into_iter().collect()
        }
    };
    let mut cells = Vec::new();
    for t in &targets {
        for &model in &cfg.models {
            for &scope in &cfg.scopes {
                cells.push(Cell { target: t.clone(), scope, model });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(internal)?;
    let results: Vec<Result<ScoreRecord, (String, bool)>> =
        pool.install(|| cells.par_iter().map(|c| run_cell(&corpus, cfg, c)).collect());

    let mut scores = Vec::new();
    let mut crashed = 0;
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(s) => scores.push(s),
            Err((reason, fatal)) => {
                crashed += usize::from(fatal);
                skipped.push(Skipped {
                    target: cell.target.to_string(),
                    scope: cell.scope.to_string(),
                    model: cell.model.to_string(),
                    reason,
                });
            }
        }
    }
    attach_ratios(&mut scores);
    write_atomic(&cfg.output.join("scores.csv"), &csv_bytes(|w| write_scores(w, &scores)).map_err(internal)?).map_err(internal)?;
    let skipped_csv = csv_bytes(|w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["target", "scope", "model", "reason"])?;
        for s in &skipped {
            w.write_record([&s.target, &s.scope, &s.model, &s.reason])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok::<(), csv::Error>(())
    })
    .map_err(internal)?;
    write_atomic(&cfg.output.join("skipped.csv"), &skipped_csv).map_err(internal)?;
    println!("cells: {}, scored: {}, skipped: {}", cells.len(), scores.len(), skipped.len());
    for s in &skipped {
        println!("skipped {} {} {}: {}", s.target, s.scope, s.model, s.reason);
    }
    if crashed > 0 {
        return Err(internal(anyhow!("{crashed} cell(s) failed internally; see skipped.csv")));
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig, scores_path: Option<&Path>) -> Outcome {
    let path = scores_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.join("scores.csv"));
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display())).map_err(input)?;
    let scores = read_scores(file).map_err(input)?;
    let corpus = load_corpus(&cfg.corpus).map_err(input)?;
    let report = scope_comparison_report(&corpus, &scores, cfg.seed, cfg.all_data_fraction).map_err(|e| match e {
        eval::EvalError::IncompleteGrid(_) | eval::EvalError::ZeroBaseline | eval::EvalError::Corpus(_) => input(e),
        other => internal(other),
    })?;
    let dir = cfg.output.join("report");
    output::write_report(&dir, &report, &scores).map_err(internal)?;
    println!("report written to {}", dir.display());
    for f in &report.fractions {
        println!("{} {}: {:.3} of {} targets improved on single-stream", f.forecaster, f.scope, f.fraction_outperformed, f.n_targets);
    }
    Ok(())
}

fn cmd_analyze_neighborhoods(output_dir: &Path) -> Outcome {
    let dir = output_dir.join("composition");
    let mut logs: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e == "csv")).collect(),
        Err(_) => Vec::new(),
    };
    logs.sort();
    if logs.is_empty() {
        return Err(input(anyhow!(
            "no composition log in {} (run an analogue backtest with the all_data scope and composition logging)",
            dir.display()
        )));
    }
    let mut entries = Vec::new();
    for p in &logs {
        let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display())).map_err(input)?;
        entries.extend(read_composition_log(f).map_err(input)?);
    }
    let rows = composition_report(&entries).map_err(internal)?;
    let path = output_dir.join("composition_report.csv");
    write_atomic(&path, &csv_bytes(|w| write_composition_report(w, &rows)).map_err(internal)?).map_err(internal)?;
    for r in rows.iter().filter(|r| r.week.is_none()) {
        let target = r.target.as_ref().map(|t| t.to_string()).unwrap_or_else(|| "all".into());
        println!("{target} {}: neighbourhood {:.3}, library {:.3}, ratio {:.3}", r.disease, r.neighborhood_share, r.library_share, r.ratio);
    }
    Ok(())
}

fn cmd_gen_synthetic(name: &str, seed: u64, out: &Path) -> Outcome {
    let scenarios: Vec<Scenario> = if name == "all" {
        Scenario::ALL.to_vec()
    } else {
        vec![name.parse().map_err(|e: String| input(anyhow!(e)))?]
    };
    for sc in scenarios {
        let generated = sc.generate(seed).map_err(internal)?;
        let dir = out.join(sc.as_str());
        write_corpus(&generated.corpus, &dir).map_err(internal)?;
        write_atomic(&dir.join("target.txt"), format!("{}\n", generated.target).as_bytes()).map_err(internal)?;
        println!("{}: {} series, target {}", dir.display(), generated.corpus.len(), generated.target);
    }
    Ok(())
}
