//! `normality`: score, rank and evaluate outliers from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use normality::config::RunConfig;
use normality::data::{destandardize, format_real, load_csv, ObsId};
use normality::experts::{
    collect_labels, consistency, expert_summary, inject_duplicates, read_presented_items, spearman_matrix, vote_all,
    write_presented_items, ExpertError, ExpertLabelSheet, VoteScheme, Weighting,
};
use normality::perturbation::{
    diff_datasets, generate_specs, inject_synthetic, load_specs, GroundTruth, PerturbationError, PerturbationPlan,
};
use normality::pipeline::{
    cutoff_labels, evaluate_truth, load_standardized, run_pipeline, score_methods, Classify, ErrorClass, PipelineError,
};
use normality::ranking::{label_correlation_matrix, rank, Method};
use normality::report::{emit_report, to_canonical_json};

#[derive(Parser)]
#[command(name = "normality", version, about = "Outlier ranking with dimension-level feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ae,
    Lof,
    Iforest,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Unweighted,
    JobRelevance,
    InverseDifficulty,
    ReversedDifficulty,
}

impl From<WeightingArg> for VoteScheme {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Unweighted => VoteScheme::Unweighted,
            WeightingArg::JobRelevance => VoteScheme::Weighted(Weighting::JobRelevance),
            WeightingArg::InverseDifficulty => VoteScheme::Weighted(Weighting::InverseDifficulty),
            WeightingArg::ReversedDifficulty => VoteScheme::Weighted(Weighting::ReversedDifficulty),
        }
    }
}

/// Dataset and detector options shared by the scoring subcommands.
/// Flags override values from `--config`.
#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV; required unless given in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Comma-separated percentages, e.g. `5,10,15`.
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<f64>>,
    /// LOF neighborhood size.
    #[arg(long)]
    k: Option<usize>,
    /// Isolation forest size.
    #[arg(long)]
    trees: Option<usize>,
    /// Isolation forest subsample size.
    #[arg(long)]
    subsample: Option<usize>,
    /// Autoencoder training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let data = self.data.clone().context("--data or --config is required")?;
                RunConfig::for_data(data, 0)
            }
        };
        if let Some(d) = &self.data {
            cfg.data = d.clone();
        }
        if let Some(c) = &self.id_column {
            cfg.id_column = Some(c.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.method {
            cfg.methods = Some(match m {
                MethodArg::Ae => vec![Method::Ae],
                MethodArg::Lof => vec![Method::Lof],
                MethodArg::Iforest => vec![Method::Iforest],
                MethodArg::All => Method::ALL.to_vec(),
            });
        }
        if let Some(c) = &self.cutoffs {
            cfg.cutoffs = Some(c.clone());
        }
        if self.k.is_some() {
            cfg.lof.k = self.k;
        }
        if self.trees.is_some() {
            cfg.iforest.trees = self.trees;
        }
        if self.subsample.is_some() {
            cfg.iforest.subsample = self.subsample;
        }
        if self.epochs.is_some() {
            cfg.autoencoder.epochs = self.epochs;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Score and rank every observation; writes rankings, deviations and a report.
    Score {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank precomputed scores (CSV with `id,score`) and emit top-percent labels.
    Rank {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
        cutoffs: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append perturbed copies of non-outlying observations.
    Inject {
        #[command(flatten)]
        run: RunArgs,
        /// JSON list of `{source_id, deltas}`; generated from the default mix when absent.
        #[arg(long)]
        specs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection rates and granular accuracy against known ground truth.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Ground truth JSON as written by `inject`.
        #[arg(long, conflicts_with = "corrected")]
        truth: Option<PathBuf>,
        /// Corrected dataset; the ground truth is its difference to `--data`.
        #[arg(long)]
        corrected: Option<PathBuf>,
        #[arg(long, default_value_t = normality::perturbation::DIFF_TOLERANCE)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blind interactive labeling session on the terminal.
    CollectLabels {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id_column: Option<String>,
        /// Presented items (`item_id,observation_id,dup_group`); all observations when absent.
        #[arg(long)]
        items: Option<PathBuf>,
        /// Copies to inject when `--items` is absent.
        #[arg(long, default_value_t = 0)]
        duplicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        expert: String,
        /// Sheet to write; rows are appended to an existing sheet.
        #[arg(long)]
        out: PathBuf,
        /// Also write the presented items here.
        #[arg(long)]
        items_out: Option<PathBuf>,
    },
    /// Majority vote per observation.
    Vote {
        #[arg(long)]
        sheet: PathBuf,
        #[arg(long, value_enum, default_value = "unweighted")]
        weighting: WeightingArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-expert self-consistency on duplicated items.
    Consistency {
        #[arg(long)]
        sheet: PathBuf,
    },
    /// Spearman matrix between experts, or phi matrix between detector labelings.
    Correlate {
        #[arg(long, conflicts_with = "config", conflicts_with = "data")]
        sheet: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the full configured pipeline and write the report.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.exit_code();
        }
        if let Some(x) = cause.downcast_ref::<ExpertError>() {
            return x.class().exit_code();
        }
        if let Some(x) = cause.downcast_ref::<PerturbationError>() {
            return x.class().exit_code();
        }
        if let Some(x) = cause.downcast_ref::<normality::config::ConfigError>() {
            return x.class().exit_code();
        }
        if let Some(x) = cause.downcast_ref::<normality::data::DataError>() {
            return x.class().exit_code();
        }
        if let Some(x) = cause.downcast_ref::<normality::ranking::RankingError>() {
            return x.class().exit_code();
        }
    }
    ErrorClass::Data.exit_code()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Score { run, out } => {
            let mut cfg = run.config()?;
            cfg.synthetic = None;
            cfg.data_quality = None;
            cfg.experts = None;
            cfg.subset = None;
            let report = run_pipeline(&cfg)?;
            for p in emit_report(&report, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Report { run, out } => {
            let cfg = run.config()?;
            let out = out
                .or_else(|| cfg.out.clone())
                .context("--out or `out` in the config is required")?;
            let report = run_pipeline(&cfg)?;
            for p in emit_report(&report, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Rank {
            scores,
            method,
            cutoffs,
            out,
        } => rank_scores(&scores, method, &cutoffs, &out)?,
        Command::Inject { run, specs, out } => {
            let cfg = run.config()?;
            let (_, std, params) = load_standardized(&cfg)?;
            let resolved = cfg.resolve(std.n(), std.d()).map_err(|e| e.at("config"))?;
            let scored = score_methods(&std, &resolved)?;
            let specs = match specs {
                Some(p) => load_specs(p)?,
                None => generate_specs(&std, &scored.rankings, &PerturbationPlan::default(), resolved.seed)?,
            };
            let (augmented, truth) = inject_synthetic(&std, &specs, &scored.rankings)?;
            let raw = destandardize(&augmented, &params)?;
            std::fs::create_dir_all(&out)?;
            let id_column = cfg.id_column.as_deref().unwrap_or("id");
            raw.write_csv(create(&out.join("augmented.csv"))?, id_column)?;
            write_text(&out.join("ground_truth.json"), &to_canonical_json(&truth)?)?;
            write_text(&out.join("specs.json"), &to_canonical_json(&specs)?)?;
            println!("{} perturbed observations appended; {} rows", truth.len(), raw.n());
        }
        Command::Evaluate {
            run,
            truth,
            corrected,
            tolerance,
            out,
        } => {
            let cfg = run.config()?;
            let (raw, std, _) = load_standardized(&cfg)?;
            let resolved = cfg.resolve(std.n(), std.d()).map_err(|e| e.at("config"))?;
            let truth: GroundTruth = match (truth, corrected) {
                (Some(t), None) => {
                    let f = File::open(&t).with_context(|| format!("cannot read {}", t.display()))?;
                    GroundTruth::from_json(io::BufReader::new(f))?
                }
                (None, Some(c)) => {
                    let post = load_csv(&c, cfg.id_column.as_deref())?;
                    diff_datasets(&raw, &post, tolerance)?
                }
                _ => bail!("exactly one of --truth or --corrected is required"),
            };
            if truth.is_empty() {
                return Err(PerturbationError::EmptyTruth.into());
            }
            let scored = score_methods(&std, &resolved)?;
            let eval = evaluate_truth(&scored, truth, &resolved.cutoffs)?;
            write_text(&out, &to_canonical_json(&eval)?)?;
            for d in &eval.detection {
                for r in &d.rates {
                    println!(
                        "{}\t{}%\t{}/{}\t{}",
                        d.method,
                        r.cutoff,
                        r.detected,
                        r.total,
                        format_real(r.rate)
                    );
                }
            }
            if let (Some(rank), Some(dir)) = (&eval.dimension_rank, &eval.direction) {
                println!("dimension rank accuracy\t{}", format_real(rank.mean));
                println!("direction accuracy\t{}", format_real(dir.mean));
            }
        }
        Command::CollectLabels {
            data,
            id_column,
            items,
            duplicates,
            seed,
            expert,
            out,
            items_out,
        } => {
            let data = load_csv(&data, id_column.as_deref())?;
            let items = match items {
                Some(p) => {
                    read_presented_items(File::open(&p).with_context(|| format!("cannot read {}", p.display()))?)?
                }
                None => inject_duplicates(data.ids(), duplicates, seed)?,
            };
            if let Some(p) = items_out {
                write_presented_items(&items, create(&p)?)?;
            }
            let stdin = io::stdin();
            let rows = collect_labels(&expert, &items, &data, stdin.lock(), io::stdout())?;
            let mut all = if out.exists() {
                ExpertLabelSheet::load(&out)?.rows().to_vec()
            } else {
                Vec::new()
            };
            all.extend(rows);
            let sheet = ExpertLabelSheet::new(all)?;
            sheet.write_csv(create(&out)?)?;
            println!("wrote {}", out.display());
        }
        Command::Vote { sheet, weighting, out } => {
            let sheet = ExpertLabelSheet::load(&sheet)?;
            let votes = vote_all(&sheet, weighting.into())?;
            let mut w: Box<dyn Write> = match &out {
                Some(p) => Box::new(create(p)?),
                None => Box::new(io::stdout().lock()),
            };
            writeln!(w, "observation_id,label,normal,outlier,undecided,tie")?;
            for v in votes {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    v.observation_id,
                    v.label as u8,
                    format_real(v.tallies[0]),
                    format_real(v.tallies[1]),
                    format_real(v.tallies[2]),
                    u8::from(v.tie)
                )?;
            }
            w.flush()?;
        }
        Command::Consistency { sheet } => {
            let sheet = ExpertLabelSheet::load(&sheet)?;
            println!("expert,consistency,relevance,difficulty");
            for (e, p) in sheet.profiles() {
                let c = match consistency(&sheet, e) {
                    Ok(c) => format_real(c),
                    Err(ExpertError::NoDuplicateGroups(_)) => String::new(),
                    Err(other) => return Err(other.into()),
                };
                println!("{e},{c},{},{}", p.job_relevance, p.difficulty);
            }
            for row in expert_summary(&sheet).rows {
                eprintln!(
                    "{}: mean {} sd {} min {} max {}",
                    row.name,
                    format_real(row.mean),
                    row.stddev.map(format_real).unwrap_or_else(|| "-".into()),
                    format_real(row.min),
                    format_real(row.max)
                );
            }
        }
        Command::Correlate { sheet, run } => match sheet {
            Some(path) => {
                let sheet = ExpertLabelSheet::load(&path)?;
                let (names, m) = spearman_matrix(&sheet);
                print_matrix(&names, &m);
            }
            None => {
                let cfg = run.config()?;
                let (_, std, _) = load_standardized(&cfg)?;
                let resolved = cfg.resolve(std.n(), std.d()).map_err(|e| e.at("config"))?;
                let scored = score_methods(&std, &resolved)?;
                let labels = cutoff_labels(&scored.rankings, &resolved.cutoffs)?;
                let names: Vec<String> = labels.iter().map(|l| format!("{}@{}", l.method, l.cutoff)).collect();
                print_matrix(&names, &label_correlation_matrix(&labels));
            }
        },
    }
    Ok(())
}

fn print_matrix(names: &[String], m: &[Vec<Option<f64>>]) {
    println!(",{}", names.join(","));
    for (n, row) in names.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| v.map(format_real).unwrap_or_default()).collect();
        println!("{n},{}", cells.join(","));
    }
}

fn rank_scores(path: &Path, method: MethodArg, cutoffs: &[f64], out: &Path) -> Result<()> {
    let method = match method {
        MethodArg::Ae => Method::Ae,
        MethodArg::Lof => Method::Lof,
        MethodArg::Iforest => Method::Iforest,
        MethodArg::All => bail!("rank takes a single method"),
    };
    let table = load_csv(path, Some("id"))?;
    let col = table
        .column_index("score")
        .context("scores file needs an `id` and a `score` column")?;
    let scores: Vec<f64> = table.column(col).collect();
    let ids: Vec<ObsId> = table.ids().to_vec();
    let ranking = rank(&ids, &scores, method)?;
    let labels = cutoff_labels(std::slice::from_ref(&ranking), cutoffs)?;
    std::fs::create_dir_all(out)?;
    let mut w = create(&out.join(format!("ranking_{method}.csv")))?;
    writeln!(w, "id,score,rank,decile")?;
    for e in &ranking.entries {
        writeln!(w, "{},{},{},{}", e.id, format_real(e.score), e.rank, e.decile)?;
    }
    w.flush()?;
    let mut w = create(&out.join(format!("labels_{method}.csv")))?;
    let header: Vec<String> = labels.iter().map(|l| format!("{}_{}", l.method, l.cutoff)).collect();
    writeln!(w, "id,{}", header.join(","))?;
    for (i, id) in ids.iter().enumerate() {
        let cells: Vec<&str> = labels.iter().map(|l| if l.labels[i] { "1" } else { "0" }).collect();
        writeln!(w, "{id},{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}
