//! Orchestration: load → standardize → score → rank → evaluate → vote.
//!
//! Stages run sequentially; each one is skipped unless its configuration
//! section is present. Every failure carries the stage name and maps to a
//! process exit code.

use std::error::Error as StdError;
use std::fmt;

use crate::autoencoder::{reconstruct_all, train, AeError, ReconstructionReport, TrainedModel};
use crate::config::{ConfigError, ResolvedConfig, RunConfig};
use crate::data::{fit_standardizer, load_csv, standardize, DataError, Dataset, StandardizationParams};
use crate::experts::{
    dimension_usage, ensemble_accuracy, expert_summary, individual_accuracy, inject_duplicates, spearman_matrix,
    vote_all, AccuracyComparison, ExpertError, ExpertLabelSheet, VoteScheme, Weighting,
};
use crate::iforest::{build_forest, iforest_scores, ForestError};
use crate::lof::{lof_scores, LofError, LofScores};
use crate::perturbation::{
    detection_rate, diff_datasets, dimension_rank_accuracy, direction_accuracy, generate_specs, inject_synthetic,
    load_specs, GroundTruth, PerturbationError,
};
use crate::ranking::{
    label_correlation_matrix, rank, select_validation_subset, top_percent_labels, CutoffLabels, Method, OutlierRanking,
    RankingError,
};
use crate::report::{
    DataQualityReport, DatasetSummary, DetectionAverage, EnsembleRow, ExpertReport, LabelCorrelation, LabelSummary,
    LofSummary, MethodDetection, Payload, Report, SchemeVotes, Section, SpearmanMatrix, SubsetReport, SyntheticReport,
    TrainingSummary,
};

/// Broad failure category; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub class: ErrorClass,
    pub source: Box<dyn StdError + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: &'static str, class: ErrorClass, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        Self {
            stage,
            class,
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl StdError for PipelineError {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        Some(&*self.source)
    }
}

/// Errors that know their [`ErrorClass`].
pub trait Classify: StdError + Send + Sync + Sized + 'static {
    fn class(&self) -> ErrorClass;

    fn at(self, stage: &'static str) -> PipelineError {
        PipelineError::new(stage, self.class(), self)
    }
}

impl Classify for DataError {
    fn class(&self) -> ErrorClass {
        match self {
            DataError::UnknownIdColumn(_) | DataError::UnknownColumn(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for AeError {
    fn class(&self) -> ErrorClass {
        match self {
            AeError::NotUndercomplete { .. } | AeError::ZeroWidth | AeError::InvalidConfig(_) => ErrorClass::Config,
            AeError::DimensionMismatch { .. } => ErrorClass::Data,
            _ => ErrorClass::Numeric,
        }
    }
}

impl Classify for LofError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Config
    }
}

impl Classify for ForestError {
    fn class(&self) -> ErrorClass {
        match self {
            ForestError::InvalidConfig(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for RankingError {
    fn class(&self) -> ErrorClass {
        match self {
            RankingError::NonFiniteScore(_) => ErrorClass::Numeric,
            RankingError::CutoffOutOfRange(_)
            | RankingError::UnknownMethod(_)
            | RankingError::SubsetTooLarge { .. } => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for ExpertError {
    fn class(&self) -> ErrorClass {
        match self {
            ExpertError::TooManyDuplicates { .. } => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for PerturbationError {
    fn class(&self) -> ErrorClass {
        match self {
            PerturbationError::InvalidSpec(_) | PerturbationError::UnknownDimension(_) => ErrorClass::Config,
            PerturbationError::Data(e) => e.class(),
            PerturbationError::Ranking(e) => e.class(),
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for ConfigError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Config
    }
}

/// Detector outputs on one dataset.
#[derive(Debug, Clone)]
pub struct Scored {
    /// One ranking per method, in method order.
    pub rankings: Vec<OutlierRanking>,
    pub autoencoder: Option<(TrainedModel, Vec<ReconstructionReport>)>,
    pub lof: Option<LofScores>,
}

impl Scored {
    pub fn ranking(&self, method: Method) -> Option<&OutlierRanking> {
        self.rankings.iter().find(|r| r.method == method)
    }

    pub fn reports(&self) -> Option<&[ReconstructionReport]> {
        self.autoencoder.as_ref().map(|(_, r)| r.as_slice())
    }
}

/// Trains and scores every configured method on `data` (standardized).
pub fn score_methods(data: &Dataset, cfg: &ResolvedConfig) -> Result<Scored, PipelineError> {
    let mut out = Scored {
        rankings: Vec::new(),
        autoencoder: None,
        lof: None,
    };
    for &method in &cfg.methods {
        let scores: Vec<f64> = match method {
            Method::Ae => {
                let net = cfg.autoencoder.as_ref().expect("resolved with ae");
                let model = train(data, net).map_err(|e| e.at("score:ae"))?;
                let reports = reconstruct_all(&model.params, data).map_err(|e| e.at("score:ae"))?;
                let scores = reports.iter().map(|r| r.score).collect();
                out.autoencoder = Some((model, reports));
                scores
            }
            Method::Lof => {
                let lof = lof_scores(data, cfg.lof.expect("resolved with lof")).map_err(|e| e.at("score:lof"))?;
                let scores = lof.scores.clone();
                out.lof = Some(lof);
                scores
            }
            Method::Iforest => {
                let fcfg = cfg.iforest.as_ref().expect("resolved with iforest");
                let forest = build_forest(data, fcfg).map_err(|e| e.at("score:iforest"))?;
                iforest_scores(data, &forest).map_err(|e| e.at("score:iforest"))?
            }
        };
        out.rankings
            .push(rank(data.ids(), &scores, method).map_err(|e| e.at("rank"))?);
    }
    Ok(out)
}

/// Loads and standardizes the configured dataset.
pub fn load_standardized(cfg: &RunConfig) -> Result<(Dataset, Dataset, StandardizationParams), PipelineError> {
    let raw = load_csv(&cfg.data, cfg.id_column.as_deref()).map_err(|e| e.at("load"))?;
    let params = fit_standardizer(&raw).map_err(|e| e.at("standardize"))?;
    let std = standardize(&raw, &params).map_err(|e| e.at("standardize"))?;
    Ok((raw, std, params))
}

pub fn cutoff_labels(rankings: &[OutlierRanking], cutoffs: &[f64]) -> Result<Vec<CutoffLabels>, PipelineError> {
    let mut out = Vec::with_capacity(rankings.len() * cutoffs.len());
    for r in rankings {
        for &c in cutoffs {
            out.push(top_percent_labels(r, c).map_err(|e| e.at("labels"))?);
        }
    }
    Ok(out)
}

fn detection_by_method(
    rankings: &[OutlierRanking],
    truth: &GroundTruth,
    cutoffs: &[f64],
    stage: &'static str,
) -> Result<Vec<MethodDetection>, PipelineError> {
    rankings
        .iter()
        .map(|r| {
            Ok(MethodDetection {
                method: r.method,
                rates: detection_rate(r, truth, cutoffs).map_err(|e| e.at(stage))?,
            })
        })
        .collect()
}

fn synthetic_stage(
    std: &Dataset,
    scored: &Scored,
    cfg: &ResolvedConfig,
) -> Result<Section<SyntheticReport>, PipelineError> {
    const STAGE: &str = "synthetic";
    let Some(syn) = &cfg.synthetic else {
        return Ok(Section::skipped("no [synthetic] section"));
    };
    let specs = match &syn.specs {
        Some(path) => load_specs(path).map_err(|e| e.at(STAGE))?,
        None => generate_specs(std, &scored.rankings, &syn.plan, syn.seed).map_err(|e| e.at(STAGE))?,
    };
    let (augmented, truth) = inject_synthetic(std, &specs, &scored.rankings).map_err(|e| e.at(STAGE))?;
    if truth.is_empty() {
        return Ok(Section::skipped("no perturbations specified"));
    }
    let rescored = score_methods(&augmented, cfg)?;
    let detection = detection_by_method(&rescored.rankings, &truth, &cfg.cutoffs, STAGE)?;
    let (dimension_rank, direction, reports) = match rescored.reports() {
        Some(reports) => {
            let affected: Vec<ReconstructionReport> =
                reports.iter().filter(|r| truth.get(&r.id).is_some()).cloned().collect();
            (
                Some(dimension_rank_accuracy(reports, &truth).map_err(|e| e.at(STAGE))?),
                Some(direction_accuracy(reports, &truth).map_err(|e| e.at(STAGE))?),
                affected,
            )
        }
        None => (None, None, Vec::new()),
    };
    Ok(Section::Ran(SyntheticReport {
        specs,
        truth,
        detection,
        dimension_rank,
        direction,
        reports,
    }))
}

fn data_quality_stage(
    raw: &Dataset,
    scored: &Scored,
    cfg: &ResolvedConfig,
) -> Result<Section<DataQualityReport>, PipelineError> {
    const STAGE: &str = "data_quality";
    let Some(dq) = &cfg.data_quality else {
        return Ok(Section::skipped("no [data_quality] section"));
    };
    let corrected = load_csv(&dq.corrected, cfg.id_column.as_deref()).map_err(|e| e.at(STAGE))?;
    let truth = diff_datasets(raw, &corrected, dq.tolerance).map_err(|e| e.at(STAGE))?;
    if truth.is_empty() {
        return Ok(Section::skipped("corrected data matches the input; nothing affected"));
    }
    evaluate_truth(scored, truth, &cfg.cutoffs).map(Section::Ran)
}

/// Detection rates of every ranking and, when the autoencoder ran, the
/// granular accuracies over all affected observations.
pub fn evaluate_truth(
    scored: &Scored,
    truth: GroundTruth,
    cutoffs: &[f64],
) -> Result<DataQualityReport, PipelineError> {
    const STAGE: &str = "evaluate";
    let detection = detection_by_method(&scored.rankings, &truth, cutoffs, STAGE)?;
    let (dimension_rank, direction) = match scored.reports() {
        Some(reports) => (
            Some(dimension_rank_accuracy(reports, &truth).map_err(|e| e.at(STAGE))?),
            Some(direction_accuracy(reports, &truth).map_err(|e| e.at(STAGE))?),
        ),
        None => (None, None),
    };
    let dimension_counts = truth.columns.iter().cloned().zip(truth.dimension_counts()).collect();
    Ok(DataQualityReport {
        truth,
        dimension_counts,
        detection,
        dimension_rank,
        direction,
    })
}

fn detection_average(
    dq: &Section<DataQualityReport>,
    syn: &Section<SyntheticReport>,
) -> Section<Vec<DetectionAverage>> {
    let (Section::Ran(dq), Section::Ran(syn)) = (dq, syn) else {
        return Section::skipped("needs both data_quality and synthetic results");
    };
    let mut rows = Vec::new();
    for a in &dq.detection {
        let Some(b) = syn.detection.iter().find(|b| b.method == a.method) else {
            continue;
        };
        for (ra, rb) in a.rates.iter().zip(&b.rates) {
            rows.push(DetectionAverage {
                method: a.method,
                cutoff: ra.cutoff,
                data_quality: ra.rate,
                synthetic: rb.rate,
                average: (ra.rate + rb.rate) / 2.0,
            });
        }
    }
    Section::Ran(rows)
}

fn experts_stage(
    std: &Dataset,
    labels: &[CutoffLabels],
    cfg: &ResolvedConfig,
) -> Result<Section<ExpertReport>, PipelineError> {
    const STAGE: &str = "experts";
    let Some(ex) = &cfg.experts else {
        return Ok(Section::skipped("no [experts] section"));
    };
    let sheet = ExpertLabelSheet::load(&ex.sheet).map_err(|e| e.at(STAGE))?;
    let summary = expert_summary(&sheet);
    let (experts, rho) = spearman_matrix(&sheet);
    let usage = dimension_usage(&sheet, std.columns()).map_err(|e| e.at(STAGE))?;
    let schemes = [
        VoteScheme::Unweighted,
        VoteScheme::Weighted(Weighting::JobRelevance),
        VoteScheme::Weighted(ex.difficulty_weighting),
    ];
    let mut votes = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        votes.push(SchemeVotes {
            scheme: scheme.name().to_owned(),
            votes: vote_all(&sheet, scheme).map_err(|e| e.at(STAGE))?,
        });
    }
    let mut ensemble = Vec::new();
    for l in labels {
        let restricted = restrict(l, &sheet);
        let base = ensemble_accuracy(&votes[0].votes, &restricted).ok();
        for v in &votes {
            let summary = match ensemble_accuracy(&v.votes, &restricted) {
                Ok(s) => Some(s),
                Err(ExpertError::ZeroCoverage) => None,
                Err(e) => return Err(e.at(STAGE)),
            };
            let versus_unweighted = match (&base, &summary) {
                (Some(b), Some(s)) => Some(AccuracyComparison::new(b, s)),
                _ => None,
            };
            ensemble.push(EnsembleRow {
                method: l.method,
                cutoff: l.cutoff,
                scheme: v.scheme.clone(),
                summary,
                versus_unweighted,
            });
        }
    }
    let restricted: Vec<CutoffLabels> = labels.iter().map(|l| restrict(l, &sheet)).collect();
    let individual = individual_accuracy(&sheet, &restricted).map_err(|e| e.at(STAGE))?;
    Ok(Section::Ran(ExpertReport {
        summary,
        spearman: SpearmanMatrix { experts, rho },
        usage,
        votes,
        ensemble,
        individual,
    }))
}

/// Keeps the labels of observations the experts saw; unseen sheet ids stay
/// absent so scoring reports them.
fn restrict(labels: &CutoffLabels, sheet: &ExpertLabelSheet) -> CutoffLabels {
    let seen = sheet.observations();
    let keep: Vec<usize> = (0..labels.ids.len())
        .filter(|&i| seen.binary_search(&labels.ids[i]).is_ok())
        .collect();
    CutoffLabels {
        method: labels.method,
        cutoff: labels.cutoff,
        ids: keep.iter().map(|&i| labels.ids[i].clone()).collect(),
        labels: keep.iter().map(|&i| labels.labels[i]).collect(),
    }
}

fn subset_stage(scored: &Scored, cfg: &ResolvedConfig) -> Result<Section<SubsetReport>, PipelineError> {
    const STAGE: &str = "subset";
    let Some(s) = &cfg.subset else {
        return Ok(Section::skipped("no [subset] section"));
    };
    let selected = select_validation_subset(&scored.rankings, s.size, s.seed).map_err(|e| e.at(STAGE))?;
    let presented = inject_duplicates(&selected, s.duplicates, s.seed).map_err(|e| e.at(STAGE))?;
    Ok(Section::Ran(SubsetReport { selected, presented }))
}

/// Runs every configured stage and assembles the report. Nothing is written.
pub fn run_pipeline(config: &RunConfig) -> Result<Report, PipelineError> {
    let started = chrono::Utc::now();
    let (raw, std, params) = load_standardized(config)?;
    let cfg = config.resolve(std.n(), std.d()).map_err(|e| e.at("config"))?;
    let scored = score_methods(&std, &cfg)?;

    let labels = cutoff_labels(&scored.rankings, &cfg.cutoffs)?;
    let label_correlation = LabelCorrelation {
        labelings: labels.iter().map(|l| format!("{}@{}", l.method, l.cutoff)).collect(),
        phi: label_correlation_matrix(&labels),
    };
    let synthetic = synthetic_stage(&std, &scored, &cfg)?;
    let data_quality = data_quality_stage(&raw, &scored, &cfg)?;
    let detection_average = detection_average(&data_quality, &synthetic);
    let experts = experts_stage(&std, &labels, &cfg)?;
    let subset = subset_stage(&scored, &cfg)?;

    let training = match &scored.autoencoder {
        Some((model, _)) => Section::Ran(TrainingSummary::new(model)),
        None => Section::skipped("autoencoder not selected"),
    };
    let reconstruction = match scored.reports() {
        Some(r) => Section::Ran(r.to_vec()),
        None => Section::skipped("autoencoder not selected"),
    };
    let lof = match &scored.lof {
        Some(l) => Section::Ran(LofSummary::new(l, std.ids())),
        None => Section::skipped("lof not selected"),
    };
    let payload = Payload {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        config: cfg,
        dataset: DatasetSummary::new(&std, &params),
        training,
        lof,
        rankings: scored.rankings,
        reconstruction,
        labels: labels.iter().map(LabelSummary::new).collect(),
        label_correlation,
        synthetic,
        data_quality,
        detection_average,
        experts,
        subset,
        full_labels: labels,
    };
    Report::new(payload, started).map_err(|e| PipelineError::new("report", ErrorClass::Data, e))
}
