//! Report payload, canonical serialization and file emission.
//!
//! `report.json` holds the payload: everything computed, plus the seed and
//! the fully resolved configuration. Reals are written with 17 significant
//! digits, so a payload parses back to the same bits, and two runs with the
//! same configuration produce identical bytes. `metadata.json` holds what
//! legitimately varies between runs (timestamps) together with hashes of
//! the configuration and payload. Each tabular section is also written as
//! CSV, using the same number format.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Serialize, Serializer};
use serde_json::{Number, Value};
use sha2::{Digest, Sha256};

use crate::autoencoder::{ReconstructionReport, TrainedModel};
use crate::config::ResolvedConfig;
use crate::data::{format_real, Dataset, ObsId, StandardizationParams};
use crate::experts::{
    AccuracyComparison, AccuracySummary, DimensionUsage, ExpertSummary, IndividualAccuracy, PresentedItem, VoteResult,
};
use crate::lof::LofScores;
use crate::perturbation::{DetectionRate, GranularAccuracy, GroundTruth, PerturbationSpec, Sign};
use crate::ranking::{CutoffLabels, Method, OutlierRanking};

/// A payload section that either ran or was skipped for a stated reason.
#[derive(Debug, Clone, PartialEq)]
pub enum Section<T> {
    Ran(T),
    Skipped(String),
}

impl<T> Section<T> {
    pub fn skipped(reason: &str) -> Self {
        Section::Skipped(reason.to_owned())
    }

    pub fn ran(&self) -> Option<&T> {
        match self {
            Section::Ran(t) => Some(t),
            Section::Skipped(_) => None,
        }
    }
}

impl<T: Serialize> Serialize for Section<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Skipped<'a> {
            skipped: &'a str,
        }
        match self {
            Section::Ran(t) => t.serialize(s),
            Section::Skipped(reason) => Skipped { skipped: reason }.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub d: usize,
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    pub constant_columns: Vec<String>,
}

impl DatasetSummary {
    pub fn new(data: &Dataset, params: &StandardizationParams) -> Self {
        Self {
            n: data.n(),
            d: data.d(),
            columns: data.columns().to_vec(),
            means: params.means.clone(),
            stddevs: params.stddevs.clone(),
            constant_columns: params.constant_columns().map(|j| data.columns()[j].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub widths: Vec<usize>,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub stopped_early: bool,
    pub loss_curve: Vec<f64>,
}

impl TrainingSummary {
    pub fn new(model: &TrainedModel) -> Self {
        Self {
            widths: model.params.widths(),
            epochs_run: model.loss_curve.len(),
            final_loss: model.loss_curve.last().copied().unwrap_or(f64::NAN),
            stopped_early: model.stopped_early,
            loss_curve: model.loss_curve.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LofSummary {
    pub k: usize,
    /// Observations whose density hit the clamp.
    pub clamped: Vec<ObsId>,
}

impl LofSummary {
    pub fn new(scores: &LofScores, ids: &[ObsId]) -> Self {
        Self {
            k: scores.k,
            clamped: ids
                .iter()
                .zip(&scores.clamped)
                .filter(|(_, c)| **c)
                .map(|(id, _)| id.clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSummary {
    pub method: Method,
    pub cutoff: f64,
    pub positives: usize,
    pub positive_ids: Vec<ObsId>,
}

impl LabelSummary {
    pub fn new(labels: &CutoffLabels) -> Self {
        let positive_ids: Vec<ObsId> = labels
            .ids
            .iter()
            .zip(&labels.labels)
            .filter(|(_, l)| **l)
            .map(|(id, _)| id.clone())
            .collect();
        Self {
            method: labels.method,
            cutoff: labels.cutoff,
            positives: positive_ids.len(),
            positive_ids,
        }
    }
}

/// Phi coefficients between every pair of labelings, named `<method>@<cutoff>`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCorrelation {
    pub labelings: Vec<String>,
    pub phi: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodDetection {
    pub method: Method,
    pub rates: Vec<DetectionRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticReport {
    pub specs: Vec<PerturbationSpec>,
    pub truth: GroundTruth,
    pub detection: Vec<MethodDetection>,
    pub dimension_rank: Option<GranularAccuracy>,
    pub direction: Option<GranularAccuracy>,
    /// Autoencoder reports of the perturbed observations after retraining.
    pub reports: Vec<ReconstructionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataQualityReport {
    pub truth: GroundTruth,
    /// Affected observations per dimension; rows may count in several.
    pub dimension_counts: Vec<(String, usize)>,
    pub detection: Vec<MethodDetection>,
    pub dimension_rank: Option<GranularAccuracy>,
    pub direction: Option<GranularAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionAverage {
    pub method: Method,
    pub cutoff: f64,
    pub data_quality: f64,
    pub synthetic: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanMatrix {
    pub experts: Vec<String>,
    pub rho: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeVotes {
    pub scheme: String,
    pub votes: Vec<VoteResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub method: Method,
    pub cutoff: f64,
    pub scheme: String,
    /// `None` when the ensemble decided no observation.
    pub summary: Option<AccuracySummary>,
    pub versus_unweighted: Option<AccuracyComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertReport {
    pub summary: ExpertSummary,
    pub spearman: SpearmanMatrix,
    pub usage: DimensionUsage,
    pub votes: Vec<SchemeVotes>,
    pub ensemble: Vec<EnsembleRow>,
    pub individual: IndividualAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetReport {
    pub selected: Vec<ObsId>,
    pub presented: Vec<PresentedItem>,
}

/// Deterministic part of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Payload {
    pub tool_version: String,
    pub seed: u64,
    pub config: ResolvedConfig,
    pub dataset: DatasetSummary,
    pub training: Section<TrainingSummary>,
    pub lof: Section<LofSummary>,
    pub rankings: Vec<OutlierRanking>,
    pub reconstruction: Section<Vec<ReconstructionReport>>,
    pub labels: Vec<LabelSummary>,
    pub label_correlation: LabelCorrelation,
    pub synthetic: Section<SyntheticReport>,
    pub data_quality: Section<DataQualityReport>,
    pub detection_average: Section<Vec<DetectionAverage>>,
    pub experts: Section<ExpertReport>,
    pub subset: Section<SubsetReport>,
    /// Written to `labels.csv` only.
    #[serde(skip)]
    pub full_labels: Vec<CutoffLabels>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool_version: String,
    pub seed: u64,
    /// SHA-256 of the canonical resolved configuration.
    pub config_sha256: String,
    /// SHA-256 of `report.json`.
    pub payload_sha256: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub metadata: Metadata,
    pub payload: Payload,
    payload_json: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Report {
    pub fn new(payload: Payload, started: DateTime<Utc>) -> Result<Self, serde_json::Error> {
        let payload_json = to_canonical_json(&payload)?;
        let config_json = to_canonical_json(&payload.config)?;
        let metadata = Metadata {
            tool_version: payload.tool_version.clone(),
            seed: payload.seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            payload_sha256: sha256_hex(payload_json.as_bytes()),
            started_at: timestamp(started),
            finished_at: timestamp(Utc::now()),
        };
        Ok(Self {
            metadata,
            payload,
            payload_json,
        })
    }

    /// Canonical payload bytes, as written to `report.json`.
    pub fn payload_json(&self) -> &str {
        &self.payload_json
    }
}

/// Rewrites every non-integer number with 17 significant digits.
fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let f = n.as_f64().expect("JSON numbers are finite");
            Value::Number(format_real(f).parse::<Number>().expect("formatted real is valid JSON"))
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and 17-significant-digit reals.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(&canonicalize(serde_json::to_value(value)?))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct EmitError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

struct Emitter<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

fn sign_str(s: Sign) -> &'static str {
    match s {
        Sign::Positive => "+",
        Sign::Negative => "-",
    }
}

fn labeling_name(method: Method, cutoff: f64) -> String {
    format!("{method}_{cutoff}")
}

impl Emitter<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), EmitError> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|source| EmitError {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), EmitError> {
        let path = self.path(name);
        let err = |e: csv::Error| EmitError {
            path: path.clone(),
            source: io::Error::other(e),
        };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(&r).map_err(err)?;
        }
        w.flush().map_err(|source| EmitError {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn matrix(&mut self, name: &str, names: &[String], m: &[Vec<Option<f64>>]) -> Result<(), EmitError> {
        let mut header = vec![String::new()];
        header.extend(names.iter().cloned());
        let rows = names.iter().zip(m).map(|(n, row)| {
            let mut r = vec![n.clone()];
            r.extend(row.iter().map(|v| opt_real(*v)));
            r
        });
        self.csv(name, &header, rows)
    }

    fn detection(&mut self, name: &str, detection: &[MethodDetection]) -> Result<(), EmitError> {
        let header = ["method", "cutoff", "detected", "total", "rate"].map(String::from);
        let rows = detection.iter().flat_map(|d| {
            d.rates.iter().map(move |r| {
                vec![
                    d.method.to_string(),
                    format_real(r.cutoff),
                    r.detected.to_string(),
                    r.total.to_string(),
                    format_real(r.rate),
                ]
            })
        });
        self.csv(name, &header, rows)
    }

    fn granular(
        &mut self,
        name: &str,
        truth: &GroundTruth,
        rank: Option<&GranularAccuracy>,
        direction: Option<&GranularAccuracy>,
    ) -> Result<(), EmitError> {
        let header = [
            "id",
            "dimensions",
            "signs",
            "dimension_rank",
            "direction",
            "zero_deviation",
        ]
        .map(String::from);
        let outcome = |g: Option<&GranularAccuracy>, id: &ObsId| {
            g.and_then(|g| g.outcomes.iter().find(|(i, _)| i == id))
                .map(|(_, ok)| u8::from(*ok).to_string())
                .unwrap_or_default()
        };
        let rows = truth.affected.iter().map(|a| {
            vec![
                a.id.to_string(),
                a.dimensions
                    .iter()
                    .map(|&d| truth.columns[d].as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
                a.signs.iter().map(|s| sign_str(*s)).collect::<Vec<_>>().join(";"),
                outcome(rank, &a.id),
                outcome(direction, &a.id),
                direction
                    .map(|g| u8::from(g.flagged.contains(&a.id)).to_string())
                    .unwrap_or_default(),
            ]
        });
        self.csv(name, &header, rows)
    }
}

/// Writes `report.json`, `metadata.json` and one CSV per tabular section
/// into `dir` (created if missing). Returns the written paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    fs::create_dir_all(dir).map_err(|source| EmitError {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut e = Emitter {
        dir,
        written: Vec::new(),
    };
    let p = &report.payload;
    e.text("report.json", report.payload_json())?;
    let metadata = serde_json::to_string_pretty(&report.metadata).expect("metadata serializes") + "\n";
    e.text("metadata.json", &metadata)?;

    for r in &p.rankings {
        let header = ["id", "score", "rank", "decile"].map(String::from);
        let rows = r.entries.iter().map(|x| {
            vec![
                x.id.to_string(),
                format_real(x.score),
                x.rank.to_string(),
                x.decile.to_string(),
            ]
        });
        e.csv(&format!("ranking_{}.csv", r.method), &header, rows)?;
    }
    if let Section::Ran(reports) = &p.reconstruction {
        let mut header = vec!["id".to_owned(), "score".to_owned()];
        header.extend(p.dataset.columns.iter().cloned());
        let rows = reports.iter().map(|r| {
            let mut row = vec![r.id.to_string(), format_real(r.score)];
            row.extend(r.deviations.iter().map(|v| format_real(*v)));
            row
        });
        e.csv("deviations.csv", &header, rows)?;
    }
    if let Some(first) = p.full_labels.first() {
        let mut header = vec!["id".to_owned()];
        header.extend(p.full_labels.iter().map(|l| labeling_name(l.method, l.cutoff)));
        let rows = first.ids.iter().enumerate().map(|(i, id)| {
            let mut row = vec![id.to_string()];
            row.extend(p.full_labels.iter().map(|l| u8::from(l.labels[i]).to_string()));
            row
        });
        e.csv("labels.csv", &header, rows)?;
    }
    e.matrix(
        "label_correlation.csv",
        &p.label_correlation.labelings,
        &p.label_correlation.phi,
    )?;

    if let Section::Ran(s) = &p.synthetic {
        e.detection("synthetic_detection.csv", &s.detection)?;
        e.granular(
            "synthetic_granular.csv",
            &s.truth,
            s.dimension_rank.as_ref(),
            s.direction.as_ref(),
        )?;
        e.text(
            "synthetic_truth.json",
            &to_canonical_json(&s.truth).expect("truth serializes"),
        )?;
    }
    if let Section::Ran(q) = &p.data_quality {
        e.detection("data_quality_detection.csv", &q.detection)?;
        e.granular(
            "data_quality_granular.csv",
            &q.truth,
            q.dimension_rank.as_ref(),
            q.direction.as_ref(),
        )?;
        let header = ["dimension", "affected"].map(String::from);
        let rows = q.dimension_counts.iter().map(|(d, c)| vec![d.clone(), c.to_string()]);
        e.csv("data_quality_dimensions.csv", &header, rows)?;
        e.text(
            "data_quality_truth.json",
            &to_canonical_json(&q.truth).expect("truth serializes"),
        )?;
    }
    if let Section::Ran(rows) = &p.detection_average {
        let header = ["method", "cutoff", "data_quality", "synthetic", "average"].map(String::from);
        let rows = rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                format_real(r.cutoff),
                format_real(r.data_quality),
                format_real(r.synthetic),
                format_real(r.average),
            ]
        });
        e.csv("detection_average.csv", &header, rows)?;
    }
    if let Section::Ran(x) = &p.experts {
        emit_experts(&mut e, x)?;
    }
    if let Section::Ran(s) = &p.subset {
        let header = ["item_id", "observation_id", "dup_group"].map(String::from);
        let rows = s.presented.iter().map(|it| {
            vec![
                it.item_id.clone(),
                it.observation_id.to_string(),
                it.dup_group.clone().unwrap_or_default(),
            ]
        });
        e.csv("presented_items.csv", &header, rows)?;
    }
    Ok(e.written)
}

fn emit_experts(e: &mut Emitter<'_>, x: &ExpertReport) -> Result<(), EmitError> {
    let s = &x.summary;
    let header = ["expert", "consistency", "difficulty", "relevance"].map(String::from);
    let rows = (0..s.experts.len()).map(|i| {
        vec![
            s.experts[i].clone(),
            opt_real(s.consistency[i]),
            s.difficulty[i].to_string(),
            s.relevance[i].to_string(),
        ]
    });
    e.csv("expert_summary.csv", &header, rows)?;
    e.matrix("expert_spearman.csv", &x.spearman.experts, &x.spearman.rho)?;

    let mut header = vec!["expert".to_owned()];
    header.extend(x.usage.dimensions.iter().cloned());
    let mut rows: Vec<Vec<String>> = x
        .usage
        .experts
        .iter()
        .zip(&x.usage.counts)
        .map(|(ex, counts)| {
            let mut r = vec![ex.clone()];
            r.extend(counts.iter().map(usize::to_string));
            r
        })
        .collect();
    let mut total = vec!["total".to_owned()];
    total.extend(x.usage.per_dimension.iter().map(usize::to_string));
    rows.push(total);
    e.csv("dimension_usage.csv", &header, rows)?;

    for v in &x.votes {
        let header = ["observation_id", "label", "normal", "outlier", "undecided", "tie"].map(String::from);
        let rows = v.votes.iter().map(|r| {
            vec![
                r.observation_id.to_string(),
                (r.label as u8).to_string(),
                format_real(r.tallies[0]),
                format_real(r.tallies[1]),
                format_real(r.tallies[2]),
                u8::from(r.tie).to_string(),
            ]
        });
        e.csv(&format!("votes_{}.csv", v.scheme), &header, rows)?;
    }

    let header = [
        "method",
        "cutoff",
        "scheme",
        "accuracy",
        "coverage",
        "correct",
        "decided",
        "total",
        "difference",
        "percent_increase",
    ]
    .map(String::from);
    let rows = x.ensemble.iter().map(|r| {
        let s = r.summary.as_ref();
        vec![
            r.method.to_string(),
            format_real(r.cutoff),
            r.scheme.clone(),
            opt_real(s.map(|s| s.accuracy)),
            opt_real(s.map(|s| s.coverage)),
            s.map(|s| s.correct.to_string()).unwrap_or_default(),
            s.map(|s| s.decided.to_string()).unwrap_or_default(),
            s.map(|s| s.total.to_string()).unwrap_or_default(),
            opt_real(r.versus_unweighted.map(|c| c.difference)),
            opt_real(r.versus_unweighted.and_then(|c| c.percent_increase)),
        ]
    });
    e.csv("ensemble_accuracy.csv", &header, rows)?;

    let header = [
        "expert", "method", "cutoff", "accuracy", "coverage", "correct", "decided", "total",
    ]
    .map(String::from);
    let rows = x.individual.cells.iter().map(|c| {
        vec![
            c.expert.clone(),
            c.method.to_string(),
            format_real(c.cutoff),
            format_real(c.summary.accuracy),
            format_real(c.summary.coverage),
            c.summary.correct.to_string(),
            c.summary.decided.to_string(),
            c.summary.total.to_string(),
        ]
    });
    e.csv("individual_accuracy.csv", &header, rows)
}
