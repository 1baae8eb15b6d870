//! Ground truth for granular feedback: which observations were corrupted, in
//! which dimensions, and in which direction.
//!
//! Ground truth comes either from diffing a dataset against its corrected
//! version or from injecting synthetic perturbations of non-outlying
//! observations. The metrics compare it against detector rankings and
//! autoencoder deviations. Granular metrics cover every affected
//! observation, detected or not.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::autoencoder::ReconstructionReport;
use crate::data::{DataError, Dataset, ObsId};
use crate::ranking::{positive_count, Method, OutlierRanking, RankingError};

/// Default absolute tolerance when diffing two datasets.
pub const DIFF_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PerturbationError {
    #[error("datasets differ in layout: {0}")]
    SchemaMismatch(String),
    #[error("observation {0} not found")]
    UnknownObservation(ObsId),
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("source {id} ranks {rank} of {n} under {method}; sources must rank below the median")]
    OutlyingSource {
        id: ObsId,
        method: Method,
        rank: usize,
        n: usize,
    },
    #[error("invalid perturbation: {0}")]
    InvalidSpec(String),
    #[error("only {eligible} eligible sources for {wanted} perturbations")]
    TooFewSources { eligible: usize, wanted: usize },
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("no reconstruction report for affected observation {0}")]
    MissingReport(ObsId),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    /// `None` for zero and NaN.
    pub fn of(v: f64) -> Option<Sign> {
        if v > 0.0 {
            Some(Sign::Positive)
        } else if v < 0.0 {
            Some(Sign::Negative)
        } else {
            None
        }
    }
}

/// One corrupted observation. `dimensions` is sorted, non-empty and aligned
/// with `signs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectedObservation {
    pub id: ObsId,
    pub dimensions: Vec<usize>,
    pub signs: Vec<Sign>,
}

impl AffectedObservation {
    pub fn sign_of(&self, dimension: usize) -> Option<Sign> {
        self.dimensions
            .iter()
            .position(|d| *d == dimension)
            .map(|i| self.signs[i])
    }
}

/// Affected observations, sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub columns: Vec<String>,
    pub affected: Vec<AffectedObservation>,
}

impl GroundTruth {
    fn new(columns: Vec<String>, mut affected: Vec<AffectedObservation>) -> Self {
        affected.sort_by(|a, b| a.id.cmp(&b.id));
        Self { columns, affected }
    }

    pub fn len(&self) -> usize {
        self.affected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.affected.is_empty()
    }

    pub fn get(&self, id: &ObsId) -> Option<&AffectedObservation> {
        self.affected
            .binary_search_by(|a| a.id.cmp(id))
            .ok()
            .map(|i| &self.affected[i])
    }

    /// Affected observations per dimension. Rows touching several dimensions
    /// count once in each, so the total can exceed `len()`.
    pub fn dimension_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.columns.len()];
        for a in &self.affected {
            for &d in &a.dimensions {
                counts[d] += 1;
            }
        }
        counts
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<(), PerturbationError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Inverse of [`GroundTruth::to_json`]. Re-sorts by id and checks that
    /// every dimension index names a column.
    pub fn from_json<R: Read>(reader: R) -> Result<Self, PerturbationError> {
        let raw: GroundTruth = serde_json::from_reader(reader)?;
        let d = raw.columns.len();
        for a in &raw.affected {
            if a.dimensions.len() != a.signs.len() || a.dimensions.iter().any(|&j| j >= d) {
                return Err(PerturbationError::InvalidSpec(format!(
                    "ground truth entry for {} does not match the {d} columns",
                    a.id
                )));
            }
        }
        Ok(Self::new(raw.columns, raw.affected))
    }
}

/// Observations whose values differ by more than `tolerance` in any
/// dimension, matched by id. Signs follow `pre - post`, the direction in
/// which the uncorrected value deviates.
pub fn diff_datasets(pre: &Dataset, post: &Dataset, tolerance: f64) -> Result<GroundTruth, PerturbationError> {
    if pre.columns() != post.columns() {
        return Err(PerturbationError::SchemaMismatch("column names differ".into()));
    }
    if pre.n() != post.n() {
        return Err(PerturbationError::SchemaMismatch(format!(
            "{} rows before, {} after",
            pre.n(),
            post.n()
        )));
    }
    let mut affected = Vec::new();
    for (i, id) in pre.ids().iter().enumerate() {
        let j = post
            .row_index(id)
            .ok_or_else(|| PerturbationError::SchemaMismatch(format!("id {id} missing after correction")))?;
        let (mut dimensions, mut signs) = (Vec::new(), Vec::new());
        for (d, (a, b)) in pre.row(i).iter().zip(post.row(j)).enumerate() {
            let delta = a - b;
            if delta.abs() > tolerance {
                dimensions.push(d);
                signs.push(Sign::of(delta).expect("|delta| > tolerance >= 0"));
            }
        }
        if !dimensions.is_empty() {
            affected.push(AffectedObservation {
                id: id.clone(),
                dimensions,
                signs,
            });
        }
    }
    Ok(GroundTruth::new(pre.columns().to_vec(), affected))
}

fn id_from_string_or_integer<'de, D: Deserializer<'de>>(d: D) -> Result<ObsId, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Int(u64),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::Text(s) => ObsId(s),
        Raw::Int(i) => ObsId(i.to_string()),
    })
}

/// Copy of `source_id` shifted by `deltas` (standardized units per column name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(deserialize_with = "id_from_string_or_integer")]
    pub source_id: ObsId,
    pub deltas: BTreeMap<String, f64>,
}

impl PerturbationSpec {
    fn validate(&self, columns: &[String]) -> Result<Vec<(usize, f64)>, PerturbationError> {
        if !(1..=3).contains(&self.deltas.len()) {
            return Err(PerturbationError::InvalidSpec(format!(
                "{} dimensions for source {}; expected 1 to 3",
                self.deltas.len(),
                self.source_id
            )));
        }
        let mut out = Vec::with_capacity(self.deltas.len());
        for (name, &delta) in &self.deltas {
            let d = columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| PerturbationError::UnknownDimension(name.clone()))?;
            if !delta.is_finite() || delta == 0.0 {
                return Err(PerturbationError::InvalidSpec(format!(
                    "delta {delta} on {name} must be finite and non-zero"
                )));
            }
            out.push((d, delta));
        }
        out.sort_by_key(|(d, _)| *d);
        Ok(out)
    }
}

pub fn read_specs<R: Read>(reader: R) -> Result<Vec<PerturbationSpec>, PerturbationError> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_specs(path: impl AsRef<Path>) -> Result<Vec<PerturbationSpec>, PerturbationError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| PerturbationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_specs(std::io::BufReader::new(file))
}

/// A source is eligible when it ranks strictly below the median
/// (`2 rank > n`) in every ranking.
fn check_source(id: &ObsId, rankings: &[OutlierRanking]) -> Result<(), PerturbationError> {
    for r in rankings {
        let rank = r
            .rank_of(id)
            .ok_or_else(|| PerturbationError::UnknownObservation(id.clone()))?;
        if 2 * rank <= r.len() {
            return Err(PerturbationError::OutlyingSource {
                id: id.clone(),
                method: r.method,
                rank,
                n: r.len(),
            });
        }
    }
    Ok(())
}

fn fresh_ids(data: &Dataset, count: usize) -> Vec<ObsId> {
    let numeric: Option<Vec<u64>> = data.ids().iter().map(|id| id.as_str().parse::<u64>().ok()).collect();
    match numeric {
        Some(ids) => {
            let next = ids.iter().max().map_or(0, |m| m + 1);
            (0..count as u64).map(|i| ObsId((next + i).to_string())).collect()
        }
        None => (1..=count).map(|i| ObsId(format!("synthetic-{i}"))).collect(),
    }
}

/// Appends one perturbed copy per spec. New ids continue an all-integer id
/// sequence, otherwise they are `synthetic-<i>`. Models must be retrained on
/// the returned dataset.
pub fn inject_synthetic(
    data: &Dataset,
    specs: &[PerturbationSpec],
    rankings: &[OutlierRanking],
) -> Result<(Dataset, GroundTruth), PerturbationError> {
    let ids = fresh_ids(data, specs.len());
    let mut rows = Vec::with_capacity(specs.len());
    let mut affected = Vec::with_capacity(specs.len());
    for (spec, id) in specs.iter().zip(&ids) {
        let shifts = spec.validate(data.columns())?;
        let src = data
            .row_index(&spec.source_id)
            .ok_or_else(|| PerturbationError::UnknownObservation(spec.source_id.clone()))?;
        check_source(&spec.source_id, rankings)?;
        let mut row = data.row(src).to_vec();
        for &(d, delta) in &shifts {
            row[d] += delta;
        }
        rows.push(row);
        affected.push(AffectedObservation {
            id: id.clone(),
            dimensions: shifts.iter().map(|(d, _)| *d).collect(),
            signs: shifts
                .iter()
                .map(|(_, v)| Sign::of(*v).expect("validated non-zero"))
                .collect(),
        });
    }
    let augmented = data.append(ids, rows)?;
    Ok((augmented, GroundTruth::new(data.columns().to_vec(), affected)))
}

/// How many dimensions each perturbation touches and how large each shift is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationPlan {
    pub dimensions_per_spec: Vec<usize>,
    /// Absolute shifts to pick from; signs are random.
    pub magnitudes: Vec<f64>,
}

impl Default for PerturbationPlan {
    /// Five one-dimensional, three two-dimensional and two three-dimensional
    /// shifts of 3 or 5 standard deviations.
    fn default() -> Self {
        Self {
            dimensions_per_spec: vec![1, 1, 1, 1, 1, 2, 2, 2, 3, 3],
            magnitudes: vec![3.0, 5.0],
        }
    }
}

/// Seeded specs over distinct eligible sources.
pub fn generate_specs(
    data: &Dataset,
    rankings: &[OutlierRanking],
    plan: &PerturbationPlan,
    seed: u64,
) -> Result<Vec<PerturbationSpec>, PerturbationError> {
    if plan.magnitudes.is_empty() || plan.magnitudes.iter().any(|m| !m.is_finite() || *m <= 0.0) {
        return Err(PerturbationError::InvalidSpec(
            "magnitudes must be positive and finite".into(),
        ));
    }
    if let Some(k) = plan
        .dimensions_per_spec
        .iter()
        .find(|k| !(1..=3).contains(*k) || **k > data.d())
    {
        return Err(PerturbationError::InvalidSpec(format!(
            "{k} dimensions per perturbation"
        )));
    }
    let mut eligible: Vec<&ObsId> = data
        .ids()
        .iter()
        .filter(|id| check_source(id, rankings).is_ok())
        .collect();
    eligible.sort();
    let wanted = plan.dimensions_per_spec.len();
    if eligible.len() < wanted {
        return Err(PerturbationError::TooFewSources {
            eligible: eligible.len(),
            wanted,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    Ok(plan
        .dimensions_per_spec
        .iter()
        .zip(eligible)
        .map(|(&k, source)| {
            let mut dims = sample(&mut rng, data.d(), k).into_vec();
            dims.sort_unstable();
            let deltas = dims
                .into_iter()
                .map(|d| {
                    let m = plan.magnitudes[rng.random_range(0..plan.magnitudes.len())];
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (data.columns()[d].clone(), sign * m)
                })
                .collect();
            PerturbationSpec {
                source_id: source.clone(),
                deltas,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRate {
    pub cutoff: f64,
    pub detected: usize,
    pub total: usize,
    pub rate: f64,
}

/// Share of affected observations inside the top `cutoff`% of `ranking`.
pub fn detection_rate(
    ranking: &OutlierRanking,
    truth: &GroundTruth,
    cutoffs: &[f64],
) -> Result<Vec<DetectionRate>, PerturbationError> {
    if truth.is_empty() {
        return Err(PerturbationError::EmptyTruth);
    }
    let ranks = truth
        .affected
        .iter()
        .map(|a| {
            ranking
                .rank_of(&a.id)
                .ok_or_else(|| PerturbationError::UnknownObservation(a.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    cutoffs
        .iter()
        .map(|&cutoff| {
            let top = positive_count(ranking.len(), cutoff)?;
            let detected = ranks.iter().filter(|r| **r <= top).count();
            Ok(DetectionRate {
                cutoff,
                detected,
                total: ranks.len(),
                rate: detected as f64 / ranks.len() as f64,
            })
        })
        .collect()
}

/// Per-observation 0/1 outcomes and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularAccuracy {
    pub outcomes: Vec<(ObsId, bool)>,
    pub mean: f64,
    /// Observations with a zero deviation on an affected dimension.
    pub flagged: Vec<ObsId>,
}

impl GranularAccuracy {
    fn from_outcomes(outcomes: Vec<(ObsId, bool)>, flagged: Vec<ObsId>) -> Self {
        let mean = outcomes.iter().filter(|(_, ok)| *ok).count() as f64 / outcomes.len() as f64;
        Self {
            outcomes,
            mean,
            flagged,
        }
    }
}

fn reports_by_id(reports: &[ReconstructionReport]) -> HashMap<&ObsId, &ReconstructionReport> {
    reports.iter().map(|r| (&r.id, r)).collect()
}

fn matched<'a>(
    truth: &'a GroundTruth,
    reports: &'a [ReconstructionReport],
) -> Result<Vec<(&'a AffectedObservation, &'a ReconstructionReport)>, PerturbationError> {
    if truth.is_empty() {
        return Err(PerturbationError::EmptyTruth);
    }
    let by_id = reports_by_id(reports);
    truth
        .affected
        .iter()
        .map(|a| {
            by_id
                .get(&a.id)
                .map(|r| (a, *r))
                .ok_or_else(|| PerturbationError::MissingReport(a.id.clone()))
        })
        .collect()
}

/// Indices of the `k` largest `|deviation|`, ties to the lower index, sorted.
pub fn top_dimensions(deviations: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..deviations.len()).collect();
    order.sort_by(|&a, &b| deviations[b].abs().total_cmp(&deviations[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// 1 when the `|A|` largest absolute deviations sit exactly on the affected set `A`.
pub fn dimension_rank_accuracy(
    reports: &[ReconstructionReport],
    truth: &GroundTruth,
) -> Result<GranularAccuracy, PerturbationError> {
    let outcomes = matched(truth, reports)?
        .into_iter()
        .map(|(a, r)| {
            (
                a.id.clone(),
                top_dimensions(&r.deviations, a.dimensions.len()) == a.dimensions,
            )
        })
        .collect();
    Ok(GranularAccuracy::from_outcomes(outcomes, Vec::new()))
}

/// 1 when every affected dimension deviates in the ground-truth direction.
/// A zero deviation counts as wrong and flags the observation.
pub fn direction_accuracy(
    reports: &[ReconstructionReport],
    truth: &GroundTruth,
) -> Result<GranularAccuracy, PerturbationError> {
    let mut flagged = Vec::new();
    let outcomes = matched(truth, reports)?
        .into_iter()
        .map(|(a, r)| {
            let signs: Vec<Option<Sign>> = a.dimensions.iter().map(|&d| Sign::of(r.deviations[d])).collect();
            if signs.iter().any(Option::is_none) {
                flagged.push(a.id.clone());
            }
            let ok = signs.iter().zip(&a.signs).all(|(got, want)| *got == Some(*want));
            (a.id.clone(), ok)
        })
        .collect();
    Ok(GranularAccuracy::from_outcomes(outcomes, flagged))
}
