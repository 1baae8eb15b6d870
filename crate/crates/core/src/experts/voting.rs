//! Unweighted and weighted majority votes over expert labels, and their
//! accuracy against detector labelings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExpertError, ExpertLabelSheet, ExpertProfile, Label};
use crate::data::ObsId;
use crate::ranking::{CutoffLabels, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub observation_id: ObsId,
    pub label: Label,
    /// Weighted votes for normal, outlier and undecided, in that order.
    pub tallies: [f64; 3],
    /// The top tally was shared, so `label` is undecided by rule.
    pub tie: bool,
}

/// Relative gap below which two tallies count as tied. Sums of `1/d` weights
/// are not exact in floating point, while distinct sums differ by at least
/// `1/2520` for difficulties 1 through 10.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Argmax over the summed weights per class; a shared maximum (within
/// [`TIE_TOLERANCE`]) yields [`Label::Undecided`] with `tie` set.
pub fn tally(
    observation_id: ObsId,
    ballots: impl IntoIterator<Item = (Label, f64)>,
) -> Result<VoteResult, ExpertError> {
    let mut tallies = [0.0; 3];
    let mut voters = 0usize;
    for (label, weight) in ballots {
        tallies[label.index()] += weight;
        voters += 1;
    }
    if voters == 0 {
        return Err(ExpertError::NoVotes(observation_id));
    }
    let top = tallies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_TOLERANCE * top.abs().max(1.0);
    let winners: Vec<Label> = Label::ALL
        .into_iter()
        .filter(|l| top - tallies[l.index()] <= slack)
        .collect();
    let (label, tie) = match winners.as_slice() {
        [only] => (*only, false),
        _ => (Label::Undecided, true),
    };
    Ok(VoteResult {
        observation_id,
        label,
        tallies,
        tie,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    JobRelevance,
    /// `1 / difficulty`.
    InverseDifficulty,
    /// `11 - difficulty`.
    ReversedDifficulty,
}

impl Weighting {
    pub fn weight(self, profile: &ExpertProfile) -> f64 {
        match self {
            Weighting::JobRelevance => profile.job_relevance as f64,
            Weighting::InverseDifficulty => 1.0 / profile.difficulty as f64,
            Weighting::ReversedDifficulty => (11 - profile.difficulty) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteScheme {
    Unweighted,
    Weighted(Weighting),
}

impl VoteScheme {
    pub fn name(self) -> &'static str {
        match self {
            VoteScheme::Unweighted => "unweighted",
            VoteScheme::Weighted(Weighting::JobRelevance) => "job_relevance",
            VoteScheme::Weighted(Weighting::InverseDifficulty) => "inverse_difficulty",
            VoteScheme::Weighted(Weighting::ReversedDifficulty) => "reversed_difficulty",
        }
    }
}

pub fn majority_vote_unweighted(sheet: &ExpertLabelSheet, observation: &ObsId) -> Result<VoteResult, ExpertError> {
    tally(
        observation.clone(),
        sheet.ballots(observation).into_values().map(|l| (l, 1.0)),
    )
}

pub fn majority_vote_weighted(
    sheet: &ExpertLabelSheet,
    profiles: &BTreeMap<String, ExpertProfile>,
    observation: &ObsId,
    weighting: Weighting,
) -> Result<VoteResult, ExpertError> {
    let ballots = sheet
        .ballots(observation)
        .into_iter()
        .map(|(expert, label)| {
            profiles
                .get(expert)
                .map(|p| (label, weighting.weight(p)))
                .ok_or_else(|| ExpertError::MissingProfile(expert.to_owned()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    tally(observation.clone(), ballots)
}

/// One vote per labeled observation, in observation order.
pub fn vote_all(sheet: &ExpertLabelSheet, scheme: VoteScheme) -> Result<Vec<VoteResult>, ExpertError> {
    sheet
        .observations()
        .iter()
        .map(|obs| match scheme {
            VoteScheme::Unweighted => majority_vote_unweighted(sheet, obs),
            VoteScheme::Weighted(w) => majority_vote_weighted(sheet, sheet.profiles(), obs, w),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// `correct / decided`.
    pub accuracy: f64,
    /// `decided / total`.
    pub coverage: f64,
    pub correct: usize,
    pub decided: usize,
    pub total: usize,
}

impl AccuracySummary {
    fn from_counts(correct: usize, decided: usize, total: usize) -> Result<Self, ExpertError> {
        if decided == 0 {
            return Err(ExpertError::ZeroCoverage);
        }
        Ok(Self {
            accuracy: correct as f64 / decided as f64,
            coverage: decided as f64 / total as f64,
            correct,
            decided,
            total,
        })
    }
}

/// Accuracy of decided predictions against a labeling; undecided predictions
/// only lower the coverage.
fn score_labels<'a>(
    predictions: impl IntoIterator<Item = (&'a ObsId, Label)>,
    labels: &CutoffLabels,
) -> Result<AccuracySummary, ExpertError> {
    let truth = labels.as_map();
    let (mut correct, mut decided, mut total) = (0, 0, 0);
    for (id, predicted) in predictions {
        let actual = *truth
            .get(id)
            .ok_or_else(|| ExpertError::UnknownObservation(id.clone()))?;
        total += 1;
        if predicted.is_decided() {
            decided += 1;
            if predicted == Label::from_outlier_flag(actual) {
                correct += 1;
            }
        }
    }
    AccuracySummary::from_counts(correct, decided, total)
}

pub fn ensemble_accuracy(votes: &[VoteResult], labels: &CutoffLabels) -> Result<AccuracySummary, ExpertError> {
    score_labels(votes.iter().map(|v| (&v.observation_id, v.label)), labels)
}

/// Change from a baseline ensemble to another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyComparison {
    pub difference: f64,
    /// `100 (other / base - 1)`; `None` when the baseline accuracy is zero.
    pub percent_increase: Option<f64>,
}

impl AccuracyComparison {
    pub fn new(base: &AccuracySummary, other: &AccuracySummary) -> Self {
        Self {
            difference: other.accuracy - base.accuracy,
            percent_increase: (base.accuracy > 0.0).then(|| 100.0 * (other.accuracy / base.accuracy - 1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualCell {
    pub expert: String,
    pub method: Method,
    pub cutoff: f64,
    pub summary: AccuracySummary,
}

/// Per (expert, labeling) accuracies. Experts without a single decided
/// label are listed in `excluded` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualAccuracy {
    pub cells: Vec<IndividualCell>,
    pub excluded: Vec<String>,
}

pub fn individual_accuracy(
    sheet: &ExpertLabelSheet,
    labelings: &[CutoffLabels],
) -> Result<IndividualAccuracy, ExpertError> {
    let observations = sheet.observations();
    let mut per_expert: BTreeMap<&str, Vec<(&ObsId, Label)>> = BTreeMap::new();
    for obs in &observations {
        for (expert, label) in sheet.ballots(obs) {
            per_expert.entry(expert).or_default().push((obs, label));
        }
    }
    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    for (expert, labels) in per_expert {
        if !labels.iter().any(|(_, l)| l.is_decided()) {
            excluded.push(expert.to_owned());
            continue;
        }
        for labeling in labelings {
            cells.push(IndividualCell {
                expert: expert.to_owned(),
                method: labeling.method,
                cutoff: labeling.cutoff,
                summary: score_labels(labels.iter().copied(), labeling)?,
            });
        }
    }
    Ok(IndividualAccuracy { cells, excluded })
}
