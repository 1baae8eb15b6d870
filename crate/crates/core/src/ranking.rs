//! Rankings, top-percent labels, labeling correlations and validation-subset
//! selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ObsId;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("score for observation {0} is not finite")]
    NonFiniteScore(ObsId),
    #[error("got {scores} scores for {ids} observations")]
    LengthMismatch { scores: usize, ids: usize },
    #[error("no observations to rank")]
    Empty,
    #[error("cutoff {0}% must lie strictly between 0 and 100")]
    CutoffOutOfRange(f64),
    #[error("labelings cover different observations")]
    DifferentObservations,
    #[error("correlation undefined: a labeling has zero variance")]
    ZeroVariance,
    #[error("subset size {size} exceeds {n} observations")]
    SubsetTooLarge { size: usize, n: usize },
    #[error("duplicate observation id {0}")]
    DuplicateId(ObsId),
    #[error("unknown method {0:?} (expected ae, lof or iforest)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ae,
    Lof,
    Iforest,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ae, Method::Lof, Method::Iforest];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ae => "ae",
            Method::Lof => "lof",
            Method::Iforest => "iforest",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = RankingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ae" | "autoencoder" => Ok(Method::Ae),
            "lof" => Ok(Method::Lof),
            "iforest" => Ok(Method::Iforest),
            _ => Err(RankingError::UnknownMethod(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: ObsId,
    pub score: f64,
    /// 1 is the most outlying.
    pub rank: usize,
    /// 1..=10, decile 1 holds the top-ranked tenth.
    pub decile: u8,
}

/// Scores of one method with their ranks, kept in observation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRanking {
    pub method: Method,
    pub entries: Vec<RankEntry>,
}

impl OutlierRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries from rank 1 downwards.
    pub fn by_rank(&self) -> Vec<&RankEntry> {
        let mut v: Vec<&RankEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.rank);
        v
    }

    pub fn rank_of(&self, id: &ObsId) -> Option<usize> {
        self.entries.iter().find(|e| &e.id == id).map(|e| e.rank)
    }

    fn rank_map(&self) -> HashMap<&ObsId, &RankEntry> {
        self.entries.iter().map(|e| (&e.id, e)).collect()
    }
}

/// Ranks scores descending; equal scores go to the smaller id.
pub fn rank(ids: &[ObsId], scores: &[f64], method: Method) -> Result<OutlierRanking, RankingError> {
    if ids.len() != scores.len() {
        return Err(RankingError::LengthMismatch {
            scores: scores.len(),
            ids: ids.len(),
        });
    }
    if ids.is_empty() {
        return Err(RankingError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RankingError::NonFiniteScore(ids[i].clone()));
    }
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    let mut ranks = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    let entries = (0..n)
        .map(|i| RankEntry {
            id: ids[i].clone(),
            score: scores[i],
            rank: ranks[i],
            decile: decile(ranks[i], n),
        })
        .collect();
    Ok(OutlierRanking { method, entries })
}

fn decile(rank: usize, n: usize) -> u8 {
    (rank * 10).div_ceil(n).clamp(1, 10) as u8
}

/// Number of positives for a cutoff: `round(p·n/100)` (half up), at least 1.
pub fn positive_count(n: usize, cutoff: f64) -> Result<usize, RankingError> {
    if !(cutoff > 0.0 && cutoff < 100.0) {
        return Err(RankingError::CutoffOutOfRange(cutoff));
    }
    let exact = cutoff * n as f64 / 100.0;
    Ok(((exact + 0.5).floor() as usize).max(1))
}

/// Binary labels: the top `positive_count` ranks are 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffLabels {
    pub method: Method,
    pub cutoff: f64,
    pub ids: Vec<ObsId>,
    pub labels: Vec<bool>,
}

impl CutoffLabels {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn label_of(&self, id: &ObsId) -> Option<bool> {
        self.ids.iter().position(|x| x == id).map(|i| self.labels[i])
    }

    pub fn as_map(&self) -> HashMap<&ObsId, bool> {
        self.ids.iter().zip(&self.labels).map(|(id, l)| (id, *l)).collect()
    }
}

pub fn top_percent_labels(ranking: &OutlierRanking, cutoff: f64) -> Result<CutoffLabels, RankingError> {
    let count = positive_count(ranking.len(), cutoff)?;
    Ok(CutoffLabels {
        method: ranking.method,
        cutoff,
        ids: ranking.entries.iter().map(|e| e.id.clone()).collect(),
        labels: ranking.entries.iter().map(|e| e.rank <= count).collect(),
    })
}

/// Phi coefficient (Pearson correlation of two binary labelings).
pub fn method_label_correlation(a: &CutoffLabels, b: &CutoffLabels) -> Result<f64, RankingError> {
    if a.ids.len() != b.ids.len() {
        return Err(RankingError::DifferentObservations);
    }
    let b_map = b.as_map();
    let mut table = [[0u64; 2]; 2];
    for (id, la) in a.ids.iter().zip(&a.labels) {
        let lb = *b_map.get(id).ok_or(RankingError::DifferentObservations)?;
        table[*la as usize][lb as usize] += 1;
    }
    let [[n00, n01], [n10, n11]] = table.map(|r| r.map(|c| c as f64));
    let denom = ((n10 + n11) * (n00 + n01) * (n01 + n11) * (n00 + n10)).sqrt();
    if denom == 0.0 {
        return Err(RankingError::ZeroVariance);
    }
    Ok((n11 * n00 - n10 * n01) / denom)
}

/// Symmetric matrix of phi coefficients; `None` where undefined.
pub fn label_correlation_matrix(labelings: &[CutoffLabels]) -> Vec<Vec<Option<f64>>> {
    let k = labelings.len();
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = method_label_correlation(&labelings[i], &labelings[j]).ok();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Picks observations for expert review.
///
/// Half the subset (rounded up) is a stratified sample over the mean decile
/// across methods, in equal parts from deciles 1–3, 4–7 and 8–10. The other
/// half are the observations with the largest spread of deciles between any
/// two methods. Shortfalls are filled by further disagreement picks, then by
/// further stratified picks. Output depends only on ids, scores and `seed`,
/// never on row order.
pub fn select_validation_subset(
    rankings: &[OutlierRanking],
    size: usize,
    seed: u64,
) -> Result<Vec<ObsId>, RankingError> {
    let first = rankings.first().ok_or(RankingError::Empty)?;
    let n = first.len();
    if size > n {
        return Err(RankingError::SubsetTooLarge { size, n });
    }
    let maps: Vec<_> = rankings.iter().map(OutlierRanking::rank_map).collect();
    let mut ids: Vec<&ObsId> = first.entries.iter().map(|e| &e.id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(RankingError::DuplicateId(w[0].clone()));
    }
    let mut stats = Vec::with_capacity(n);
    for &id in &ids {
        let deciles = maps
            .iter()
            .map(|m| m.get(id).map(|e| e.decile).ok_or(RankingError::DifferentObservations))
            .collect::<Result<Vec<u8>, _>>()?;
        let mean = deciles.iter().map(|&d| d as f64).sum::<f64>() / deciles.len() as f64;
        let gap = deciles.iter().max().unwrap() - deciles.iter().min().unwrap();
        stats.push((id, mean, gap));
    }
    if rankings.iter().any(|r| r.len() != n) {
        return Err(RankingError::DifferentObservations);
    }

    let mut strata: [Vec<&ObsId>; 3] = Default::default();
    for &(id, mean, _) in &stats {
        let stratum = match mean.round() as u8 {
            0..=3 => 0,
            4..=7 => 1,
            _ => 2,
        };
        strata[stratum].push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut strata {
        s.shuffle(&mut rng);
    }
    let mut disagreement: Vec<(&ObsId, u8)> = stats.iter().filter(|s| s.2 > 0).map(|s| (s.0, s.2)).collect();
    disagreement.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut chosen: BTreeMap<&ObsId, ()> = BTreeMap::new();
    let mut out = Vec::with_capacity(size);
    let mut cursors = [0usize; 3];
    let mut next_stratified = |chosen: &BTreeMap<&ObsId, ()>| -> Option<&ObsId> {
        // round-robin across strata, skipping exhausted ones
        for _ in 0..3 * n.max(1) {
            let s = (0..3).min_by_key(|&s| (cursors[s] >= strata[s].len(), cursors[s], s))?;
            if cursors[s] >= strata[s].len() {
                return None;
            }
            let id = strata[s][cursors[s]];
            cursors[s] += 1;
            if !chosen.contains_key(id) {
                return Some(id);
            }
        }
        None
    };
    let stratified_quota = size.div_ceil(2);
    while out.len() < stratified_quota {
        match next_stratified(&chosen) {
            Some(id) => {
                chosen.insert(id, ());
                out.push(id.clone());
            }
            None => break,
        }
    }
    for (id, _) in &disagreement {
        if out.len() >= size {
            break;
        }
        if chosen.insert(id, ()).is_none() {
            out.push((*id).clone());
        }
    }
    while out.len() < size {
        match next_stratified(&chosen) {
            Some(id) => {
                chosen.insert(id, ());
                out.push(id.clone());
            }
            None => break,
        }
    }
    Ok(out)
}
