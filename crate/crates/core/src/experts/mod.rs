//! Expert label sheets: ingestion, self-consistency, inter-expert agreement,
//! dimension usage, and majority-vote ensembles scored against detector
//! labelings.
//!
//! A sheet is a CSV with one row per (expert, presented item):
//!
//! ```text
//! expert_id,item_id,observation_id,dup_group,label,dims_used,relevance,difficulty
//! e1,1,17,,1,x3;x10,7,4
//! e1,2,42,g1,0,,7,4
//! ```
//!
//! `label` is 0 (normal), 1 (outlier) or 2 (undecided). Items sharing a
//! non-empty `dup_group` are copies of the same observation. `relevance` and
//! `difficulty` are the expert's self-reported 1..=10 scores and must be the
//! same on all of that expert's rows.

mod agreement;
mod collect;
mod voting;

pub use agreement::{
    consistency, dimension_usage, expert_spearman, expert_summary, spearman_matrix, spearman_rho, DimensionUsage,
    ExpertSummary, SummaryRow,
};
pub use collect::{collect_labels, read_presented_items, write_presented_items};
pub use voting::{
    ensemble_accuracy, individual_accuracy, majority_vote_unweighted, majority_vote_weighted, tally, vote_all,
    AccuracyComparison, AccuracySummary, IndividualAccuracy, IndividualCell, VoteResult, VoteScheme, Weighting,
};

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ObsId;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed label sheet: {0}")]
    Csv(#[from] csv::Error),
    #[error("sheet row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("expert {0:?} reports different relevance/difficulty on different rows")]
    InconsistentProfile(String),
    #[error("score {value} for {field} is outside 1..=10")]
    ScoreOutOfRange { field: &'static str, value: u8 },
    #[error("item {0:?} maps to more than one observation")]
    AmbiguousItem(String),
    #[error("duplicate group {0:?} must contain at least two items of one observation")]
    InvalidDuplicateGroup(String),
    #[error("cannot duplicate {count} of {available} items")]
    TooManyDuplicates { count: usize, available: usize },
    #[error("expert {0:?} has no duplicate groups to compare")]
    NoDuplicateGroups(String),
    #[error("unknown expert {0:?}")]
    UnknownExpert(String),
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("only {0} jointly decided items; need at least 3")]
    TooFewJointItems(usize),
    #[error("rank correlation undefined: zero variance")]
    ZeroVariance,
    #[error("no votes for observation {0}")]
    NoVotes(ObsId),
    #[error("no profile for expert {0:?}")]
    MissingProfile(String),
    #[error("observation {0} is not covered by the labeling")]
    UnknownObservation(ObsId),
    #[error("no decided observations; accuracy undefined")]
    ZeroCoverage,
    #[error("interactive input ended before labeling finished")]
    InputEnded,
}

/// Expert judgment for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Normal = 0,
    Outlier = 1,
    Undecided = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Normal, Label::Outlier, Label::Undecided];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_decided(self) -> bool {
        self != Label::Undecided
    }

    pub fn from_outlier_flag(outlier: bool) -> Self {
        if outlier {
            Label::Outlier
        } else {
            Label::Normal
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Outlier),
            2 => Ok(Label::Undecided),
            other => Err(format!("label {other} is not one of 0, 1, 2")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub job_relevance: u8,
    pub difficulty: u8,
}

impl ExpertProfile {
    pub fn new(job_relevance: u8, difficulty: u8) -> Result<Self, ExpertError> {
        for (field, value) in [("relevance", job_relevance), ("difficulty", difficulty)] {
            if !(1..=10).contains(&value) {
                return Err(ExpertError::ScoreOutOfRange { field, value });
            }
        }
        Ok(Self {
            job_relevance,
            difficulty,
        })
    }
}

/// An item shown to experts: an observation, possibly one copy in a duplicate group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedItem {
    pub item_id: String,
    pub observation_id: ObsId,
    pub dup_group: Option<String>,
}

/// One expert's judgment of one presented item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetRow {
    pub expert_id: String,
    pub item_id: String,
    pub observation_id: ObsId,
    pub dup_group: Option<String>,
    pub label: Label,
    pub dims_used: Vec<String>,
    pub relevance: u8,
    pub difficulty: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    expert_id: String,
    item_id: String,
    observation_id: String,
    dup_group: String,
    label: String,
    dims_used: String,
    relevance: String,
    difficulty: String,
}

impl RawRow {
    fn parse(self, row: usize) -> Result<SheetRow, ExpertError> {
        let bad = |message: String| ExpertError::InvalidRow { row, message };
        let label = self
            .label
            .parse::<u8>()
            .map_err(|_| bad(format!("label {:?} is not an integer", self.label)))
            .and_then(|v| Label::try_from(v).map_err(bad))?;
        let score = |field: &str, v: &str| {
            v.parse::<u8>().map_err(|_| ExpertError::InvalidRow {
                row,
                message: format!("{field} {v:?} is not an integer"),
            })
        };
        if self.expert_id.is_empty() || self.item_id.is_empty() || self.observation_id.is_empty() {
            return Err(bad("expert_id, item_id and observation_id are required".into()));
        }
        Ok(SheetRow {
            expert_id: self.expert_id,
            item_id: self.item_id,
            observation_id: ObsId(self.observation_id),
            dup_group: Some(self.dup_group).filter(|g| !g.is_empty()),
            label,
            dims_used: self
                .dims_used
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect(),
            relevance: score("relevance", &self.relevance)?,
            difficulty: score("difficulty", &self.difficulty)?,
        })
    }
}

/// Validated label sheet for one study.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertLabelSheet {
    rows: Vec<SheetRow>,
    profiles: BTreeMap<String, ExpertProfile>,
}

impl ExpertLabelSheet {
    pub fn new(rows: Vec<SheetRow>) -> Result<Self, ExpertError> {
        let mut profiles: BTreeMap<String, ExpertProfile> = BTreeMap::new();
        let mut item_obs: HashMap<&str, &ObsId> = HashMap::new();
        let mut groups: HashMap<&str, (Vec<&str>, &ObsId)> = HashMap::new();
        for row in &rows {
            let profile = ExpertProfile::new(row.relevance, row.difficulty)?;
            match profiles.get(&row.expert_id) {
                Some(p) if *p != profile => return Err(ExpertError::InconsistentProfile(row.expert_id.clone())),
                Some(_) => {}
                None => {
                    profiles.insert(row.expert_id.clone(), profile);
                }
            }
            if let Some(prev) = item_obs.insert(&row.item_id, &row.observation_id) {
                if prev != &row.observation_id {
                    return Err(ExpertError::AmbiguousItem(row.item_id.clone()));
                }
            }
            if let Some(g) = &row.dup_group {
                let entry = groups.entry(g).or_insert_with(|| (Vec::new(), &row.observation_id));
                if entry.1 != &row.observation_id {
                    return Err(ExpertError::InvalidDuplicateGroup(g.clone()));
                }
                if !entry.0.contains(&row.item_id.as_str()) {
                    entry.0.push(&row.item_id);
                }
            }
        }
        if let Some((g, _)) = groups.iter().find(|(_, (items, _))| items.len() < 2) {
            return Err(ExpertError::InvalidDuplicateGroup((*g).to_owned()));
        }
        Ok(Self { rows, profiles })
    }

    pub fn rows(&self) -> &[SheetRow] {
        &self.rows
    }

    pub fn profiles(&self) -> &BTreeMap<String, ExpertProfile> {
        &self.profiles
    }

    /// Expert ids in sorted order.
    pub fn experts(&self) -> Vec<&str> {
        self.profiles.keys().map(String::as_str).collect()
    }

    pub fn rows_of<'a>(&'a self, expert: &'a str) -> impl Iterator<Item = &'a SheetRow> + 'a {
        self.rows.iter().filter(move |r| r.expert_id == expert)
    }

    /// Distinct observations labeled by anyone, sorted.
    pub fn observations(&self) -> Vec<ObsId> {
        let mut v: Vec<ObsId> = self.rows.iter().map(|r| r.observation_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Each expert's label for `observation`, taken from the first presentation
    /// (smallest item id) when the observation was shown more than once.
    pub fn ballots(&self, observation: &ObsId) -> BTreeMap<&str, Label> {
        let mut first: BTreeMap<&str, (ObsId, Label)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| &r.observation_id == observation) {
            let item = ObsId(r.item_id.clone());
            match first.get(r.expert_id.as_str()) {
                Some((prev, _)) if *prev <= item => {}
                _ => {
                    first.insert(&r.expert_id, (item, r.label));
                }
            }
        }
        first.into_iter().map(|(e, (_, l))| (e, l)).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ExpertError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr
            .deserialize::<RawRow>()
            .enumerate()
            .map(|(i, rec)| rec.map_err(ExpertError::from).and_then(|r| r.parse(i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExpertError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| ExpertError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ExpertError> {
        write_rows(&self.rows, writer)
    }
}

pub(crate) fn write_rows<W: Write>(rows: &[SheetRow], writer: W) -> Result<(), ExpertError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(RawRow {
            expert_id: r.expert_id.clone(),
            item_id: r.item_id.clone(),
            observation_id: r.observation_id.0.clone(),
            dup_group: r.dup_group.clone().unwrap_or_default(),
            label: (r.label as u8).to_string(),
            dims_used: r.dims_used.join(";"),
            relevance: r.relevance.to_string(),
            difficulty: r.difficulty.to_string(),
        })?;
    }
    w.flush().map_err(|source| ExpertError::Io {
        path: "<writer>".into(),
        source,
    })
}

/// Adds a copy of `count` randomly chosen items and shuffles the result.
///
/// Both the original and the copy of a duplicated observation carry the same
/// group id `g1..g<count>`. Item ids are the 1-based presentation positions.
pub fn inject_duplicates(items: &[ObsId], count: usize, seed: u64) -> Result<Vec<PresentedItem>, ExpertError> {
    if count > items.len() {
        return Err(ExpertError::TooManyDuplicates {
            count,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, items.len(), count).into_vec();
    picked.sort_unstable();
    let mut group_of: HashMap<usize, String> = HashMap::new();
    for (g, &i) in picked.iter().enumerate() {
        group_of.insert(i, format!("g{}", g + 1));
    }
    let mut presented: Vec<(ObsId, Option<String>)> = items
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), group_of.get(&i).cloned()))
        .collect();
    presented.extend(picked.iter().map(|&i| (items[i].clone(), group_of.get(&i).cloned())));
    if count > 0 {
        presented.shuffle(&mut rng);
    }
    Ok(presented
        .into_iter()
        .enumerate()
        .map(|(pos, (observation_id, dup_group))| PresentedItem {
            item_id: (pos + 1).to_string(),
            observation_id,
            dup_group,
        })
        .collect())
}


#[cfg(test)]
mod tests {
    use super::test_support::row;
    use super::*;

    const SHEET: &str = "\
expert_id,item_id,observation_id,dup_group,label,dims_used,relevance,difficulty
e1,1,17,,1,x3;x10,7,4
e1,2,42,g1,0,,7,4
e1,3,42,g1,2,x1,7,4
e2,1,17,,0,x10,3,9
";

    #[test]
    fn reads_sheet() {
        let sheet = ExpertLabelSheet::read_csv(SHEET.as_bytes()).unwrap();
        assert_eq!(sheet.rows().len(), 4);
        assert_eq!(sheet.rows()[0].dims_used, ["x3", "x10"]);
        assert_eq!(sheet.rows()[1].dup_group.as_deref(), Some("g1"));
        assert_eq!(sheet.rows()[2].label, Label::Undecided);
        assert_eq!(sheet.profiles()["e2"], ExpertProfile::new(3, 9).unwrap());
        let mut buf = Vec::new();
        sheet.write_csv(&mut buf).unwrap();
        assert_eq!(ExpertLabelSheet::read_csv(buf.as_slice()).unwrap(), sheet);
    }

    #[test]
    fn rejects_invalid_sheets() {
        let bad_label = SHEET.replace("e2,1,17,,0", "e2,1,17,,3");
        assert!(matches!(
            ExpertLabelSheet::read_csv(bad_label.as_bytes()),
            Err(ExpertError::InvalidRow { row: 4, .. })
        ));
        let bad_profile = SHEET.replace("e1,3,42,g1,2,x1,7,4", "e1,3,42,g1,2,x1,8,4");
        assert!(matches!(
            ExpertLabelSheet::read_csv(bad_profile.as_bytes()),
            Err(ExpertError::InconsistentProfile(_))
        ));
        let out_of_range = SHEET.replace("3,9", "3,11");
        assert!(matches!(
            ExpertLabelSheet::read_csv(out_of_range.as_bytes()),
            Err(ExpertError::ScoreOutOfRange { .. })
        ));
        let lonely_group = SHEET.replace("e1,3,42,g1", "e1,3,42,");
        assert!(matches!(
            ExpertLabelSheet::read_csv(lonely_group.as_bytes()),
            Err(ExpertError::InvalidDuplicateGroup(_))
        ));
        let ambiguous = SHEET.replace("e2,1,17", "e2,1,18");
        assert!(matches!(
            ExpertLabelSheet::read_csv(ambiguous.as_bytes()),
            Err(ExpertError::AmbiguousItem(_))
        ));
    }

    #[test]
    fn ballots_use_first_presentation() {
        let sheet = ExpertLabelSheet::new(vec![
            row("a", "10", "1", Some("g"), Label::Outlier),
            row("a", "2", "1", Some("g"), Label::Normal),
            row("b", "10", "1", Some("g"), Label::Undecided),
        ])
        .unwrap();
        let b = sheet.ballots(&ObsId::from("1"));
        assert_eq!(b["a"], Label::Normal);
        assert_eq!(b["b"], Label::Undecided);
    }

    fn items(n: usize) -> Vec<ObsId> {
        (0..n).map(|i| ObsId::from(i * 3)).collect()
    }

    #[test]
    fn duplicate_injection_sizes() {
        assert_eq!(inject_duplicates(&items(49), 9, 1).unwrap().len(), 58);
        assert_eq!(inject_duplicates(&items(40), 5, 1).unwrap().len(), 45);
        let none = inject_duplicates(&items(10), 0, 1).unwrap();
        let ids: Vec<ObsId> = none.iter().map(|p| p.observation_id.clone()).collect();
        assert_eq!(ids, items(10));
        assert!(none.iter().all(|p| p.dup_group.is_none()));
        assert!(matches!(
            inject_duplicates(&items(3), 4, 1),
            Err(ExpertError::TooManyDuplicates { .. })
        ));
    }

    #[test]
    fn duplicate_groups_pair_copies() {
        let presented = inject_duplicates(&items(40), 5, 11).unwrap();
        assert_eq!(presented, inject_duplicates(&items(40), 5, 11).unwrap());
        let mut groups: BTreeMap<String, Vec<&ObsId>> = BTreeMap::new();
        for p in &presented {
            if let Some(g) = &p.dup_group {
                groups.entry(g.clone()).or_default().push(&p.observation_id);
            }
        }
        assert_eq!(groups.len(), 5);
        for members in groups.values() {
            assert_eq!(members.len(), 2);
            assert_eq!(members[0], members[1]);
        }
    }
}
