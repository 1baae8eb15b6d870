//! Self-consistency, rank correlation between experts, dimension usage and
//! summary statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ExpertError, ExpertLabelSheet, Label};

/// Share of the expert's duplicate groups whose copies all got the same label.
///
/// Undecided counts as a label of its own. Only groups where the expert
/// labeled at least two copies take part.
pub fn consistency(sheet: &ExpertLabelSheet, expert: &str) -> Result<f64, ExpertError> {
    if !sheet.profiles().contains_key(expert) {
        return Err(ExpertError::UnknownExpert(expert.to_owned()));
    }
    let mut groups: BTreeMap<&str, Vec<Label>> = BTreeMap::new();
    for r in sheet.rows_of(expert) {
        if let Some(g) = &r.dup_group {
            groups.entry(g).or_default().push(r.label);
        }
    }
    let compared: Vec<&Vec<Label>> = groups.values().filter(|l| l.len() >= 2).collect();
    if compared.is_empty() {
        return Err(ExpertError::NoDuplicateGroups(expert.to_owned()));
    }
    let same = compared.iter().filter(|l| l.iter().all(|x| *x == l[0])).count();
    Ok(same as f64 / compared.len() as f64)
}

/// Mid-ranks (1-based) with ties sharing their average position.
fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of mid-ranks. `None` if either side is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman_rho needs paired samples");
    pearson(&mid_ranks(x), &mid_ranks(y))
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Rank correlation between two experts over the items both labeled, leaving
/// out items either of them left undecided.
pub fn expert_spearman(sheet: &ExpertLabelSheet, a: &str, b: &str) -> Result<f64, ExpertError> {
    for e in [a, b] {
        if !sheet.profiles().contains_key(e) {
            return Err(ExpertError::UnknownExpert(e.to_owned()));
        }
    }
    let of_b: HashMap<&str, Label> = sheet.rows_of(b).map(|r| (r.item_id.as_str(), r.label)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = sheet
        .rows_of(a)
        .filter_map(|r| of_b.get(r.item_id.as_str()).map(|lb| (r.label, *lb)))
        .filter(|(la, lb)| la.is_decided() && lb.is_decided())
        .map(|(la, lb)| (la.index() as f64, lb.index() as f64))
        .unzip();
    if xs.len() < 3 {
        return Err(ExpertError::TooFewJointItems(xs.len()));
    }
    spearman_rho(&xs, &ys).ok_or(ExpertError::ZeroVariance)
}

/// Experts in sorted order and their pairwise rank correlations (`None` where undefined).
pub fn spearman_matrix(sheet: &ExpertLabelSheet) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let experts: Vec<String> = sheet.experts().into_iter().map(str::to_owned).collect();
    let k = experts.len();
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = expert_spearman(sheet, &experts[i], &experts[j]).ok();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    (experts, m)
}

/// How often each expert cited each dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionUsage {
    pub experts: Vec<String>,
    pub dimensions: Vec<String>,
    /// `counts[e][d]`.
    pub counts: Vec<Vec<usize>>,
    pub per_expert: Vec<usize>,
    pub per_dimension: Vec<usize>,
    /// Number of experts citing each dimension at least once.
    pub experts_using: Vec<usize>,
}

impl DimensionUsage {
    pub fn used_by_every_expert(&self) -> Vec<&str> {
        self.dimensions
            .iter()
            .zip(&self.experts_using)
            .filter(|(_, n)| **n == self.experts.len() && !self.experts.is_empty())
            .map(|(d, _)| d.as_str())
            .collect()
    }
}

pub fn dimension_usage(sheet: &ExpertLabelSheet, dimensions: &[String]) -> Result<DimensionUsage, ExpertError> {
    let experts: Vec<String> = sheet.experts().into_iter().map(str::to_owned).collect();
    let dim_index: HashMap<&str, usize> = dimensions.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let expert_index: HashMap<&str, usize> = experts.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let mut counts = vec![vec![0usize; dimensions.len()]; experts.len()];
    for r in sheet.rows() {
        let e = expert_index[r.expert_id.as_str()];
        for dim in &r.dims_used {
            let d = *dim_index
                .get(dim.as_str())
                .ok_or_else(|| ExpertError::UnknownDimension(dim.clone()))?;
            counts[e][d] += 1;
        }
    }
    let per_expert = counts.iter().map(|row| row.iter().sum()).collect();
    let per_dimension = (0..dimensions.len())
        .map(|d| counts.iter().map(|row| row[d]).sum())
        .collect();
    let experts_using = (0..dimensions.len())
        .map(|d| counts.iter().filter(|row| row[d] > 0).count())
        .collect();
    Ok(DimensionUsage {
        experts,
        dimensions: dimensions.to_vec(),
        counts,
        per_expert,
        per_dimension,
        experts_using,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation (n - 1); `None` with a single expert.
    pub stddev: Option<f64>,
    pub min: f64,
    pub max: f64,
}

/// Per-expert consistency, difficulty and relevance with their summary
/// statistics and Pearson correlations across experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSummary {
    pub experts: Vec<String>,
    pub consistency: Vec<Option<f64>>,
    pub difficulty: Vec<u8>,
    pub relevance: Vec<u8>,
    pub rows: Vec<SummaryRow>,
    /// Correlations among (consistency, difficulty, relevance) over experts
    /// with a defined consistency.
    pub correlations: Vec<Vec<Option<f64>>>,
}

pub fn expert_summary(sheet: &ExpertLabelSheet) -> ExpertSummary {
    let experts: Vec<String> = sheet.experts().into_iter().map(str::to_owned).collect();
    let consistency: Vec<Option<f64>> = experts.iter().map(|e| super::consistency(sheet, e).ok()).collect();
    let difficulty: Vec<u8> = experts.iter().map(|e| sheet.profiles()[e].difficulty).collect();
    let relevance: Vec<u8> = experts.iter().map(|e| sheet.profiles()[e].job_relevance).collect();

    let defined: Vec<usize> = (0..experts.len()).filter(|&i| consistency[i].is_some()).collect();
    let columns: [(&str, Vec<f64>); 3] = [
        (
            "consistency",
            defined.iter().map(|&i| consistency[i].unwrap()).collect(),
        ),
        ("difficulty", defined.iter().map(|&i| difficulty[i] as f64).collect()),
        ("relevance", defined.iter().map(|&i| relevance[i] as f64).collect()),
    ];
    let all_difficulty: Vec<f64> = difficulty.iter().map(|&d| d as f64).collect();
    let all_relevance: Vec<f64> = relevance.iter().map(|&d| d as f64).collect();
    let rows = [
        ("consistency", &columns[0].1),
        ("difficulty", &all_difficulty),
        ("relevance", &all_relevance),
    ]
    .into_iter()
    .filter(|(_, v)| !v.is_empty())
    .map(|(name, v)| describe(name, v))
    .collect();
    let correlations = (0..3)
        .map(|i| (0..3).map(|j| pearson(&columns[i].1, &columns[j].1)).collect())
        .collect();
    ExpertSummary {
        experts,
        consistency,
        difficulty,
        relevance,
        rows,
        correlations,
    }
}

fn describe(name: &str, v: &[f64]) -> SummaryRow {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let stddev = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    SummaryRow {
        name: name.to_owned(),
        mean,
        stddev,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::row;
    use super::*;
    use crate::experts::SheetRow;

    fn group_sheet(expert: &str, pairs: &[(Label, Label)]) -> Vec<SheetRow> {
        let mut rows = Vec::new();
        for (g, (a, b)) in pairs.iter().enumerate() {
            let obs = format!("{g}");
            let group = format!("g{g}");
            rows.push(row(expert, &format!("{}", 2 * g), &obs, Some(&group), *a));
            rows.push(row(expert, &format!("{}", 2 * g + 1), &obs, Some(&group), *b));
        }
        rows
    }

    use Label::{Normal as N, Outlier as O, Undecided as U};

    #[test]
    fn consistency_examples() {
        let sheet = ExpertLabelSheet::new(group_sheet("e", &[(N, N), (O, O), (U, U), (N, O), (O, U)])).unwrap();
        assert!((consistency(&sheet, "e").unwrap() - 0.6).abs() < 1e-15);
        let all = ExpertLabelSheet::new(group_sheet("e", &[(N, N), (O, O)])).unwrap();
        assert_eq!(consistency(&all, "e").unwrap(), 1.0);
        let mut nine = vec![(N, N); 7];
        nine.extend([(N, O), (O, N)]);
        let s = ExpertLabelSheet::new(group_sheet("e", &nine)).unwrap();
        assert!((consistency(&s, "e").unwrap() - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn consistency_errors() {
        let sheet = ExpertLabelSheet::new(vec![row("e", "1", "1", None, N)]).unwrap();
        assert!(matches!(
            consistency(&sheet, "e"),
            Err(ExpertError::NoDuplicateGroups(_))
        ));
        assert!(matches!(consistency(&sheet, "x"), Err(ExpertError::UnknownExpert(_))));
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[0.0, 0.0, 1.0, 1.0, 1.0]), [1.5, 1.5, 4.0, 4.0, 4.0]);
        assert_eq!(mid_ranks(&[3.0, 1.0, 2.0]), [3.0, 1.0, 2.0]);
    }

    #[test]
    fn spearman_basics() {
        let a = [0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(spearman_rho(&a, &a), Some(1.0));
        let inv: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!((spearman_rho(&a, &inv).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman_rho(&a, &[1.0; 5]), None);
    }

    fn sheet_from_labels(a: &[Label], b: &[Label]) -> ExpertLabelSheet {
        let mut rows = Vec::new();
        for (i, (la, lb)) in a.iter().zip(b).enumerate() {
            let item = i.to_string();
            rows.push(row("a", &item, &item, None, *la));
            rows.push(row("b", &item, &item, None, *lb));
        }
        ExpertLabelSheet::new(rows).unwrap()
    }

    #[test]
    fn expert_spearman_skips_undecided() {
        let sheet = sheet_from_labels(&[N, N, O, O, O, U], &[N, O, N, O, O, O]);
        // After dropping item 5 the vectors are [0,0,1,1,1] and [0,1,0,1,1]: rho = 1/6.
        let rho = expert_spearman(&sheet, "a", "b").unwrap();
        assert!((rho - 1.0 / 6.0).abs() < 1e-12, "{rho}");
        assert_eq!(rho, expert_spearman(&sheet, "b", "a").unwrap());
        let few = sheet_from_labels(&[N, O, U], &[N, O, N]);
        assert!(matches!(
            expert_spearman(&few, "a", "b"),
            Err(ExpertError::TooFewJointItems(2))
        ));
        let flat = sheet_from_labels(&[N, N, N], &[N, O, N]);
        assert!(matches!(
            expert_spearman(&flat, "a", "b"),
            Err(ExpertError::ZeroVariance)
        ));
    }

    #[test]
    fn spearman_matrix_shape() {
        let sheet = sheet_from_labels(&[N, N, O, O], &[O, O, N, N]);
        let (experts, m) = spearman_matrix(&sheet);
        assert_eq!(experts, ["a", "b"]);
        assert_eq!(m[0][0], Some(1.0));
        assert!((m[0][1].unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_usage_counts() {
        let dims: Vec<String> = (1..=11).map(|j| format!("x{j}")).collect();
        let mut rows = Vec::new();
        for i in 0..4 {
            let mut r = row("a", &i.to_string(), &i.to_string(), None, N);
            r.dims_used = vec!["x10".into()];
            rows.push(r);
            let mut r = row("b", &i.to_string(), &i.to_string(), None, N);
            r.dims_used = if i == 0 {
                vec!["x10".into(), "x8".into()]
            } else {
                vec!["x1".into()]
            };
            rows.push(r);
        }
        let sheet = ExpertLabelSheet::new(rows).unwrap();
        let usage = dimension_usage(&sheet, &dims).unwrap();
        assert_eq!(usage.counts[0][9], 4);
        assert_eq!(usage.per_expert, [4, 5]);
        assert_eq!(usage.per_dimension[9], 5);
        assert_eq!(usage.used_by_every_expert(), ["x10"]);

        let bare = ExpertLabelSheet::new(vec![row("a", "1", "1", None, N)]).unwrap();
        let zero = dimension_usage(&bare, &dims).unwrap();
        assert!(zero.counts.iter().flatten().all(|c| *c == 0));

        let mut r = row("a", "1", "1", None, N);
        r.dims_used = vec!["x99".into()];
        let unknown = ExpertLabelSheet::new(vec![r]).unwrap();
        assert!(matches!(
            dimension_usage(&unknown, &dims),
            Err(ExpertError::UnknownDimension(_))
        ));
    }

    #[test]
    fn summary_statistics() {
        let mut rows = group_sheet("a", &[(N, N), (N, O)]);
        rows.extend(group_sheet("b", &[(N, N), (O, O)]).into_iter().map(|mut r| {
            r.relevance = 9;
            r.difficulty = 2;
            r
        }));
        let sheet = ExpertLabelSheet::new(rows).unwrap();
        let s = expert_summary(&sheet);
        assert_eq!(s.consistency, [Some(0.5), Some(1.0)]);
        assert_eq!(s.rows[0].mean, 0.75);
        assert_eq!(s.rows[1].min, 2.0);
        assert_eq!(s.rows[2].max, 9.0);
        assert!((s.correlations[0][2].unwrap() - 1.0).abs() < 1e-12);
        assert!((s.correlations[0][1].unwrap() + 1.0).abs() < 1e-12);
    }
}
