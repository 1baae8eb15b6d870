use proptest::collection::vec;
use proptest::prelude::*;

use normality::data::{destandardize, fit_standardizer, standardize, Dataset, ObsId};
use normality::experts::{
    consistency, majority_vote_unweighted, majority_vote_weighted, spearman_rho, ExpertLabelSheet, Label, SheetRow,
    Weighting,
};
use normality::lof::{lof_scores, LofConfig};
use normality::perturbation::{detection_rate, diff_datasets};
use normality::ranking::{rank, Method};

fn matrix(max_n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec(-50.0..50.0f64, d), 3..max_n)
}

fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
    Dataset::from_rows(rows).unwrap()
}

/// Average ranks with ties sharing their mean position, computed by counting.
fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn label(i: u8) -> Label {
    Label::ALL[i as usize % 3]
}

/// Sheet for one expert; entry `g` holds the labels of duplicate group `g`.
fn duplicate_sheet(groups: &[Vec<u8>]) -> ExpertLabelSheet {
    let mut rows = Vec::new();
    let mut item = 0;
    for (g, labels) in groups.iter().enumerate() {
        for l in labels {
            item += 1;
            rows.push(SheetRow {
                expert_id: "e".into(),
                item_id: item.to_string(),
                observation_id: ObsId::from(g),
                dup_group: Some(format!("g{g}")),
                label: label(*l),
                dims_used: Vec::new(),
                relevance: 5,
                difficulty: 5,
            });
        }
    }
    ExpertLabelSheet::new(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standardization_round_trips(rows in matrix(40, 4)) {
        let data = dataset(rows);
        let params = fit_standardizer(&data).unwrap();
        let back = destandardize(&standardize(&data, &params).unwrap(), &params).unwrap();
        for (a, b) in data.rows().zip(back.rows()) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn ranks_are_a_bijection_ordered_by_score(scores in vec(-1e3..1e3f64, 1..200)) {
        let ids: Vec<ObsId> = (0..scores.len()).map(ObsId::from).collect();
        let r = rank(&ids, &scores, Method::Ae).unwrap();
        let mut ranks: Vec<usize> = r.entries.iter().map(|e| e.rank).collect();
        ranks.sort();
        prop_assert_eq!(ranks, (1..=scores.len()).collect::<Vec<_>>());
        let ordered = r.by_rank();
        for w in ordered.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
            if w[0].score == w[1].score {
                prop_assert!(w[0].id < w[1].id);
            }
        }
        for e in &r.entries {
            prop_assert!((1..=10).contains(&e.decile));
        }
    }

    #[test]
    fn lof_is_invariant_to_row_order(rows in matrix(60, 3), k in 1usize..8, rotate in 0usize..60) {
        prop_assume!(k < rows.len());
        let n = rows.len();
        let shift = rotate % n;
        let mut rotated = rows.clone();
        rotated.rotate_left(shift);
        let a = lof_scores(&dataset(rows), LofConfig { k }).unwrap().scores;
        let b = lof_scores(&dataset(rotated), LofConfig { k }).unwrap().scores;
        for i in 0..n {
            let j = (i + n - shift) % n;
            prop_assert!((a[i] - b[j]).abs() <= 1e-9 * a[i].abs().max(1.0), "row {i}: {} vs {}", a[i], b[j]);
        }
    }

    #[test]
    fn equal_weights_vote_like_unweighted(
        labels in vec(vec(0u8..3, 1..4), 1..8),
        relevance in 1u8..=10,
        difficulty in 1u8..=10,
    ) {
        let rows: Vec<SheetRow> = labels.iter().enumerate().flat_map(|(e, per_obs)| {
            per_obs.iter().enumerate().map(move |(o, l)| SheetRow {
                expert_id: format!("e{e}"),
                item_id: (o + 1).to_string(),
                observation_id: ObsId::from(o),
                dup_group: None,
                label: label(*l),
                dims_used: Vec::new(),
                relevance,
                difficulty,
            })
        }).collect();
        let sheet = ExpertLabelSheet::new(rows).unwrap();
        for obs in sheet.observations() {
            let plain = majority_vote_unweighted(&sheet, &obs).unwrap();
            for w in [Weighting::JobRelevance, Weighting::InverseDifficulty, Weighting::ReversedDifficulty] {
                let weighted = majority_vote_weighted(&sheet, sheet.profiles(), &obs, w).unwrap();
                prop_assert_eq!((weighted.label, weighted.tie), (plain.label, plain.tie));
            }
        }
    }

    #[test]
    fn consistency_ignores_presentation_order(
        groups in vec(vec(0u8..3, 2..4), 1..8),
        seed in any::<u64>(),
    ) {
        let reference = consistency(&duplicate_sheet(&groups), "e").unwrap();
        let mut rows = duplicate_sheet(&groups).rows().to_vec();
        // Deterministic shuffle from the seed.
        let mut state = seed | 1;
        for i in (1..rows.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            rows.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let shuffled = consistency(&ExpertLabelSheet::new(rows).unwrap(), "e").unwrap();
        prop_assert_eq!(reference, shuffled);
        let same = groups.iter().filter(|g| g.iter().all(|l| l % 3 == g[0] % 3)).count();
        prop_assert_eq!(reference, same as f64 / groups.len() as f64);
    }

    #[test]
    fn detection_rate_grows_with_cutoff(
        scores in vec(0.0..1.0f64, 20..120),
        picks in vec(any::<prop::sample::Index>(), 1..10),
    ) {
        let n = scores.len();
        let rows: Vec<Vec<f64>> = scores.iter().map(|s| vec![*s]).collect();
        let clean = dataset(rows.clone());
        let mut dirty_rows = rows;
        for p in &picks {
            dirty_rows[p.index(n)][0] += 10.0;
        }
        let dirty = dataset(dirty_rows);
        let truth = diff_datasets(&dirty, &clean, 1e-9).unwrap();
        let ranking = rank(dirty.ids(), &scores, Method::Lof).unwrap();
        let cutoffs: Vec<f64> = (1..=19).map(|c| c as f64 * 5.0).collect();
        let rates = detection_rate(&ranking, &truth, &cutoffs).unwrap();
        for w in rates.windows(2) {
            prop_assert!(w[0].detected <= w[1].detected);
            prop_assert!(w[0].rate <= w[1].rate);
        }
        for r in &rates {
            prop_assert_eq!(r.total, truth.len());
        }
    }

    #[test]
    fn spearman_matches_pearson_of_average_ranks(
        pairs in vec((0i32..8, -20.0..20.0f64), 3..40),
    ) {
        // Small integer range for x forces ties.
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (rx, ry) = (counting_ranks(&x), counting_ranks(&y));
        let constant = |r: &[f64]| r.iter().all(|v| *v == r[0]);
        match spearman_rho(&x, &y) {
            None => prop_assert!(constant(&rx) || constant(&ry)),
            Some(rho) => {
                let want = pearson(&rx, &ry);
                prop_assert!((rho - want).abs() <= 1e-12, "{rho} vs {want}");
            }
        }
    }
}
