use std::path::Path;

use cmta::data::{cmtm, kfold_split, load_cohort, Matrix};
use cmta::survival::{compute_bins, concordance_index, kaplan_meier, stratify, RiskGroup, SurvivalOutput};
use cmta::Tensor;
use proptest::prelude::*;

fn cohort_strategy(max: usize) -> impl Strategy<Value = Vec<(f64, f64, bool)>> {
    prop::collection::vec((-5.0f64..5.0, 0.1f64..50.0, any::<bool>()), 2..max)
}

proptest! {
    #[test]
    fn cindex_invariant_under_monotone_risk_transform(rows in cohort_strategy(20)) {
        let risks: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let cens: Vec<bool> = rows.iter().map(|r| r.2).collect();
        if let Ok(c) = concordance_index(&risks, &times, &cens) {
            let squashed: Vec<f64> = risks.iter().map(|r| 3.0 * r.tanh() + 1.0).collect();
            prop_assert_eq!(concordance_index(&squashed, &times, &cens).unwrap(), c);
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn cindex_of_reversed_risks_is_complement(rows in cohort_strategy(20)) {
        let mut risks: Vec<f64> = rows.iter().map(|r| r.0).collect();
        risks.iter_mut().enumerate().for_each(|(i, r)| *r += i as f64 * 1e-9);
        let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let cens: Vec<bool> = rows.iter().map(|r| r.2).collect();
        if let Ok(c) = concordance_index(&risks, &times, &cens) {
            let neg: Vec<f64> = risks.iter().map(|r| -r).collect();
            let c_neg = concordance_index(&neg, &times, &cens).unwrap();
            prop_assert!((c + c_neg - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn km_is_a_non_increasing_probability(rows in cohort_strategy(30)) {
        let times: Vec<f64> = rows.iter().map(|r| (r.1 * 2.0).round() / 2.0).collect();
        let cens: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let km = kaplan_meier(&times, &cens).unwrap();
        prop_assert!(km.survival.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(km.survival.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(km.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(km.at_risk[0], times.len());
        prop_assert_eq!(km.events.iter().sum::<usize>(), cens.iter().filter(|c| !**c).count());
    }

    #[test]
    fn folds_partition_the_cohort(n in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; n];
        for f in &folds {
            f.test.iter().for_each(|&i| seen[i] += 1);
            prop_assert_eq!(f.train.len() + f.test.len(), n);
            prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(sizes[0] - sizes[k - 1] <= 1);
    }

    #[test]
    fn median_split_puts_at_most_half_high(risks in prop::collection::vec(-3.0f64..3.0, 2..40)) {
        let groups = stratify(&risks).unwrap();
        let high = groups.iter().filter(|g| **g == RiskGroup::High).count();
        prop_assert!(2 * high <= risks.len());
        for (i, gi) in groups.iter().enumerate() {
            for (j, gj) in groups.iter().enumerate() {
                if *gi == RiskGroup::High && *gj == RiskGroup::Low {
                    prop_assert!(risks[i] > risks[j]);
                }
            }
        }
    }

    #[test]
    fn survival_output_is_consistent(h in prop::collection::vec(0.0f64..1.0, 1..10)) {
        let s = SurvivalOutput::from_hazards(h.clone());
        prop_assert!(s.survival.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(s.risk <= 0.0 && s.risk >= -(h.len() as f64));
    }

    #[test]
    fn bin_assignment_is_monotone(times in prop::collection::vec(0.1f64..100.0, 8..30), probe in prop::collection::vec(0.0f64..120.0, 2..10)) {
        let cens = vec![false; times.len()];
        if let Ok(edges) = compute_bins(&times, &cens, 4) {
            let mut probe = probe;
            probe.sort_by(f64::total_cmp);
            let bins: Vec<usize> = probe.iter().map(|&t| edges.bin_of(t)).collect();
            prop_assert!(bins.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(bins.iter().all(|&b| b < 4));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-30.0f64..30.0, 12)) {
        let s = Tensor::new(data, &[3, 4]).unwrap().softmax(1).unwrap();
        for row in s.values().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn cmtm_round_trips_f32_values(rows in 1usize..6, cols in 1usize..6, seed in any::<u32>()) {
        let data: Vec<f64> = (0..rows * cols).map(|i| f32::from_bits(seed.wrapping_add(i as u32 * 7919) % 0x7f00_0000) as f64).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let back = cmtm::decode(&cmtm::encode(&m).unwrap(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn corrupted_matrix_bytes_never_yield_invalid_records(flip in 0usize..40, byte in any::<u8>(), cut in 0usize..40) {
        let m = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, 3.25, 0.0, 1.5]).unwrap();
        let mut bytes = cmtm::encode(&m).unwrap();
        let i = flip % bytes.len();
        bytes[i] = byte;
        bytes.truncate(bytes.len() - cut.min(bytes.len()) / 4);
        if let Ok(back) = cmtm::decode(&bytes, Path::new("mem")) {
            prop_assert!(back.rows >= 1 && back.cols >= 1);
            prop_assert_eq!(back.data.len(), back.rows * back.cols);
            prop_assert!(back.data.iter().all(|v| v.is_finite()));
        }
    }
}

fn manifest_line(id: &str, time: f64, censored: bool, genomics: &[&str]) -> String {
    serde_json::json!({
        "patient_id": id,
        "time_months": time,
        "censored": censored,
        "pathology_file": "p.cmtm",
        "genomics_files": genomics,
    })
    .to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Manifests with arbitrary times, flags, ids and group layouts either load
    // into records satisfying every invariant or fail with an error.
    #[test]
    fn fuzzed_manifests_load_valid_records_or_fail(
        entries in prop::collection::vec((0usize..4, prop::num::f64::ANY, any::<bool>(), 0usize..3), 0..6),
    ) {
        let dir = tempfile::tempdir().unwrap();
        cmtm::write_matrix(&dir.path().join("p.cmtm"), &Matrix::new(3, 4, vec![0.25; 12]).unwrap()).unwrap();
        cmtm::write_matrix(&dir.path().join("g1.cmtm"), &Matrix::new(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        cmtm::write_matrix(&dir.path().join("g2.cmtm"), &Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        cmtm::write_matrix(&dir.path().join("bad.cmtm"), &Matrix::new(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        let layouts: [&[&str]; 3] = [&["g1.cmtm"], &["g1.cmtm", "g2.cmtm"], &["bad.cmtm"]];
        let text: String = entries
            .iter()
            .map(|&(id, t, c, layout)| {
                let t = if t.is_finite() { t } else { 1.0 };
                manifest_line(&format!("P{id}"), t, c, layouts[layout]) + "\n"
            })
            .collect();
        let manifest = dir.path().join("manifest.jsonl");
        std::fs::write(&manifest, text).unwrap();
        if let Ok(cohort) = load_cohort(&manifest) {
            let ids: std::collections::HashSet<_> = cohort.records().iter().map(|r| r.patient_id.clone()).collect();
            prop_assert_eq!(ids.len(), cohort.len());
            let widths = cohort.genomic_widths();
            for r in cohort.records() {
                prop_assert!(r.validate().is_ok());
                prop_assert!(r.time_months > 0.0 && r.time_months.is_finite());
                prop_assert_eq!(r.genomic_widths(), widths.clone());
                prop_assert_eq!(r.pathology.rows, 3);
            }
        }
    }
}
