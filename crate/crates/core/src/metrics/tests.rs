use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use StageLabel::*;

pub(crate) const SLEEP_EDF_TABLE: [[u64; 5]; 5] = [
    [3403, 322, 230, 32, 522],
    [441, 880, 725, 9, 707],
    [230, 263, 15263, 795, 1026],
    [65, 0, 658, 4850, 18],
    [154, 114, 457, 3, 6983],
];

const MASS_TABLE: [[u64; 5]; 5] = [
    [26261, 2148, 1450, 72, 1112],
    [2924, 7948, 5498, 22, 2965],
    [759, 3429, 95486, 4849, 3395],
    [30, 13, 6098, 24223, 18],
    [466, 872, 1353, 6, 37473],
];

fn cm(rows: &[[u64; 5]; 5]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn check_printed(m: &ConfusionMatrix, sens: [f64; 5], sel: [f64; 5], acc: f64) {
    let r = class_rates(m);
    for c in 0..5 {
        let s = 100.0 * r.sensitivity[c].unwrap();
        let p = 100.0 * r.selectivity[c].unwrap();
        assert!((s - sens[c]).abs() <= 0.05, "class {c}: sensitivity {s} vs {}", sens[c]);
        assert!((p - sel[c]).abs() <= 0.05, "class {c}: selectivity {p} vs {}", sel[c]);
    }
    let a = 100.0 * overall_accuracy(m).unwrap();
    assert!((a - acc).abs() <= 0.05, "accuracy {a} vs {acc}");
}

#[test]
fn printed_class_rates_are_reproduced_with_rows_as_truth() {
    check_printed(
        &cm(&SLEEP_EDF_TABLE),
        [75.5, 31.9, 86.8, 86.7, 90.6],
        [79.3, 55.7, 88.1, 85.3, 75.4],
        82.3,
    );
    check_printed(
        &cm(&MASS_TABLE),
        [84.6, 41.1, 88.5, 79.7, 93.3],
        [86.3, 55.2, 86.9, 83.0, 83.3],
        83.6,
    );
}

#[test]
fn columns_as_truth_would_not_match() {
    let r = class_rates(&cm(&SLEEP_EDF_TABLE));
    // reading the table transposed swaps the two rates
    assert!((100.0 * r.selectivity[0].unwrap() - 75.5).abs() > 1.0);
}

#[test]
fn confusion_examples() {
    let t = vec![W, N1, N2, N3, Rem, W, N1, N2, N3, Rem];
    let c = confusion(&t, &t).unwrap();
    assert_eq!(c.trace(), 10);
    let c = confusion(&[W, W], &[N1, N1]).unwrap();
    assert_eq!(c.get(0, 1), 2);
    assert_eq!(c.total(), 2);
    assert!(confusion(&[W], &[]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draw = |rng: &mut ChaCha8Rng| StageLabel::ALL[rng.gen_range(0..5)];
    let truth: Vec<StageLabel> = (0..200).map(|_| draw(&mut rng)).collect();
    let pred: Vec<StageLabel> = (0..200).map(|_| draw(&mut rng)).collect();
    let c = confusion(&truth, &pred).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            let n = truth
                .iter()
                .zip(&pred)
                .filter(|(x, y)| x.index() == a && y.index() == b)
                .count() as u64;
            assert_eq!(c.get(a, b), n);
        }
    }
}

#[test]
fn two_class_rates() {
    let m = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
    let r = class_rates(&m);
    assert_eq!(r.sensitivity, vec![Some(0.8), Some(0.9)]);
    assert_eq!(r.selectivity, vec![Some(8.0 / 9.0), Some(9.0 / 11.0)]);
    assert_eq!(r.specificity, vec![Some(0.9), Some(0.8)]);
}

#[test]
fn identity_matrix_is_perfect() {
    let mut m = ConfusionMatrix::new(5);
    for c in 0..5 {
        m.add(c, c);
    }
    let r = class_rates(&m);
    assert!(r
        .sensitivity
        .iter()
        .chain(&r.selectivity)
        .chain(&r.specificity)
        .all(|v| *v == Some(1.0)));
    assert_eq!(kappa(&m), Some(1.0));
    assert_eq!(macro_f1(&m).unwrap().value, 1.0);
}

#[test]
fn undefined_rates_are_marked() {
    let m = ConfusionMatrix::from_rows(&[vec![3, 0], vec![2, 0]]).unwrap();
    let r = class_rates(&m);
    assert_eq!(r.selectivity[1], None);
    assert_eq!(mean_defined(&r.selectivity), None);
    let f = macro_f1(&m).unwrap();
    assert_eq!(f.per_class[1], 0.0);
    assert_eq!(f.flagged, vec![1]);
    assert!((f.value - (6.0 / 8.0) / 2.0).abs() < 1e-15);
    assert!(macro_f1(&ConfusionMatrix::new(2)).is_err());
    let single = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap();
    assert_eq!(kappa(&single), None);
    assert_eq!(kappa(&ConfusionMatrix::new(3)), None);
}

#[test]
fn kappa_examples() {
    let m = ConfusionMatrix::from_rows(&[vec![25, 25], vec![25, 25]]).unwrap();
    assert!(kappa(&m).unwrap().abs() < 1e-15);
    let m = ConfusionMatrix::from_rows(&[vec![40, 10], vec![20, 30]]).unwrap();
    assert!((kappa(&m).unwrap() - 0.4).abs() < 1e-12);
    let f = macro_f1(&m).unwrap();
    let f1a = 40.0 / (40.0 + 0.5 * 30.0);
    let f1b = 30.0 / (30.0 + 0.5 * 30.0);
    assert!((f.value - (f1a + f1b) / 2.0).abs() < 1e-15);
    assert!(f.flagged.is_empty());
}

#[test]
fn kappa_vanishes_for_rows_proportional_to_column_marginals() {
    let m = ConfusionMatrix::from_rows(&[vec![2, 4, 6], vec![1, 2, 3], vec![3, 6, 9]]).unwrap();
    assert!(kappa(&m).unwrap().abs() < 1e-12);
}

fn permute(m: &ConfusionMatrix, perm: &[usize]) -> ConfusionMatrix {
    let y = m.n_classes();
    let mut out = ConfusionMatrix::new(y);
    for t in 0..y {
        for p in 0..y {
            for _ in 0..m.get(t, p) {
                out.add(perm[t], perm[p]);
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(cells in proptest::collection::vec(0u64..50, 25)) {
        let rows: Vec<Vec<u64>> = cells.chunks(5).map(<[u64]>::to_vec).collect();
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        let total: u64 = cells.iter().sum();
        match overall_accuracy(&m) {
            Some(a) => prop_assert!((a - m.trace() as f64 / total as f64).abs() < 1e-15),
            None => prop_assert_eq!(total, 0),
        }
        if total > 0 {
            let off: u64 = total - m.trace();
            if let Some(k) = kappa(&m) {
                prop_assert_eq!(off == 0, (k - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_relabeling_preserves_summary_scores(
        cells in proptest::collection::vec(1u64..30, 25), shift in 1usize..5,
    ) {
        let rows: Vec<Vec<u64>> = cells.chunks(5).map(<[u64]>::to_vec).collect();
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        let perm: Vec<usize> = (0..5).map(|c| (c + shift) % 5).collect();
        let q = permute(&m, &perm);
        prop_assert!((overall_accuracy(&m).unwrap() - overall_accuracy(&q).unwrap()).abs() < 1e-12);
        prop_assert!((kappa(&m).unwrap() - kappa(&q).unwrap()).abs() < 1e-12);
        prop_assert!((macro_f1(&m).unwrap().value - macro_f1(&q).unwrap().value).abs() < 1e-12);
    }
}

#[test]
fn transition_masks() {
    assert_eq!(stratify_transitions(&[N2, N2, N2, N2]), vec![false, true, true, false]);
    assert_eq!(stratify_transitions(&[W, N1, W]), vec![false; 3]);
    assert!(stratify_transitions(&[]).is_empty());
    assert_eq!(stratify_transitions(&[N3]), vec![false]);
}

#[test]
fn report_strata_partition_the_epochs() {
    let truth = vec![W, W, W, N1, N2, N2, N2, N2, Rem, Rem];
    let pred = vec![W, N1, W, N1, N2, N2, N3, N2, Rem, W];
    let t2 = vec![N3, N3, N3];
    let p2 = vec![N3, N2, N3];
    let r = EvalReport::evaluate(&[(&truth, &pred), (&t2, &p2)]).unwrap();
    let s = r.strata.as_ref().unwrap();
    assert_eq!(r.n_epochs, 13);
    assert_eq!(s.non_transition.n_epochs + s.transition.n_epochs, 13);
    // non-transition epochs: index 1, 5, 6 of the first, index 1 of the second
    assert_eq!(s.non_transition.n_epochs, 4);
    assert_eq!(s.non_transition.confusion.trace(), 1);
    let text = r.to_text();
    assert!(text.contains("[non_transition]"));
    assert!(text.contains("overall_accuracy: "));
    let csv = r.to_csv();
    assert!(csv.starts_with("section,metric,class,value\n"));
    assert!(csv.contains("all,epochs,,13\n"));
    assert!(csv.contains("all,confusion,W>N1,1\n"));
    assert!(EvalReport::evaluate(&[(&truth, &p2)]).is_err());
}

#[test]
fn report_marks_undefined_values() {
    let r = EvalReport::from_confusion(confusion(&[W, W], &[W, N1]).unwrap());
    assert_eq!(r.mean_sensitivity, None);
    assert!(r.to_text().contains("undefined"));
    assert!(r.to_text().contains("degenerate classes: N1 N2 N3 REM"));
}
