use molalign_core::encoder::Matrix;
use molalign_core::eval::{ranks, report, similarity_matrix, Direction, RECALL_KS};
use proptest::prelude::*;

/// Rank of the diagonal entry by sorting candidates with a stable key.
fn rank_by_sorting(sim: &Matrix, i: usize) -> usize {
    let mut order: Vec<usize> = (0..sim.cols()).collect();
    // Higher score first; on equal scores the lower index wins.
    order.sort_by(|&a, &b| sim.get(i, b).total_cmp(&sim.get(i, a)).then(a.cmp(&b)));
    1 + order.iter().position(|&j| j == i).unwrap()
}

fn matrix(max_n: usize) -> impl Strategy<Value = Matrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0u8..8, n * n).prop_map(move |v| Matrix::from_vec(n, n, v.into_iter().map(f64::from).collect()))
    })
}

proptest! {
    #[test]
    fn ranks_match_a_sorting_oracle(sim in matrix(25)) {
        let r = ranks(&sim);
        for (i, &rank) in r.iter().enumerate() {
            prop_assert_eq!(rank, rank_by_sorting(&sim, i));
        }
    }

    #[test]
    fn metrics_are_bounded_and_ordered(sim in matrix(30)) {
        let rep = report(&sim, Direction::Mol2Text);
        let recalls: Vec<f64> = RECALL_KS.iter().map(|k| rep.recall_at[k]).collect();
        prop_assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(rep.mrr >= recalls[0]);
        prop_assert!(recalls.iter().chain([&rep.mrr]).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mrr_matches_its_definition(sim in matrix(20)) {
        let n = sim.rows();
        let want: f64 = (0..n).map(|i| 1.0 / rank_by_sorting(&sim, i) as f64).sum::<f64>() / n as f64;
        prop_assert!((report(&sim, Direction::Text2Mol).mrr - want).abs() < 1e-12);
    }

    #[test]
    fn increasing_maps_leave_metrics_unchanged(sim in matrix(20), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let base = report(&sim, Direction::Mol2Text);
        prop_assert_eq!(report(&sim.map(|x| a * x + b), Direction::Mol2Text), base.clone());
        prop_assert_eq!(report(&sim.map(|x| (x / 3.0).exp()), Direction::Mol2Text), base);
    }
}

#[test]
fn identity_best_scores_one_everywhere() {
    let n = 30;
    let mut sim = Matrix::filled(n, n, 0.2);
    for i in 0..n {
        sim.set(i, i, 0.9);
    }
    let rep = report(&sim, Direction::Mol2Text);
    assert!(rep.recall_at.values().all(|&v| v == 1.0));
    assert_eq!(rep.mrr, 1.0);
}

#[test]
fn zero_vectors_score_zero() {
    let sim = similarity_matrix(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[vec![1.0, 1.0], vec![0.0, 2.0]]);
    assert_eq!(sim.row(0), &[0.0, 0.0]);
    assert!((sim.get(1, 0) - 0.5f64.sqrt()).abs() < 1e-15);
}
