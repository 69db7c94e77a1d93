mod common;

use avsel::attention::{select_track, selection_ce_loss, softmax_over_tracks, weighted_visual};
use avsel::autodiff::Tensor;
use common::*;
use proptest::prelude::*;

fn scores(max_m: usize, bound: f64) -> impl Strategy<Value = Tensor> {
    (1..=max_m, 1usize..6).prop_flat_map(move |(m, t)| {
        prop::collection::vec(-bound..bound, t * m).prop_map(move |d| Tensor::new(&[1, t, m], d).unwrap())
    })
}

proptest! {
    #[test]
    fn alpha_rows_sum_to_one(s in scores(8, 1e4)) {
        let m = s.shape()[2];
        for row in softmax_over_tracks(&s).data().chunks(m) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn argmax_ignores_monotone_rescaling(s in scores(8, 50.0), a in 0.01f64..100.0, b in -100f64..100.0) {
        let moved = s.map(|v| a * v.powi(3) + b);
        prop_assert_eq!(select_track(&moved).unwrap(), select_track(&s).unwrap());
    }

    #[test]
    fn rotating_tracks_rotates_alpha(s in scores(8, 20.0), shift in 0usize..8) {
        let m = s.shape()[2];
        let rot = |x: &Tensor| {
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(m) {
                row.rotate_left(shift % m);
            }
            out
        };
        let (a, a_rot) = (softmax_over_tracks(&s), softmax_over_tracks(&rot(&s)));
        for (x, y) in rot(&a).data().iter().zip(a_rot.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_alpha_copies_the_chosen_track(m in 1usize..8, pick in 0usize..8, v in prop::collection::vec(-5f64..5.0, 8 * 3 * 2)) {
        let pick = pick % m;
        let mut alpha = Tensor::zeros(&[1, 3, m]);
        for row in alpha.data_mut().chunks_mut(m) {
            row[pick] = 1.0;
        }
        let v = Tensor::new(&[m, 3, 2], v[..m * 6].to_vec()).unwrap();
        let out = weighted_visual(&alpha, &v).unwrap();
        prop_assert_eq!(out.data(), &v.data()[pick * 6..(pick + 1) * 6]);
    }

    #[test]
    fn selection_ce_is_nonnegative(s in scores(1, 1.0), m in 2usize..6) {
        let t = s.shape()[1];
        let logits: Vec<f64> = (0..m * t * m).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let alpha = softmax_over_tracks(&Tensor::new(&[m, t, m], logits).unwrap());
        prop_assert!(selection_ce_loss(&alpha).unwrap() >= 0.0);
    }
}

#[test]
fn extreme_scores_keep_alpha_normalized() {
    assert!(alpha_row_sum_error(200, 1e4) < 1e-6);
    assert!(alpha_row_sum_error(50, 1e300) < 1e-6);
}

#[test]
fn select_track_survives_increasing_transforms() {
    assert!(select_track_transform_invariant(200).unwrap());
}

#[test]
fn track_permutation_equivariance() {
    let err = permutation_error(100).unwrap();
    assert!(err < 1e-12, "{err:e}");
}

#[test]
fn uniform_alpha_costs_ln_m() {
    for (m, err) in uniform_ce_errors(&[2, 4, 8]).unwrap() {
        assert!(err < 1e-9, "M = {m}: {err:e}");
    }
}
