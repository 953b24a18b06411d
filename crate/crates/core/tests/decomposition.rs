use cnn_redundancy::decomposition::*;
use cnn_redundancy::tensor::relative_error;
use proptest::prelude::*;

fn shape_and_ranks() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, u64)> {
    proptest::collection::vec((1usize..=3, 0usize..=3), 2..=4).prop_flat_map(|dims| {
        let ranks: Vec<usize> = dims.iter().map(|&(r, _)| r).collect();
        let shape: Vec<usize> = dims.iter().map(|&(r, extra)| r + extra).collect();
        (Just(shape), Just(ranks), any::<u64>())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hosvd_is_exact_at_the_generating_ranks((shape, ranks, seed) in shape_and_ranks()) {
        let t = random_tucker(&shape, &ranks, seed).unwrap().reconstruct();
        let f = hosvd(&t, &ranks).unwrap();
        prop_assert!(tucker_error(&t, &f) <= 1e-10, "error {}", tucker_error(&t, &f));
    }

    #[test]
    fn hooi_never_increases_error((shape, ranks, seed) in shape_and_ranks()) {
        let t = random_tucker(&shape, &shape, seed).unwrap().reconstruct();
        let init = hosvd(&t, &ranks).unwrap();
        let res = hooi_refine(&t, &init, 20, 1e-14).unwrap();
        for w in res.errors.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!((tucker_error(&t, &res.form) - *res.errors.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cp_reconstruction_is_multilinear_in_weights(seed in any::<u64>(), s in -3.0f64..3.0) {
        let cp = random_cp(&[3, 4, 2], 2, seed).unwrap();
        let scaled = CpForm::new(cp.weights.iter().map(|w| w * s).collect(), cp.factors.clone()).unwrap();
        let expect = cp.reconstruct().scale(s);
        prop_assert!(relative_error(&scaled.reconstruct(), &expect).unwrap() <= 1e-12);
    }
}

#[test]
fn cp_als_recovers_generic_low_rank_tensors() {
    for (i, (shape, rank)) in [(vec![4, 5, 4], 3), (vec![6, 6, 6], 5), (vec![3, 4, 5, 3], 3), (vec![8, 9, 8], 8)]
        .into_iter()
        .enumerate()
    {
        let t = random_cp(&shape, rank, 40 + i as u64).unwrap().reconstruct();
        let fit = cp_als(&t, rank, CpAlsOptions { seed: i as u64, ..CpAlsOptions::default() }).unwrap();
        assert!(fit.fit >= 1.0 - 1e-6, "shape {shape:?} rank {rank}: fit {}", fit.fit);
        assert_eq!(fit.start_fits.len(), 5);
        assert!(!fit.rank_warning);
    }
}

#[test]
fn cp_als_is_deterministic_for_a_seed() {
    let t = random_cp(&[4, 4, 4], 3, 1).unwrap().reconstruct();
    let opts = CpAlsOptions { seed: 9, restarts: 3, ..CpAlsOptions::default() };
    let a = cp_als(&t, 3, opts).unwrap();
    let b = cp_als(&t, 3, opts).unwrap();
    assert_eq!(a.start_fits, b.start_fits);
    assert_eq!(a.form.reconstruct(), b.form.reconstruct());
}

#[test]
fn tucker_with_full_ranks_is_lossless() {
    let t = random_cp(&[3, 5, 2], 2, 2).unwrap().reconstruct();
    let f = hosvd(&t, &[3, 5, 2]).unwrap();
    assert!(tucker_error(&t, &f) <= 1e-12);
}
