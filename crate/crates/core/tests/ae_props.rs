use econsg_core::autoencoder::{ae_loss, MlpParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Relabelling queries consistently, or reordering rows, is invisible to
    /// the loss.
    #[test]
    fn loss_is_invariant_to_query_and_row_permutations(seed in any::<u64>(), k in 2usize..7, n in 1usize..12) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let params = MlpParams::<f64>::with_dims(&[d, 6, 3], &[3, 6, d], seed).unwrap();
        let queries: Vec<f64> = (0..k * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let features: Vec<f64> = (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let labels: Vec<u16> = (0..n).map(|_| r.random_range(0..k) as u16).collect();
        let base = ae_loss(&params, &features, &labels, &queries, 1.0).unwrap().loss;

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let mut q2 = vec![0.0; k * d];
        for (old, &new) in perm.iter().enumerate() {
            q2[new * d..(new + 1) * d].copy_from_slice(&queries[old * d..(old + 1) * d]);
        }
        let l2: Vec<u16> = labels.iter().map(|&l| perm[l as usize] as u16).collect();
        let relabelled = ae_loss(&params, &features, &l2, &q2, 1.0).unwrap().loss;
        prop_assert!((relabelled - base).abs() <= 1e-12 * base.abs().max(1.0));

        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut r);
        let f3: Vec<f64> = rows.iter().flat_map(|&i| features[i * d..(i + 1) * d].iter().copied()).collect();
        let l3: Vec<u16> = rows.iter().map(|&i| labels[i]).collect();
        let reordered = ae_loss(&params, &f3, &l3, &queries, 1.0).unwrap().loss;
        prop_assert!((reordered - base).abs() <= 1e-12 * base.abs().max(1.0));
    }
}
