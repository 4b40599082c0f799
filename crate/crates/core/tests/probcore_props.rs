mod common;

use privbound::probcore::{
    conditional_entropy, entropy_of, mi_between, mutual_information, product_join, Axis, Joint2, JointN,
    DEFAULT_SIZE_CAP,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn joint(seed: u64) -> Joint2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
    Joint2::from_rows(&common::joint_rows_any(&mut rng, nx, ny)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chain_rule(seed in any::<u64>()) {
        let j = joint(seed);
        let h = j.joint_entropy();
        prop_assert!((h - j.row_entropy() - conditional_entropy(&j, Axis::Rows)).abs() <= 1e-12);
        prop_assert!((h - j.col_entropy() - conditional_entropy(&j, Axis::Cols)).abs() <= 1e-12);
    }

    #[test]
    fn mutual_information_is_bounded(seed in any::<u64>()) {
        let j = joint(seed);
        let i = mutual_information(&j);
        prop_assert!(i >= -1e-12);
        prop_assert!(i <= j.row_entropy().min(j.col_entropy()) + 1e-12);
        prop_assert!((i - mutual_information(&j.transpose())).abs() <= 1e-12);
    }

    #[test]
    fn entropy_ignores_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=12);
        let mut p = common::weights(&mut rng, n);
        let h = entropy_of(&p);
        p.shuffle(&mut rng);
        prop_assert!((h - entropy_of(&p)).abs() <= 1e-12);
    }

    #[test]
    fn product_parts_are_independent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(2..=3);
        let parts: Vec<JointN> = (0..k).map(|_| JointN::from_joint2(&joint(rng.gen()))).collect();
        let t = product_join(&parts, DEFAULT_SIZE_CAP).unwrap();
        let total: f64 = parts.iter().map(JointN::entropy).sum();
        prop_assert!((t.entropy() - total).abs() <= 1e-12);
        for a in 0..k {
            for b in a + 1..k {
                let mi = mi_between(&t, &[2 * a, 2 * a + 1], &[2 * b, 2 * b + 1]).unwrap();
                prop_assert!(mi.abs() <= 1e-12, "parts {a},{b}: {mi}");
            }
        }
    }
}
