mod common;

use privbound::bounds::{allocate_epsilon, lower_bound_frl, upper_bound, Variant};
use privbound::mechanisms::{
    compose_multiuser, decompose_transform, efrl_construct, evaluate_component, evaluate_composed, evaluate_monolithic,
    frl_construct, materialize, per_component_transform, Kernel,
};
use privbound::model::{validate, Problem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_kernel(rng: &mut ChaCha8Rng, nx: usize, ny: usize, nu: usize) -> Kernel {
    let table = (0..nx * ny).flat_map(|_| common::weights(rng, nu)).collect();
    Kernel::new(nx, ny, nu, table).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn frl_guarantees(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = common::component(&mut rng, "c", 6);
        let k = frl_construct(&c);
        let e = evaluate_component(&c, &k).unwrap();
        prop_assert!(e.leakage.abs() <= 1e-9, "I(X;U) = {}", e.leakage);
        prop_assert!(e.h_y_given_xu.abs() <= 1e-9, "H(Y|X,U) = {}", e.h_y_given_xu);
        prop_assert!(k.nu() <= c.nx() * (c.ny() - 1) + 1);
    }

    #[test]
    fn efrl_spends_the_budget(seed in any::<u64>(), t in 0.0..0.999f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = common::component(&mut rng, "c", 5);
        let eps = t * c.mi();
        let e = evaluate_component(&c, &efrl_construct(&c, eps).unwrap()).unwrap();
        prop_assert!((e.leakage - eps).abs() <= 1e-9);
        prop_assert!(e.utility >= c.h_y_given_x() - c.h_x_given_y() + eps - 1e-9);
        prop_assert!(e.h_y_given_xu.abs() <= 1e-9);
    }

    #[test]
    fn composed_objective_between_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::problem(&mut rng, 3, 4);
        let a = validate(&p).unwrap();
        let alloc = allocate_epsilon(&p, &a, Variant::Frl).unwrap();
        prop_assume!(alloc.overflow == 0.0);
        let obj = evaluate_composed(&p, &compose_multiuser(&p, &alloc).unwrap()).unwrap().objective;
        prop_assert!(obj >= lower_bound_frl(&p, &a).unwrap() - 1e-9);
        prop_assert!(obj <= upper_bound(&p, &a).unwrap() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composed_and_monolithic_paths_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::problem(&mut rng, 2, 3);
        let a = validate(&p).unwrap();
        let m = compose_multiuser(&p, &allocate_epsilon(&p, &a, Variant::Frl).unwrap()).unwrap();
        let composed = evaluate_composed(&p, &m).unwrap();
        let mono = evaluate_monolithic(&p, &materialize(&p, &m).unwrap()).unwrap();
        prop_assert!((composed.leakage - mono.leakage).abs() <= 1e-9);
        prop_assert!((composed.objective - mono.objective).abs() <= 1e-9);
        for (x, y) in composed.user_utilities.iter().zip(&mono.user_utilities) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn transforms_preserve_leakage_on_arbitrary_kernels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=2);
        let comps = (0..n).map(|i| common::component(&mut rng, &format!("c{i}"), 3)).collect();
        let p = Problem::new(comps, common::users(&mut rng, n), 0.0).unwrap();
        let (nx, ny) = p.components().iter().fold((1, 1), |(a, b), c| (a * c.nx(), b * c.ny()));
        let nu = rng.gen_range(1..=4);
        let k = random_kernel(&mut rng, nx, ny, nu);
        let dec = decompose_transform(&p, &k).unwrap();
        prop_assert!(dec.checks.passes(1e-9), "{:?}", dec.checks);
        let t = per_component_transform(&p, &k).unwrap();
        prop_assert!(t.checks.passes(1e-9), "{:?}", t.checks);
    }
}
