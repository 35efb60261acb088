use polyalloc::beta::FourParamBeta;
use polyalloc::polytope::{flat_dirichlet, gen_random_halfspaces};
use polyalloc::sampler::{self, ConstantShapes, EntityOrder};
use polyalloc::{lp, rng_from_seed, Polytope};
use proptest::prelude::*;

fn random_polytope() -> impl Strategy<Value = Polytope> {
    (2usize..7, 0usize..5, any::<u64>()).prop_map(|(n, k, seed)| gen_random_halfspaces(n, k, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_are_feasible(p in random_polytope(), seed in any::<u64>(), a in 0.2f64..5.0, b in 0.2f64..5.0) {
        let shapes = ConstantShapes::uniform(p.n(), a, b);
        let mut rng = rng_from_seed(seed);
        for _ in 0..20 {
            let s = sampler::sample(&p, &shapes, &[], &mut rng).unwrap();
            prop_assert!(p.max_violation(&s.action).unwrap() <= 1e-9);
            prop_assert!((s.action.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, iv) in s.action.iter().zip(&s.intervals) {
                prop_assert!(*x >= iv.lo && *x <= iv.hi);
            }
        }
    }

    #[test]
    fn log_prob_replays(p in random_polytope(), seed in any::<u64>()) {
        let shapes = ConstantShapes::uniform(p.n(), 1.7, 0.6);
        let s = sampler::sample(&p, &shapes, &[], &mut rng_from_seed(seed)).unwrap();
        let cached = sampler::log_prob(&p, &shapes, &[], &s.action, Some(&s.intervals)).unwrap();
        prop_assert_eq!(cached.to_bits(), s.joint_logp.to_bits());
        let fresh = sampler::log_prob(&p, &shapes, &[], &s.action, None).unwrap();
        prop_assert!((fresh - s.joint_logp).abs() < 1e-8);
    }

    #[test]
    fn reduction_matches_direct_arithmetic(p in random_polytope(), seed in any::<u64>()) {
        let x = sampler::sample(&p, &ConstantShapes::flat(p.n()), &[], &mut rng_from_seed(seed)).unwrap().action;
        let mut system = p.root();
        for (i, &xi) in x.iter().take(p.n() - 1).enumerate() {
            system = system.reduce(xi);
            for k in 0..p.m() {
                let expected = p.limits()[k] - (0..=i).map(|j| p.coeff(k, j) * x[j]).sum::<f64>();
                prop_assert!((system.live_limits()[k] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounds_contain_every_feasible_point(p in random_polytope(), seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        for _ in 0..50 {
            let x = flat_dirichlet(&mut rng, p.n());
            if !p.contains(&x, 0.0) {
                continue;
            }
            let b = lp::bounds(&p.root(), 0).unwrap();
            prop_assert!(x[0] >= b.lo - 1e-9 && x[0] <= b.hi + 1e-9);
        }
    }

    #[test]
    fn polytope_json_round_trip(p in random_polytope()) {
        let back = Polytope::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.hash_hex(), p.hash_hex());
    }

    #[test]
    fn reversed_order_round_trip(p in random_polytope(), seed in any::<u64>()) {
        let order = EntityOrder::Reversed;
        let q = order.arrange(&p).unwrap();
        let s = sampler::sample(&q, &ConstantShapes::flat(p.n()), &[], &mut rng_from_seed(seed)).unwrap();
        let entities = order.to_entities(&s.action);
        prop_assert!(p.max_violation(&entities).unwrap() <= 1e-9);
        prop_assert_eq!(order.to_sampling(&entities), s.action);
    }

    #[test]
    fn beta_affine_equivariance(a in 0.3f64..8.0, b in 0.3f64..8.0, lo in -2.0f64..1.0, w in 0.01f64..3.0, u in 0.001f64..0.999) {
        let d = FourParamBeta::new(a, b, lo, lo + w).unwrap();
        let unit = FourParamBeta::new(a, b, 0.0, 1.0).unwrap();
        let x = lo + u * w;
        let lhs = d.log_pdf(x).unwrap();
        let rhs = unit.log_pdf((x - lo) / w).unwrap() - w.ln();
        prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()));
        prop_assert!((d.entropy() - unit.entropy() - w.ln()).abs() < 1e-10);
    }
}
