mod common;

use polyalloc::debias::{self, DebiasTerms};
use polyalloc::envs::{ConstraintSpec, EnvSpec, SyntheticEnv};
use polyalloc::nn::{Activation, Mlp, PolicyNet};
use polyalloc::ppo::{gae, minibatch_gradients, TrainConfig, Trainer};
use polyalloc::sampler::{self, ConstantShapes, EntityOrder};
use polyalloc::{beta, rng_from_seed, Polytope};

/// Layer-by-layer matrix arithmetic, independent of `Mlp::forward`.
fn manual_forward(net: &Mlp, x: &[f64], acts: &[Activation]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for (l, act) in acts.iter().enumerate() {
        let (w, b) = net.layer_ranges(l);
        let (fan_in, fan_out) = (net.dims()[l], net.dims()[l + 1]);
        let wv = &net.params()[w];
        let bv = &net.params()[b];
        let mut next = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut z = bv[o];
            for i in 0..fan_in {
                z += wv[o * fan_in + i] * cur[i];
            }
            next[o] = match act {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
                Activation::Softplus => (1.0 + z.exp()).ln(),
            };
        }
        cur = next;
    }
    cur
}

#[test]
fn seeded_net_matches_golden_forward() {
    let acts = [Activation::Relu, Activation::Identity];
    let net = Mlp::init(&[3, 4, 2], &acts, &mut rng_from_seed(7), 1.0).unwrap();
    let x = [0.5, -1.0, 2.0];
    let y = net.forward(&x).unwrap();
    // recorded from a numpy evaluation of the same parameters
    let golden = [0.02357346482214432, -0.23180615860789772];
    for (a, g) in y.iter().zip(golden) {
        assert!((a - g).abs() < 1e-14);
    }
    for (a, m) in y.iter().zip(manual_forward(&net, &x, &acts)) {
        assert!((a - m).abs() < 1e-14);
    }
}

#[test]
fn synthetic_reward_is_a_plain_forward_pass() {
    let p = Polytope::simplex(4).unwrap();
    let env = SyntheticEnv::new(p, 1).unwrap();
    let a = [0.25; 4];
    let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
    for s in 0..2 {
        let mut x = vec![s as f64];
        x.extend_from_slice(&a);
        let expected = manual_forward(env.reward_net(), &x, &acts)[0];
        assert!((env.reward(s, &a) - expected).abs() < 1e-14);
    }
}

#[test]
fn grid_optimum_matches_brute_force() {
    let p = Polytope::simplex(3).unwrap();
    let env = SyntheticEnv::new(p, 1).unwrap();
    let (best, _) = env.grid_optimum(100);
    let mut per_state = [f64::NEG_INFINITY; 2];
    for i in 0..=100 {
        for j in 0..=100 - i {
            let a = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
            for (s, b) in per_state.iter_mut().enumerate() {
                *b = b.max(env.reward(s, &a));
            }
        }
    }
    assert!((best - per_state[0] - per_state[1]).abs() < 1e-12);
}

#[test]
fn gae_hand_example() {
    let r = [1.0, 2.0, 3.0];
    let v = [0.5, 0.5, 0.5];
    let (gamma, lambda) = (1.0, 0.95);
    let (adv, ret) = gae(&r, &v, &[false, false, false], 0.0, gamma, lambda);
    // explicit sum of discounted TD errors
    let next = [0.5, 0.5, 0.0];
    let delta: Vec<f64> = (0..3).map(|t| r[t] + gamma * next[t] - v[t]).collect();
    for t in 0..3 {
        let expected: f64 = (t..3).map(|l| (gamma * lambda).powi((l - t) as i32) * delta[l]).sum();
        assert!((adv[t] - expected).abs() < 1e-12);
        assert!((ret[t] - expected - v[t]).abs() < 1e-12);
    }
    assert!((adv[2] - 2.5).abs() < 1e-12);
    assert!((adv[1] - (2.0 + 0.95 * 2.5)).abs() < 1e-12);
}

#[test]
fn beta_log_pdf_closed_form() {
    let d = beta::FourParamBeta::new(2.0, 5.0, 0.0, 1.0).unwrap();
    let expected = (30.0 * 0.2 * 0.8f64.powi(4)).ln();
    assert!((d.log_pdf(0.2).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn entropy_matches_quadrature() {
    let d = beta::FourParamBeta::new(2.0, 5.0, 0.0, 1.0).unwrap();
    let h = common::tanh_sinh(1.0, |dl, dh| {
        let p = common::beta_density(2.0, 5.0, 1.0, dl, dh);
        -p * p.ln()
    });
    assert!((d.entropy() - h).abs() < 1e-6);
}

#[test]
fn empirical_entropy_of_flat_simplex() {
    // one flat 3-simplex draw: step entropies are ln(1) + ln(1 - a1), so the
    // batch mean approaches E[ln(1 - a1)] with a1 ~ Beta(1, 1)
    let p = Polytope::simplex(3).unwrap();
    let mut rng = rng_from_seed(12);
    let batch: Vec<_> = (0..40_000).map(|_| sampler::sample(&p, &ConstantShapes::flat(3), &[], &mut rng).unwrap()).collect();
    let oracle = common::tanh_sinh(1.0, |_, dh| dh.ln());
    assert!((oracle + 1.0).abs() < 1e-9);
    let h = sampler::empirical_entropy(&batch).unwrap();
    assert!((h - oracle).abs() < 0.02, "{h}");
}

#[test]
fn initialized_policy_is_near_uniform_on_seven_simplex() {
    let p = Polytope::simplex(7).unwrap();
    let terms = debias::fit(&p, 10_000, &mut rng_from_seed(1)).unwrap();
    let net = PolicyNet::init(7, 2, &terms, 3).unwrap();
    let emb = net.embed(&[1.0, 0.0]).unwrap();
    let mut rng = rng_from_seed(4);
    let draws: Vec<Vec<f64>> = (0..10_000).map(|_| sampler::sample(&p, &net, &emb, &mut rng).unwrap().action).collect();
    let (means, _) = debias::moments(&draws);
    for m in means {
        assert!((m - 1.0 / 7.0).abs() < 0.03, "{m}");
    }
}

#[test]
fn flat_terms_reproduce_uniform_shapes() {
    let p = Polytope::simplex(5).unwrap();
    let net = PolicyNet::init(5, 3, &DebiasTerms::flat(&p), 9).unwrap();
    let emb = net.embed(&[0.1, 0.2, 0.3]).unwrap();
    for i in 0..4 {
        let (a, b) = net.head_shapes(&emb, &vec![0.1; i], i);
        assert!((a - 1.0).abs() < 0.1 && (b - 1.0).abs() < 0.1);
    }
}

#[test]
fn one_update_lowers_the_batch_loss() {
    let spec = EnvSpec::synthetic(3, ConstraintSpec::Simplex, 1);
    let p = spec.polytope().unwrap();
    let cfg = TrainConfig { workers: 2, rollout: 128, seed: 8, ..Default::default() };
    let mut t = Trainer::new(&spec, &DebiasTerms::flat(&p), EntityOrder::Forward, cfg).unwrap();
    let buf = t.collect().unwrap();
    let all: Vec<usize> = (0..buf.len()).collect();
    let index: Vec<(usize, usize)> =
        buf.segments.iter().enumerate().flat_map(|(s, seg)| (0..seg.len()).map(move |k| (s, k))).collect();
    let loss = |t: &Trainer| {
        let (_, _, s) = minibatch_gradients(&t.policy, &t.value, &t.config, &buf, &index, &all).unwrap();
        s.policy_loss + s.value_loss
    };
    let before = loss(&t);
    t.update(&buf).unwrap();
    assert!(loss(&t) < before);
}

#[test]
fn compute_env_episode_has_no_violations() {
    let spec = EnvSpec::compute();
    let p = spec.polytope().unwrap();
    let mut env = spec.build().unwrap();
    let net = PolicyNet::init(9, env.state_dim(), &DebiasTerms::flat(&p), 2).unwrap();
    let e = polyalloc::ppo::evaluate(env.as_mut(), &net, EntityOrder::Forward, 1, false, 3).unwrap();
    assert_eq!(e.violations, 0);
    assert_eq!(e.returns.len(), 1);
    assert!(e.returns[0] >= 0.0 && e.returns[0] <= 512.0);
}
