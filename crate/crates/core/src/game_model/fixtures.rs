//! Built-in game fixtures used by tests, examples and the harness.
//!
//! Every fixture draws Bob's private information as two independent
//! Bernoulli coordinates. Action propensities depend only on `V1` and reward
//! slopes and transitions only on `V2`, so the orthogonality conditions of the
//! identification argument hold by construction.

use rand::Rng;

use super::spec::{
    kernel_from, v_parts, BehaviorPolicyPair, GameSpec, PrivateLaw, RewardTable, SpecBundle, NV,
};
use crate::rng::{stream, Purpose};

/// Default half-width of the uniform reward noise.
pub const DEFAULT_NOISE: f64 = 0.1;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["t1", "t2", "t2-h1", "t2-h2", "t2-h3", "t2-flat", "t1-zero", "t1-no-iv", "negative-control"];

/// Looks up a built-in fixture by name.
pub fn builtin(name: &str) -> Option<SpecBundle> {
    match name {
        "t1" => Some(t1()),
        "t2" | "t2-h2" => Some(t2(2)),
        "t2-h1" => Some(t2(1)),
        "t2-h3" => Some(t2(3)),
        "t2-flat" => Some(t2_flat(2)),
        "t1-zero" => Some(zero_rewards(t1())),
        "t1-no-iv" => Some(t1_without_instrument()),
        "negative-control" => Some(negative_control()),
        _ => None,
    }
}

fn reward_table(
    n_states: usize,
    n_private: usize,
    f: impl Fn(usize, usize, usize, usize) -> [f64; 4],
) -> RewardTable {
    let mut t = RewardTable::zeros(n_states, n_private);
    for s in 0..n_states {
        for u in 0..n_private {
            for v in 0..NV {
                let (v1, v2) = v_parts(v);
                let [a, z, az, base] = f(s, u, v1, v2);
                t.action[s][u][v] = a;
                t.instrument[s][u][v] = z;
                t.interaction[s][u][v] = az;
                t.baseline[s][u][v] = base;
            }
        }
    }
    t
}

fn alice_behavior(
    horizon: usize,
    n_states: usize,
    n_private: usize,
    f: impl Fn(usize, usize, usize, usize, usize) -> f64,
) -> Vec<Vec<Vec<[[f64; 2]; NV]>>> {
    (0..horizon)
        .map(|h| {
            (0..n_states)
                .map(|s| {
                    (0..n_private)
                        .map(|u| std::array::from_fn(|v| std::array::from_fn(|b| f(h, s, u, v, b))))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn bob_behavior(
    horizon: usize,
    n_states: usize,
    f: impl Fn(usize, usize, usize, usize) -> f64,
) -> Vec<Vec<[[f64; NV]; 2]>> {
    (0..horizon)
        .map(|h| {
            (0..n_states)
                .map(|s| std::array::from_fn(|a| std::array::from_fn(|v| f(h, s, a, v))))
                .collect()
        })
        .collect()
}

fn two_state(p1: f64) -> Vec<f64> {
    vec![1.0 - p1, p1]
}

/// Canonical single-step fixture with one state and one private value.
///
/// Alice's reward is `(1 + 0.4·V2)·A + 0.5·B + 0.25·A·B + 0.6·(V2 − 0.5)` and her
/// behavior plays 1 with probability `0.2 + 0.3·B + 0.2·V1`. Bob mirrors this
/// with action coefficient `0.6 + 0.4·V2` (mean 0.8), instrument coefficient
/// 0.3 and interaction 0.1.
pub fn t1() -> SpecBundle {
    let alice_reward = reward_table(1, 1, |_, _, _, v2| {
        let v2 = v2 as f64;
        [1.0 + 0.4 * v2, 0.5, 0.25, 0.6 * (v2 - 0.5)]
    });
    let bob_reward = reward_table(1, 1, |_, _, _, v2| {
        let v2 = v2 as f64;
        [0.6 + 0.4 * v2, 0.3, 0.1, 0.6 * (v2 - 0.5)]
    });
    let stay = kernel_from(1, 1, |_, _, _, _, _| vec![1.0]);
    let game = GameSpec {
        horizon: 1,
        n_states: 1,
        n_private: 1,
        grid: None,
        noise_half_width: DEFAULT_NOISE,
        init_state: vec![1.0],
        private_laws: vec![PrivateLaw::balanced(1, 1); 2],
        alice_reward,
        bob_reward,
        alice_transitions: vec![stay.clone()],
        bob_transitions: vec![stay],
    };
    let behavior = BehaviorPolicyPair {
        initial_bob: 0.5,
        alice: alice_behavior(1, 1, 1, |_, _, _, v, b| 0.2 + 0.3 * b as f64 + 0.2 * v_parts(v).0 as f64),
        bob: bob_behavior(1, 1, |_, _, a, v| 0.2 + 0.3 * a as f64 + 0.2 * v_parts(v).0 as f64),
    };
    SpecBundle { game, behavior }
}

/// `T1` with Alice's behavior ignoring the instrument, so the identifying
/// system loses its relevance.
pub fn t1_without_instrument() -> SpecBundle {
    let mut b = t1();
    b.behavior.alice = alice_behavior(1, 1, 1, |_, _, _, v, _| 0.35 + 0.2 * v_parts(v).0 as f64);
    b
}

/// Copy of a fixture with both reward tables and the reward noise set to zero.
pub fn zero_rewards(mut bundle: SpecBundle) -> SpecBundle {
    let (ns, np) = (bundle.game.n_states, bundle.game.n_private);
    bundle.game.alice_reward = RewardTable::zeros(ns, np);
    bundle.game.bob_reward = RewardTable::zeros(ns, np);
    bundle.game.noise_half_width = 0.0;
    bundle
}

/// Copy of a fixture with Bob's reward set to zero.
pub fn zero_bob_reward(mut bundle: SpecBundle) -> SpecBundle {
    bundle.game.bob_reward = RewardTable::zeros(bundle.game.n_states, bundle.game.n_private);
    bundle
}

fn t2_rewards() -> (RewardTable, RewardTable) {
    let alice = reward_table(2, 1, |s, _, _, v2| {
        let (s, v2) = (s as f64, v2 as f64);
        [1.0 + 0.4 * v2 - 1.6 * s, 0.5 - 0.2 * s, 0.25 + 0.3 * s, 0.6 * (v2 - 0.5)]
    });
    let bob = reward_table(2, 1, |s, _, _, v2| {
        let (s, v2) = (s as f64, v2 as f64);
        [0.6 + 0.4 * v2 - 1.2 * s, 0.3, 0.1 + 0.2 * s, 0.6 * (v2 - 0.5)]
    });
    (alice, bob)
}

fn t2_behavior(horizon: usize) -> BehaviorPolicyPair {
    BehaviorPolicyPair {
        initial_bob: 0.5,
        alice: alice_behavior(horizon, 2, 1, |_, s, _, v, b| {
            0.2 + 0.3 * b as f64 + 0.2 * v_parts(v).0 as f64 + 0.1 * s as f64
        }),
        bob: bob_behavior(horizon, 2, |_, s, a, v| 0.2 + 0.3 * a as f64 + 0.2 * v_parts(v).0 as f64 + 0.1 * s as f64),
    }
}

fn t2_with_kernels(horizon: usize, flat: bool) -> SpecBundle {
    let (alice_reward, bob_reward) = t2_rewards();
    let coef = |c: f64| if flat { 0.0 } else { c };
    let alice_kernel = kernel_from(2, 1, |s, _, v, x, z| {
        let (a, b, v2, s) = (x as f64, z as f64, v_parts(v).1 as f64, s as f64);
        two_state(0.3 + coef(0.2) * a + coef(0.1) * b + coef(0.1) * a * b + 0.1 * (v2 - 0.5) + 0.1 * s)
    });
    let bob_kernel = kernel_from(2, 1, |s, _, v, x, z| {
        let (b, a, v2, s) = (x as f64, z as f64, v_parts(v).1 as f64, s as f64);
        two_state(0.3 + coef(0.15) * a + coef(0.2) * b + coef(0.1) * a * b + 0.1 * (v2 - 0.5) + 0.1 * s)
    });
    let game = GameSpec {
        horizon,
        n_states: 2,
        n_private: 1,
        grid: None,
        noise_half_width: DEFAULT_NOISE,
        init_state: vec![0.5, 0.5],
        private_laws: vec![PrivateLaw::balanced(2, 1); 2 * horizon],
        alice_reward,
        bob_reward,
        alice_transitions: vec![alice_kernel; horizon],
        bob_transitions: vec![bob_kernel; horizon],
    };
    SpecBundle {
        game,
        behavior: t2_behavior(horizon),
    }
}

/// Two-state fixture family with bilinear-in-actions transitions.
pub fn t2(horizon: usize) -> SpecBundle {
    t2_with_kernels(horizon, false)
}

/// `T2` with every action effect removed from the transitions.
pub fn t2_flat(horizon: usize) -> SpecBundle {
    t2_with_kernels(horizon, true)
}

/// Randomised fixture satisfying the orthogonality conditions.
///
/// `p_z` is constant in `V`, the baseline action propensity depends on `V1`,
/// reward slopes and transitions depend on `V2`, and the reward baseline has a
/// zero-mean `V1` term that confounds the intercept.
pub fn random_fixture(seed: u64, index: u64, horizon: usize) -> SpecBundle {
    let mut rng = stream(seed, Purpose::Fixture, index);
    let n_states = rng.random_range(1..=3usize);
    let n_private = rng.random_range(1..=2usize);
    let mut draw = |lo: f64, hi: f64| rng.random_range(lo..hi);

    let law = PrivateLaw {
        alice: (0..n_states)
            .map(|_| {
                let w: Vec<f64> = (0..n_private).map(|_| draw(0.5, 1.5)).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|x| x / t).collect()
            })
            .collect(),
        v1: (0..n_states).map(|_| draw(0.3, 0.7)).collect(),
        v2: (0..n_states).map(|_| draw(0.3, 0.7)).collect(),
    };
    let laws = vec![law; 2 * horizon];

    let mut make_reward = |law: &PrivateLaw| -> RewardTable {
        let mut t = RewardTable::zeros(n_states, n_private);
        for s in 0..n_states {
            let (p1, p2) = (law.v1[s], law.v2[s]);
            for u in 0..n_private {
                let (a0, a1) = (draw(-1.0, 1.0), draw(-0.5, 0.5));
                let (z0, z1) = (draw(-0.5, 0.5), draw(-0.3, 0.3));
                let (i0, i1) = (draw(-0.5, 0.5), draw(-0.3, 0.3));
                let (c1, c2) = (draw(-0.5, 0.5), draw(-0.5, 0.5));
                for v in 0..NV {
                    let (v1, v2) = v_parts(v);
                    let (v1, v2) = (v1 as f64, v2 as f64);
                    t.action[s][u][v] = a0 + a1 * v2;
                    t.instrument[s][u][v] = z0 + z1 * v2;
                    t.interaction[s][u][v] = i0 + i1 * v2;
                    t.baseline[s][u][v] = c1 * (v1 - p1) + c2 * (v2 - p2);
                }
            }
        }
        t
    };
    let alice_reward = make_reward(&laws[0]);
    let bob_reward = make_reward(&laws[0]);

    let mut make_kernel = || {
        let coefs: Vec<Vec<[f64; 5]>> = (0..n_states)
            .map(|_| (0..n_states).map(|_| [draw(0.5, 1.5), draw(-0.4, 0.4), draw(-0.4, 0.4), draw(-0.3, 0.3), draw(-0.4, 0.4)]).collect())
            .collect();
        kernel_from(n_states, n_private, move |s, _, v, x, z| {
            let v2 = v_parts(v).1 as f64;
            let w: Vec<f64> = (0..n_states)
                .map(|t| {
                    let c = coefs[s][t];
                    (c[0] + c[1] * x as f64 + c[2] * z as f64 + c[3] * (x * z) as f64 + c[4] * v2).max(0.05)
                })
                .collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
    };
    let alice_transitions: Vec<_> = (0..horizon).map(|_| make_kernel()).collect();
    let bob_transitions: Vec<_> = (0..horizon).map(|_| make_kernel()).collect();

    let init: Vec<f64> = (0..n_states).map(|_| draw(0.5, 1.5)).collect();
    let total: f64 = init.iter().sum();
    let init_state = init.into_iter().map(|x| x / total).collect();

    let alice_tables: Vec<Vec<Vec<[f64; 3]>>> = (0..horizon)
        .map(|_| (0..n_states).map(|_| (0..n_private).map(|_| [draw(0.1, 0.3), draw(0.2, 0.4), draw(0.1, 0.25)]).collect()).collect())
        .collect();
    let bob_tables: Vec<Vec<[f64; 3]>> = (0..horizon)
        .map(|_| (0..n_states).map(|_| [draw(0.1, 0.3), draw(0.2, 0.4), draw(0.1, 0.25)]).collect())
        .collect();
    let initial_bob = draw(0.3, 0.7);

    let behavior = BehaviorPolicyPair {
        initial_bob,
        alice: alice_behavior(horizon, n_states, n_private, |h, s, u, v, b| {
            let [base, iv, conf] = alice_tables[h][s][u];
            base + iv * b as f64 + conf * v_parts(v).0 as f64
        }),
        bob: bob_behavior(horizon, n_states, |h, s, a, v| {
            let [base, iv, conf] = bob_tables[h][s];
            base + iv * a as f64 + conf * v_parts(v).0 as f64
        }),
    };
    let game = GameSpec {
        horizon,
        n_states,
        n_private,
        grid: None,
        noise_half_width: DEFAULT_NOISE,
        init_state,
        private_laws: laws,
        alice_reward,
        bob_reward,
        alice_transitions,
        bob_transitions,
    };
    SpecBundle { game, behavior }
}

/// `T1` variant that breaks orthogonality: Alice's action coefficient and her
/// instrument effect both depend on `V1`.
pub fn negative_control() -> SpecBundle {
    let mut b = t1();
    b.game.alice_reward = reward_table(1, 1, |_, _, v1, v2| {
        let (v1, v2) = (v1 as f64, v2 as f64);
        [0.6 + 1.2 * v1, 0.5, 0.25, 0.6 * (v2 - 0.5)]
    });
    b.behavior.alice = alice_behavior(1, 1, 1, |_, _, _, v, bp| {
        let v1 = v_parts(v).0 as f64;
        0.2 + (0.1 + 0.5 * v1) * bp as f64 + 0.2 * v1
    });
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_well_formed() {
        for name in BUILTIN_NAMES {
            builtin(name).unwrap().check().unwrap();
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn random_fixtures_are_well_formed_and_reproducible() {
        for i in 0..10 {
            let a = random_fixture(11, i, 1 + (i as usize % 2));
            a.check().unwrap();
            assert_eq!(a, random_fixture(11, i, 1 + (i as usize % 2)));
        }
    }

    #[test]
    fn t2_family_has_requested_horizon() {
        for h in 1..=3 {
            let b = t2(h);
            assert_eq!(b.game.horizon, h);
            assert_eq!(b.behavior.alice.len(), h);
        }
    }
}
