//! Behavior-policy trajectory simulation.
//!
//! Trajectory `i` draws from its own stream `(seed, Trajectory, i)`, in the
//! fixed order: `B_{1/2}`; then per step `S` (from the previous transition),
//! `U`, `V1`, `V2`, `A`, `R^A`, `S_{h+1/2}`, `U_{h+1/2}`, `V1`, `V2`, `B`,
//! `R^B`, next state. Results are independent of thread scheduling.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::dataset::{HiddenStep, HiddenTrace, OfflineDataset, SimulatedData, StepRecord, Trajectory};
use super::spec::{BehaviorPolicyPair, GameSpec};
use crate::error::Result;
use crate::rng::{stream, Purpose};

fn categorical(rng: &mut ChaCha20Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn coin(rng: &mut ChaCha20Rng, p: f64) -> u8 {
    let draw: f64 = rng.random();
    u8::from(draw < p)
}

fn noise(rng: &mut ChaCha20Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

struct PointOutcome {
    u: usize,
    v1: u8,
    v2: u8,
    x: u8,
    r: f64,
    next: usize,
}

fn simulate_point(game: &GameSpec, behavior: &BehaviorPolicyPair, k: usize, s: usize, z: u8, rng: &mut ChaCha20Rng) -> PointOutcome {
    let law = &game.private_laws[k];
    let u = categorical(rng, &law.alice[s]);
    let v1 = coin(rng, law.v1[s]);
    let v2 = coin(rng, law.v2[s]);
    let v = (v1 + 2 * v2) as usize;
    let x = coin(rng, behavior.action_prob(k, s, u, v, z));
    let r = game.reward_at(k).mean(s, u, v, x, z) + noise(rng, game.noise_half_width);
    let next = categorical(rng, &game.kernel_at(k)[s][u][v][x as usize][z as usize]);
    PointOutcome { u, v1, v2, x, r, next }
}

fn simulate_trajectory(game: &GameSpec, behavior: &BehaviorPolicyPair, seed: u64, index: u64) -> (Trajectory, Vec<HiddenStep>) {
    let mut rng = stream(seed, Purpose::Trajectory, index);
    let initial_bob = coin(&mut rng, behavior.initial_bob);
    let mut s = categorical(&mut rng, &game.init_state);
    let mut z = initial_bob;
    let mut steps = Vec::with_capacity(game.horizon);
    let mut hidden = Vec::with_capacity(game.horizon);
    for h in 0..game.horizon {
        let alice = simulate_point(game, behavior, 2 * h, s, z, &mut rng);
        let bob = simulate_point(game, behavior, 2 * h + 1, alice.next, alice.x, &mut rng);
        steps.push(StepRecord {
            s: s as u8,
            u: alice.u as u8,
            a: alice.x,
            r_a: alice.r,
            s_half: alice.next as u8,
            u_half: bob.u as u8,
            b: bob.x,
            r_b: bob.r,
        });
        hidden.push(HiddenStep {
            v1: alice.v1,
            v2: alice.v2,
            v1_half: bob.v1,
            v2_half: bob.v2,
        });
        s = bob.next;
        z = bob.x;
    }
    (
        Trajectory {
            initial_bob,
            steps,
            terminal: s as u8,
        },
        hidden,
    )
}

/// Draws `n` i.i.d. trajectories under the behavior policy.
pub fn simulate_dataset(game: &GameSpec, behavior: &BehaviorPolicyPair, n: usize, seed: u64) -> Result<SimulatedData> {
    game.check()?;
    behavior.check(game.spaces())?;
    let pairs: Vec<(Trajectory, Vec<HiddenStep>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_trajectory(game, behavior, seed, i))
        .collect();
    let (trajectories, rows): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(SimulatedData {
        observed: OfflineDataset {
            horizon: game.horizon,
            trajectories,
        },
        hidden: HiddenTrace {
            horizon: game.horizon,
            rows,
        },
    })
}
