//! Tabular game specifications and behavior policies.
//!
//! A game has `H` Alice steps. Decision points are numbered `k = 0..2H`:
//! even `k` is Alice's step `h = k/2 + 1`, odd `k` is Bob's half step
//! `h + 1/2`. At every point the acting player chooses a binary *action*
//! while the other player's previous binary action plays the role of the
//! *instrument*. Bob's private information `V = (V1, V2)` is encoded as
//! `v = v1 + 2·v2 ∈ 0..4`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of values of Bob's private information `V = (V1, V2)`.
pub const NV: usize = 4;

/// Tolerance used when checking that probability rows sum to one.
const PROB_TOL: f64 = 1e-9;

/// Splits a private-information index into its two binary coordinates.
pub fn v_parts(v: usize) -> (usize, usize) {
    (v & 1, v >> 1)
}

/// The two players.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    Alice,
    Bob,
}

impl Player {
    /// Single-letter label used in CSV files.
    pub fn label(self) -> &'static str {
        match self {
            Player::Alice => "A",
            Player::Bob => "B",
        }
    }

    /// Parses a single-letter label.
    pub fn from_label(label: &str) -> Option<Player> {
        match label {
            "A" => Some(Player::Alice),
            "B" => Some(Player::Bob),
            _ => None,
        }
    }
}

/// Player acting at decision point `k`.
pub fn actor(k: usize) -> Player {
    if k.is_multiple_of(2) {
        Player::Alice
    } else {
        Player::Bob
    }
}

/// Zero-based Alice step index `h - 1` that decision point `k` belongs to.
pub fn step_index(k: usize) -> usize {
    k / 2
}

/// Human-readable step label: `"h"` for Alice steps, `"h.5"` for half steps.
pub fn step_label(k: usize) -> String {
    if k.is_multiple_of(2) {
        format!("{}", k / 2 + 1)
    } else {
        format!("{}.5", k / 2 + 1)
    }
}

/// Sizes of the observed spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spaces {
    pub horizon: usize,
    pub n_states: usize,
    pub n_private: usize,
}

impl Spaces {
    /// Number of `(s, u)` cells.
    pub fn cells(&self) -> usize {
        self.n_states * self.n_private
    }

    /// Number of decision points `2H`.
    pub fn points(&self) -> usize {
        2 * self.horizon
    }

    /// Flat index of cell `(s, u)`.
    pub fn cell(&self, s: usize, u: usize) -> usize {
        s * self.n_private + u
    }
}

/// Law of the private information at one decision point, given the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateLaw {
    /// `P(U = u | s)`, indexed `[s][u]`.
    pub alice: Vec<Vec<f64>>,
    /// `P(V1 = 1 | s)`, indexed `[s]`.
    pub v1: Vec<f64>,
    /// `P(V2 = 1 | s)`, indexed `[s]`.
    pub v2: Vec<f64>,
}

impl PrivateLaw {
    /// Uniform-in-`U`, Bernoulli(0.5) law for both `V` coordinates.
    pub fn balanced(n_states: usize, n_private: usize) -> Self {
        PrivateLaw {
            alice: vec![vec![1.0 / n_private as f64; n_private]; n_states],
            v1: vec![0.5; n_states],
            v2: vec![0.5; n_states],
        }
    }

    /// `P(V = v | s)` under the factored law.
    pub fn p_v(&self, s: usize, v: usize) -> f64 {
        let (v1, v2) = v_parts(v);
        let p1 = if v1 == 1 { self.v1[s] } else { 1.0 - self.v1[s] };
        let p2 = if v2 == 1 { self.v2[s] } else { 1.0 - self.v2[s] };
        p1 * p2
    }

    /// `P(U = u | s)`.
    pub fn p_u(&self, s: usize, u: usize) -> f64 {
        self.alice[s][u]
    }
}

/// Saturated reward-mean table of one player, indexed `[s][u][v]`.
///
/// The mean reward is `action·x + instrument·z + interaction·x·z + baseline`
/// where `x` is the acting player's action and `z` the other player's
/// previous action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub action: Vec<Vec<[f64; NV]>>,
    pub instrument: Vec<Vec<[f64; NV]>>,
    pub interaction: Vec<Vec<[f64; NV]>>,
    pub baseline: Vec<Vec<[f64; NV]>>,
}

impl RewardTable {
    /// All-zero table.
    pub fn zeros(n_states: usize, n_private: usize) -> Self {
        let z = vec![vec![[0.0; NV]; n_private]; n_states];
        RewardTable {
            action: z.clone(),
            instrument: z.clone(),
            interaction: z.clone(),
            baseline: z,
        }
    }

    /// Conditional mean reward.
    pub fn mean(&self, s: usize, u: usize, v: usize, x: u8, z: u8) -> f64 {
        let (x, z) = (x as f64, z as f64);
        self.action[s][u][v] * x + self.instrument[s][u][v] * z + self.interaction[s][u][v] * x * z + self.baseline[s][u][v]
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let f = |t: &Vec<Vec<[f64; NV]>>| -> Vec<Vec<[f64; NV]>> {
            t.iter().map(|row| row.iter().map(|cell| cell.map(|x| x * c)).collect()).collect()
        };
        RewardTable {
            action: f(&self.action),
            instrument: f(&self.instrument),
            interaction: f(&self.interaction),
            baseline: f(&self.baseline),
        }
    }
}

/// Next-state law at one decision point, indexed `[s][u][v][x][z]` and
/// returning a distribution over next states (`x` = action, `z` = instrument).
pub type Kernel = Vec<Vec<[[[Vec<f64>; 2]; 2]; NV]>>;

/// Builds a kernel from a closure returning `P(S' = 1)` on a two-state space
/// or a full distribution on larger spaces.
pub fn kernel_from(
    n_states: usize,
    n_private: usize,
    f: impl Fn(usize, usize, usize, u8, u8) -> Vec<f64>,
) -> Kernel {
    (0..n_states)
        .map(|s| {
            (0..n_private)
                .map(|u| {
                    std::array::from_fn(|v| {
                        std::array::from_fn(|x| std::array::from_fn(|z| f(s, u, v, x as u8, z as u8)))
                    })
                })
                .collect()
        })
        .collect()
}

/// Full tabular ground truth of a game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    /// Number of Alice steps `H`.
    pub horizon: usize,
    /// Size of the state space `S`.
    pub n_states: usize,
    /// Size of Alice's private space `U`.
    pub n_private: usize,
    /// Optional coordinates of each state in `[0,1]^d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<f64>>>,
    /// Half-width of the uniform zero-mean reward noise.
    pub noise_half_width: f64,
    /// Law of `S_1`.
    pub init_state: Vec<f64>,
    /// Private-information law at each decision point `k = 0..2H`.
    pub private_laws: Vec<PrivateLaw>,
    /// Alice's reward table (action `A_h`, instrument `B_{h-1/2}`).
    pub alice_reward: RewardTable,
    /// Bob's reward table (action `B_{h+1/2}`, instrument `A_h`).
    pub bob_reward: RewardTable,
    /// Kernels from Alice step `h` to half step `h + 1/2`, one per step.
    pub alice_transitions: Vec<Kernel>,
    /// Kernels from half step `h + 1/2` to step `h + 1` (or terminal), one per step.
    pub bob_transitions: Vec<Kernel>,
}

impl GameSpec {
    /// Observed space sizes.
    pub fn spaces(&self) -> Spaces {
        Spaces {
            horizon: self.horizon,
            n_states: self.n_states,
            n_private: self.n_private,
        }
    }

    /// Reward table of the player acting at point `k`.
    pub fn reward_at(&self, k: usize) -> &RewardTable {
        match actor(k) {
            Player::Alice => &self.alice_reward,
            Player::Bob => &self.bob_reward,
        }
    }

    /// Transition kernel leaving point `k`.
    pub fn kernel_at(&self, k: usize) -> &Kernel {
        match actor(k) {
            Player::Alice => &self.alice_transitions[step_index(k)],
            Player::Bob => &self.bob_transitions[step_index(k)],
        }
    }

    /// State coordinates used by polynomial bases: the declared grid, or
    /// `s / (|S| - 1)` on `[0,1]` when no grid is declared.
    pub fn state_coordinates(&self) -> Vec<Vec<f64>> {
        match &self.grid {
            Some(g) => g.clone(),
            None => default_coordinates(self.n_states),
        }
    }

    /// Copy with both reward tables multiplied by `c`.
    pub fn with_scaled_rewards(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.alice_reward = self.alice_reward.scaled(c);
        out.bob_reward = self.bob_reward.scaled(c);
        out.noise_half_width = self.noise_half_width * c;
        out
    }

    /// Checks dimensions and probability tables.
    pub fn check(&self) -> Result<()> {
        let (ns, np, h) = (self.n_states, self.n_private, self.horizon);
        if h == 0 || ns == 0 || np == 0 {
            return Err(Error::MalformedSpec("horizon and space sizes must be positive".into()));
        }
        if !(self.noise_half_width >= 0.0 && self.noise_half_width.is_finite()) {
            return Err(Error::MalformedSpec("noise half-width must be finite and non-negative".into()));
        }
        check_distribution(&self.init_state, ns, "init_state")?;
        if self.private_laws.len() != 2 * h {
            return Err(Error::MalformedSpec(format!(
                "expected {} private laws (one per decision point), found {}",
                2 * h,
                self.private_laws.len()
            )));
        }
        for (k, law) in self.private_laws.iter().enumerate() {
            if law.alice.len() != ns || law.v1.len() != ns || law.v2.len() != ns {
                return Err(Error::MalformedSpec(format!("private law {k} has wrong state dimension")));
            }
            for s in 0..ns {
                check_distribution(&law.alice[s], np, &format!("private law {k}, state {s}"))?;
                check_probability(law.v1[s], &format!("private law {k} V1, state {s}"))?;
                check_probability(law.v2[s], &format!("private law {k} V2, state {s}"))?;
            }
        }
        for (name, table) in [("alice_reward", &self.alice_reward), ("bob_reward", &self.bob_reward)] {
            for part in [&table.action, &table.instrument, &table.interaction, &table.baseline] {
                if part.len() != ns || part.iter().any(|r| r.len() != np) {
                    return Err(Error::MalformedSpec(format!("{name} has wrong dimensions")));
                }
                if part.iter().flatten().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::MalformedSpec(format!("{name} has non-finite entries")));
                }
            }
        }
        if self.alice_transitions.len() != h || self.bob_transitions.len() != h {
            return Err(Error::MalformedSpec(format!("expected {h} kernels per player")));
        }
        for (name, kernels) in [("alice_transitions", &self.alice_transitions), ("bob_transitions", &self.bob_transitions)] {
            for (i, kern) in kernels.iter().enumerate() {
                if kern.len() != ns || kern.iter().any(|r| r.len() != np) {
                    return Err(Error::MalformedSpec(format!("{name}[{i}] has wrong dimensions")));
                }
                for (s, row) in kern.iter().enumerate() {
                    for (u, cell) in row.iter().enumerate() {
                        for (v, by_x) in cell.iter().enumerate() {
                            for (x, by_z) in by_x.iter().enumerate() {
                                for (z, dist) in by_z.iter().enumerate() {
                                    check_distribution(
                                        dist,
                                        ns,
                                        &format!("{name}[{i}] at (s={s}, u={u}, v={v}, x={x}, z={z})"),
                                    )?;
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(grid) = &self.grid {
            if grid.len() != ns {
                return Err(Error::MalformedSpec("grid must list one point per state".into()));
            }
            let d = grid.first().map(|p| p.len()).unwrap_or(0);
            if d == 0 || grid.iter().any(|p| p.len() != d || p.iter().any(|c| !(0.0..=1.0).contains(c))) {
                return Err(Error::MalformedSpec("grid points must share a dimension and lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Evenly spaced one-dimensional coordinates on `[0,1]`.
pub fn default_coordinates(n_states: usize) -> Vec<Vec<f64>> {
    (0..n_states)
        .map(|s| vec![if n_states > 1 { s as f64 / (n_states - 1) as f64 } else { 0.0 }])
        .collect()
}

/// Behavior policies that generated the offline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicyPair {
    /// `P(B_{1/2} = 1)`.
    pub initial_bob: f64,
    /// `P(A_h = 1 | s, u, v, b_prev)`, indexed `[h][s][u][v][b_prev]`.
    pub alice: Vec<Vec<Vec<[[f64; 2]; NV]>>>,
    /// `P(B_{h+1/2} = 1 | s, a_prev, v)`, indexed `[h][s][a_prev][v]`.
    pub bob: Vec<Vec<[[f64; NV]; 2]>>,
}

impl BehaviorPolicyPair {
    /// Probability that the actor at point `k` plays 1.
    pub fn action_prob(&self, k: usize, s: usize, u: usize, v: usize, z: u8) -> f64 {
        let h = step_index(k);
        match actor(k) {
            Player::Alice => self.alice[h][s][u][v][z as usize],
            Player::Bob => self.bob[h][s][z as usize][v],
        }
    }

    /// Checks dimensions and that every entry is a probability.
    pub fn check(&self, spaces: Spaces) -> Result<()> {
        check_probability(self.initial_bob, "behavior initial_bob")?;
        if self.alice.len() != spaces.horizon || self.bob.len() != spaces.horizon {
            return Err(Error::MalformedSpec("behavior tables need one entry per step".into()));
        }
        for (h, table) in self.alice.iter().enumerate() {
            if table.len() != spaces.n_states || table.iter().any(|r| r.len() != spaces.n_private) {
                return Err(Error::MalformedSpec(format!("alice behavior step {} has wrong dimensions", h + 1)));
            }
            for p in table.iter().flatten().flatten().flatten() {
                check_probability(*p, &format!("alice behavior step {}", h + 1))?;
            }
        }
        for (h, table) in self.bob.iter().enumerate() {
            if table.len() != spaces.n_states {
                return Err(Error::MalformedSpec(format!("bob behavior step {}.5 has wrong dimensions", h + 1)));
            }
            for p in table.iter().flatten().flatten() {
                check_probability(*p, &format!("bob behavior step {}.5", h + 1))?;
            }
        }
        Ok(())
    }
}

/// A game specification bundled with the behavior policy of its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecBundle {
    pub game: GameSpec,
    pub behavior: BehaviorPolicyPair,
}

impl SpecBundle {
    /// Checks both parts.
    pub fn check(&self) -> Result<()> {
        self.game.check()?;
        self.behavior.check(self.game.spaces())
    }
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::MalformedSpec(format!("{what}: probability {p} outside [0,1]")));
    }
    Ok(())
}

fn check_distribution(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(Error::MalformedSpec(format!("{what}: expected {len} entries, found {}", row.len())));
    }
    for p in row {
        check_probability(*p, what)?;
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::MalformedSpec(format!("{what}: row sums to {total}, not 1")));
    }
    Ok(())
}
