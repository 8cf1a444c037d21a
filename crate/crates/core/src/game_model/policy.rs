//! Target policy pairs, enumerable policy classes and the policy CSV format.
//!
//! Alice's rule at step `h` reads `(s, u, b_prev)`; Bob's rule at half step
//! `h + 1/2` reads `(s, a_prev)` only, so neither can index `V`. Entries are
//! probabilities of playing 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::{actor, step_index, step_label, Player, Spaces};
use crate::error::{Error, Result};

/// Tabular decision rules for both players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    spaces: Spaces,
    initial_bob: f64,
    /// `P(A_h = 1 | s, u, b_prev)`, flattened `[h][s][u][b_prev]`.
    alice: Vec<f64>,
    /// `P(B_{h+1/2} = 1 | s, a_prev)`, flattened `[h][s][a_prev]`.
    bob: Vec<f64>,
}

impl PolicyPair {
    /// Policy pair playing every action with the given constant probabilities.
    pub fn constant(spaces: Spaces, initial_bob: f64, alice: f64, bob: f64) -> Self {
        PolicyPair {
            spaces,
            initial_bob,
            alice: vec![alice; spaces.horizon * spaces.n_states * spaces.n_private * 2],
            bob: vec![bob; spaces.horizon * spaces.n_states * 2],
        }
    }

    /// Builds a policy pair from closures `alice(h, s, u, b_prev)` and `bob(h, s, a_prev)`,
    /// with `h` zero-based.
    pub fn from_fns(
        spaces: Spaces,
        initial_bob: f64,
        alice: impl Fn(usize, usize, usize, u8) -> f64,
        bob: impl Fn(usize, usize, u8) -> f64,
    ) -> Self {
        let mut p = Self::constant(spaces, initial_bob, 0.0, 0.0);
        for h in 0..spaces.horizon {
            for s in 0..spaces.n_states {
                for z in 0..2u8 {
                    for u in 0..spaces.n_private {
                        p.set_alice(h, s, u, z, alice(h, s, u, z));
                    }
                    p.set_bob(h, s, z, bob(h, s, z));
                }
            }
        }
        p
    }

    /// Observed space sizes the policy is defined on.
    pub fn spaces(&self) -> Spaces {
        self.spaces
    }

    /// Probability that Bob's initial action is 1.
    pub fn initial_bob(&self) -> f64 {
        self.initial_bob
    }

    /// Sets the initial rule.
    pub fn set_initial_bob(&mut self, p: f64) {
        self.initial_bob = p;
    }

    fn alice_index(&self, h: usize, s: usize, u: usize, b: u8) -> usize {
        ((h * self.spaces.n_states + s) * self.spaces.n_private + u) * 2 + b as usize
    }

    fn bob_index(&self, h: usize, s: usize, a: u8) -> usize {
        (h * self.spaces.n_states + s) * 2 + a as usize
    }

    /// `P(A_h = 1 | s, u, b_prev)` with zero-based `h`.
    pub fn alice_prob(&self, h: usize, s: usize, u: usize, b: u8) -> f64 {
        self.alice[self.alice_index(h, s, u, b)]
    }

    /// `P(B_{h+1/2} = 1 | s, a_prev)` with zero-based `h`.
    pub fn bob_prob(&self, h: usize, s: usize, a: u8) -> f64 {
        self.bob[self.bob_index(h, s, a)]
    }

    /// Sets one entry of Alice's rule.
    pub fn set_alice(&mut self, h: usize, s: usize, u: usize, b: u8, p: f64) {
        let i = self.alice_index(h, s, u, b);
        self.alice[i] = p;
    }

    /// Sets one entry of Bob's rule.
    pub fn set_bob(&mut self, h: usize, s: usize, a: u8, p: f64) {
        let i = self.bob_index(h, s, a);
        self.bob[i] = p;
    }

    /// Probability that the actor at decision point `k` plays 1 given the
    /// observed state, Alice's private value and the instrument `z`.
    pub fn action_prob(&self, k: usize, s: usize, u: usize, z: u8) -> f64 {
        match actor(k) {
            Player::Alice => self.alice_prob(step_index(k), s, u, z),
            Player::Bob => self.bob_prob(step_index(k), s, z),
        }
    }

    /// Returns true when every entry is 0 or 1.
    pub fn is_deterministic(&self) -> bool {
        std::iter::once(&self.initial_bob)
            .chain(&self.alice)
            .chain(&self.bob)
            .all(|p| *p == 0.0 || *p == 1.0)
    }

    /// Checks that every entry is a probability.
    pub fn check(&self) -> Result<()> {
        let bad = std::iter::once(&self.initial_bob)
            .chain(&self.alice)
            .chain(&self.bob)
            .find(|p| !(0.0..=1.0).contains(*p));
        match bad {
            Some(p) => Err(Error::MalformedSpec(format!("policy probability {p} outside [0,1]"))),
            None => Ok(()),
        }
    }

    /// Copy with the initial rule replaced by `p`.
    pub fn with_initial_bob(&self, p: f64) -> Self {
        let mut out = self.clone();
        out.initial_bob = p;
        out
    }
}

/// Finite class of deterministic policy pairs searched by the learner and the oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyClass {
    /// Every deterministic tabular pair, with a separate rule per step.
    FullDeterministic,
    /// Deterministic pairs whose rules are shared across steps.
    Stationary,
    /// An explicit list of candidates, searched in the given order.
    Explicit(Vec<PolicyPair>),
}

impl PolicyClass {
    /// Number of encoding bits for the generated classes.
    fn bits(&self, spaces: Spaces) -> Option<u32> {
        let steps = match self {
            PolicyClass::FullDeterministic => spaces.horizon,
            PolicyClass::Stationary => 1,
            PolicyClass::Explicit(_) => return None,
        };
        let alice = steps * spaces.n_states * spaces.n_private * 2;
        let bob = steps * spaces.n_states * 2;
        Some((1 + alice + bob) as u32)
    }

    /// Number of members.
    pub fn size(&self, spaces: Spaces) -> u128 {
        match self {
            PolicyClass::Explicit(list) => list.len() as u128,
            _ => {
                let bits = self.bits(spaces).unwrap();
                if bits >= 127 {
                    u128::MAX
                } else {
                    1u128 << bits
                }
            }
        }
    }

    /// Member with the given encoding index.
    ///
    /// Generated classes decode the index most-significant bit first in the
    /// order: initial rule, Alice's entries `(h, s, u, b_prev)`, Bob's entries
    /// `(h, s, a_prev)`. Ascending index is therefore lexicographic order of
    /// the encoding.
    pub fn member(&self, spaces: Spaces, index: u128) -> PolicyPair {
        if let PolicyClass::Explicit(list) = self {
            return list[index as usize].clone();
        }
        let bits = self.bits(spaces).unwrap();
        let stationary = matches!(self, PolicyClass::Stationary);
        let steps = if stationary { 1 } else { spaces.horizon };
        let mut pos = bits;
        let mut next = || {
            pos -= 1;
            ((index >> pos) & 1) as f64
        };
        let initial = next();
        let mut alice = vec![0.0; steps * spaces.n_states * spaces.n_private * 2];
        for x in alice.iter_mut() {
            *x = next();
        }
        let mut bob = vec![0.0; steps * spaces.n_states * 2];
        for x in bob.iter_mut() {
            *x = next();
        }
        PolicyPair::from_fns(
            spaces,
            initial,
            |h, s, u, b| {
                let h = if stationary { 0 } else { h };
                alice[((h * spaces.n_states + s) * spaces.n_private + u) * 2 + b as usize]
            },
            |h, s, a| {
                let h = if stationary { 0 } else { h };
                bob[(h * spaces.n_states + s) * 2 + a as usize]
            },
        )
    }

    /// All members in encoding order, failing when the class exceeds `cap`.
    pub fn enumerate(&self, spaces: Spaces, cap: u128) -> Result<Vec<PolicyPair>> {
        let size = self.size(spaces);
        if size == 0 {
            return Err(Error::EmptyClass);
        }
        if size > cap {
            return Err(Error::SpaceTooLarge { cells: size, budget: cap });
        }
        Ok((0..size).map(|i| self.member(spaces, i)).collect())
    }
}

/// Writes a policy pair as CSV with columns `step,player,s,u,prev,action`.
///
/// Alice rows carry step `h`, Bob rows carry `h.5` and leave `u` empty, and the
/// initial rule is the single row with step `0.5`.
pub fn render_policy(policy: &PolicyPair) -> String {
    let sp = policy.spaces;
    let mut out = String::from("step,player,s,u,prev,action\n");
    out.push_str(&format!("0.5,B,,,,{}\n", policy.initial_bob));
    for k in 0..sp.points() {
        let h = step_index(k);
        for s in 0..sp.n_states {
            for z in 0..2u8 {
                match actor(k) {
                    Player::Alice => {
                        for u in 0..sp.n_private {
                            out.push_str(&format!("{},A,{s},{u},{z},{}\n", step_label(k), policy.alice_prob(h, s, u, z)));
                        }
                    }
                    Player::Bob => {
                        out.push_str(&format!("{},B,{s},,{z},{}\n", step_label(k), policy.bob_prob(h, s, z)));
                    }
                }
            }
        }
    }
    out
}

/// Parses the policy CSV format; every entry of the table must be present.
pub fn parse_policy(text: &str, spaces: Spaces) -> Result<PolicyPair> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "step,player,s,u,prev,action" => {}
        _ => return Err(Error::SchemaMismatch("policy header must be step,player,s,u,prev,action".into())),
    }
    let mut policy = PolicyPair::constant(spaces, f64::NAN, f64::NAN, f64::NAN);
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: &str| Error::CorruptRow {
            line: line_no,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(corrupt("expected 6 fields"));
        }
        let p: f64 = f[5].parse().map_err(|_| corrupt("action is not a number"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(corrupt("action probability outside [0,1]"));
        }
        if f[0] == "0.5" {
            policy.initial_bob = p;
            continue;
        }
        let player = Player::from_label(f[1]).ok_or_else(|| corrupt("player must be A or B"))?;
        let (h, half) = match f[0].strip_suffix(".5") {
            Some(h) => (h, true),
            None => (f[0], false),
        };
        let h: usize = h.parse().map_err(|_| corrupt("bad step"))?;
        if h == 0 || h > spaces.horizon {
            return Err(corrupt("step outside horizon"));
        }
        let s: usize = f[2].parse().map_err(|_| corrupt("bad state"))?;
        let z: u8 = f[4].parse().map_err(|_| corrupt("bad prev"))?;
        if s >= spaces.n_states || z > 1 {
            return Err(corrupt("value outside declared space"));
        }
        match (player, half) {
            (Player::Alice, false) => {
                let u: usize = f[3].parse().map_err(|_| corrupt("bad private value"))?;
                if u >= spaces.n_private {
                    return Err(corrupt("value outside declared space"));
                }
                policy.set_alice(h - 1, s, u, z, p);
            }
            (Player::Bob, true) => {
                if !f[3].is_empty() {
                    return Err(corrupt("Bob's rule cannot depend on u"));
                }
                policy.set_bob(h - 1, s, z, p);
            }
            _ => return Err(corrupt("player does not act at this step")),
        }
    }
    let missing = std::iter::once(&policy.initial_bob).chain(&policy.alice).chain(&policy.bob).any(|p| p.is_nan());
    if missing {
        return Err(Error::SchemaMismatch("policy file does not cover every decision cell".into()));
    }
    Ok(policy)
}

/// Reads a policy CSV file.
pub fn read_policy(path: impl AsRef<Path>, spaces: Spaces) -> Result<PolicyPair> {
    parse_policy(&std::fs::read_to_string(path)?, spaces)
}

/// Writes a policy CSV file.
pub fn write_policy(policy: &PolicyPair, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_policy(policy))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spaces(h: usize, s: usize, u: usize) -> Spaces {
        Spaces {
            horizon: h,
            n_states: s,
            n_private: u,
        }
    }

    #[test]
    fn class_sizes_count_encoding_bits() {
        let sp = spaces(1, 1, 1);
        assert_eq!(PolicyClass::FullDeterministic.size(sp), 32);
        assert_eq!(PolicyClass::Stationary.size(spaces(3, 2, 1)), 512);
        assert_eq!(PolicyClass::FullDeterministic.size(spaces(2, 2, 1)), 1 << 17);
    }

    #[test]
    fn first_and_last_members_are_constant() {
        let sp = spaces(2, 2, 2);
        let c = PolicyClass::FullDeterministic;
        assert_eq!(c.member(sp, 0), PolicyPair::constant(sp, 0.0, 0.0, 0.0));
        assert_eq!(c.member(sp, c.size(sp) - 1), PolicyPair::constant(sp, 1.0, 1.0, 1.0));
    }

    #[test]
    fn most_significant_bit_is_initial_rule() {
        let sp = spaces(1, 1, 1);
        let p = PolicyClass::FullDeterministic.member(sp, 16);
        assert_eq!(p.initial_bob(), 1.0);
        assert_eq!(p.alice_prob(0, 0, 0, 0), 0.0);
        let q = PolicyClass::FullDeterministic.member(sp, 1);
        assert_eq!(q.bob_prob(0, 0, 1), 1.0);
        assert_eq!(q.bob_prob(0, 0, 0), 0.0);
    }

    #[test]
    fn stationary_members_repeat_across_steps() {
        let sp = spaces(3, 2, 1);
        let p = PolicyClass::Stationary.member(sp, 0b1_0110_1001);
        for h in 1..3 {
            for s in 0..2 {
                for z in 0..2 {
                    assert_eq!(p.alice_prob(h, s, 0, z), p.alice_prob(0, s, 0, z));
                    assert_eq!(p.bob_prob(h, s, z), p.bob_prob(0, s, z));
                }
            }
        }
    }

    #[test]
    fn enumerate_respects_cap() {
        let sp = spaces(2, 2, 1);
        assert!(matches!(
            PolicyClass::FullDeterministic.enumerate(sp, 4096),
            Err(Error::SpaceTooLarge { .. })
        ));
        assert!(matches!(PolicyClass::Explicit(vec![]).enumerate(sp, 10), Err(Error::EmptyClass)));
    }

    #[test]
    fn csv_round_trip() {
        let sp = spaces(2, 2, 2);
        let p = PolicyPair::from_fns(sp, 0.25, |h, s, u, b| ((h + s + u + b as usize) % 3) as f64 / 2.0, |h, s, a| ((h * s + a as usize) % 2) as f64);
        assert_eq!(parse_policy(&render_policy(&p), sp).unwrap(), p);
    }

    #[test]
    fn csv_rejects_incomplete_or_corrupt_tables() {
        let sp = spaces(1, 1, 1);
        let text = render_policy(&PolicyPair::constant(sp, 1.0, 1.0, 1.0));
        let short: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_policy(&short, sp), Err(Error::SchemaMismatch(_))));
        let bad = text.replace("1.5,B,0,,1,1", "1.5,B,0,0,1,1");
        assert!(matches!(parse_policy(&bad, sp), Err(Error::CorruptRow { .. })));
    }
}
