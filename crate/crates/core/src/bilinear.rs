//! Bilinear action-value coefficients.
//!
//! With a binary action `x` and binary instrument `z`, every function of
//! `(x, z)` is exactly `act·x + iv·z + int·x·z + level`. Coefficients are kept
//! in these *role* coordinates; [`Bilinear::canonical`] converts them to the
//! `(theta, gamma, omega)` coordinates on `(a, b)`, where Alice's action `a` is the action
//! at Alice's points and the instrument at Bob's points.

use serde::{Deserialize, Serialize};

use crate::game_model::spec::Player;

/// Coefficients of `act·x + iv·z + int·x·z + level`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bilinear {
    pub act: f64,
    pub iv: f64,
    pub int: f64,
    pub level: f64,
}

impl Bilinear {
    /// Coefficients from the values at the four `(x, z)` corners, indexed `[x][z]`.
    pub fn from_corners(q: [[f64; 2]; 2]) -> Self {
        Bilinear {
            act: q[1][0] - q[0][0],
            iv: q[0][1] - q[0][0],
            int: q[1][1] - q[1][0] - q[0][1] + q[0][0],
            level: q[0][0],
        }
    }

    /// Builds from an array `[act, iv, int, level]`.
    pub fn from_array(c: [f64; 4]) -> Self {
        Bilinear {
            act: c[0],
            iv: c[1],
            int: c[2],
            level: c[3],
        }
    }

    /// Coefficients as `[act, iv, int, level]`.
    pub fn to_array(self) -> [f64; 4] {
        [self.act, self.iv, self.int, self.level]
    }

    /// Value at action `x` and instrument `z`, each in `[0,1]`.
    pub fn eval(&self, x: f64, z: f64) -> f64 {
        self.act * x + self.iv * z + self.int * x * z + self.level
    }

    /// Canonical `(theta, gamma, omega, level)` coefficients on Alice's and Bob's actions
    /// given the player acting at the point.
    pub fn canonical(&self, actor: Player) -> [f64; 4] {
        match actor {
            Player::Alice => [self.act, self.iv, self.int, self.level],
            Player::Bob => [self.iv, self.act, self.int, self.level],
        }
    }

    /// Inverse of [`Bilinear::canonical`].
    pub fn from_canonical(c: [f64; 4], actor: Player) -> Self {
        match actor {
            Player::Alice => Bilinear::from_array(c),
            Player::Bob => Bilinear::from_array([c[1], c[0], c[2], c[3]]),
        }
    }

    /// Multiplies every coefficient by `c`.
    pub fn scale(self, c: f64) -> Bilinear {
        Bilinear {
            act: self.act * c,
            iv: self.iv * c,
            int: self.int * c,
            level: self.level * c,
        }
    }

    /// Largest absolute coefficient difference.
    pub fn max_abs_diff(&self, o: &Bilinear) -> f64 {
        let a = self.to_array();
        let b = o.to_array();
        (0..4).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
    }
}

/// Component-wise sum.
impl std::ops::Add for Bilinear {
    type Output = Bilinear;

    fn add(self, o: Bilinear) -> Bilinear {
        Bilinear {
            act: self.act + o.act,
            iv: self.iv + o.iv,
            int: self.int + o.int,
            level: self.level + o.level,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_round_trip() {
        let b = Bilinear::from_array([1.2, 0.5, 0.25, -0.3]);
        let q = [[b.eval(0.0, 0.0), b.eval(0.0, 1.0)], [b.eval(1.0, 0.0), b.eval(1.0, 1.0)]];
        assert!(Bilinear::from_corners(q).max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn canonical_swaps_roles_for_bob() {
        let b = Bilinear::from_array([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.canonical(Player::Bob), [2.0, 1.0, 3.0, 4.0]);
        assert_eq!(Bilinear::from_canonical(b.canonical(Player::Bob), Player::Bob), b);
    }
}
