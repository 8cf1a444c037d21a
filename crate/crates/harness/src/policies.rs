//! Named evaluation policies and policy-class selection.

use confgame_core::game_model::policy::{read_policy, PolicyClass, PolicyPair};
use confgame_core::game_model::spec::{GameSpec, Spaces};
use confgame_core::learner::DEFAULT_CLASS_CAP;
use confgame_core::oracle::exact_q::exact_optimal_pair;
use confgame_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Built-in evaluation policy names.
pub const POLICY_NAMES: &[&str] = &["always-0", "always-1", "uniform", "copy", "opposite", "optimum"];

/// Policy class searched by the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassChoice {
    /// Full deterministic class when it fits under the cap, otherwise the stationary class.
    #[default]
    Auto,
    Full,
    Stationary,
}

impl ClassChoice {
    /// Concrete class for the given spaces.
    pub fn resolve(self, spaces: Spaces) -> PolicyClass {
        match self {
            ClassChoice::Full => PolicyClass::FullDeterministic,
            ClassChoice::Stationary => PolicyClass::Stationary,
            ClassChoice::Auto => {
                if PolicyClass::FullDeterministic.size(spaces) <= DEFAULT_CLASS_CAP {
                    PolicyClass::FullDeterministic
                } else {
                    PolicyClass::Stationary
                }
            }
        }
    }
}

/// Target of a named policy: a fixed pair or the in-class oracle optimum.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyTarget {
    Fixed(PolicyPair),
    Optimum,
}

/// Resolves a built-in policy name or a policy CSV path.
///
/// `copy` repeats the other player's previous action and `opposite` flips it.
pub fn resolve_policy_name(name: &str, spaces: Spaces) -> Result<PolicyTarget> {
    let fixed = |p| Ok(PolicyTarget::Fixed(p));
    match name {
        "always-0" => fixed(PolicyPair::constant(spaces, 0.0, 0.0, 0.0)),
        "always-1" => fixed(PolicyPair::constant(spaces, 1.0, 1.0, 1.0)),
        "uniform" => fixed(PolicyPair::constant(spaces, 0.5, 0.5, 0.5)),
        "copy" => fixed(PolicyPair::from_fns(spaces, 1.0, |_, _, _, b| b as f64, |_, _, a| a as f64)),
        "opposite" => fixed(PolicyPair::from_fns(spaces, 0.0, |_, _, _, b| 1.0 - b as f64, |_, _, a| 1.0 - a as f64)),
        "optimum" => Ok(PolicyTarget::Optimum),
        path if std::path::Path::new(path).exists() => fixed(read_policy(path, spaces)?),
        other => Err(Error::SchemaMismatch(format!(
            "unknown policy '{other}': expected a policy file or one of {}",
            POLICY_NAMES.join(", ")
        ))),
    }
}

/// Concrete policy pair for a target, solving the oracle optimum when needed.
pub fn materialize(target: &PolicyTarget, game: &GameSpec, class: &PolicyClass) -> Result<PolicyPair> {
    match target {
        PolicyTarget::Fixed(p) => Ok(p.clone()),
        PolicyTarget::Optimum => Ok(exact_optimal_pair(game, class)?.policy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use confgame_core::game_model::fixtures;

    #[test]
    fn builtin_names_resolve() {
        let sp = fixtures::t2(2).game.spaces();
        for name in POLICY_NAMES {
            assert!(resolve_policy_name(name, sp).is_ok());
        }
        assert!(resolve_policy_name("bogus", sp).is_err());
    }

    #[test]
    fn auto_class_switches_to_stationary_for_long_horizons() {
        assert_eq!(ClassChoice::Auto.resolve(fixtures::t1().game.spaces()), PolicyClass::FullDeterministic);
        assert_eq!(ClassChoice::Auto.resolve(fixtures::t2(2).game.spaces()), PolicyClass::Stationary);
    }
}
