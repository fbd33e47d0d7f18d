//! Counterfactual vector rewards derived from expert decision bags.
//!
//! Every step of an episode carries a reward for each of the four triage
//! actions, whether or not the agent picked one: the normalised probability
//! of that decision in the bag, scaled so the modal decision earns exactly 1.
//! The ask action gets no environment reward; its target is built by the
//! agent from its own Q-values.

use serde::{Deserialize, Serialize};

use crate::types::{DecisionBag, TriageLevel};
use crate::{Error, Result};

/// Per-triage-action reward in [0,1]; the max entry is exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    values: [f64; 4],
}

impl RewardVector {
    pub fn get(&self, level: TriageLevel) -> f64 {
        self.values[level.index()]
    }

    pub fn values(&self) -> &[f64; 4] {
        &self.values
    }
}

/// Reward for each triage action: multiplicity divided by the modal
/// multiplicity. The two integer counts make the ratio exact before the
/// single floating division, so the modal entries are bit-exactly 1.
pub fn counterfactual_reward(bag: &DecisionBag) -> Result<RewardVector> {
    if bag.is_empty() {
        return Err(Error::EmptyDecisionBag);
    }
    let max = TriageLevel::ALL
        .into_iter()
        .map(|l| bag.count(l))
        .max()
        .unwrap();
    let mut values = [0.0; 4];
    for level in TriageLevel::ALL {
        values[level.index()] = f64::from(bag.count(level)) / f64::from(max);
    }
    Ok(RewardVector { values })
}

/// Target Q-value for a terminal triage action: the reward alone, with no
/// bootstrapped future term.
pub fn terminal_target(reward: &RewardVector, level: TriageLevel) -> f64 {
    reward.get(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unanimous_bag() {
        let bag = DecisionBag::from_counts(0, 0, 3, 0);
        let r = counterfactual_reward(&bag).unwrap();
        assert_eq!(r.values(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn mixed_bag_normalised_by_mode() {
        // counts (1,2,1,0): probabilities (.25,.5,.25,0) divided by .5
        let bag = DecisionBag::from_counts(1, 2, 1, 0);
        let r = counterfactual_reward(&bag).unwrap();
        assert_eq!(r.values(), &[0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn tied_modes_both_one() {
        let bag = DecisionBag::from_counts(1, 0, 0, 1);
        let r = counterfactual_reward(&bag).unwrap();
        assert_eq!(r.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_bag_errors() {
        assert!(matches!(
            counterfactual_reward(&DecisionBag::new()),
            Err(Error::EmptyDecisionBag)
        ));
    }

    #[test]
    fn terminal_target_projects() {
        let bag = DecisionBag::from_counts(1, 2, 1, 0);
        let r = counterfactual_reward(&bag).unwrap();
        assert_eq!(terminal_target(&r, TriageLevel::Yellow), 1.0);
        assert_eq!(terminal_target(&r, TriageLevel::Blue), 0.0);
    }

    proptest! {
        #[test]
        fn modal_levels_get_exactly_one(
            red in 0u32..6, yellow in 0u32..6, green in 0u32..6, blue in 0u32..6,
        ) {
            let bag = DecisionBag::from_counts(red, yellow, green, blue);
            prop_assume!(!bag.is_empty());
            let r = counterfactual_reward(&bag).unwrap();
            let max_count = [red, yellow, green, blue].into_iter().max().unwrap();
            for level in TriageLevel::ALL {
                let value = r.get(level);
                prop_assert!((0.0..=1.0).contains(&value));
                if bag.count(level) == max_count {
                    prop_assert_eq!(value, 1.0);
                } else {
                    prop_assert!(value < 1.0);
                }
            }
        }

        #[test]
        fn scaling_multiplicities_is_invariant(
            red in 0u32..6, yellow in 0u32..6, green in 0u32..6, blue in 0u32..6,
            scale in 1u32..5,
        ) {
            let bag = DecisionBag::from_counts(red, yellow, green, blue);
            prop_assume!(!bag.is_empty());
            let scaled =
                DecisionBag::from_counts(red * scale, yellow * scale, green * scale, blue * scale);
            prop_assert_eq!(
                counterfactual_reward(&bag).unwrap(),
                counterfactual_reward(&scaled).unwrap()
            );
        }

        #[test]
        fn insertion_order_is_irrelevant(levels in proptest::collection::vec(0usize..4, 1..12)) {
            let levels: Vec<_> = levels
                .into_iter()
                .map(|i| TriageLevel::from_index(i).unwrap())
                .collect();
            let forward = DecisionBag::from_levels(levels.iter().copied());
            let backward = DecisionBag::from_levels(levels.iter().rev().copied());
            prop_assert_eq!(
                counterfactual_reward(&forward).unwrap(),
                counterfactual_reward(&backward).unwrap()
            );
        }
    }
}
