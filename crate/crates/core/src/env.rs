//! Episodic vignette simulator.
//!
//! Each episode starts with a single revealed evidence. Asking reveals one
//! uniformly sampled hidden evidence; any triage action ends the episode.
//! Once evidence runs out or the question cap is reached, the environment
//! signals that a triage action is forced and further asks are an error.

use rand::Rng;
use serde::Serialize;

use crate::rewards::{counterfactual_reward, RewardVector};
use crate::types::{encode_state, AgentAction, EvidenceAssignment, StateVector, Vignette};
use crate::{Error, Result};

/// Default question cap per episode.
pub const DEFAULT_K_MAX: usize = 23;

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: StateVector,
    pub reward: RewardVector,
    pub done: bool,
    pub force_triage: bool,
}

/// One step of an episode trace, serialisable as a JSON-lines record.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub vignette_id: String,
    pub step: usize,
    pub action: String,
    pub observed: usize,
    pub done: bool,
    pub force_triage: bool,
}

/// Live episode bookkeeping: the configured vignette, reveal order, and
/// question count.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub vignette: Vignette,
    pub revealed: Vec<EvidenceAssignment>,
    pub questions_asked: usize,
    pub done: bool,
}

/// The vignette environment. Reusable across episodes via [`VignetteEnv::reset`].
pub struct VignetteEnv {
    evidence_space: usize,
    k_max: usize,
    episode: Option<Live>,
    trace: Option<Vec<StepTrace>>,
}

struct Live {
    state: EpisodeState,
    dense: StateVector,
    hidden: Vec<EvidenceAssignment>,
    reward: RewardVector,
    force_triage: bool,
}

impl VignetteEnv {
    pub fn new(evidence_space: usize, k_max: usize) -> Self {
        Self {
            evidence_space,
            k_max,
            episode: None,
            trace: None,
        }
    }

    pub fn evidence_space(&self) -> usize {
        self.evidence_space
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Start recording step traces; any previous buffer is cleared.
    pub fn set_tracing(&mut self, enabled: bool) {
        self.trace = if enabled { Some(Vec::new()) } else { None };
    }

    pub fn take_trace(&mut self) -> Vec<StepTrace> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Configure a new episode and return the initial state with exactly one
    /// evidence revealed, chosen uniformly.
    pub fn reset<R: Rng>(&mut self, vignette: &Vignette, rng: &mut R) -> Result<StateVector> {
        if vignette.evidence.is_empty() {
            return Err(Error::InvalidVignette {
                id: vignette.id.clone(),
                reason: "no evidence to reveal".into(),
            });
        }
        // Validates registry bounds and duplicates up front.
        encode_state(&vignette.evidence, self.evidence_space)?;
        let reward = counterfactual_reward(&vignette.decisions)?;

        let mut hidden = vignette.evidence.clone();
        let first = hidden.swap_remove(rng.random_range(0..hidden.len()));
        let mut dense = StateVector::zeros(self.evidence_space);
        dense.set(first);

        let force_triage = hidden.is_empty() || self.k_max == 0;
        self.episode = Some(Live {
            state: EpisodeState {
                vignette: vignette.clone(),
                revealed: vec![first],
                questions_asked: 0,
                done: false,
            },
            dense: dense.clone(),
            hidden,
            reward,
            force_triage,
        });
        Ok(dense)
    }

    /// Apply one agent action. Asking reveals one hidden evidence; any triage
    /// action terminates. The counterfactual reward vector is returned on
    /// every step.
    pub fn step<R: Rng>(&mut self, action: AgentAction, rng: &mut R) -> Result<StepOutcome> {
        let live = self.episode.as_mut().ok_or(Error::EpisodeFinished)?;
        if live.state.done {
            return Err(Error::EpisodeFinished);
        }
        match action {
            AgentAction::Ask => {
                if live.force_triage {
                    return Err(Error::ForcedTriageViolation);
                }
                let revealed = live.hidden.swap_remove(rng.random_range(0..live.hidden.len()));
                live.dense.set(revealed);
                live.state.revealed.push(revealed);
                live.state.questions_asked += 1;
                live.force_triage =
                    live.hidden.is_empty() || live.state.questions_asked >= self.k_max;
            }
            AgentAction::Triage(_) => {
                live.state.done = true;
            }
        }
        let outcome = StepOutcome {
            next_state: live.dense.clone(),
            reward: live.reward,
            done: live.state.done,
            force_triage: live.force_triage,
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.push(StepTrace {
                vignette_id: live.state.vignette.id.clone(),
                step: live.state.questions_asked,
                action: match action {
                    AgentAction::Ask => "ask".into(),
                    AgentAction::Triage(level) => level.name().into(),
                },
                observed: live.dense.observed_count(),
                done: outcome.done,
                force_triage: outcome.force_triage,
            });
        }
        Ok(outcome)
    }

    /// True once the agent must pick a triage action.
    pub fn force_triage(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.force_triage)
    }

    pub fn done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.state.done)
    }

    pub fn questions_asked(&self) -> usize {
        self.episode
            .as_ref()
            .map_or(0, |e| e.state.questions_asked)
    }

    pub fn state(&self) -> Option<&StateVector> {
        self.episode.as_ref().map(|e| &e.dense)
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    /// Cached counterfactual reward for the configured vignette.
    pub fn reward(&self) -> Option<RewardVector> {
        self.episode.as_ref().map(|e| e.reward)
    }
}
