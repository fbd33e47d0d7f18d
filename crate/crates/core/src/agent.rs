//! The DyQN decision maker.
//!
//! Triage actions are terminal and take their targets straight from the
//! counterfactual reward vector. The ask action has no environment reward;
//! its target is computed dynamically from the current triage Q-values,
//! treating them as probabilities that the triage choice is appropriate:
//!
//! * OR query: "wrong now, or right in the next state" —
//!   `(1 - Qm(s)) + Qm(s) * Qm(s')`.
//! * AND query: "a first future step where the triage becomes right" —
//!   `(1 - Qm(s)) * (Qm(s') + (1 - Qm(s')) * Q(ask|s'))`.
//!
//! The partially-observed variants reuse the same machinery with triage
//! heads frozen to a supervised classifier, so only stopping is learned.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::SupervisedModel;
use crate::env::VignetteEnv;
use crate::memory::{priority_from_q, PrioritizedMemory};
use crate::metrics::{aggregate, EpisodeResult, MetricReport, SlidingWindow};
use crate::nn::{Optimizer, QNetwork};
use crate::rewards::RewardVector;
use crate::types::{
    AgentAction, Dataset, DecisionBag, StateVector, TriageLevel, ACTION_COUNT, ASK_INDEX,
};
use crate::{Error, Result};

/// Which probabilistic query builds the ask target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Or,
    And,
}

/// Agent hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub query_kind: QueryKind,
    /// Exploration noise on the ask head at step 0.
    pub sigma_start: f64,
    /// Noise floor after the decay window.
    pub sigma_end: f64,
    /// Steps over which the noise decays linearly.
    pub sigma_decay_steps: u64,
    /// Environment steps stored before any optimisation happens.
    pub burn_in: u64,
    /// Tuples sampled per optimisation cycle.
    pub batch_size: usize,
    pub lr: f64,
    /// Question cap per episode.
    pub k_max: usize,
    /// Restrict Qm to the vignette's appropriate triages when building
    /// targets (training-time only; selection always uses all heads).
    pub use_appropriate_qm: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            query_kind: QueryKind::Or,
            sigma_start: 0.05,
            sigma_end: 0.001,
            sigma_decay_steps: 3000,
            burn_in: 1000,
            batch_size: 200,
            lr: 1e-3,
            k_max: crate::env::DEFAULT_K_MAX,
            use_appropriate_qm: true,
        }
    }
}

/// One stored interaction, plus the triages known appropriate for its
/// vignette (used by the restricted Qm during target construction).
#[derive(Debug, Clone)]
pub struct ExperienceTuple {
    pub state: StateVector,
    pub action: AgentAction,
    pub reward: RewardVector,
    pub next_state: StateVector,
    pub terminal: bool,
    pub appropriate_set: Vec<TriageLevel>,
}

/// Levels lying at or between a bag's urgency bounds.
pub fn appropriate_levels(bag: &DecisionBag) -> Result<Vec<TriageLevel>> {
    let (most, least) = crate::types::urgency_bounds(bag)?;
    Ok(TriageLevel::ALL[most.index()..=least.index()].to_vec())
}

/// Maximum triage-head Q-value, optionally restricted to a subset of levels.
pub fn q_m(qvalues: &[f64; ACTION_COUNT], restrict_to: Option<&[TriageLevel]>) -> Result<f64> {
    let max = match restrict_to {
        Some(levels) => {
            if levels.is_empty() {
                return Err(Error::EmptyRestriction);
            }
            levels
                .iter()
                .map(|l| qvalues[l.index()])
                .fold(f64::NEG_INFINITY, f64::max)
        }
        None => qvalues[..ASK_INDEX]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(max)
}

fn check_unit(value: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::DomainError { value });
    }
    Ok(value)
}

/// OR-query ask target: `(1 - qm_s) + qm_s * qm_next`.
pub fn target_or(qm_s: f64, qm_next: f64) -> Result<f64> {
    check_unit(qm_s)?;
    check_unit(qm_next)?;
    Ok((1.0 - qm_s) + qm_s * qm_next)
}

/// AND-query ask target: `(1 - qm_s) * (qm_next + (1 - qm_next) * q_ask_next)`.
pub fn target_and(qm_s: f64, qm_next: f64, q_ask_next: f64) -> Result<f64> {
    check_unit(qm_s)?;
    check_unit(qm_next)?;
    check_unit(q_ask_next)?;
    Ok((1.0 - qm_s) * (qm_next + (1.0 - qm_next) * q_ask_next))
}

/// Exploration noise: linear decay from `sigma_start` to `sigma_end` over
/// `sigma_decay_steps`, constant afterwards.
pub fn sigma_schedule(step: u64, config: &AgentConfig) -> f64 {
    if config.sigma_decay_steps == 0 || step >= config.sigma_decay_steps {
        return config.sigma_end;
    }
    let frac = step as f64 / config.sigma_decay_steps as f64;
    config.sigma_start + (config.sigma_end - config.sigma_start) * frac
}

/// Greedy action with Gaussian noise added to the ask entry only. Ties break
/// toward the lowest index, so the most urgent triage wins and any triage
/// beats ask on an exact tie. With `ask_allowed = false` the ask entry is
/// excluded and no noise is drawn.
pub fn select_action<R: Rng>(
    qvalues: &[f64; ACTION_COUNT],
    sigma: f64,
    ask_allowed: bool,
    rng: &mut R,
) -> AgentAction {
    let mut best = AgentAction::Triage(TriageLevel::Red);
    let mut best_value = qvalues[0];
    for action in AgentAction::ALL.into_iter().skip(1) {
        let index = action.index();
        if index == ASK_INDEX && !ask_allowed {
            continue;
        }
        let mut value = qvalues[index];
        if index == ASK_INDEX && sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma must be non-negative");
            value += normal.sample(rng);
        }
        if value > best_value {
            best = action;
            best_value = value;
        }
    }
    best
}

enum TriageSource {
    /// Triage heads come from the network itself.
    Network,
    /// Triage heads come from a frozen classifier; only the ask head trains.
    Frozen {
        model: SupervisedModel,
        cache: RefCell<HashMap<StateVector, [f64; 4]>>,
    },
}

/// A learning agent: a Q-network, its configuration, and the source of its
/// triage heads.
pub struct DyqnAgent {
    pub net: QNetwork,
    pub config: AgentConfig,
    triage_source: TriageSource,
}

impl DyqnAgent {
    pub fn new(net: QNetwork, config: AgentConfig) -> Self {
        Self {
            net,
            config,
            triage_source: TriageSource::Network,
        }
    }

    /// Partially-observed variant: triage Q-values are the classifier's
    /// calibrated class probabilities and stay fixed during training.
    pub fn with_frozen_triage(net: QNetwork, config: AgentConfig, model: SupervisedModel) -> Self {
        Self {
            net,
            config,
            triage_source: TriageSource::Frozen {
                model,
                cache: RefCell::new(HashMap::new()),
            },
        }
    }

    pub fn is_partially_observed(&self) -> bool {
        matches!(self.triage_source, TriageSource::Frozen { .. })
    }

    pub fn frozen_model(&self) -> Option<&SupervisedModel> {
        match &self.triage_source {
            TriageSource::Frozen { model, .. } => Some(model),
            TriageSource::Network => None,
        }
    }

    /// Triage-head Q-values for a state.
    pub fn triage_q(&self, state: &StateVector) -> Result<[f64; 4]> {
        match &self.triage_source {
            TriageSource::Network => {
                let q = self.net.forward(state)?;
                Ok([q[0], q[1], q[2], q[3]])
            }
            TriageSource::Frozen { model, cache } => {
                if let Some(hit) = cache.borrow().get(state) {
                    return Ok(*hit);
                }
                let probs = model.predict_probabilities(state)?;
                cache.borrow_mut().insert(state.clone(), probs);
                Ok(probs)
            }
        }
    }

    /// All five Q-values: the triage source's four heads plus the network's
    /// ask head.
    pub fn qvalues(&self, state: &StateVector) -> Result<[f64; ACTION_COUNT]> {
        match &self.triage_source {
            TriageSource::Network => self.net.forward(state),
            TriageSource::Frozen { .. } => {
                let triage = self.triage_q(state)?;
                let ask = self.net.forward(state)?[ASK_INDEX];
                Ok([triage[0], triage[1], triage[2], triage[3], ask])
            }
        }
    }

    /// Per-action target matrix and loss mask for a batch.
    ///
    /// Triage heads target the reward vector and are always in the loss for
    /// the full agent (never for the frozen-triage one). The ask head targets
    /// the configured query on non-terminal tuples and is masked on terminal
    /// ones.
    pub fn build_targets(
        &self,
        batch: &[Arc<ExperienceTuple>],
    ) -> Result<(Vec<[f64; ACTION_COUNT]>, Vec<[bool; ACTION_COUNT]>)> {
        let triage_trainable = !self.is_partially_observed();
        let mut targets = Vec::with_capacity(batch.len());
        let mut masks = Vec::with_capacity(batch.len());
        for tuple in batch {
            let mut target = [0.0; ACTION_COUNT];
            let mut mask = [false; ACTION_COUNT];
            for level in TriageLevel::ALL {
                target[level.index()] = tuple.reward.get(level);
                mask[level.index()] = triage_trainable;
            }
            if !tuple.terminal {
                let restrict = if self.config.use_appropriate_qm {
                    Some(tuple.appropriate_set.as_slice())
                } else {
                    None
                };
                let q_s = self.qvalues(&tuple.state)?;
                let q_next = self.qvalues(&tuple.next_state)?;
                let qm_s = q_m(&q_s, restrict)?;
                let qm_next = q_m(&q_next, restrict)?;
                target[ASK_INDEX] = match self.config.query_kind {
                    QueryKind::Or => target_or(qm_s, qm_next)?,
                    QueryKind::And => target_and(qm_s, qm_next, q_next[ASK_INDEX])?,
                };
                mask[ASK_INDEX] = true;
            }
            targets.push(target);
            masks.push(mask);
        }
        Ok((targets, masks))
    }

    /// One optimisation cycle on a sampled batch; returns the loss.
    pub fn optimize(
        &mut self,
        batch: &[Arc<ExperienceTuple>],
        optimizer: &mut Optimizer,
        weight_decay: f64,
    ) -> Result<f64> {
        let (targets, masks) = self.build_targets(batch)?;
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.to_f64()).collect();
        let (loss, grads) = self.net.backward(&states, &targets, &masks)?;
        if weight_decay > 0.0 {
            self.net.decay_weights(1.0 - self.config.lr * weight_decay);
        }
        optimizer.step(&mut self.net, &grads, self.config.lr);
        Ok(loss)
    }

    /// Greedy (noise-free) pass over a whole dataset.
    pub fn evaluate(&self, dataset: &Dataset, seed: u64) -> Result<MetricReport> {
        let results = self.evaluate_episodes(dataset, seed)?;
        aggregate(&results, dataset)
    }

    pub fn evaluate_episodes(&self, dataset: &Dataset, seed: u64) -> Result<Vec<EpisodeResult>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut env = VignetteEnv::new(dataset.evidence_space(), self.config.k_max);
        let mut results = Vec::with_capacity(dataset.len());
        for vignette in &dataset.vignettes {
            let mut state = env.reset(vignette, &mut rng)?;
            let decision = loop {
                let q = self.qvalues(&state)?;
                let action = select_action(&q, 0.0, !env.force_triage(), &mut rng);
                let outcome = env.step(action, &mut rng)?;
                if let AgentAction::Triage(level) = action {
                    debug_assert!(outcome.done);
                    break level;
                }
                state = outcome.next_state;
            };
            results.push(EpisodeResult {
                vignette_id: vignette.id.clone(),
                decision,
                questions_asked: env.questions_asked(),
            });
        }
        Ok(results)
    }
}

use rand::SeedableRng;

/// Which split a metric row was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One row of the training metric log.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub step: u64,
    pub split: Split,
    pub report: MetricReport,
    pub loss: f64,
    pub sigma: f64,
}

/// Run-shape knobs that are not agent hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    /// Environment steps to run.
    pub max_steps: u64,
    /// Evaluate the full test set every this many steps.
    pub eval_cadence: u64,
    /// Sliding window length for train metrics.
    pub window: usize,
    /// Seed stream for the periodic test evaluations.
    pub eval_seed: u64,
    pub optimizer: OptimizerKind,
    /// L2 shrinkage applied before each gradient step; 0 disables it.
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_steps: 30_000,
            eval_cadence: 250,
            window: 20,
            eval_seed: 0,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
        }
    }
}

/// The training cycle: play vignettes with noisy-greedy selection, store
/// every transition with its priority, and after the burn-in run one
/// optimisation cycle per environment step. Produces the interleaved
/// train/test metric log.
pub fn train<R: Rng>(
    agent: &mut DyqnAgent,
    train_set: &Dataset,
    test_set: &Dataset,
    memory: &mut PrioritizedMemory,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<Vec<MetricRow>> {
    if train_set.is_empty() {
        return Err(Error::ConfigError("empty training set".into()));
    }
    let evidence_space = train_set.evidence_space();
    if agent.net.input_dim() != evidence_space {
        return Err(Error::ShapeError {
            expected: format!("network input {}", agent.net.input_dim()),
            got: format!("evidence space {evidence_space}"),
        });
    }
    let mut env = VignetteEnv::new(evidence_space, agent.config.k_max);
    let mut window = SlidingWindow::new(opts.window);
    let mut optimizer = match opts.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(),
        OptimizerKind::Adam => Optimizer::adam(&agent.net),
    };
    let mut rows = Vec::new();
    let mut step: u64 = 0;
    let mut last_loss = 0.0;

    'games: while step < opts.max_steps {
        let vignette = &train_set.vignettes[rng.random_range(0..train_set.len())];
        let appropriate = appropriate_levels(&vignette.decisions)?;
        let mut state = env.reset(vignette, rng)?;
        loop {
            let sigma = sigma_schedule(step, &agent.config);
            let q = agent.qvalues(&state)?;
            let action = select_action(&q, sigma, !env.force_triage(), rng);
            let outcome = env.step(action, rng)?;

            let tuple = ExperienceTuple {
                state: state.clone(),
                action,
                reward: outcome.reward,
                next_state: outcome.next_state.clone(),
                terminal: outcome.done,
                appropriate_set: appropriate.clone(),
            };
            let triage_q = [q[0], q[1], q[2], q[3]];
            let nu = priority_from_q(&tuple, &triage_q, memory.config());
            memory.store(Arc::new(tuple), nu);
            step += 1;

            if step > agent.config.burn_in && !memory.is_empty() {
                let batch = memory.sample(agent.config.batch_size, rng)?;
                last_loss = agent.optimize(&batch, &mut optimizer, opts.weight_decay)?;
            }

            if opts.eval_cadence > 0 && step % opts.eval_cadence == 0 {
                let report = agent.evaluate(test_set, opts.eval_seed.wrapping_add(step))?;
                rows.push(MetricRow {
                    step,
                    split: Split::Test,
                    report,
                    loss: last_loss,
                    sigma,
                });
            }

            if let AgentAction::Triage(decision) = action {
                let report = window.push(
                    EpisodeResult {
                        vignette_id: vignette.id.clone(),
                        decision,
                        questions_asked: env.questions_asked(),
                    },
                    train_set,
                )?;
                rows.push(MetricRow {
                    step,
                    split: Split::Train,
                    report,
                    loss: last_loss,
                    sigma,
                });
                break;
            }
            state = outcome.next_state;
            if step >= opts.max_steps {
                break 'games;
            }
        }
    }
    Ok(rows)
}
