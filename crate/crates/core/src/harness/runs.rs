//! Train, eval, k-fold, and comparison runs.
//!
//! Every run derives all randomness from the configured seed, writes its
//! metric CSV and a JSON summary (final-window means over the last ten test
//! evaluations), and drops the resolved config beside the outputs.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentConfig, DyqnAgent, MetricRow, QueryKind, Split};
use crate::baselines::{
    expand_dataset, policy_always_green, policy_random, train_fully_observed, SupervisedModel,
};
use crate::env::VignetteEnv;
use crate::memory::PrioritizedMemory;
use crate::metrics::{aggregate, human_baseline, EpisodeResult, SlidingWindow};
use crate::nn::QNetwork;
use crate::types::{encode_state, AgentAction, Dataset, TriageLevel};
use crate::{Error, Result};

use super::{mean_ci95, metrics_to_csv, split_dataset, RunConfig};

/// Seed offsets so the network init, supervised fits, and expansion draws
/// come from distinct streams of the one configured seed.
const SALT_NET: u64 = 0x5eed_0001;
const SALT_SUPERVISED: u64 = 0x5eed_0002;
const SALT_POW: u64 = 0x5eed_0003;

/// Every agent the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    DyqnOr,
    DyqnAnd,
    PartialOr,
    PartialAnd,
    Random,
    AlwaysGreen,
    FullyObserved,
    HumanBaseline,
}

impl AgentKind {
    pub const ALL: [AgentKind; 8] = [
        AgentKind::DyqnOr,
        AgentKind::DyqnAnd,
        AgentKind::PartialOr,
        AgentKind::PartialAnd,
        AgentKind::Random,
        AgentKind::AlwaysGreen,
        AgentKind::FullyObserved,
        AgentKind::HumanBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::DyqnOr => "dyqn-or",
            AgentKind::DyqnAnd => "dyqn-and",
            AgentKind::PartialOr => "partial-or",
            AgentKind::PartialAnd => "partial-and",
            AgentKind::Random => "random",
            AgentKind::AlwaysGreen => "always-green",
            AgentKind::FullyObserved => "fully-observed",
            AgentKind::HumanBaseline => "human-baseline",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(
            self,
            AgentKind::DyqnOr | AgentKind::DyqnAnd | AgentKind::PartialOr | AgentKind::PartialAnd
        )
    }

    fn query_kind(self) -> Option<QueryKind> {
        match self {
            AgentKind::DyqnOr | AgentKind::PartialOr => Some(QueryKind::Or),
            AgentKind::DyqnAnd | AgentKind::PartialAnd => Some(QueryKind::And),
            _ => None,
        }
    }
}

/// Final-window statistics for one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub appropriateness: f64,
    pub appropriateness_ci95: f64,
    pub safety: f64,
    pub safety_ci95: f64,
    /// `None` means the agent sees full evidence and asks no questions.
    pub avg_questions: Option<f64>,
    pub avg_questions_ci95: Option<f64>,
    /// Number of evaluations the window covers.
    pub n: usize,
}

/// JSON summary written beside each run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub seed: u64,
    pub steps: u64,
    pub train: Option<SummaryBlock>,
    pub test: SummaryBlock,
    pub n_test_evaluations: usize,
}

/// Mean/CI95 block over the last `window` rows of one split.
fn summarize_rows(rows: &[MetricRow], split: Split, window: usize) -> Option<SummaryBlock> {
    let picked: Vec<&MetricRow> = rows.iter().filter(|r| r.split == split).collect();
    if picked.is_empty() {
        return None;
    }
    let tail = &picked[picked.len().saturating_sub(window)..];
    let c = |f: fn(&MetricRow) -> f64| -> Vec<f64> { tail.iter().map(|r| f(r)).collect() };
    let (app, app_ci) = mean_ci95(&c(|r| r.report.appropriateness));
    let (saf, saf_ci) = mean_ci95(&c(|r| r.report.safety));
    let (q, q_ci) = mean_ci95(&c(|r| r.report.avg_questions));
    Some(SummaryBlock {
        appropriateness: app,
        appropriateness_ci95: app_ci,
        safety: saf,
        safety_ci95: saf_ci,
        avg_questions: Some(q),
        avg_questions_ci95: Some(q_ci),
        n: tail.len(),
    })
}

/// Evaluations of the summary window ("last 10").
pub const SUMMARY_WINDOW: usize = 10;

enum Artifacts {
    None,
    Net(QNetwork),
    Model(SupervisedModel),
    NetAndModel(QNetwork, SupervisedModel),
}

struct Execution {
    rows: Vec<MetricRow>,
    artifacts: Artifacts,
    train_block: Option<SummaryBlock>,
    test_block: SummaryBlock,
    steps: u64,
}

/// Run one agent on an explicit split. `whole` backs the human baseline,
/// which is a property of the decision bags rather than of a model.
fn execute(
    config: &RunConfig,
    kind: AgentKind,
    train_set: &Dataset,
    test_set: &Dataset,
    whole: &Dataset,
) -> Result<Execution> {
    match kind {
        AgentKind::DyqnOr | AgentKind::DyqnAnd | AgentKind::PartialOr | AgentKind::PartialAnd => {
            let agent_config = AgentConfig {
                query_kind: kind.query_kind().unwrap(),
                ..config.agent.clone()
            };
            let mut net_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SALT_NET);
            let net = QNetwork::init(
                train_set.evidence_space(),
                config.net.hidden_dim,
                &mut net_rng,
            );
            let mut agent = if matches!(kind, AgentKind::PartialOr | AgentKind::PartialAnd) {
                let mut pow_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SALT_POW);
                let d_pow = expand_dataset(train_set, config.pow_cap_exponent, &mut pow_rng);
                let mut sup_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SALT_SUPERVISED);
                let model = train_fully_observed(&d_pow, &config.supervised, &mut sup_rng)?;
                DyqnAgent::with_frozen_triage(net, agent_config, model)
            } else {
                DyqnAgent::new(net, agent_config)
            };
            let mut memory = PrioritizedMemory::new(config.memory.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let rows = agent::train(
                &mut agent,
                train_set,
                test_set,
                &mut memory,
                &config.train,
                &mut rng,
            )?;
            let steps = rows.iter().map(|r| r.step).max().unwrap_or(0);
            let train_block = summarize_rows(&rows, Split::Train, SUMMARY_WINDOW);
            let test_block = summarize_rows(&rows, Split::Test, SUMMARY_WINDOW)
                .ok_or_else(|| Error::ConfigError("run produced no test evaluation".into()))?;
            let artifacts = match kind {
                AgentKind::PartialOr | AgentKind::PartialAnd => {
                    let model = agent.frozen_model().unwrap().clone();
                    Artifacts::NetAndModel(agent.net.clone(), model)
                }
                _ => Artifacts::Net(agent.net.clone()),
            };
            Ok(Execution {
                rows,
                artifacts,
                train_block,
                test_block,
                steps,
            })
        }
        AgentKind::Random | AgentKind::AlwaysGreen => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let rows = run_policy(kind, config, train_set, test_set, &mut rng)?;
            let steps = rows.iter().map(|r| r.step).max().unwrap_or(0);
            let train_block = summarize_rows(&rows, Split::Train, SUMMARY_WINDOW);
            let test_block = summarize_rows(&rows, Split::Test, SUMMARY_WINDOW)
                .ok_or_else(|| Error::ConfigError("run produced no test evaluation".into()))?;
            Ok(Execution {
                rows,
                artifacts: Artifacts::None,
                train_block,
                test_block,
                steps,
            })
        }
        AgentKind::FullyObserved => {
            let mut sup_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SALT_SUPERVISED);
            let model = train_fully_observed(train_set, &config.supervised, &mut sup_rng)?;
            let report = evaluate_fully_observed(&model, test_set)?;
            let test_block = SummaryBlock {
                appropriateness: report.appropriateness,
                appropriateness_ci95: 0.0,
                safety: report.safety,
                safety_ci95: 0.0,
                avg_questions: None,
                avg_questions_ci95: None,
                n: 1,
            };
            Ok(Execution {
                rows: Vec::new(),
                artifacts: Artifacts::Model(model),
                train_block: None,
                test_block,
                steps: 0,
            })
        }
        AgentKind::HumanBaseline => {
            let (h_a, h_s) = human_baseline(whole, config.human_min_decisions)?;
            let test_block = SummaryBlock {
                appropriateness: h_a,
                appropriateness_ci95: 0.0,
                safety: h_s,
                safety_ci95: 0.0,
                avg_questions: None,
                avg_questions_ci95: None,
                n: 1,
            };
            Ok(Execution {
                rows: Vec::new(),
                artifacts: Artifacts::None,
                train_block: None,
                test_block,
                steps: 0,
            })
        }
    }
}

/// Argmax over calibrated class probabilities; ties go to the most urgent.
fn supervised_decision(model: &SupervisedModel, dataset: &Dataset, vignette_index: usize) -> Result<TriageLevel> {
    let vignette = &dataset.vignettes[vignette_index];
    let state = encode_state(&vignette.evidence, dataset.evidence_space())?;
    let probs = model.predict_probabilities(&state)?;
    let mut best = TriageLevel::Red;
    for level in TriageLevel::ALL {
        if probs[level.index()] > probs[best.index()] {
            best = level;
        }
    }
    Ok(best)
}

/// Full-evidence evaluation of the supervised ensemble.
pub fn evaluate_fully_observed(
    model: &SupervisedModel,
    dataset: &Dataset,
) -> Result<crate::metrics::MetricReport> {
    let mut results = Vec::with_capacity(dataset.len());
    for index in 0..dataset.len() {
        results.push(EpisodeResult {
            vignette_id: dataset.vignettes[index].id.clone(),
            decision: supervised_decision(model, dataset, index)?,
            questions_asked: 0,
        });
    }
    aggregate(&results, dataset)
}

/// Run a non-learning policy through the same episode/evaluation cadence as
/// the learning agents.
fn run_policy<R: Rng>(
    kind: AgentKind,
    config: &RunConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    rng: &mut R,
) -> Result<Vec<MetricRow>> {
    let opts = &config.train;
    let mut env = VignetteEnv::new(train_set.evidence_space(), config.agent.k_max);
    let mut window = SlidingWindow::new(opts.window);
    let mut rows = Vec::new();
    let mut step: u64 = 0;
    'games: while step < opts.max_steps {
        let vignette = &train_set.vignettes[rng.random_range(0..train_set.len())];
        env.reset(vignette, rng)?;
        loop {
            let action = match kind {
                AgentKind::Random => policy_random(rng, !env.force_triage()),
                _ => policy_always_green(),
            };
            let outcome = env.step(action, rng)?;
            step += 1;
            if opts.eval_cadence > 0 && step % opts.eval_cadence == 0 {
                let report = evaluate_policy(
                    kind,
                    test_set,
                    config.agent.k_max,
                    opts.eval_seed.wrapping_add(step),
                )?;
                rows.push(MetricRow {
                    step,
                    split: Split::Test,
                    report,
                    loss: 0.0,
                    sigma: 0.0,
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
                    loss: 0.0,
                    sigma: 0.0,
                });
                break;
            }
            debug_assert!(!outcome.done);
            if step >= opts.max_steps {
                break 'games;
            }
        }
    }
    Ok(rows)
}

/// One full-test-set pass of a non-learning policy.
pub fn evaluate_policy(
    kind: AgentKind,
    dataset: &Dataset,
    k_max: usize,
    seed: u64,
) -> Result<crate::metrics::MetricReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = VignetteEnv::new(dataset.evidence_space(), k_max);
    let mut results = Vec::with_capacity(dataset.len());
    for vignette in &dataset.vignettes {
        env.reset(vignette, &mut rng)?;
        let decision = loop {
            let action = match kind {
                AgentKind::Random => policy_random(&mut rng, !env.force_triage()),
                _ => policy_always_green(),
            };
            env.step(action, &mut rng)?;
            if let AgentAction::Triage(level) = action {
                break level;
            }
        };
        results.push(EpisodeResult {
            vignette_id: vignette.id.clone(),
            decision,
            questions_asked: env.questions_asked(),
        });
    }
    aggregate(&results, dataset)
}

fn write_artifacts(artifacts: &Artifacts, out: &Path) -> Result<()> {
    match artifacts {
        Artifacts::None => {}
        Artifacts::Net(net) => net.save_checkpoint(&out.join("checkpoint.json"))?,
        Artifacts::Model(model) => model.save_json(&out.join("supervised_model.json"))?,
        Artifacts::NetAndModel(net, model) => {
            net.save_checkpoint(&out.join("checkpoint.json"))?;
            model.save_json(&out.join("supervised_model.json"))?;
        }
    }
    Ok(())
}

/// Train (or evaluate, for the non-learning rows) one agent and write
/// metrics.csv, summary.json, checkpoints, and the resolved config.
pub fn run_train(
    config: &RunConfig,
    dataset: &Dataset,
    kind: AgentKind,
    out: &Path,
) -> Result<RunSummary> {
    config.validate()?;
    dataset.validate()?;
    std::fs::create_dir_all(out)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_set, test_set) = split_dataset(dataset, config.split.test_fraction, &mut split_rng)?;
    let execution = execute(config, kind, &train_set, &test_set, dataset)?;
    if !execution.rows.is_empty() {
        std::fs::write(out.join("metrics.csv"), metrics_to_csv(&execution.rows))?;
    }
    write_artifacts(&execution.artifacts, out)?;
    config.save(&out.join("resolved_config.toml"))?;
    let summary = RunSummary {
        agent: kind.name().into(),
        seed: config.seed,
        steps: execution.steps,
        train: execution.train_block,
        test: execution.test_block,
        n_test_evaluations: execution
            .rows
            .iter()
            .filter(|r| r.split == Split::Test)
            .count(),
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Evaluate a stored checkpoint (and/or supervised model) on a dataset.
pub fn run_eval(
    config: &RunConfig,
    dataset: &Dataset,
    checkpoint: Option<&Path>,
    model_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<crate::metrics::MetricReport> {
    dataset.validate()?;
    let report = match (checkpoint, model_path) {
        (Some(ckpt), None) => {
            let net = QNetwork::load_checkpoint(ckpt)?;
            let agent = DyqnAgent::new(net, config.agent.clone());
            agent.evaluate(dataset, config.train.eval_seed)?
        }
        (Some(ckpt), Some(model)) => {
            let net = QNetwork::load_checkpoint(ckpt)?;
            let model = SupervisedModel::load_json(model)?;
            let agent = DyqnAgent::with_frozen_triage(net, config.agent.clone(), model);
            agent.evaluate(dataset, config.train.eval_seed)?
        }
        (None, Some(model)) => {
            let model = SupervisedModel::load_json(model)?;
            evaluate_fully_observed(&model, dataset)?
        }
        (None, None) => {
            return Err(Error::ConfigError(
                "eval needs a checkpoint, a supervised model, or both".into(),
            ))
        }
    };
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("eval_report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(report)
}

/// Pooled min/mean/max/CI95 over a set of observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateBlock {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub ci95: f64,
    pub n: usize,
}

fn aggregate_block(values: &[f64]) -> AggregateBlock {
    let (mean, ci95) = mean_ci95(values);
    AggregateBlock {
        mean,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ci95,
        n: values.len(),
    }
}

/// Per-fold terminal performance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub repeat: usize,
    pub fold: usize,
    pub appropriateness: f64,
    pub safety: f64,
    pub avg_questions: f64,
}

/// K-fold cross-validation summary over the pooled last-window evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KfoldSummary {
    pub agent: String,
    pub k: usize,
    pub repeats: usize,
    pub appropriateness: AggregateBlock,
    pub safety: AggregateBlock,
    pub avg_questions: AggregateBlock,
    pub folds: Vec<FoldSummary>,
}

/// Repeated seeded K-fold runs of one agent; per-fold CSVs land under
/// `out/repeat-R/fold-F/`, the aggregate in `out/kfold_summary.json`.
pub fn run_kfold(
    config: &RunConfig,
    dataset: &Dataset,
    kind: AgentKind,
    k: usize,
    repeats: usize,
    out: &Path,
) -> Result<KfoldSummary> {
    config.validate()?;
    dataset.validate()?;
    if k < 2 {
        return Err(Error::ConfigError("k must be at least 2".into()));
    }
    if dataset.len() < k {
        return Err(Error::ConfigError(format!(
            "dataset of {} vignettes cannot be split into {k} folds",
            dataset.len()
        )));
    }
    if !kind.is_learning() && !matches!(kind, AgentKind::Random | AgentKind::AlwaysGreen) {
        return Err(Error::ConfigError(
            "k-fold runs need a step-based agent".into(),
        ));
    }
    std::fs::create_dir_all(out)?;

    let mut app_values = Vec::new();
    let mut safety_values = Vec::new();
    let mut question_values = Vec::new();
    let mut folds_out = Vec::new();

    for repeat in 0..repeats {
        let repeat_seed = config.seed.wrapping_add(repeat as u64);
        let mut fold_rng = ChaCha8Rng::seed_from_u64(repeat_seed);
        let assignment = super::fold_assignment(dataset.len(), k, &mut fold_rng);
        for fold in 0..k {
            let mut train: Vec<crate::types::Vignette> = Vec::new();
            let mut test: Vec<crate::types::Vignette> = Vec::new();
            for (i, vignette) in dataset.vignettes.iter().enumerate() {
                if assignment[i] == fold {
                    test.push(vignette.clone());
                } else {
                    train.push(vignette.clone());
                }
            }
            let train_set = Dataset {
                evidence_names: dataset.evidence_names.clone(),
                vignettes: train,
            };
            let test_set = Dataset {
                evidence_names: dataset.evidence_names.clone(),
                vignettes: test,
            };
            let mut fold_config = config.clone();
            fold_config.seed = repeat_seed.wrapping_add((fold as u64) << 32);
            let execution = execute(&fold_config, kind, &train_set, &test_set, dataset)?;
            let fold_dir = out.join(format!("repeat-{repeat}")).join(format!("fold-{fold}"));
            std::fs::create_dir_all(&fold_dir)?;
            std::fs::write(fold_dir.join("metrics.csv"), metrics_to_csv(&execution.rows))?;

            let test_rows: Vec<&MetricRow> = execution
                .rows
                .iter()
                .filter(|r| r.split == Split::Test)
                .collect();
            let tail = &test_rows[test_rows.len().saturating_sub(SUMMARY_WINDOW)..];
            for row in tail {
                app_values.push(row.report.appropriateness);
                safety_values.push(row.report.safety);
                question_values.push(row.report.avg_questions);
            }
            folds_out.push(FoldSummary {
                repeat,
                fold,
                appropriateness: execution.test_block.appropriateness,
                safety: execution.test_block.safety,
                avg_questions: execution.test_block.avg_questions.unwrap_or(f64::NAN),
            });
        }
    }

    let summary = KfoldSummary {
        agent: kind.name().into(),
        k,
        repeats,
        appropriateness: aggregate_block(&app_values),
        safety: aggregate_block(&safety_values),
        avg_questions: aggregate_block(&question_values),
        folds: folds_out,
    };
    std::fs::write(
        out.join("kfold_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut folds_csv = String::from("repeat,fold,appropriateness,safety,avg_questions\n");
    for f in &summary.folds {
        folds_csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            f.repeat, f.fold, f.appropriateness, f.safety, f.avg_questions
        ));
    }
    std::fs::write(out.join("folds.csv"), folds_csv)?;
    config.save(&out.join("resolved_config.toml"))?;
    Ok(summary)
}

/// One row of the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub agent: String,
    pub appropriateness: f64,
    pub appropriateness_ci95: f64,
    pub safety: f64,
    pub safety_ci95: f64,
    /// `None` renders as "full" (the agent saw all evidence).
    pub avg_questions: Option<f64>,
    pub avg_questions_ci95: Option<f64>,
    pub n: usize,
}

/// Run every agent on the same seeded split and emit the comparison table.
pub fn run_compare(config: &RunConfig, dataset: &Dataset, out: &Path) -> Result<Vec<CompareRow>> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(AgentKind::ALL.len());
    for kind in AgentKind::ALL {
        let agent_out = out.join(kind.name());
        let summary = run_train(config, dataset, kind, &agent_out)?;
        rows.push(CompareRow {
            agent: summary.agent.clone(),
            appropriateness: summary.test.appropriateness,
            appropriateness_ci95: summary.test.appropriateness_ci95,
            safety: summary.test.safety,
            safety_ci95: summary.test.safety_ci95,
            avg_questions: summary.test.avg_questions,
            avg_questions_ci95: summary.test.avg_questions_ci95,
            n: summary.test.n,
        });
    }
    let mut csv = String::from(
        "agent,appropriateness,appropriateness_ci95,safety,safety_ci95,avg_questions,avg_questions_ci95,n\n",
    );
    for row in &rows {
        let questions = match row.avg_questions {
            Some(q) => format!("{q:.6}"),
            None => "full".into(),
        };
        let questions_ci = match row.avg_questions_ci95 {
            Some(q) => format!("{q:.6}"),
            None => String::new(),
        };
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
            row.agent,
            row.appropriateness,
            row.appropriateness_ci95,
            row.safety,
            row.safety_ci95,
            questions,
            questions_ci,
            row.n
        ));
    }
    std::fs::write(out.join("comparison.csv"), csv)?;
    Ok(rows)
}
