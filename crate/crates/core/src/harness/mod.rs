//! Experiment orchestration: run configuration, dataset splits, metric CSV
//! and summary files, and the train/eval/k-fold/compare entry points used
//! by the CLI.

pub mod runs;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, MetricRow, Split, TrainOptions};
use crate::baselines::SupervisedConfig;
use crate::memory::MemoryConfig;
use crate::synthetic::GeneratorConfig;
use crate::types::Dataset;
use crate::{Error, Result};

pub use runs::{
    run_compare, run_eval, run_kfold, run_train, AgentKind, CompareRow, FoldSummary,
    KfoldSummary, RunSummary,
};

/// Network shape knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden_dim: 1024 }
    }
}

/// Train/test split shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of vignettes held out for the test set.
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.09,
        }
    }
}

/// Every constant a run needs, loadable from one TOML file. Sections may be
/// omitted; defaults fill the gaps. The resolved config is written beside
/// each run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub agent: AgentConfig,
    pub net: NetConfig,
    pub train: TrainOptions,
    pub memory: MemoryConfig,
    pub supervised: SupervisedConfig,
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    /// Minimum decisions per vignette for the human baseline.
    pub human_min_decisions: u32,
    /// Powerset expansion cap exponent.
    pub pow_cap_exponent: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            agent: AgentConfig::default(),
            net: NetConfig::default(),
            train: TrainOptions::default(),
            memory: MemoryConfig::default(),
            supervised: SupervisedConfig::default(),
            generator: GeneratorConfig::default(),
            split: SplitConfig::default(),
            human_min_decisions: 3,
            pow_cap_exponent: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::ConfigError(format!("serialising config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.memory.validate()?;
        if !(0.0 < self.split.test_fraction && self.split.test_fraction < 1.0) {
            return Err(Error::ConfigError("test fraction must lie in (0,1)".into()));
        }
        if self.agent.sigma_start < self.agent.sigma_end || self.agent.sigma_end < 0.0 {
            return Err(Error::ConfigError(
                "sigma schedule needs sigma_start >= sigma_end >= 0".into(),
            ));
        }
        if self.agent.batch_size == 0 {
            return Err(Error::ConfigError("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded disjoint train/test split; the test side gets
/// `max(1, round(n * fraction))` vignettes.
pub fn split_dataset<R: Rng>(
    dataset: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::ConfigError(
            "dataset too small to split".into(),
        ));
    }
    let test_n = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let test_idx: std::collections::HashSet<usize> = order[..test_n].iter().copied().collect();
    let mut train = Vec::with_capacity(n - test_n);
    let mut test = Vec::with_capacity(test_n);
    for (i, vignette) in dataset.vignettes.iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(vignette.clone());
        } else {
            train.push(vignette.clone());
        }
    }
    Ok((
        Dataset {
            evidence_names: dataset.evidence_names.clone(),
            vignettes: train,
        },
        Dataset {
            evidence_names: dataset.evidence_names.clone(),
            vignettes: test,
        },
    ))
}

/// Seeded K-fold partition: returns the fold index of every vignette.
pub fn fold_assignment<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut folds = vec![0usize; n];
    for (pos, index) in order.into_iter().enumerate() {
        folds[index] = pos % k;
    }
    folds
}

pub const METRICS_HEADER: &str = "step,split,appropriateness,safety,avg_questions,loss,sigma";

/// Render metric rows as the canonical CSV (fixed six-decimal floats so
/// same-seed runs are byte-identical).
pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + METRICS_HEADER.len() + 1);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            row.step,
            row.split.name(),
            row.report.appropriateness,
            row.report.safety,
            row.report.avg_questions,
            row.loss,
            row.sigma,
        ));
    }
    out
}

/// Parse the canonical metrics CSV back into rows (the summaries must be
/// re-derivable from the emitted files).
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 {
            if line != METRICS_HEADER {
                return Err(Error::ConfigError(format!(
                    "unexpected metrics header {line:?}"
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::ConfigError(format!(
                "metrics line {line_no}: expected 7 fields"
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::ConfigError(format!("metrics line {line_no}: bad float {s}")))
        };
        rows.push(MetricRow {
            step: fields[0]
                .parse()
                .map_err(|_| Error::ConfigError(format!("metrics line {line_no}: bad step")))?,
            split: match fields[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::ConfigError(format!(
                        "metrics line {line_no}: unknown split {other}"
                    )))
                }
            },
            report: crate::metrics::MetricReport {
                appropriateness: parse(fields[2])?,
                safety: parse(fields[3])?,
                avg_questions: parse(fields[4])?,
                n: 0,
            },
            loss: parse(fields[5])?,
            sigma: parse(fields[6])?,
        });
    }
    Ok(rows)
}

/// Mean and CI95 half-width (normal approximation) of a sample.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;
    use crate::synthetic::generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_is_disjoint_partition() {
        let (dataset, _) = generate(&GeneratorConfig {
            n_vignettes: 50,
            seed: 1,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, test) = split_dataset(&dataset, 0.2, &mut rng).unwrap();
        assert_eq!(train.len() + test.len(), 50);
        assert_eq!(test.len(), 10);
        let train_ids: std::collections::HashSet<_> =
            train.vignettes.iter().map(|v| v.id.clone()).collect();
        assert!(test.vignettes.iter().all(|v| !train_ids.contains(&v.id)));
    }

    #[test]
    fn fold_assignment_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let folds = fold_assignment(10, 2, &mut rng);
        assert_eq!(folds.len(), 10);
        assert_eq!(folds.iter().filter(|f| **f == 0).count(), 5);
        assert_eq!(folds.iter().filter(|f| **f == 1).count(), 5);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![MetricRow {
            step: 250,
            split: Split::Test,
            report: MetricReport {
                appropriateness: 0.75,
                safety: 1.0,
                avg_questions: 3.5,
                n: 4,
            },
            loss: 0.0125,
            sigma: 0.05,
        }];
        let csv = metrics_to_csv(&rows);
        let parsed = parse_metrics_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].step, 250);
        assert_eq!(parsed[0].split, Split::Test);
        assert_eq!(parsed[0].report.appropriateness, 0.75);
        assert_eq!(parsed[0].sigma, 0.05);
    }

    #[test]
    fn config_toml_round_trip() {
        let config = RunConfig::default();
        let dir = std::env::temp_dir().join("dyqn-harness-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.toml");
        config.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.agent.sigma_start, config.agent.sigma_start);
        assert_eq!(loaded.net.hidden_dim, config.net.hidden_dim);
        assert_eq!(loaded.memory.bucket_probs, config.memory.bucket_probs);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let dir = std::env::temp_dir().join("dyqn-harness-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("partial.toml");
        std::fs::write(&path, "seed = 9\n[agent]\nquery_kind = \"and\"\n").unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.agent.query_kind, crate::agent::QueryKind::And);
        assert_eq!(config.agent.sigma_start, 0.05);
        assert_eq!(config.train.eval_cadence, 250);
    }

    #[test]
    fn mean_ci95_basics() {
        let (mean, ci) = mean_ci95(&[1.0, 1.0, 1.0]);
        assert_eq!((mean, ci), (1.0, 0.0));
        let (mean, ci) = mean_ci95(&[0.0, 2.0]);
        assert_eq!(mean, 1.0);
        assert!(ci > 0.0);
    }
}
