//! Seeded synthetic vignette generator.
//!
//! A test fixture, not a clinical model: each vignette is drawn from a
//! latent condition that fixes a true triage level and an evidence
//! signature, evidence counts follow configured means, and expert decisions
//! are the true level perturbed by a symmetric one-level noise channel.
//! True levels are quota-assigned from a noise-corrected prior so that the
//! pooled expert decisions land on the configured triage distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::metrics::is_appropriate;
use crate::types::{
    Dataset, DecisionBag, EvidenceAssignment, EvidenceId, Polarity, TriageLevel, Vignette,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub evidence_space: usize,
    pub n_vignettes: usize,
    pub mean_symptoms_present: f64,
    pub mean_symptoms_absent: f64,
    pub mean_risk_present: f64,
    pub mean_risk_absent: f64,
    pub decisions_mean: f64,
    /// Target distribution of expert triage decisions.
    pub triage_prior: [f64; 4],
    /// Probability that a single expert decision deviates one level.
    pub expert_noise: f64,
    pub n_latent_conditions: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            evidence_space: 40,
            n_vignettes: 360,
            mean_symptoms_present: 3.70,
            mean_symptoms_absent: 2.45,
            mean_risk_present: 0.79,
            mean_risk_absent: 0.34,
            decisions_mean: 3.36,
            triage_prior: [0.09, 0.34, 0.48, 0.09],
            expert_noise: 0.2,
            n_latent_conditions: 8,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    fn symptom_slots(&self) -> usize {
        (self.evidence_space * 4).div_ceil(5)
    }

    pub fn validate(&self) -> Result<()> {
        let prior_sum: f64 = self.triage_prior.iter().sum();
        if (prior_sum - 1.0).abs() > 1e-9 || self.triage_prior.iter().any(|p| *p < 0.0) {
            return Err(Error::ConfigError(
                "triage prior must be a distribution".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.expert_noise) {
            return Err(Error::ConfigError("expert noise must lie in [0,1]".into()));
        }
        if self.decisions_mean < 1.0 {
            return Err(Error::ConfigError(
                "decisions mean must be at least 1".into(),
            ));
        }
        if self.n_vignettes == 0 || self.n_latent_conditions == 0 {
            return Err(Error::ConfigError(
                "vignette and condition counts must be positive".into(),
            ));
        }
        let sym = self.symptom_slots();
        let risk = self.evidence_space - sym;
        let sym_needed = (self.mean_symptoms_present + self.mean_symptoms_absent).ceil() as usize + 2;
        let risk_needed = (self.mean_risk_present + self.mean_risk_absent).ceil() as usize;
        if sym < sym_needed || risk < risk_needed {
            return Err(Error::ConfigError(format!(
                "evidence space {} too small for the requested evidence means",
                self.evidence_space
            )));
        }
        Ok(())
    }
}

/// Latent structure behind a generated dataset, for oracle use only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub condition_levels: Vec<TriageLevel>,
    /// Signature evidence slots per condition (symptoms then risks).
    pub condition_signatures: Vec<Vec<usize>>,
    /// `(vignette id, condition index, true level)` in dataset order.
    pub assignments: Vec<(String, usize, TriageLevel)>,
}

impl GroundTruth {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<GroundTruth> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Decision noise channel: probability that a true level `t` is reported as
/// decision `d` under symmetric one-level deviation with clamped ends.
fn channel(noise: f64) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for t in 0..4 {
        let down = if t > 0 { noise / 2.0 } else { 0.0 };
        let up = if t < 3 { noise / 2.0 } else { 0.0 };
        if t > 0 {
            m[t - 1][t] = down;
        }
        if t < 3 {
            m[t + 1][t] = up;
        }
        m[t][t] = 1.0 - down - up;
    }
    m
}

/// Solve `channel * x = prior` so the pooled decisions match the prior;
/// negative components are clamped and the result renormalised.
fn corrected_prior(prior: &[f64; 4], noise: f64) -> [f64; 4] {
    let m = channel(noise);
    // Gaussian elimination on the 4x4 system.
    let mut a = [[0.0f64; 5]; 4];
    for r in 0..4 {
        for c in 0..4 {
            a[r][c] = m[r][c];
        }
        a[r][4] = prior[r];
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|x, y| a[*x][col].abs().partial_cmp(&a[*y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let diag = a[col][col];
        for c in col..5 {
            a[col][c] /= diag;
        }
        for r in 0..4 {
            if r != col && a[r][col] != 0.0 {
                let factor = a[r][col];
                for c in col..5 {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
    }
    let mut x = [a[0][4], a[1][4], a[2][4], a[3][4]];
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = v.max(0.0);
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
    x
}

/// Largest-remainder apportionment of `total` items over `weights`.
fn quota_counts(weights: &[f64; 4], total: usize) -> [usize; 4] {
    let mut counts = [0usize; 4];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut assigned = 0;
    for (i, w) in weights.iter().enumerate() {
        let exact = w * total as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.iter().take(total - assigned) {
        counts[*i] += 1;
    }
    counts
}

fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |p| p.sample(rng) as usize)
}

/// Pick `n` unused slots, preferring the preferred pool with probability
/// `affinity`.
fn pick_slots<R: Rng>(
    n: usize,
    preferred: &[usize],
    pool: std::ops::Range<usize>,
    used: &mut Vec<bool>,
    affinity: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    for _ in 0..n {
        let mut slot = None;
        if rng.random::<f64>() < affinity {
            let free: Vec<usize> = preferred.iter().copied().filter(|s| !used[*s]).collect();
            if !free.is_empty() {
                slot = Some(free[rng.random_range(0..free.len())]);
            }
        }
        if slot.is_none() {
            let free: Vec<usize> = pool.clone().filter(|s| !used[*s]).collect();
            if free.is_empty() {
                break;
            }
            slot = Some(free[rng.random_range(0..free.len())]);
        }
        let slot = slot.unwrap();
        used[slot] = true;
        chosen.push(slot);
    }
    chosen
}

/// Generate a seeded synthetic dataset plus its latent ground truth.
pub fn generate(config: &GeneratorConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sym_count = config.symptom_slots();
    let risk_count = config.evidence_space - sym_count;
    let evidence_names: Vec<String> = (0..config.evidence_space)
        .map(|i| {
            if i < sym_count {
                format!("sym_{i:03}")
            } else {
                format!("risk_{:03}", i - sym_count)
            }
        })
        .collect();

    let prior = corrected_prior(&config.triage_prior, config.expert_noise);

    // Conditions: quota the levels, then draw evidence signatures.
    let condition_counts = quota_counts(&prior, config.n_latent_conditions);
    let mut condition_levels = Vec::with_capacity(config.n_latent_conditions);
    for level in TriageLevel::ALL {
        for _ in 0..condition_counts[level.index()] {
            condition_levels.push(level);
        }
    }
    // Every level with prior mass needs at least one condition to host it.
    for level in TriageLevel::ALL {
        if prior[level.index()] > 0.0 && !condition_levels.contains(&level) {
            condition_levels.push(level);
        }
    }
    // Each condition owns a near-disjoint block of symptom slots (plus a
    // preferred risk slot), so the evidence actually identifies it; the
    // slots left over act as shared background noise.
    let n_conditions = condition_levels.len();
    let block_len = (sym_count / n_conditions).max(2);
    let risk_block_len = 1.min(risk_count);
    let condition_signatures: Vec<Vec<usize>> = (0..n_conditions)
        .map(|c| {
            let mut sig: Vec<usize> = (0..block_len)
                .map(|i| (c * block_len + i) % sym_count)
                .collect();
            if risk_block_len > 0 {
                sig.push(sym_count + c % risk_count);
            }
            sig
        })
        .collect();
    let conditions_of_level = |level: TriageLevel| -> Vec<usize> {
        condition_levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == level)
            .map(|(i, _)| i)
            .collect()
    };

    // Quota-assign true levels across vignettes, then shuffle.
    let level_counts = quota_counts(&prior, config.n_vignettes);
    let mut true_levels = Vec::with_capacity(config.n_vignettes);
    for level in TriageLevel::ALL {
        for _ in 0..level_counts[level.index()] {
            true_levels.push(level);
        }
    }
    for i in (1..true_levels.len()).rev() {
        let j = rng.random_range(0..=i);
        true_levels.swap(i, j);
    }

    let mut vignettes = Vec::with_capacity(config.n_vignettes);
    let mut assignments = Vec::with_capacity(config.n_vignettes);
    for (v_index, true_level) in true_levels.iter().enumerate() {
        let hosts = conditions_of_level(*true_level);
        let condition = hosts[rng.random_range(0..hosts.len())];
        let signature = &condition_signatures[condition];
        let sig_sym: Vec<usize> = signature.iter().copied().filter(|s| *s < sym_count).collect();
        let sig_risk: Vec<usize> = signature.iter().copied().filter(|s| *s >= sym_count).collect();
        // Absent evidence leans on other conditions' signatures: questions
        // asked to rule alternatives out.
        let foreign: Vec<usize> = condition_signatures
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != condition)
            .flat_map(|(_, sig)| sig.iter().copied())
            .filter(|s| *s < sym_count)
            .collect();

        let mut used = vec![false; config.evidence_space];
        let n_sym_present = poisson_count(config.mean_symptoms_present, &mut rng).max(1);
        let present_sym = pick_slots(n_sym_present, &sig_sym, 0..sym_count, &mut used, 0.85, &mut rng);
        let n_sym_absent = poisson_count(config.mean_symptoms_absent, &mut rng);
        let absent_sym = pick_slots(n_sym_absent, &foreign, 0..sym_count, &mut used, 0.6, &mut rng);
        let n_risk_present = poisson_count(config.mean_risk_present, &mut rng);
        let present_risk = pick_slots(
            n_risk_present,
            &sig_risk,
            sym_count..config.evidence_space,
            &mut used,
            0.8,
            &mut rng,
        );
        let n_risk_absent = poisson_count(config.mean_risk_absent, &mut rng);
        let absent_risk = pick_slots(
            n_risk_absent,
            &[],
            sym_count..config.evidence_space,
            &mut used,
            0.0,
            &mut rng,
        );

        let mut evidence: Vec<EvidenceAssignment> = Vec::new();
        for slot in present_sym.into_iter().chain(present_risk) {
            evidence.push(EvidenceAssignment {
                id: EvidenceId(slot),
                polarity: Polarity::Present,
            });
        }
        for slot in absent_sym.into_iter().chain(absent_risk) {
            evidence.push(EvidenceAssignment {
                id: EvidenceId(slot),
                polarity: Polarity::Absent,
            });
        }
        evidence.sort_by_key(|e| e.id.0);

        let n_decisions = 1 + poisson_count(config.decisions_mean - 1.0, &mut rng);
        let mut bag = DecisionBag::new();
        for _ in 0..n_decisions {
            let mut decided = *true_level;
            if rng.random::<f64>() < config.expert_noise {
                let direction: i64 = if rng.random::<bool>() { 1 } else { -1 };
                let shifted = (decided.index() as i64 + direction).clamp(0, 3) as usize;
                decided = TriageLevel::from_index(shifted).unwrap();
            }
            bag.add(decided, 1);
        }

        let id = format!("syn-{v_index:05}");
        assignments.push((id.clone(), condition, *true_level));
        vignettes.push(Vignette {
            id,
            evidence,
            decisions: bag,
        });
    }

    let dataset = Dataset {
        evidence_names,
        vignettes,
    };
    dataset.validate()?;
    Ok((
        dataset,
        GroundTruth {
            condition_levels,
            condition_signatures,
            assignments,
        },
    ))
}

/// Best achievable appropriateness by any policy that decides from the
/// latent condition alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayesOracle {
    /// Appropriateness-maximising decision per condition.
    pub condition_decisions: Vec<TriageLevel>,
    /// Dataset-level appropriateness ceiling under those decisions.
    pub ceiling: f64,
}

pub fn bayes_oracle(dataset: &Dataset, truth: &GroundTruth) -> Result<BayesOracle> {
    let n_conditions = truth.condition_levels.len();
    let mut bags_by_condition: Vec<Vec<&DecisionBag>> = vec![Vec::new(); n_conditions];
    for (vignette, (id, condition, _)) in dataset.vignettes.iter().zip(&truth.assignments) {
        if vignette.id != *id {
            return Err(Error::UnknownVignette(vignette.id.clone()));
        }
        bags_by_condition[*condition].push(&vignette.decisions);
    }
    let mut condition_decisions = Vec::with_capacity(n_conditions);
    let mut appropriate_total = 0usize;
    for bags in &bags_by_condition {
        let mut best = (TriageLevel::Red, 0usize);
        for candidate in TriageLevel::ALL {
            let hits = bags
                .iter()
                .filter(|bag| is_appropriate(candidate, bag).unwrap_or(false))
                .count();
            if hits > best.1 {
                best = (candidate, hits);
            }
        }
        condition_decisions.push(best.0);
        appropriate_total += best.1;
    }
    Ok(BayesOracle {
        condition_decisions,
        ceiling: appropriate_total as f64 / dataset.len().max(1) as f64,
    })
}

use rand::SeedableRng;
