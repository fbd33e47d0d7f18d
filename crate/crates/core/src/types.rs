//! Evidence space, triage levels, vignettes, datasets, and the ternary
//! state encoding shared by every other module.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index into a dataset's evidence registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceId(pub usize);

/// Whether a piece of evidence was observed present or absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Present,
    Absent,
}

/// One observed evidence: a registry slot plus its polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceAssignment {
    pub id: EvidenceId,
    pub polarity: Polarity,
}

impl EvidenceAssignment {
    pub fn present(index: usize) -> Self {
        Self {
            id: EvidenceId(index),
            polarity: Polarity::Present,
        }
    }

    pub fn absent(index: usize) -> Self {
        Self {
            id: EvidenceId(index),
            polarity: Polarity::Absent,
        }
    }

    /// +1 for present evidence, -1 for absent.
    pub fn sign(&self) -> i8 {
        match self.polarity {
            Polarity::Present => 1,
            Polarity::Absent => -1,
        }
    }
}

/// Triage urgency levels, most urgent first. The integer order makes
/// "at or above" checks plain comparisons: smaller index = more urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriageLevel {
    Red = 0,
    Yellow = 1,
    Green = 2,
    Blue = 3,
}

impl TriageLevel {
    pub const ALL: [TriageLevel; 4] = [
        TriageLevel::Red,
        TriageLevel::Yellow,
        TriageLevel::Green,
        TriageLevel::Blue,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<TriageLevel> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TriageLevel::Red => "red",
            TriageLevel::Yellow => "yellow",
            TriageLevel::Green => "green",
            TriageLevel::Blue => "blue",
        }
    }
}

impl fmt::Display for TriageLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The five agent actions: commit to a triage level, or ask for more evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentAction {
    Triage(TriageLevel),
    Ask,
}

/// Number of actions available to the agent (four triage levels plus ask).
pub const ACTION_COUNT: usize = 5;
/// Q-vector index of the ask action.
pub const ASK_INDEX: usize = 4;

impl AgentAction {
    pub const ALL: [AgentAction; ACTION_COUNT] = [
        AgentAction::Triage(TriageLevel::Red),
        AgentAction::Triage(TriageLevel::Yellow),
        AgentAction::Triage(TriageLevel::Green),
        AgentAction::Triage(TriageLevel::Blue),
        AgentAction::Ask,
    ];

    /// Position in a 5-entry Q-vector: triage levels at their own index, ask last.
    pub fn index(self) -> usize {
        match self {
            AgentAction::Triage(level) => level.index(),
            AgentAction::Ask => ASK_INDEX,
        }
    }

    pub fn from_index(index: usize) -> Option<AgentAction> {
        Self::ALL.get(index).copied()
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, AgentAction::Triage(_))
    }
}

/// Multiset of expert triage decisions, stored as per-level multiplicities
/// so reward probabilities stay exact rationals until the final division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecisionBag {
    counts: [u32; 4],
}

impl DecisionBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(red: u32, yellow: u32, green: u32, blue: u32) -> Self {
        Self {
            counts: [red, yellow, green, blue],
        }
    }

    pub fn from_levels<I: IntoIterator<Item = TriageLevel>>(levels: I) -> Self {
        let mut bag = Self::new();
        for level in levels {
            bag.add(level, 1);
        }
        bag
    }

    pub fn add(&mut self, level: TriageLevel, n: u32) {
        self.counts[level.index()] += n;
    }

    pub fn count(&self, level: TriageLevel) -> u32 {
        self.counts[level.index()]
    }

    /// Total number of expert decisions in the bag.
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Bag with one instance of `level` removed; `None` if none present.
    pub fn remove_one(&self, level: TriageLevel) -> Option<DecisionBag> {
        if self.count(level) == 0 {
            return None;
        }
        let mut counts = self.counts;
        counts[level.index()] -= 1;
        Some(DecisionBag { counts })
    }

    /// Iterate over the distinct levels present in this bag.
    pub fn levels(&self) -> impl Iterator<Item = TriageLevel> + '_ {
        TriageLevel::ALL
            .into_iter()
            .filter(move |l| self.count(*l) > 0)
    }

    /// Levels with maximal multiplicity; ties keep the most urgent first.
    pub fn modal_levels(&self) -> Vec<TriageLevel> {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Vec::new();
        }
        TriageLevel::ALL
            .into_iter()
            .filter(|l| self.count(*l) == max)
            .collect()
    }
}

/// A curated patient presentation: sparse evidence plus an expert decision bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vignette {
    pub id: String,
    pub evidence: Vec<EvidenceAssignment>,
    pub decisions: DecisionBag,
}

/// Dense ternary encoding of the evidence space: +1 present, -1 absent,
/// 0 unobserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<i8>,
}

impl StateVector {
    pub fn zeros(evidence_space: usize) -> Self {
        Self {
            values: vec![0; evidence_space],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> i8 {
        self.values[index]
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// Number of observed (nonzero) entries.
    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0).count()
    }

    /// Dense f64 view for the network input layer.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| f64::from(*v)).collect()
    }

    /// Recover the assignments encoded by the nonzero entries.
    pub fn decode(&self) -> Vec<EvidenceAssignment> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| match v {
                1 => Some(EvidenceAssignment::present(i)),
                -1 => Some(EvidenceAssignment::absent(i)),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn set(&mut self, assignment: EvidenceAssignment) {
        self.values[assignment.id.0] = assignment.sign();
    }
}

/// Map revealed evidence onto the dense ternary state vector.
pub fn encode_state(
    revealed: &[EvidenceAssignment],
    evidence_space: usize,
) -> Result<StateVector> {
    let mut state = StateVector::zeros(evidence_space);
    let mut seen = HashSet::with_capacity(revealed.len());
    for assignment in revealed {
        let index = assignment.id.0;
        if index >= evidence_space {
            return Err(Error::UnknownEvidence {
                index,
                space: evidence_space,
            });
        }
        if !seen.insert(index) {
            return Err(Error::DuplicateEvidence { index });
        }
        state.set(*assignment);
    }
    Ok(state)
}

/// Most urgent and least urgent levels present in a bag, in that order.
pub fn urgency_bounds(bag: &DecisionBag) -> Result<(TriageLevel, TriageLevel)> {
    let mut present = bag.levels();
    let first = present.next().ok_or(Error::EmptyDecisionBag)?;
    let last = present.last().unwrap_or(first);
    Ok((first, last))
}

/// A full dataset: the evidence registry and its vignettes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub evidence_names: Vec<String>,
    pub vignettes: Vec<Vignette>,
}

impl Dataset {
    /// Size of the evidence space E.
    pub fn evidence_space(&self) -> usize {
        self.evidence_names.len()
    }

    pub fn len(&self) -> usize {
        self.vignettes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vignettes.is_empty()
    }

    pub fn vignette_by_id(&self, id: &str) -> Option<&Vignette> {
        self.vignettes.iter().find(|v| v.id == id)
    }

    /// Validate registry membership, duplicate evidence, and decision bags.
    ///
    /// Empty evidence lists are allowed here because powerset-expanded
    /// training files legitimately contain them; the episodic environment
    /// rejects such vignettes at reset instead.
    pub fn validate(&self) -> Result<()> {
        let space = self.evidence_space();
        for vignette in &self.vignettes {
            let mut seen = HashSet::new();
            for assignment in &vignette.evidence {
                if assignment.id.0 >= space {
                    return Err(Error::InvalidVignette {
                        id: vignette.id.clone(),
                        reason: format!(
                            "evidence index {} outside registry of size {}",
                            assignment.id.0, space
                        ),
                    });
                }
                if !seen.insert(assignment.id.0) {
                    return Err(Error::InvalidVignette {
                        id: vignette.id.clone(),
                        reason: format!("duplicate evidence index {}", assignment.id.0),
                    });
                }
            }
            if vignette.decisions.is_empty() {
                return Err(Error::InvalidVignette {
                    id: vignette.id.clone(),
                    reason: "empty decision bag".into(),
                });
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = DatasetFile::from_dataset(self);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let file: DatasetFile = serde_json::from_str(&text)?;
        file.into_dataset(&path.display().to_string())
    }
}

// On-disk schema: evidence referenced by name, decisions as per-level counts.

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    evidence: Vec<String>,
    vignettes: Vec<VignetteFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VignetteFile {
    id: String,
    evidence: Vec<EvidenceFile>,
    decisions: DecisionsFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvidenceFile {
    name: String,
    present: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DecisionsFile {
    #[serde(default)]
    red: u32,
    #[serde(default)]
    yellow: u32,
    #[serde(default)]
    green: u32,
    #[serde(default)]
    blue: u32,
}

impl DatasetFile {
    fn from_dataset(dataset: &Dataset) -> Self {
        let vignettes = dataset
            .vignettes
            .iter()
            .map(|v| VignetteFile {
                id: v.id.clone(),
                evidence: v
                    .evidence
                    .iter()
                    .map(|a| EvidenceFile {
                        name: dataset.evidence_names[a.id.0].clone(),
                        present: a.polarity == Polarity::Present,
                    })
                    .collect(),
                decisions: DecisionsFile {
                    red: v.decisions.count(TriageLevel::Red),
                    yellow: v.decisions.count(TriageLevel::Yellow),
                    green: v.decisions.count(TriageLevel::Green),
                    blue: v.decisions.count(TriageLevel::Blue),
                },
            })
            .collect();
        DatasetFile {
            evidence: dataset.evidence_names.clone(),
            vignettes,
        }
    }

    fn into_dataset(self, path: &str) -> Result<Dataset> {
        let mut name_to_index = std::collections::HashMap::new();
        for (i, name) in self.evidence.iter().enumerate() {
            if name_to_index.insert(name.clone(), i).is_some() {
                return Err(Error::ConfigError(format!(
                    "{path}: evidence name {name:?} registered twice"
                )));
            }
        }
        let mut vignettes = Vec::with_capacity(self.vignettes.len());
        for (index, v) in self.vignettes.into_iter().enumerate() {
            let mut evidence = Vec::with_capacity(v.evidence.len());
            let mut seen = HashSet::new();
            for e in &v.evidence {
                let id = *name_to_index.get(&e.name).ok_or_else(|| Error::DatasetFormat {
                    path: path.to_string(),
                    index,
                    id: v.id.clone(),
                    reason: format!("unregistered evidence name {:?}", e.name),
                })?;
                if !seen.insert(id) {
                    return Err(Error::DatasetFormat {
                        path: path.to_string(),
                        index,
                        id: v.id.clone(),
                        reason: format!("duplicate evidence name {:?}", e.name),
                    });
                }
                evidence.push(EvidenceAssignment {
                    id: EvidenceId(id),
                    polarity: if e.present {
                        Polarity::Present
                    } else {
                        Polarity::Absent
                    },
                });
            }
            let decisions = DecisionBag::from_counts(
                v.decisions.red,
                v.decisions.yellow,
                v.decisions.green,
                v.decisions.blue,
            );
            if decisions.is_empty() {
                return Err(Error::DatasetFormat {
                    path: path.to_string(),
                    index,
                    id: v.id.clone(),
                    reason: "empty decision bag".into(),
                });
            }
            vignettes.push(Vignette {
                id: v.id,
                evidence,
                decisions,
            });
        }
        Ok(Dataset {
            evidence_names: self.evidence,
            vignettes,
        })
    }
}
