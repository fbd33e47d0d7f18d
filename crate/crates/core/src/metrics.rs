//! Appropriateness, safety, and question-count metrics, plus the
//! inter-expert human baseline.
//!
//! A triage decision is appropriate when it lies at or between the most and
//! least urgent expert decisions for the vignette, and safe when it lies at
//! or above the least urgent one. Both are ratios over a set of episodes.

use std::collections::HashMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::types::{Dataset, DecisionBag, TriageLevel};
use crate::{Error, Result};

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub vignette_id: String,
    pub decision: TriageLevel,
    pub questions_asked: usize,
}

/// Aggregate metrics over a set of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub appropriateness: f64,
    pub safety: f64,
    pub avg_questions: f64,
    pub n: usize,
}

/// Whether `decision` lies at or between the bag's urgency bounds.
pub fn is_appropriate(decision: TriageLevel, bag: &DecisionBag) -> Result<bool> {
    let (most, least) = crate::types::urgency_bounds(bag)?;
    Ok(most <= decision && decision <= least)
}

/// Whether `decision` is at least as urgent as the bag's least urgent entry.
pub fn is_safe(decision: TriageLevel, bag: &DecisionBag) -> Result<bool> {
    let (_, least) = crate::types::urgency_bounds(bag)?;
    Ok(decision <= least)
}

/// Ratios of appropriate and safe decisions plus mean question count.
pub fn aggregate(results: &[EpisodeResult], dataset: &Dataset) -> Result<MetricReport> {
    let by_id: HashMap<&str, &DecisionBag> = dataset
        .vignettes
        .iter()
        .map(|v| (v.id.as_str(), &v.decisions))
        .collect();
    let mut appropriate = 0usize;
    let mut safe = 0usize;
    let mut questions = 0usize;
    for result in results {
        let bag = by_id
            .get(result.vignette_id.as_str())
            .ok_or_else(|| Error::UnknownVignette(result.vignette_id.clone()))?;
        if is_appropriate(result.decision, bag)? {
            appropriate += 1;
        }
        if is_safe(result.decision, bag)? {
            safe += 1;
        }
        questions += result.questions_asked;
    }
    let n = results.len();
    let denom = n.max(1) as f64;
    Ok(MetricReport {
        appropriateness: appropriate as f64 / denom,
        safety: safe as f64 / denom,
        avg_questions: questions as f64 / denom,
        n,
    })
}

/// Rolling aggregate over the most recent `window` episode results.
pub struct SlidingWindow {
    window: usize,
    recent: VecDeque<EpisodeResult>,
}

impl SlidingWindow {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window must be at least 1");
        Self {
            window,
            recent: VecDeque::with_capacity(window),
        }
    }

    /// Push one result and report over the last `min(window, seen)` episodes.
    pub fn push(&mut self, result: EpisodeResult, dataset: &Dataset) -> Result<MetricReport> {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(result);
        let results: Vec<_> = self.recent.iter().cloned().collect();
        aggregate(&results, dataset)
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }
}

/// Sample mean inter-expert agreement (appropriateness, safety).
///
/// For each vignette with at least `min_decisions` expert decisions, each
/// single decision instance is scored against the bounds of the bag with
/// that one instance removed; per-vignette ratios are averaged equally
/// across qualifying vignettes.
pub fn human_baseline(dataset: &Dataset, min_decisions: u32) -> Result<(f64, f64)> {
    let mut appropriateness_sum = 0.0;
    let mut safety_sum = 0.0;
    let mut qualifying = 0usize;
    for vignette in &dataset.vignettes {
        let bag = &vignette.decisions;
        let total = bag.total();
        // A leave-one-out check needs at least one remaining decision.
        if total < min_decisions.max(2) {
            continue;
        }
        let mut appropriate = 0u32;
        let mut safe = 0u32;
        for level in TriageLevel::ALL {
            let count = bag.count(level);
            if count == 0 {
                continue;
            }
            let remainder = bag.remove_one(level).unwrap();
            if is_appropriate(level, &remainder)? {
                appropriate += count;
            }
            if is_safe(level, &remainder)? {
                safe += count;
            }
        }
        appropriateness_sum += f64::from(appropriate) / f64::from(total);
        safety_sum += f64::from(safe) / f64::from(total);
        qualifying += 1;
    }
    if qualifying == 0 {
        return Err(Error::NoQualifyingVignettes);
    }
    Ok((
        appropriateness_sum / qualifying as f64,
        safety_sum / qualifying as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{EvidenceAssignment, Vignette};
    use proptest::prelude::*;

    fn single_vignette_dataset(bag: DecisionBag) -> Dataset {
        Dataset {
            evidence_names: vec!["e0".into()],
            vignettes: vec![Vignette {
                id: "v0".into(),
                evidence: vec![EvidenceAssignment::present(0)],
                decisions: bag,
            }],
        }
    }

    #[test]
    fn appropriate_between_bounds() {
        let bag = DecisionBag::from_counts(1, 0, 1, 0);
        assert!(is_appropriate(TriageLevel::Yellow, &bag).unwrap());
        assert!(!is_appropriate(TriageLevel::Blue, &bag).unwrap());
    }

    #[test]
    fn appropriate_exact_match() {
        let bag = DecisionBag::from_counts(0, 4, 0, 0);
        assert!(is_appropriate(TriageLevel::Yellow, &bag).unwrap());
    }

    #[test]
    fn over_triage_is_safe_under_triage_is_not() {
        let bag = DecisionBag::from_counts(0, 0, 2, 0);
        assert!(is_safe(TriageLevel::Red, &bag).unwrap());
        assert!(!is_safe(TriageLevel::Blue, &bag).unwrap());
    }

    #[test]
    fn safe_bound_is_least_urgent() {
        let bag = DecisionBag::from_counts(0, 1, 0, 1);
        assert!(is_safe(TriageLevel::Green, &bag).unwrap());
    }

    #[test]
    fn aggregate_counts() {
        let dataset = Dataset {
            evidence_names: vec!["e0".into()],
            vignettes: vec![
                Vignette {
                    id: "a".into(),
                    evidence: vec![EvidenceAssignment::present(0)],
                    decisions: DecisionBag::from_counts(1, 0, 1, 0),
                },
                Vignette {
                    id: "b".into(),
                    evidence: vec![EvidenceAssignment::present(0)],
                    decisions: DecisionBag::from_counts(0, 0, 2, 0),
                },
            ],
        };
        let results = vec![
            EpisodeResult {
                vignette_id: "a".into(),
                decision: TriageLevel::Red,
                questions_asked: 3,
            },
            EpisodeResult {
                vignette_id: "a".into(),
                decision: TriageLevel::Yellow,
                questions_asked: 1,
            },
            EpisodeResult {
                vignette_id: "b".into(),
                decision: TriageLevel::Green,
                questions_asked: 0,
            },
            EpisodeResult {
                vignette_id: "b".into(),
                decision: TriageLevel::Red,
                questions_asked: 4,
            },
        ];
        let report = aggregate(&results, &dataset).unwrap();
        // b/Red over-triages a unanimous Green: safe but not appropriate.
        assert_eq!(report.appropriateness, 0.75);
        assert_eq!(report.safety, 1.0);
        assert_eq!(report.avg_questions, 2.0);
        assert_eq!(report.n, 4);
    }

    #[test]
    fn aggregate_unknown_id_errors() {
        let dataset = single_vignette_dataset(DecisionBag::from_counts(1, 0, 0, 0));
        let results = vec![EpisodeResult {
            vignette_id: "missing".into(),
            decision: TriageLevel::Red,
            questions_asked: 0,
        }];
        assert!(matches!(
            aggregate(&results, &dataset),
            Err(Error::UnknownVignette(_))
        ));
    }

    #[test]
    fn sliding_window_semantics() {
        let dataset = single_vignette_dataset(DecisionBag::from_counts(0, 0, 1, 0));
        let mut window = SlidingWindow::new(20);
        let mut last = None;
        for i in 0..25 {
            let decision = if i < 5 {
                TriageLevel::Red
            } else {
                TriageLevel::Green
            };
            last = Some(
                window
                    .push(
                        EpisodeResult {
                            vignette_id: "v0".into(),
                            decision,
                            questions_asked: i,
                        },
                        &dataset,
                    )
                    .unwrap(),
            );
        }
        let report = last.unwrap();
        // Episodes 6..=25 are all Green; questions 5..=24 average 14.5.
        assert_eq!(report.n, 20);
        assert_eq!(report.appropriateness, 1.0);
        assert_eq!(report.avg_questions, 14.5);
    }

    #[test]
    fn sliding_window_first_report_has_n_one() {
        let dataset = single_vignette_dataset(DecisionBag::from_counts(0, 0, 1, 0));
        let mut window = SlidingWindow::new(20);
        let report = window
            .push(
                EpisodeResult {
                    vignette_id: "v0".into(),
                    decision: TriageLevel::Green,
                    questions_asked: 2,
                },
                &dataset,
            )
            .unwrap();
        assert_eq!(report.n, 1);
        assert_eq!(report.avg_questions, 2.0);
    }

    #[test]
    fn human_baseline_two_yellow_one_green() {
        // Each Yellow stays within {Yellow,Green}; Green misses {Yellow,Yellow}.
        let dataset = single_vignette_dataset(DecisionBag::from_counts(0, 2, 1, 0));
        let (h_a, h_s) = human_baseline(&dataset, 3).unwrap();
        assert!((h_a - 2.0 / 3.0).abs() < 1e-12);
        assert!((h_s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn human_baseline_unanimous() {
        let dataset = single_vignette_dataset(DecisionBag::from_counts(0, 0, 3, 0));
        let (h_a, h_s) = human_baseline(&dataset, 3).unwrap();
        assert_eq!((h_a, h_s), (1.0, 1.0));
    }

    #[test]
    fn human_baseline_three_way_split() {
        let dataset = single_vignette_dataset(DecisionBag::from_counts(1, 0, 1, 1));
        let (h_a, h_s) = human_baseline(&dataset, 3).unwrap();
        assert!((h_a - 1.0 / 3.0).abs() < 1e-12);
        assert!((h_s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn human_baseline_requires_qualifying_vignettes() {
        let dataset = single_vignette_dataset(DecisionBag::from_counts(0, 1, 0, 0));
        assert!(matches!(
            human_baseline(&dataset, 3),
            Err(Error::NoQualifyingVignettes)
        ));
    }

    fn arb_bag() -> impl Strategy<Value = DecisionBag> {
        (0u32..4, 0u32..4, 0u32..4, 0u32..4)
            .prop_map(|(r, y, g, b)| DecisionBag::from_counts(r, y, g, b))
            .prop_filter("non-empty", |bag| !bag.is_empty())
    }

    proptest! {
        #[test]
        fn appropriate_implies_safe(bag in arb_bag(), level in 0usize..4) {
            let decision = TriageLevel::from_index(level).unwrap();
            if is_appropriate(decision, &bag).unwrap() {
                prop_assert!(is_safe(decision, &bag).unwrap());
            }
        }

        #[test]
        fn red_always_safe_and_members_appropriate(bag in arb_bag()) {
            prop_assert!(is_safe(TriageLevel::Red, &bag).unwrap());
            for level in bag.levels() {
                prop_assert!(is_appropriate(level, &bag).unwrap());
            }
        }
    }
}
