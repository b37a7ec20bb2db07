//! Rule ranking and the two recommendations: what to reuse while building a pipeline,
//! and where to materialize once it has run.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::mining::{enumerate_prefixes, RuleIndex};
use crate::model::{AssociationRule, DatasetId, ModuleId, PipelineRun, RuleStats, SubPipeline};
use crate::store::{StoreKey, StoreManifest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedRule {
    pub rule: AssociationRule,
    pub stats: RuleStats,
    pub rank: usize,
}

/// Total rank order: higher confidence, then higher support, then the longer consequent
/// (it subsumes the shorter ones), then lexicographic on antecedent and consequent tokens.
pub fn rank_order(a: (&AssociationRule, &RuleStats), b: (&AssociationRule, &RuleStats)) -> Ordering {
    b.1.confidence()
        .cmp(&a.1.confidence())
        .then_with(|| b.1.support.cmp(&a.1.support))
        .then_with(|| b.0.consequent.len().cmp(&a.0.consequent.len()))
        .then_with(|| a.0.antecedent.cmp(&b.0.antecedent))
        .then_with(|| a.0.consequent.cmp(&b.0.consequent))
}

pub fn rank_rules(mut rules: Vec<(AssociationRule, RuleStats)>) -> Vec<RankedRule> {
    rules.sort_by(|a, b| rank_order((&a.0, &a.1), (&b.0, &b.1)));
    rules
        .into_iter()
        .enumerate()
        .map(|(i, (rule, stats))| RankedRule { rule, stats, rank: i + 1 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReuseSuggestion {
    pub rule: AssociationRule,
    pub stats: RuleStats,
    pub stored: bool,
    pub store_key: Option<StoreKey>,
}

/// Ranked rules for `dataset` whose consequent strictly extends `current_prefix`, flagged
/// against the manifest. Unstored rules are kept so callers can show why a skip is impossible.
pub fn recommend_reuse(
    index: &RuleIndex,
    manifest: &StoreManifest,
    dataset: &DatasetId,
    current_prefix: &[ModuleId],
    top_k: usize,
) -> Vec<ReuseSuggestion> {
    rank_rules(index.extensions(dataset, current_prefix))
        .into_iter()
        .take(top_k)
        .map(|ranked| {
            let key = StoreKey::new(ranked.rule.antecedent.clone(), ranked.rule.consequent.clone());
            let stored = manifest.is_stored(&key);
            ReuseSuggestion {
                rule: ranked.rule,
                stats: ranked.stats,
                stored,
                store_key: stored.then_some(key),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreMode {
    /// No prior itemsets for the dataset: every confidence is equal, so keep them all.
    StoreAll,
    /// Keep the prefix with the highest confidence.
    ArgmaxConfidence,
    /// Baseline that materializes nothing.
    StoreNone,
}

impl StoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::StoreAll => "StoreAll",
            Self::ArgmaxConfidence => "ArgmaxConfidence",
            Self::StoreNone => "StoreNone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreDecision {
    pub mode: StoreMode,
    pub store_points: Vec<SubPipeline>,
}

impl StoreDecision {
    pub fn contains(&self, prefix: &[ModuleId]) -> bool {
        self.store_points.iter().any(|s| s.prefix == prefix)
    }
}

/// Single store point by highest confidence.
pub fn recommend_store(index: &RuleIndex, run: &PipelineRun) -> StoreDecision {
    recommend_store_top(index, run, 1)
}

/// Store decision for a run that `index` already counts.
///
/// When the dataset's itemsets all come from this run every prefix is kept; otherwise
/// the `points` prefixes with the highest confidence, longer prefix first on ties.
pub fn recommend_store_top(index: &RuleIndex, run: &PipelineRun, points: usize) -> StoreDecision {
    let itemsets = enumerate_prefixes(run, index.options());
    if itemsets.is_empty() || index.dataset_support(&run.dataset) <= itemsets.len() as u64 {
        return StoreDecision {
            mode: StoreMode::StoreAll,
            store_points: itemsets,
        };
    }
    let mut scored: Vec<(SubPipeline, RuleStats)> = itemsets
        .into_iter()
        .filter_map(|s| index.rule_stats(&s.rule()).map(|stats| (s, stats)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.confidence()
            .cmp(&a.1.confidence())
            .then_with(|| b.0.prefix.len().cmp(&a.0.prefix.len()))
            .then_with(|| a.0.prefix.cmp(&b.0.prefix))
    });
    scored.truncate(points.max(1));
    StoreDecision {
        mode: StoreMode::ArgmaxConfidence,
        store_points: scored.into_iter().map(|(s, _)| s).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ingest::History;
    use crate::mining::{build_index, MiningOptions};
    use crate::model::{modules, Ratio};
    use crate::store::{put_intermediate, MemoryBlobStore};

    fn d(s: &str) -> DatasetId {
        DatasetId::new(s).unwrap()
    }

    fn m(xs: &[&str]) -> Vec<ModuleId> {
        modules(xs.iter().copied()).unwrap()
    }

    fn rule(ds: &str, xs: &[&str]) -> AssociationRule {
        AssociationRule::new(d(ds), m(xs)).unwrap()
    }

    fn first_runs(n: usize) -> History {
        History::from_runs(fixtures::example_history().runs()[..n].iter().cloned()).unwrap()
    }

    #[test]
    fn example_ranking_head() {
        let index = build_index(&fixtures::example_history(), MiningOptions::default());
        let ranked = rank_rules(index.distinct_rules(None));
        assert_eq!(ranked.len(), 11);
        assert_eq!(ranked[0].rule, rule("D2", &["P2"]));
        assert_eq!(ranked[0].stats.confidence(), Ratio::new(2, 5));
        assert_eq!(ranked[1].rule, rule("D1", &["P1"]));
        assert_eq!(ranked[1].stats.confidence().to_string(), "2/8");
        let ranks: Vec<usize> = ranked.iter().map(|r| r.rank).collect();
        assert_eq!(ranks, (1..=11).collect::<Vec<_>>());
        // D2 1/5 rules come before D1 1/8 rules, longest first within a tie.
        assert_eq!(ranked[2].rule, rule("D2", &["P2", "P4", "P5"]));
        assert_eq!(ranked[5].rule, rule("D1", &["P1", "P2", "P3", "P4", "P7"]));
    }

    #[test]
    fn subsumption_tie_break() {
        let s = RuleStats::new(2, 8);
        let ranked = rank_rules(vec![
            (rule("D1", &["P1"]), s),
            (rule("D1", &["P1", "P3"]), s),
            (rule("D1", &["P1", "P3", "P4"]), s),
        ]);
        assert_eq!(ranked[0].rule, rule("D1", &["P1", "P3", "P4"]));
        assert_eq!(ranked[2].rule, rule("D1", &["P1"]));
    }

    #[test]
    fn single_rule_rank() {
        let ranked = rank_rules(vec![(rule("D1", &["A"]), RuleStats::new(1, 1))]);
        assert_eq!(ranked[0].rank, 1);
    }

    fn run2_manifest() -> StoreManifest {
        let blobs = MemoryBlobStore::new();
        let mut manifest = StoreManifest::new();
        for p in [&["P2"][..], &["P2", "P3"]] {
            put_intermediate(&mut manifest, &blobs, StoreKey::new(d("D2"), m(p)), b"x", 2).unwrap();
        }
        manifest
    }

    #[test]
    fn reuse_for_d2_after_three_runs() {
        let index = build_index(&first_runs(3), MiningOptions::default());
        let got = recommend_reuse(&index, &run2_manifest(), &d("D2"), &[], 10);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].rule, rule("D2", &["P2", "P3"]));
        assert_eq!(got[1].rule, rule("D2", &["P2"]));
        assert!(got.iter().all(|s| s.stored && s.stats.confidence() == Ratio::new(1, 2)));
        assert_eq!(got[0].store_key.as_ref().unwrap().canonical(), "D2/P2-P3");
    }

    #[test]
    fn reuse_strictly_extends_prefix() {
        let index = build_index(&first_runs(3), MiningOptions::default());
        let got = recommend_reuse(&index, &run2_manifest(), &d("D2"), &m(&["P2"]), 10);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].rule, rule("D2", &["P2", "P3"]));
    }

    #[test]
    fn reuse_unknown_dataset_and_unstored_flags() {
        let index = build_index(&first_runs(3), MiningOptions::default());
        assert!(recommend_reuse(&index, &run2_manifest(), &d("D9"), &[], 10).is_empty());
        let got = recommend_reuse(&index, &StoreManifest::new(), &d("D1"), &[], 2);
        assert_eq!(got.len(), 2);
        assert!(got.iter().all(|s| !s.stored && s.store_key.is_none()));
        assert_eq!(got[0].rule, rule("D1", &["P1"]));
    }

    #[test]
    fn store_decisions_on_example_runs() {
        let history = fixtures::example_history();
        let runs = history.runs();
        let opts = MiningOptions::default();

        let dec = recommend_store(&build_index(&first_runs(1), opts), &runs[0]);
        assert_eq!(dec.mode, StoreMode::StoreAll);
        assert_eq!(dec.store_points.len(), 3);

        let dec = recommend_store(&build_index(&first_runs(2), opts), &runs[1]);
        assert_eq!(dec.mode, StoreMode::StoreAll);
        assert_eq!(dec.store_points.len(), 2);

        let dec = recommend_store(&build_index(&first_runs(3), opts), &runs[2]);
        assert_eq!(dec.mode, StoreMode::ArgmaxConfidence);
        assert_eq!(dec.store_points.len(), 1);
        assert_eq!(dec.store_points[0].prefix, m(&["P1"]));

        let dec = recommend_store(&build_index(&first_runs(4), opts), &runs[3]);
        assert_eq!(dec.mode, StoreMode::ArgmaxConfidence);
        assert_eq!(dec.store_points[0].prefix, m(&["P2"]));
    }

    #[test]
    fn store_top_k_orders_by_confidence_then_length() {
        let index = build_index(&fixtures::example_history(), MiningOptions::default());
        let run = &fixtures::example_history().runs()[2].clone();
        let dec = recommend_store_top(&index, run, 3);
        let lens: Vec<usize> = dec.store_points.iter().map(|s| s.prefix.len()).collect();
        assert_eq!(lens, [1, 5, 4]);
    }

    #[test]
    fn single_module_run_stores_nothing() {
        let history = crate::ingest::parse_history_dsl("D1: A").unwrap();
        let index = build_index(&history, MiningOptions::default());
        let dec = recommend_store(&index, &history.runs()[0]);
        assert_eq!(dec.mode, StoreMode::StoreAll);
        assert!(dec.store_points.is_empty());
    }
}
