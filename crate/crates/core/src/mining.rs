//! Prefix-trie rule index.
//!
//! Every run contributes its leading module prefixes as itemsets `[dataset, (m1..mk)]`.
//! Each dataset owns a trie whose node at path `m1..mk` counts how many itemsets in the
//! whole history equal that prefix, which is exactly the support of the rule
//! `dataset => (m1..mk)`. The dataset support is the number of itemsets with that
//! antecedent, i.e. the sum of all node counts in its trie.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::History;
use crate::model::{AssociationRule, DatasetId, ModuleId, PipelineRun, RuleStats, SubPipeline};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MiningOptions {
    /// Also count the complete module sequence as an itemset.
    #[serde(default)]
    pub include_full_pipeline: bool,
}

impl MiningOptions {
    pub fn with_full_pipeline() -> Self {
        Self {
            include_full_pipeline: true,
        }
    }

    /// Number of itemsets a run of `len` modules contributes.
    pub fn itemset_count(&self, len: usize) -> usize {
        if self.include_full_pipeline {
            len
        } else {
            len.saturating_sub(1)
        }
    }
}

/// Leading prefixes of `run`, shortest first.
pub fn enumerate_prefixes(run: &PipelineRun, options: MiningOptions) -> Vec<SubPipeline> {
    (1..=options.itemset_count(run.modules.len()))
        .map(|k| SubPipeline {
            dataset: run.dataset.clone(),
            prefix: run.modules[..k].to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct TrieNode {
    pub(crate) count: u64,
    pub(crate) children: BTreeMap<ModuleId, TrieNode>,
}

impl TrieNode {
    fn walk<'a>(&'a self, path: &[ModuleId]) -> Option<&'a TrieNode> {
        let mut node = self;
        for m in path {
            node = node.children.get(m)?;
        }
        Some(node)
    }

    fn visit<'a>(&'a self, path: &mut Vec<ModuleId>, out: &mut dyn FnMut(&[ModuleId], &'a TrieNode)) {
        for (module, child) in &self.children {
            path.push(module.clone());
            out(path, child);
            child.visit(path, out);
            path.pop();
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct DatasetTrie {
    pub(crate) support: u64,
    pub(crate) root: TrieNode,
}

/// Per-dataset prefix tries of itemset counts over a history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleIndex {
    options: MiningOptions,
    datasets: BTreeMap<DatasetId, DatasetTrie>,
    runs: u64,
}

impl RuleIndex {
    pub fn new(options: MiningOptions) -> Self {
        Self {
            options,
            datasets: BTreeMap::new(),
            runs: 0,
        }
    }

    pub fn options(&self) -> MiningOptions {
        self.options
    }

    /// Number of runs folded into the index.
    pub fn run_count(&self) -> u64 {
        self.runs
    }

    pub fn datasets(&self) -> impl Iterator<Item = &DatasetId> {
        self.datasets.keys()
    }

    /// Folds one more run into the counts.
    pub fn append_run(&mut self, run: &PipelineRun) {
        self.runs += 1;
        let k = self.options.itemset_count(run.modules.len());
        if k == 0 {
            return;
        }
        let trie = self.datasets.entry(run.dataset.clone()).or_default();
        trie.support += k as u64;
        let mut node = &mut trie.root;
        for module in &run.modules[..k] {
            node = node.children.entry(module.clone()).or_default();
            node.count += 1;
        }
    }

    /// Total itemsets with `dataset` as antecedent; 0 for unseen datasets.
    pub fn dataset_support(&self, dataset: &DatasetId) -> u64 {
        self.datasets.get(dataset).map_or(0, |t| t.support)
    }

    /// Occurrences of the exact ordered prefix under `dataset`.
    pub fn support(&self, dataset: &DatasetId, consequent: &[ModuleId]) -> u64 {
        if consequent.is_empty() {
            return 0;
        }
        self.datasets
            .get(dataset)
            .and_then(|t| t.root.walk(consequent))
            .map_or(0, |n| n.count)
    }

    /// Support and confidence of `rule`, or `None` when its consequent never occurred.
    pub fn rule_stats(&self, rule: &AssociationRule) -> Option<RuleStats> {
        let trie = self.datasets.get(&rule.antecedent)?;
        if rule.consequent.is_empty() {
            return None;
        }
        let node = trie.root.walk(&rule.consequent)?;
        Some(RuleStats::new(node.count, trie.support))
    }

    /// One entry per trie node, for one dataset or all of them. Order is trie order, not rank.
    pub fn distinct_rules(&self, dataset: Option<&DatasetId>) -> Vec<(AssociationRule, RuleStats)> {
        let mut out = Vec::new();
        let selected: Vec<(&DatasetId, &DatasetTrie)> = match dataset {
            Some(d) => self.datasets.get_key_value(d).into_iter().collect(),
            None => self.datasets.iter().collect(),
        };
        for (dataset, trie) in selected {
            self.collect_under(dataset, trie, &[], &mut out);
        }
        out
    }

    /// Rules of `dataset` whose consequent strictly extends `prefix`.
    pub fn extensions(&self, dataset: &DatasetId, prefix: &[ModuleId]) -> Vec<(AssociationRule, RuleStats)> {
        let mut out = Vec::new();
        if let Some(trie) = self.datasets.get(dataset) {
            self.collect_under(dataset, trie, prefix, &mut out);
        }
        out
    }

    fn collect_under(
        &self,
        dataset: &DatasetId,
        trie: &DatasetTrie,
        prefix: &[ModuleId],
        out: &mut Vec<(AssociationRule, RuleStats)>,
    ) {
        let Some(start) = trie.root.walk(prefix) else {
            return;
        };
        let mut path = prefix.to_vec();
        start.visit(&mut path, &mut |path, node| {
            out.push((
                AssociationRule {
                    antecedent: dataset.clone(),
                    consequent: path.to_vec(),
                },
                RuleStats::new(node.count, trie.support),
            ));
        });
    }

    /// Distinct module tokens seen anywhere in the index.
    pub fn modules(&self) -> Vec<ModuleId> {
        let mut seen = std::collections::BTreeSet::new();
        for trie in self.datasets.values() {
            trie.root.visit(&mut Vec::new(), &mut |path, _| {
                if let Some(last) = path.last() {
                    seen.insert(last.clone());
                }
            });
        }
        seen.into_iter().collect()
    }

    pub fn rule_count(&self) -> usize {
        fn nodes(n: &TrieNode) -> usize {
            n.children.values().map(|c| 1 + nodes(c)).sum()
        }
        self.datasets.values().map(|t| nodes(&t.root)).sum()
    }

    #[cfg(test)]
    pub(crate) fn tries(&self) -> &BTreeMap<DatasetId, DatasetTrie> {
        &self.datasets
    }
}

/// Mines a whole history.
pub fn build_index(history: &History, options: MiningOptions) -> RuleIndex {
    let mut index = RuleIndex::new(options);
    for run in history.runs() {
        index.append_run(run);
    }
    index
}

/// Returns a new index with `run` folded in, leaving `index` untouched.
pub fn append_run(index: &RuleIndex, run: &PipelineRun) -> RuleIndex {
    let mut next = index.clone();
    next.append_run(run);
    next
}

/// Free-function form of [`RuleIndex::rule_stats`].
pub fn rule_stats(index: &RuleIndex, rule: &AssociationRule) -> Option<RuleStats> {
    index.rule_stats(rule)
}
