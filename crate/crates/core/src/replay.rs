//! Timeframe replay of a storing policy with a gain/loss/no-effect ledger.
//!
//! Runs arrive one at a time. Each arrival is first folded into the index, then every
//! ledger entry left by earlier runs is charged exactly one outcome against the new run,
//! and finally the policy decides what to store for the new run, which appends one ledger
//! entry per itemset of that run.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::History;
use crate::mining::{enumerate_prefixes, MiningOptions, RuleIndex};
use crate::model::{AssociationRule, DatasetId, PipelineRun, Ratio};
use crate::recommend::{recommend_store_top, StoreDecision, StoreMode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("history is empty")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Store everything for a dataset's first itemsets, then the highest-confidence prefix.
    #[default]
    Risp,
    StoreAll,
    StoreNone,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Risp => "risp",
            Self::StoreAll => "store-all",
            Self::StoreNone => "store-none",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "risp" => Ok(Self::Risp),
            "store-all" => Ok(Self::StoreAll),
            "store-none" => Ok(Self::StoreNone),
            other => Err(format!("unknown policy {other:?} (expected risp, store-all or store-none)")),
        }
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Stored and reused by the new run.
    Gain,
    /// Stored but not a prefix of the new run.
    LossWaste,
    /// A prefix of the new run that was not stored.
    LossMiss,
    NoEffect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub rule: AssociationRule,
    pub stored: bool,
    pub created_seq: u64,
    pub gain: u64,
    pub loss_waste: u64,
    pub loss_miss: u64,
    pub no_effect: u64,
}

impl LedgerEntry {
    pub fn new(rule: AssociationRule, stored: bool, created_seq: u64) -> Self {
        Self {
            rule,
            stored,
            created_seq,
            gain: 0,
            loss_waste: 0,
            loss_miss: 0,
            no_effect: 0,
        }
    }

    pub fn classify(&self, run: &PipelineRun) -> Outcome {
        if self.rule.antecedent != run.dataset {
            return Outcome::NoEffect;
        }
        match (self.stored, self.rule.is_prefix_of(&run.modules)) {
            (true, true) => Outcome::Gain,
            (true, false) => Outcome::LossWaste,
            (false, true) => Outcome::LossMiss,
            (false, false) => Outcome::NoEffect,
        }
    }

    fn apply(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Gain => self.gain += 1,
            Outcome::LossWaste => self.loss_waste += 1,
            Outcome::LossMiss => self.loss_miss += 1,
            Outcome::NoEffect => self.no_effect += 1,
        }
    }

    /// Timeframes this entry has been charged.
    pub fn charged(&self) -> u64 {
        self.gain + self.loss_waste + self.loss_miss + self.no_effect
    }
}

/// Charges every entry exactly one outcome against `run`; returns them in ledger order.
pub fn step_update(ledger: &mut [LedgerEntry], run: &PipelineRun) -> Vec<Outcome> {
    ledger
        .iter_mut()
        .map(|entry| {
            let outcome = entry.classify(run);
            entry.apply(outcome);
            outcome
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Tally {
    pub gain: u64,
    pub loss_waste: u64,
    pub loss_miss: u64,
    pub no_effect: u64,
}

impl Tally {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let mut t = Self::default();
        for o in outcomes {
            t.add(*o);
        }
        t
    }

    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Gain => self.gain += 1,
            Outcome::LossWaste => self.loss_waste += 1,
            Outcome::LossMiss => self.loss_miss += 1,
            Outcome::NoEffect => self.no_effect += 1,
        }
    }

    pub fn merge(&mut self, other: Tally) {
        self.gain += other.gain;
        self.loss_waste += other.loss_waste;
        self.loss_miss += other.loss_miss;
        self.no_effect += other.no_effect;
    }

    /// Waste plus miss.
    pub fn loss(&self) -> u64 {
        self.loss_waste + self.loss_miss
    }

    pub fn total(&self) -> u64 {
        self.gain + self.loss() + self.no_effect
    }

    /// gain/loss; `None` while nothing has been lost.
    pub fn ratio(&self) -> Option<Ratio> {
        Ratio::checked(self.gain, self.loss())
    }
}

/// Cumulative totals after one timeframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Frame {
    pub seq: u64,
    pub gain: u64,
    pub loss_waste: u64,
    pub loss_miss: u64,
    pub loss: u64,
    pub no_effect: u64,
    pub ratio: Option<Ratio>,
}

impl Frame {
    fn from_totals(seq: u64, t: &Tally) -> Self {
        Self {
            seq,
            gain: t.gain,
            loss_waste: t.loss_waste,
            loss_miss: t.loss_miss,
            loss: t.loss(),
            no_effect: t.no_effect,
            ratio: t.ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub policy: Policy,
    pub options: MiningOptions,
    pub frames: Vec<Frame>,
}

impl ReplayReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    /// Same columns as the JSON frames; ratio as `num/den`, empty when undefined.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct Row {
            seq: u64,
            gain: u64,
            loss_waste: u64,
            loss_miss: u64,
            loss: u64,
            no_effect: u64,
            ratio: String,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.frames.is_empty() {
            w.write_record(["seq", "gain", "lossWaste", "lossMiss", "loss", "noEffect", "ratio"])
                .expect("in-memory csv write");
        }
        for f in &self.frames {
            w.serialize(Row {
                seq: f.seq,
                gain: f.gain,
                loss_waste: f.loss_waste,
                loss_miss: f.loss_miss,
                loss: f.loss,
                no_effect: f.no_effect,
                ratio: f.ratio.map(|r| r.to_string()).unwrap_or_default(),
            })
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }
}

/// What one arrival did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub seq: u64,
    pub deltas: Tally,
    pub decision: StoreDecision,
    pub frame: Option<Frame>,
}

/// Incremental replay state: evolving index, ledger and cumulative totals.
#[derive(Debug, Clone)]
pub struct Replayer {
    policy: Policy,
    store_points: usize,
    index: RuleIndex,
    ledger: Vec<LedgerEntry>,
    /// Runs pushed before each ledger entry was created; `no_effect` is derived from it.
    born: Vec<u64>,
    stored_by_dataset: HashMap<DatasetId, Vec<usize>>,
    unstored_by_rule: HashMap<AssociationRule, Vec<usize>>,
    totals: Tally,
    frames: Vec<Frame>,
}

impl Replayer {
    pub fn new(policy: Policy, options: MiningOptions) -> Self {
        Self {
            policy,
            store_points: 1,
            index: RuleIndex::new(options),
            ledger: Vec::new(),
            born: Vec::new(),
            stored_by_dataset: HashMap::new(),
            unstored_by_rule: HashMap::new(),
            totals: Tally::default(),
            frames: Vec::new(),
        }
    }

    /// How many prefixes the confidence policy keeps per run (default 1).
    pub fn with_store_points(mut self, points: usize) -> Self {
        self.store_points = points.max(1);
        self
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn index(&self) -> &RuleIndex {
        &self.index
    }

    /// Ledger as [`step_update`] would have left it.
    pub fn ledger(&self) -> Vec<LedgerEntry> {
        let runs = self.index.run_count();
        self.ledger
            .iter()
            .zip(&self.born)
            .map(|(e, born)| LedgerEntry {
                no_effect: runs - born - (e.gain + e.loss_waste + e.loss_miss),
                ..e.clone()
            })
            .collect()
    }

    pub fn totals(&self) -> Tally {
        self.totals
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn report(&self) -> ReplayReport {
        ReplayReport {
            policy: self.policy,
            options: self.index.options(),
            frames: self.frames.clone(),
        }
    }

    /// Decision the policy would make for `run` against an index that already counts it.
    pub fn decide(&self, index: &RuleIndex, run: &PipelineRun) -> StoreDecision {
        match self.policy {
            Policy::Risp => recommend_store_top(index, run, self.store_points),
            Policy::StoreAll => StoreDecision {
                mode: StoreMode::StoreAll,
                store_points: enumerate_prefixes(run, index.options()),
            },
            Policy::StoreNone => StoreDecision {
                mode: StoreMode::StoreNone,
                store_points: Vec::new(),
            },
        }
    }

    pub fn push(&mut self, run: &PipelineRun) -> Step {
        let first = self.index.run_count() == 0;
        self.index.append_run(run);

        let deltas = self.charge(run);
        self.totals.merge(deltas);
        let frame = (!first).then(|| Frame::from_totals(run.seq, &self.totals));
        if let Some(f) = frame {
            self.frames.push(f);
        }

        let decision = self.decide(&self.index, run);
        let born = self.index.run_count();
        for itemset in enumerate_prefixes(run, self.index.options()) {
            let stored = decision.contains(&itemset.prefix);
            let rule = itemset.rule();
            let at = self.ledger.len();
            if stored {
                self.stored_by_dataset.entry(run.dataset.clone()).or_default().push(at);
            } else {
                self.unstored_by_rule.entry(rule.clone()).or_default().push(at);
            }
            self.ledger.push(LedgerEntry::new(rule, stored, run.seq));
            self.born.push(born);
        }

        Step {
            seq: run.seq,
            deltas,
            decision,
            frame,
        }
    }
}

impl Replayer {
    /// Same outcomes as [`step_update`], visiting only entries that can be charged something
    /// other than no-effect: stored entries of the run's dataset and unstored prefixes of the run.
    fn charge(&mut self, run: &PipelineRun) -> Tally {
        let mut tally = Tally::default();
        if let Some(stored) = self.stored_by_dataset.get(&run.dataset) {
            for &i in stored {
                let entry = &mut self.ledger[i];
                let outcome = entry.classify(run);
                entry.apply(outcome);
                tally.add(outcome);
            }
        }
        for k in 1..=run.modules.len() {
            let rule = AssociationRule {
                antecedent: run.dataset.clone(),
                consequent: run.modules[..k].to_vec(),
            };
            for &i in self.unstored_by_rule.get(&rule).map(Vec::as_slice).unwrap_or_default() {
                self.ledger[i].apply(Outcome::LossMiss);
                tally.add(Outcome::LossMiss);
            }
        }
        tally.no_effect = self.ledger.len() as u64 - tally.total();
        tally
    }
}

pub fn replay(history: &History, policy: Policy, options: MiningOptions) -> Result<ReplayReport, ReplayError> {
    if history.is_empty() {
        return Err(ReplayError::EmptyHistory);
    }
    let mut replayer = Replayer::new(policy, options);
    for run in history.runs() {
        replayer.push(run);
    }
    Ok(replayer.report())
}

/// Cumulative gain/loss per timeframe; `None` where nothing has been lost yet.
pub fn ratio_series(report: &ReplayReport) -> Vec<(u64, Option<Ratio>)> {
    report.frames.iter().map(|f| (f.seq, f.ratio)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{modules, DatasetId};

    fn entry(ds: &str, xs: &[&str], stored: bool) -> LedgerEntry {
        LedgerEntry::new(
            AssociationRule::new(DatasetId::new(ds).unwrap(), modules(xs.iter().copied()).unwrap()).unwrap(),
            stored,
            1,
        )
    }

    fn run(ds: &str, xs: &[&str]) -> PipelineRun {
        PipelineRun::new("wf", DatasetId::new(ds).unwrap(), modules(xs.iter().copied()).unwrap(), 9).unwrap()
    }

    #[test]
    fn ledger_outcomes() {
        let third = run("D1", &["P1", "P2", "P3", "P4", "P7", "P8"]);
        assert_eq!(entry("D1", &["P1"], true).classify(&third), Outcome::Gain);
        assert_eq!(entry("D1", &["P1", "P3"], true).classify(&third), Outcome::LossWaste);
        assert_eq!(entry("D2", &["P2"], true).classify(&third), Outcome::NoEffect);
        assert_eq!(
            entry("D1", &["A", "B"], false).classify(&run("D1", &["A", "B", "C"])),
            Outcome::LossMiss
        );
        assert_eq!(entry("D1", &["A", "C"], false).classify(&run("D1", &["A", "B"])), Outcome::NoEffect);
    }

    #[test]
    fn step_update_charges_each_entry_once() {
        let mut ledger = vec![entry("D1", &["P1"], true), entry("D1", &["P1", "P3"], true), entry("D2", &["P2"], true)];
        let outcomes = step_update(&mut ledger, &run("D1", &["P1", "P2"]));
        assert_eq!(outcomes, [Outcome::Gain, Outcome::LossWaste, Outcome::NoEffect]);
        assert!(ledger.iter().all(|e| e.charged() == 1));
        assert_eq!(ledger[0].gain, 1);
    }

    #[test]
    fn example_replay_proper_prefixes() {
        let report = replay(&fixtures::example_history(), Policy::Risp, MiningOptions::default()).unwrap();
        assert_eq!(report.frames.len(), 3);
        let f3 = report.frames[1];
        assert_eq!((f3.seq, f3.gain, f3.loss, f3.loss_waste), (3, 1, 2, 2));
        let f4 = report.frames[2];
        assert_eq!((f4.seq, f4.gain, f4.loss, f4.loss_miss), (4, 2, 3, 0));
        assert_eq!(
            ratio_series(&report),
            vec![(2, None), (3, Some(Ratio::new(1, 2))), (4, Some(Ratio::new(2, 3)))]
        );
    }

    #[test]
    fn example_replay_full_pipeline() {
        let report = replay(&fixtures::example_history(), Policy::Risp, MiningOptions::with_full_pipeline()).unwrap();
        let got: Vec<(u64, u64)> = report.frames[1..].iter().map(|f| (f.gain, f.loss)).collect();
        assert_eq!(got, [(1, 3), (2, 5)]);
    }

    #[test]
    fn single_run_has_no_frames() {
        let h = crate::ingest::parse_history_dsl("D1: A-B").unwrap();
        assert!(replay(&h, Policy::Risp, MiningOptions::default()).unwrap().frames.is_empty());
        assert_eq!(
            replay(&History::new(), Policy::Risp, MiningOptions::default()),
            Err(ReplayError::EmptyHistory)
        );
    }

    #[test]
    fn store_none_never_gains() {
        let report = replay(&fixtures::example_history(), Policy::StoreNone, MiningOptions::default()).unwrap();
        for f in &report.frames {
            assert_eq!(f.gain, 0);
            assert_eq!(f.loss_waste, 0);
            if let Some(r) = f.ratio {
                assert_eq!(r, Ratio::new(0, 1));
            }
        }
        assert!(ratio_series(&ReplayReport { frames: vec![], ..report }).is_empty());
    }

    #[test]
    fn report_documents() {
        let report = replay(&fixtures::example_history(), Policy::Risp, MiningOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["policy"], "risp");
        assert_eq!(v["options"]["includeFullPipeline"], false);
        assert_eq!(v["frames"][0]["ratio"], serde_json::Value::Null);
        assert_eq!(v["frames"][2]["ratio"]["num"], 2);
        assert_eq!(v["frames"][2]["lossWaste"], 3);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "seq,gain,lossWaste,lossMiss,loss,noEffect,ratio");
        assert_eq!(lines[3], "4,2,3,0,3,13,2/3");
        let back: ReplayReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn policy_names() {
        for p in [Policy::Risp, Policy::StoreAll, Policy::StoreNone] {
            assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        }
        assert!("lru".parse::<Policy>().is_err());
    }
}
