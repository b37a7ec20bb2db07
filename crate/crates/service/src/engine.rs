//! In-memory service state: the evolving replay (index + ledger), the manifest and the history.

use pipereuse_core::ingest::History;
use pipereuse_core::mining::append_run;
use pipereuse_core::model::{validate_run, DatasetId, ModelError, ModuleId, PipelineRun, RawRun};
use pipereuse_core::recommend::{recommend_reuse, ReuseSuggestion, StoreDecision};
use pipereuse_core::replay::{Policy, Replayer, Tally};
use pipereuse_core::store::{placeholder_payload, BlobStore, StoreError, StoreKey, StoreManifest};
use pipereuse_core::{MiningOptions, Ratio, RuleIndex};
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct Engine {
    replayer: Replayer,
    manifest: StoreManifest,
    history: History,
}

/// Outcome of committing one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub run: PipelineRun,
    pub decision: StoreDecision,
    pub deltas: Tally,
    /// Longest stored prefix of the run, whose hit counter was bumped.
    pub reused: Option<StoreKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub runs: u64,
    pub rules: u64,
    pub gain: u64,
    pub loss_waste: u64,
    pub loss_miss: u64,
    pub loss: u64,
    pub no_effect: u64,
    pub ratio: Option<Ratio>,
}

impl Engine {
    pub fn new(options: MiningOptions, policy: Policy) -> Self {
        Self {
            replayer: Replayer::new(policy, options),
            manifest: StoreManifest::new(),
            history: History::new(),
        }
    }

    /// Replays `history` under `policy`. Store points missing from `manifest` are materialized
    /// with placeholder payloads so the manifest reflects every executed decision.
    pub fn bootstrap(
        history: History,
        options: MiningOptions,
        policy: Policy,
        mut manifest: StoreManifest,
        blobs: &dyn BlobStore,
    ) -> Result<Self, StoreError> {
        let mut replayer = Replayer::new(policy, options);
        for run in history.runs() {
            let step = replayer.push(run);
            for point in &step.decision.store_points {
                let key = StoreKey::from(point);
                if manifest.get(&key).is_none() {
                    manifest.put(blobs, key.clone(), &placeholder_payload(&key), run.seq, false)?;
                }
            }
        }
        Ok(Self {
            replayer,
            manifest,
            history,
        })
    }

    /// Replaces the manifest without touching the replayed state.
    pub fn with_manifest(mut self, manifest: StoreManifest) -> Self {
        self.manifest = manifest;
        self
    }

    pub fn index(&self) -> &RuleIndex {
        self.replayer.index()
    }

    pub fn replayer(&self) -> &Replayer {
        &self.replayer
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn reuse(&self, dataset: &DatasetId, prefix: &[ModuleId], top_k: usize) -> Vec<ReuseSuggestion> {
        recommend_reuse(self.index(), &self.manifest, dataset, prefix, top_k)
    }

    /// Run record the next submission of `raw` would become.
    pub fn prepare(&self, raw: RawRun) -> Result<PipelineRun, ModelError> {
        let seq = self.history.next_seq();
        let raw = RawRun { seq: None, ..raw };
        validate_run(raw, seq)
    }

    /// Decision for `run` as if it were committed now; nothing changes.
    pub fn preview_store(&self, run: &PipelineRun) -> StoreDecision {
        let hypothetical = append_run(self.index(), run);
        self.replayer.decide(&hypothetical, run)
    }

    /// Manifest after materializing `decision` for `run` and counting its reuse hit.
    pub fn staged_manifest(
        &self,
        run: &PipelineRun,
        decision: &StoreDecision,
        blobs: &dyn BlobStore,
    ) -> Result<(StoreManifest, Option<StoreKey>), StoreError> {
        let mut manifest = self.manifest.clone();
        let reused = (1..=run.modules.len())
            .rev()
            .map(|k| StoreKey::new(run.dataset.clone(), run.modules[..k].to_vec()))
            .find(|key| manifest.is_stored(key));
        if let Some(key) = &reused {
            manifest.record_hit(key)?;
        }
        for point in &decision.store_points {
            let key = StoreKey::from(point);
            manifest.put(blobs, key.clone(), &placeholder_payload(&key), run.seq, false)?;
        }
        Ok((manifest, reused))
    }

    /// Installs a run whose manifest was staged with [`Engine::staged_manifest`].
    pub fn commit(&mut self, run: PipelineRun, manifest: StoreManifest, reused: Option<StoreKey>) -> Submission {
        let step = self.replayer.push(&run);
        self.manifest = manifest;
        self.history
            .push(run.clone())
            .expect("prepared run carries the next sequence number");
        Submission {
            run,
            decision: step.decision,
            deltas: step.deltas,
            reused,
        }
    }

    /// Validate, stage and commit in one go, with no persistence.
    pub fn submit(&mut self, raw: RawRun, blobs: &dyn BlobStore) -> Result<Submission, SubmitError> {
        let run = self.prepare(raw)?;
        let decision = self.preview_store(&run);
        let (manifest, reused) = self.staged_manifest(&run, &decision, blobs)?;
        Ok(self.commit(run, manifest, reused))
    }

    pub fn metrics(&self) -> Metrics {
        let t = self.replayer.totals();
        Metrics {
            runs: self.history.len() as u64,
            rules: self.index().rule_count() as u64,
            gain: t.gain,
            loss_waste: t.loss_waste,
            loss_miss: t.loss_miss,
            loss: t.loss(),
            no_effect: t.no_effect,
            ratio: t.ratio(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
