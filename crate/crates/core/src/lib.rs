//! Mining order-sensitive `dataset => module prefix` rules from pipeline usage history,
//! and using them to decide which intermediate results to materialize and reuse.

pub mod fixtures;
pub mod ingest;
pub mod mining;
pub mod model;
pub mod recommend;
pub mod replay;
pub mod store;
pub mod synthetic;

pub use ingest::{export_rules, load_history, History, HistoryFormat, IngestError, RuleExport};
pub use mining::{build_index, enumerate_prefixes, MiningOptions, RuleIndex};
pub use model::{
    AssociationRule, DatasetId, ModelError, ModuleId, PipelineRun, Ratio, RawRun, RuleStats, SubPipeline,
};
pub use recommend::{rank_rules, recommend_reuse, recommend_store, RankedRule, ReuseSuggestion, StoreDecision, StoreMode};
pub use replay::{replay, Policy, ReplayReport, Replayer};
pub use store::{StoreError, StoreKey, StoreManifest};
