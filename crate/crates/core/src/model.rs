//! Shared domain types: identifiers, pipeline runs, rules and their statistics.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("pipeline has no modules")]
    EmptyModules,
    #[error("bad token {0:?}: expected [A-Za-z0-9_.-]+")]
    BadToken(String),
    #[error("sequence number {0} already used or out of order")]
    DuplicateSeq(u64),
    #[error("sequence numbers start at 1")]
    ZeroSeq,
}

fn check_token(raw: &str) -> Result<(), ModelError> {
    let ok = !raw.is_empty()
        && raw
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(ModelError::BadToken(raw.to_owned()))
    }
}

macro_rules! token_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Result<Self, ModelError> {
                let raw = raw.into();
                check_token(&raw)?;
                Ok(Self(raw))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = ModelError;

            fn try_from(raw: String) -> Result<Self, Self::Error> {
                Self::new(raw)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl std::str::FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

token_type!(
    /// Raw dataset a pipeline starts from.
    DatasetId
);
token_type!(
    /// Opaque processing-module token. Configuration and versioning are not modeled.
    ModuleId
);

/// Parses a list of module tokens.
pub fn modules<I, S>(raw: I) -> Result<Vec<ModuleId>, ModelError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    raw.into_iter().map(ModuleId::new).collect()
}

/// Joins module tokens with `-`, the notation used in the history DSL and store keys.
pub fn join_modules(modules: &[ModuleId]) -> String {
    let mut out = String::new();
    for (i, m) in modules.iter().enumerate() {
        if i > 0 {
            out.push('-');
        }
        out.push_str(m.as_str());
    }
    out
}

/// One historical execution: a dataset pushed through an ordered module sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub id: String,
    pub dataset: DatasetId,
    pub modules: Vec<ModuleId>,
    pub seq: u64,
}

impl PipelineRun {
    pub fn new(
        id: impl Into<String>,
        dataset: DatasetId,
        modules: Vec<ModuleId>,
        seq: u64,
    ) -> Result<Self, ModelError> {
        if modules.is_empty() {
            return Err(ModelError::EmptyModules);
        }
        if seq == 0 {
            return Err(ModelError::ZeroSeq);
        }
        Ok(Self {
            id: id.into(),
            dataset,
            modules,
            seq,
        })
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }
}

/// Unvalidated run record as it arrives from a file or a request body.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRun {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub dataset: String,
    pub modules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
}

/// Validates a raw record. A missing `seq` takes `default_seq`; a missing id becomes `wf-<seq>`.
pub fn validate_run(raw: RawRun, default_seq: u64) -> Result<PipelineRun, ModelError> {
    let dataset = DatasetId::new(raw.dataset)?;
    if raw.modules.is_empty() {
        return Err(ModelError::EmptyModules);
    }
    let modules = modules(raw.modules)?;
    let seq = raw.seq.unwrap_or(default_seq);
    let id = raw.id.unwrap_or_else(|| format!("wf-{seq}"));
    PipelineRun::new(id, dataset, modules, seq)
}

/// A dataset paired with a leading module prefix of some run; the unit of support counting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubPipeline {
    pub dataset: DatasetId,
    pub prefix: Vec<ModuleId>,
}

impl SubPipeline {
    pub fn rule(&self) -> AssociationRule {
        AssociationRule {
            antecedent: self.dataset.clone(),
            consequent: self.prefix.clone(),
        }
    }
}

impl fmt::Display for SubPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, ({})]", self.dataset, self.prefix.iter().map(ModuleId::as_str).collect::<Vec<_>>().join(", "))
    }
}

/// `dataset => module prefix`. Equality is order-sensitive on the consequent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssociationRule {
    pub antecedent: DatasetId,
    pub consequent: Vec<ModuleId>,
}

impl AssociationRule {
    pub fn new(antecedent: DatasetId, consequent: Vec<ModuleId>) -> Result<Self, ModelError> {
        if consequent.is_empty() {
            return Err(ModelError::EmptyModules);
        }
        Ok(Self {
            antecedent,
            consequent,
        })
    }

    /// True when the consequent is a leading segment of `modules`.
    pub fn is_prefix_of(&self, modules: &[ModuleId]) -> bool {
        modules.starts_with(&self.consequent)
    }
}

impl fmt::Display for AssociationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cons: Vec<&str> = self.consequent.iter().map(ModuleId::as_str).collect();
        write!(f, "{} => ({})", self.antecedent, cons.join(", "))
    }
}

/// Exact non-negative fraction kept as the original integer pair.
///
/// Equality and ordering compare by value (`2/8 == 1/4`), so `Hash` is deliberately not derived.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// Panics on a zero denominator.
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "ratio with zero denominator");
        Self { num, den }
    }

    /// `None` when `den` is zero.
    pub fn checked(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Self { num, den })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.num) * u128::from(other.den);
        let rhs = u128::from(other.num) * u128::from(self.den);
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Support of a rule and of its antecedent dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleStats {
    pub support: u64,
    pub dataset_support: u64,
}

impl RuleStats {
    pub fn new(support: u64, dataset_support: u64) -> Self {
        debug_assert!(support >= 1 && support <= dataset_support);
        Self {
            support,
            dataset_support,
        }
    }

    /// `support(X, Y) / support(X)`, unreduced.
    pub fn confidence(&self) -> Ratio {
        Ratio::new(self.support, self.dataset_support)
    }
}
