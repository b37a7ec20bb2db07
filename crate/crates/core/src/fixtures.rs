//! The four-pipeline example history bundled with the crate.

use crate::ingest::{parse_history_dsl, History};

pub const EXAMPLE_DSL: &str = include_str!("../fixtures/example.dsl");
pub const EXAMPLE_JSONL: &str = include_str!("../fixtures/example.jsonl");

/// `D1: P1-P3-P4-P2`, `D2: P2-P3-P4`, `D1: P1-P2-P3-P4-P7-P8`, `D2: P2-P4-P5-P7`.
pub fn example_history() -> History {
    parse_history_dsl(EXAMPLE_DSL).expect("bundled fixture parses")
}
