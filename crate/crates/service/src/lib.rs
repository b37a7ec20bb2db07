//! JSON-over-HTTP facade over the mining, recommendation, storage and replay engine.
//!
//! | route                   | body                                  |
//! |-------------------------|---------------------------------------|
//! | `GET /health`           |                                       |
//! | `GET /rules[?dataset=]` |                                       |
//! | `GET /modules`          |                                       |
//! | `POST /pipelines`       | `{"dataset":s,"modules":[s]}`          |
//! | `POST /recommend/reuse` | `{"dataset":s,"prefix":[s],"topK":n?}` |
//! | `POST /recommend/store` | `{"dataset":s,"modules":[s]}`          |
//! | `GET /metrics`          |                                       |
//! | `GET /replay/report`    |                                       |
//!
//! Any other `GET` is served from the UI directory when one is configured.

pub mod api;
pub mod engine;
pub mod http;

pub use api::{Response, Service, ServiceConfig, DEFAULT_TOP_K};
pub use engine::{Engine, Metrics, Submission};
