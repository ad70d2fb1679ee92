//! Trace-driven simulator and policy library for SGX2 enclave dynamic
//! memory management (EDMM).
//!
//! The crate models the page-allocation and removal protocols of an
//! SGX2 library OS as event-emitting state machines over a virtual page
//! pool, implements the allocation-strategy grid built on them (static
//! allocation, eager and batched EDMM, contiguous demand allocation, page
//! pre-allocation, and lazy free), and replays mmap/munmap/access workload
//! traces to compare strategies by protocol counters and a calibrated
//! linear cost model — no SGX hardware required.
//!
//! Typical use:
//!
//! ```
//! use edmm_sim::{generators, replay, CostParams, StrategyConfig, StrategyMode};
//!
//! let trace = generators::gen_churn(7, 50, 64, 4);
//! let config = StrategyConfig::new(StrategyMode::Edmm).with_batch(true);
//! let outcome = replay(&trace, &config, &CostParams::default()).unwrap();
//! let c = outcome.report.counters;
//! // Every accept pairs with either a page addition or a trim.
//! assert_eq!(c.eaug + c.trim, c.eaccept);
//! ```

#[doc(hidden)]
pub mod corpus;
pub mod cost_model;
mod error;
pub mod events;
pub mod flows;
pub mod generators;
pub mod oracle;
pub mod page_pool;
pub mod replay;
pub mod strategy;
pub mod trace;

pub use cost_model::{modeled_time, CostParams, TimeReport};
pub use error::{Error, Result};
pub use events::{summarize, Counters, Event, EventKind, EventLog, Side};
pub use page_pool::{PagePool, PageRun, PageState, PoolCounts, Region, RegionHandle, PAGE_SIZE};
pub use replay::{replay, RunOutcome};
pub use strategy::{MemoryManager, Report, StrategyConfig, StrategyMode};
pub use trace::{Trace, TraceEvent};
