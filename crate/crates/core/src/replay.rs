//! Drives a trace through a memory manager and reports counters and modeled
//! times.

use crate::cost_model::{modeled_time, CostParams, TimeReport};
use crate::error::{Error, Result};
use crate::page_pool::RegionHandle;
use crate::strategy::{MemoryManager, Report, StrategyConfig};
use crate::trace::{Trace, TraceEvent};

/// Everything one replay produces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub report: Report,
    pub time: TimeReport,
}

/// Replays `trace` under `config`, converting counters into modeled times
/// with `params`. Strategy errors are annotated with the index of the
/// offending trace event. Fully deterministic.
pub fn replay(trace: &Trace, config: &StrategyConfig, params: &CostParams) -> Result<RunOutcome> {
    let mut mgr = MemoryManager::load(config.clone(), trace.pool_size)
        .map_err(|e| Error::Load { source: Box::new(e) })?;
    let mut handles: Vec<RegionHandle> = Vec::with_capacity(trace.mmap_count());
    for (index, event) in trace.events.iter().enumerate() {
        let step = |handles: &mut Vec<RegionHandle>, mgr: &mut MemoryManager| -> Result<()> {
            match *event {
                TraceEvent::Mmap { len } => {
                    let region = mgr.mmap(len)?;
                    handles.push(region.handle);
                }
                TraceEvent::Munmap { region, offset, len } => {
                    let handle = *handles.get(region).ok_or_else(|| {
                        Error::InvalidArgument(format!("region ordinal {region} not yet mapped"))
                    })?;
                    mgr.munmap(handle, offset, len)?;
                }
                TraceEvent::Access { region, offset, len } => {
                    let handle = *handles.get(region).ok_or_else(|| {
                        Error::InvalidArgument(format!("region ordinal {region} not yet mapped"))
                    })?;
                    mgr.access(handle, offset, len)?;
                }
            }
            Ok(())
        };
        step(&mut handles, &mut mgr)
            .map_err(|e| Error::Replay { event: index, source: Box::new(e) })?;
    }
    let report = mgr.report();
    let time = modeled_time(&report.merged_counters(), params);
    Ok(RunOutcome { report, time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::gen_linear;
    use crate::strategy::StrategyMode;

    fn run(trace: &Trace, config: &StrategyConfig) -> RunOutcome {
        replay(trace, config, &CostParams::default()).unwrap()
    }

    #[test]
    fn empty_trace_has_load_counters_only() {
        let trace = Trace::new(64, "", 0);
        let out = run(&trace, &StrategyConfig::new(StrategyMode::Edmm).with_prealloc(16));
        assert!(out.report.counters.is_zero());
        assert_eq!(out.report.load_counters.eadd_measure, 16);
    }

    #[test]
    fn replay_is_deterministic() {
        let trace = gen_linear(3, 512, 0.5);
        let cfg = StrategyConfig::new(StrategyMode::EdmmDemand).with_demand_pages(8);
        assert_eq!(run(&trace, &cfg), run(&trace, &cfg));
    }

    #[test]
    fn full_touch_demand_crosses_more_than_eager() {
        // Touching every mapped page costs five crossings per page under
        // single-page demand faults but only three under eager accept.
        let trace = gen_linear(5, 256, 1.0);
        let eager = run(&trace, &StrategyConfig::new(StrategyMode::Edmm));
        let demand = run(&trace, &StrategyConfig::new(StrategyMode::EdmmDemand));
        assert!(demand.report.counters.crossings > eager.report.counters.crossings);
    }

    #[test]
    fn oversized_demand_fails_at_deterministic_event() {
        let mut trace = Trace::new(8, "", 0);
        trace.mmap(4);
        trace.mmap(4);
        trace.mmap(1); // pool exhausted here
        let err = replay(&trace, &StrategyConfig::new(StrategyMode::Edmm), &CostParams::default())
            .unwrap_err();
        assert_eq!(err.event_index(), Some(2));
        assert_eq!(err.category(), "out-of-memory");
    }
}
