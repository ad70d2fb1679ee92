//! Linear cost model: converts event counters into modeled enclave loading
//! time and execution time through per-event latencies.
//!
//! The default latencies are a calibration, not measurements: they are fixed
//! so that one single-page demand fault inside an enclave sums to 30 µs and
//! a plain kernel demand fault sums to 8 µs, with the remaining budget after
//! the fixed EAUG/EACCEPT and fault-handling costs shared uniformly by the
//! enclave crossings. Override them with a parameter file for other
//! machines.

use crate::error::{Error, Result};
use crate::events::{Counters, EventKind};

/// Per-event latencies in microseconds, plus the fixed enclave-creation
/// overhead and an optional page-zeroing cost charged per reused cached
/// page.
#[derive(Clone, Debug, PartialEq)]
pub struct CostParams {
    event_us: [f64; EventKind::ALL.len()],
    pub zero_page_us: f64,
    pub base_load_us: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        let mut p = CostParams {
            event_us: [0.0; EventKind::ALL.len()],
            zero_page_us: 0.0,
            base_load_us: 50_000.0,
        };
        // Enclave crossings share the single-page demand-fault budget
        // uniformly: 30 = fault handling (6) + EAUG + EACCEPT (1 each) +
        // 4 enclave crossings at 5.5. The plain-process fault anchor is
        // 8 = 1 + 6 + 1.
        p.set_latency(EventKind::PageFault, 6.0);
        p.set_latency(EventKind::Eenter, 5.5);
        p.set_latency(EventKind::Eexit, 5.5);
        p.set_latency(EventKind::Aex, 5.5);
        p.set_latency(EventKind::Eresume, 5.5);
        p.set_latency(EventKind::SyscallEnter, 1.0);
        p.set_latency(EventKind::SyscallReturn, 1.0);
        p.set_latency(EventKind::Eaug, 1.0);
        p.set_latency(EventKind::Eaccept, 1.0);
        p.set_latency(EventKind::Etrack, 1.0);
        p.set_latency(EventKind::Ipi, 1.0);
        p.set_latency(EventKind::Trim, 1.0);
        p.set_latency(EventKind::Eremove, 1.0);
        p.set_latency(EventKind::EaddMeasure, 10.0);
        p
    }
}

fn kind_index(kind: EventKind) -> usize {
    EventKind::ALL.iter().position(|&k| k == kind).unwrap()
}

fn key_name(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Eenter => "eenter",
        EventKind::Eexit => "eexit",
        EventKind::Aex => "aex",
        EventKind::Eresume => "eresume",
        EventKind::PageFault => "page_fault",
        EventKind::SyscallEnter => "syscall_enter",
        EventKind::SyscallReturn => "syscall_return",
        EventKind::Eaug => "eaug",
        EventKind::Eaccept => "eaccept",
        EventKind::Etrack => "etrack",
        EventKind::Ipi => "ipi",
        EventKind::Trim => "trim",
        EventKind::Eremove => "eremove",
        EventKind::EaddMeasure => "eadd_measure",
    }
}

impl CostParams {
    pub fn latency(&self, kind: EventKind) -> f64 {
        self.event_us[kind_index(kind)]
    }

    pub fn set_latency(&mut self, kind: EventKind, us: f64) {
        self.event_us[kind_index(kind)] = us;
    }

    /// Parses the flat `name = microseconds` key-value format. Keys missing
    /// from the file keep their default value; unknown or repeated keys are
    /// rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut params = CostParams::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected `name = microseconds`, got {raw:?}"),
            })?;
            let key = key.trim();
            let us: f64 = value.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid microsecond value {:?}", value.trim()),
            })?;
            if !us.is_finite() || us < 0.0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("latency must be finite and non-negative, got {us}"),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse { line: line_no, msg: format!("duplicate key {key:?}") });
            }
            match key {
                "zero_page" => params.zero_page_us = us,
                "base_load" => params.base_load_us = us,
                _ => {
                    let kind = EventKind::ALL
                        .iter()
                        .copied()
                        .find(|&k| key_name(k) == key)
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            msg: format!("unknown key {key:?}"),
                        })?;
                    params.set_latency(kind, us);
                }
            }
        }
        Ok(params)
    }

    /// Writes every key in a stable order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for kind in EventKind::ALL {
            out.push_str(&format!("{} = {}\n", key_name(kind), self.latency(kind)));
        }
        out.push_str(&format!("zero_page = {}\n", self.zero_page_us));
        out.push_str(&format!("base_load = {}\n", self.base_load_us));
        out
    }
}

/// Modeled times in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TimeReport {
    pub load_time_us: f64,
    pub exec_time_us: f64,
}

/// Applies the linear model to a set of counters. Load-time measurement
/// events feed the loading time; every other event feeds execution time,
/// plus the optional zeroing charge for reused cached pages.
pub fn modeled_time(counters: &Counters, params: &CostParams) -> TimeReport {
    let mut exec = 0.0;
    for kind in EventKind::ALL {
        if kind == EventKind::EaddMeasure {
            continue;
        }
        exec += counters.get(kind) as f64 * params.latency(kind);
    }
    exec += counters.reused_cached_pages as f64 * params.zero_page_us;
    let load = params.base_load_us
        + counters.eadd_measure as f64 * params.latency(EventKind::EaddMeasure);
    TimeReport { load_time_us: load, exec_time_us: exec }
}
