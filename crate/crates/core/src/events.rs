//! Protocol events and the counters aggregated from them.
//!
//! Every hardware or kernel step of the allocation/removal flows is one
//! event. An enclave crossing is any transition among the enclave, the
//! untrusted runtime, and the kernel; the crossing total of a log is the
//! number of crossing events it contains. A page fault counts as a crossing
//! because the fault delivers control to the kernel and its handler returns
//! to userspace without a separately logged event.

use std::fmt;

/// One protocol step, named after the SGX leaf function or transition it
/// models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Voluntary enclave entry (ECALL or exception-handler entry).
    Eenter,
    /// Voluntary enclave exit (OCALL).
    Eexit,
    /// Asynchronous enclave exit caused by a fault or interrupt.
    Aex,
    /// Re-entry into the enclave after an AEX.
    Eresume,
    /// Hardware page fault handled by the kernel.
    PageFault,
    /// Entry into the kernel for an explicit system call (e.g. madvise).
    SyscallEnter,
    /// Return from the kernel to the untrusted runtime.
    SyscallReturn,
    /// Kernel adds a zeroed virtual page to the enclave.
    Eaug,
    /// Enclave approves an addition or type change of one page.
    Eaccept,
    /// Kernel blocks new mappings of trimmed pages and begins TLB tracking.
    Etrack,
    /// Inter-processor interrupt shooting down one thread's stale TLB entries.
    Ipi,
    /// Kernel marks one page as pending removal (EMODT to TRIM).
    Trim,
    /// Kernel deletes one trimmed page.
    Eremove,
    /// Load-time add-and-measure of one page (EADD + EEXTEND).
    EaddMeasure,
}

impl EventKind {
    pub const ALL: [EventKind; 14] = [
        EventKind::Eenter,
        EventKind::Eexit,
        EventKind::Aex,
        EventKind::Eresume,
        EventKind::PageFault,
        EventKind::SyscallEnter,
        EventKind::SyscallReturn,
        EventKind::Eaug,
        EventKind::Eaccept,
        EventKind::Etrack,
        EventKind::Ipi,
        EventKind::Trim,
        EventKind::Eremove,
        EventKind::EaddMeasure,
    ];

    /// Whether this event is an enclave crossing: a transition among the
    /// enclave, the untrusted runtime, and the kernel.
    pub fn is_crossing(self) -> bool {
        matches!(
            self,
            EventKind::Eenter
                | EventKind::Eexit
                | EventKind::Aex
                | EventKind::Eresume
                | EventKind::PageFault
                | EventKind::SyscallEnter
                | EventKind::SyscallReturn
                | EventKind::Ipi
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Eenter => "EENTER",
            EventKind::Eexit => "EEXIT",
            EventKind::Aex => "AEX",
            EventKind::Eresume => "ERESUME",
            EventKind::PageFault => "PAGE_FAULT",
            EventKind::SyscallEnter => "SYSCALL_ENTER",
            EventKind::SyscallReturn => "SYSCALL_RETURN",
            EventKind::Eaug => "EAUG",
            EventKind::Eaccept => "EACCEPT",
            EventKind::Etrack => "ETRACK",
            EventKind::Ipi => "IPI",
            EventKind::Trim => "TRIM",
            EventKind::Eremove => "EREMOVE",
            EventKind::EaddMeasure => "EADD_MEASURE",
        }
    }
}

/// Which of the three privilege domains an event occurs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Enclave,
    Runtime,
    Kernel,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Enclave => "enclave",
            Side::Runtime => "runtime",
            Side::Kernel => "kernel",
        }
    }
}

/// One logged protocol step. `start`/`len` identify the page or page range
/// the event concerns; pure control transitions use an empty range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub start: usize,
    pub len: usize,
    pub side: Side,
}

/// Ordered sequence of protocol events produced by one or more flows.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, kind: EventKind, start: usize, len: usize, side: Side) {
        self.events.push(Event { kind, start, len, side });
    }

    /// Logs a per-page event.
    pub fn page(&mut self, kind: EventKind, page: usize, side: Side) {
        self.push(kind, page, 1, side);
    }

    /// Logs a pure control transition carrying no page range.
    pub fn ctl(&mut self, kind: EventKind, side: Side) {
        self.push(kind, 0, 0, side);
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    /// Line-per-event text form: `KIND start len side`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(ev.kind.name());
            out.push(' ');
            out.push_str(&ev.start.to_string());
            out.push(' ');
            out.push_str(&ev.len.to_string());
            out.push(' ');
            out.push_str(ev.side.name());
            out.push('\n');
        }
        out
    }

    /// Verifies that enclave entries and exits alternate legally, starting
    /// from code executing inside the enclave. Returns the offending event
    /// index on violation.
    pub fn check_entry_exit(&self) -> std::result::Result<(), usize> {
        let mut inside = true;
        for (i, ev) in self.events.iter().enumerate() {
            match ev.kind {
                EventKind::Eexit | EventKind::Aex => {
                    if !inside {
                        return Err(i);
                    }
                    inside = false;
                }
                EventKind::Eenter | EventKind::Eresume => {
                    if inside {
                        return Err(i);
                    }
                    inside = true;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a EventLog {
    type Item = &'a Event;
    type IntoIter = std::slice::Iter<'a, Event>;
    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

/// Aggregated event counts plus the derived crossing total and the two
/// strategy-level tallies (cached-page reuse and POSIX-compliance warnings).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub eenter: u64,
    pub eexit: u64,
    pub aex: u64,
    pub eresume: u64,
    pub page_faults: u64,
    pub syscall_enter: u64,
    pub syscall_return: u64,
    pub eaug: u64,
    pub eaccept: u64,
    pub etrack: u64,
    pub ipi: u64,
    pub trim: u64,
    pub eremove: u64,
    pub eadd_measure: u64,
    pub crossings: u64,
    pub reused_cached_pages: u64,
    pub posix_warnings: u64,
}

impl Counters {
    pub fn record(&mut self, kind: EventKind) {
        *self.slot(kind) += 1;
        if kind.is_crossing() {
            self.crossings += 1;
        }
    }

    pub fn get(&self, kind: EventKind) -> u64 {
        match kind {
            EventKind::Eenter => self.eenter,
            EventKind::Eexit => self.eexit,
            EventKind::Aex => self.aex,
            EventKind::Eresume => self.eresume,
            EventKind::PageFault => self.page_faults,
            EventKind::SyscallEnter => self.syscall_enter,
            EventKind::SyscallReturn => self.syscall_return,
            EventKind::Eaug => self.eaug,
            EventKind::Eaccept => self.eaccept,
            EventKind::Etrack => self.etrack,
            EventKind::Ipi => self.ipi,
            EventKind::Trim => self.trim,
            EventKind::Eremove => self.eremove,
            EventKind::EaddMeasure => self.eadd_measure,
        }
    }

    fn slot(&mut self, kind: EventKind) -> &mut u64 {
        match kind {
            EventKind::Eenter => &mut self.eenter,
            EventKind::Eexit => &mut self.eexit,
            EventKind::Aex => &mut self.aex,
            EventKind::Eresume => &mut self.eresume,
            EventKind::PageFault => &mut self.page_faults,
            EventKind::SyscallEnter => &mut self.syscall_enter,
            EventKind::SyscallReturn => &mut self.syscall_return,
            EventKind::Eaug => &mut self.eaug,
            EventKind::Eaccept => &mut self.eaccept,
            EventKind::Etrack => &mut self.etrack,
            EventKind::Ipi => &mut self.ipi,
            EventKind::Trim => &mut self.trim,
            EventKind::Eremove => &mut self.eremove,
            EventKind::EaddMeasure => &mut self.eadd_measure,
        }
    }

    pub fn merge(&mut self, other: &Counters) {
        for kind in EventKind::ALL {
            *self.slot(kind) += other.get(kind);
        }
        self.crossings += other.crossings;
        self.reused_cached_pages += other.reused_cached_pages;
        self.posix_warnings += other.posix_warnings;
    }

    pub fn is_zero(&self) -> bool {
        *self == Counters::default()
    }
}

impl fmt::Display for Counters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pf={} aex={} eenter={} eexit={} eresume={} eaug={} eaccept={} \
             trim={} eremove={} crossings={} reused={} posix_warnings={}",
            self.page_faults,
            self.aex,
            self.eenter,
            self.eexit,
            self.eresume,
            self.eaug,
            self.eaccept,
            self.trim,
            self.eremove,
            self.crossings,
            self.reused_cached_pages,
            self.posix_warnings,
        )
    }
}

/// Folds a log into counters. The crossing total is the number of crossing
/// events in the log.
pub fn summarize(log: &EventLog) -> Counters {
    let mut c = Counters::default();
    for ev in log {
        c.record(ev.kind);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_summarizes_to_zero() {
        assert!(summarize(&EventLog::new()).is_zero());
    }

    #[test]
    fn summarize_counts_multiset() {
        let mut log = EventLog::new();
        log.page(EventKind::Eaug, 3, Side::Kernel);
        log.page(EventKind::Eaug, 4, Side::Kernel);
        log.page(EventKind::Eaccept, 3, Side::Enclave);
        log.ctl(EventKind::Eresume, Side::Runtime);
        let c = summarize(&log);
        assert_eq!(c.eaug, 2);
        assert_eq!(c.eaccept, 1);
        assert_eq!(c.eresume, 1);
        assert_eq!(c.crossings, 1);
    }

    #[test]
    fn summarize_is_additive() {
        let mut a = EventLog::new();
        a.ctl(EventKind::Aex, Side::Enclave);
        a.page(EventKind::Eaug, 0, Side::Kernel);
        let mut b = EventLog::new();
        b.ctl(EventKind::Eresume, Side::Runtime);
        b.page(EventKind::Eaccept, 0, Side::Enclave);

        let mut whole = a.clone();
        for ev in &b {
            whole.push(ev.kind, ev.start, ev.len, ev.side);
        }
        let mut sum = summarize(&a);
        sum.merge(&summarize(&b));
        assert_eq!(sum, summarize(&whole));
    }

    #[test]
    fn crossing_kinds() {
        use EventKind::*;
        let crossing = [Eenter, Eexit, Aex, Eresume, PageFault, SyscallEnter, SyscallReturn, Ipi];
        for kind in EventKind::ALL {
            assert_eq!(kind.is_crossing(), crossing.contains(&kind), "{:?}", kind);
        }
    }

    #[test]
    fn entry_exit_checker() {
        let mut ok = EventLog::new();
        ok.ctl(EventKind::Eexit, Side::Enclave);
        ok.ctl(EventKind::Eenter, Side::Runtime);
        assert!(ok.check_entry_exit().is_ok());

        let mut bad = EventLog::new();
        bad.ctl(EventKind::Eresume, Side::Runtime); // already inside
        assert_eq!(bad.check_entry_exit(), Err(0));
    }

    #[test]
    fn serialized_form() {
        let mut log = EventLog::new();
        log.page(EventKind::Eaug, 7, Side::Kernel);
        log.ctl(EventKind::Eresume, Side::Runtime);
        assert_eq!(log.serialize(), "EAUG 7 1 kernel\nERESUME 0 0 runtime\n");
    }
}
