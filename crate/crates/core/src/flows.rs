//! Event-emitting state machines for the four page-management protocol
//! flows, with exact crossing accounting.
//!
//! Each flow validates the page states it requires, appends its event
//! sequence to a log, and advances the pages to their post-flow state. The
//! crossing totals are fixed properties of the sequences: 3 per page for
//! eager accept, 5 for a single-page demand fault, 7 for a multi-page demand
//! fault, 4 for a batch allocation of any size, and 8 plus one IPI per
//! enclave thread for a removal.

use crate::error::{Error, Result};
use crate::events::{EventKind, EventLog, Side};
use crate::page_pool::{PagePool, PageRun, PageState};

fn ensure_state(pool: &PagePool, pages: PageRun, want: PageState, flow: &str) -> Result<()> {
    if pages.end() > pool.size() {
        return Err(Error::InvalidArgument(format!(
            "{flow}: range [{}, {}) exceeds pool size {}",
            pages.start,
            pages.end(),
            pool.size()
        )));
    }
    for page in pages.start..pages.end() {
        let state = pool.state(page);
        if state != want {
            return Err(Error::ProtocolViolation(format!(
                "{flow}: page {page} is {state:?}, expected {want:?}"
            )));
        }
    }
    Ok(())
}

/// Maps each page of `pages` by synchronously issuing the accepting
/// instruction on it: the accept faults, the kernel adds the page, and the
/// retried accept succeeds on resume. Three crossings per page.
pub fn flow_eager_accept(pool: &mut PagePool, pages: PageRun) -> Result<EventLog> {
    let mut log = EventLog::new();
    eager_accept(pool, pages, &mut log)?;
    Ok(log)
}

pub(crate) fn eager_accept(pool: &mut PagePool, pages: PageRun, log: &mut EventLog) -> Result<()> {
    ensure_state(pool, pages, PageState::Unmapped, "eager accept")?;
    for page in pages.start..pages.end() {
        log.page(EventKind::PageFault, page, Side::Kernel);
        log.ctl(EventKind::Aex, Side::Enclave);
        log.page(EventKind::Eaug, page, Side::Kernel);
        log.ctl(EventKind::Eresume, Side::Runtime);
        log.page(EventKind::Eaccept, page, Side::Enclave);
        pool.transition(page, PageState::Mapped)?;
    }
    Ok(())
}

/// Services a demand fault at `fault_page`, mapping up to `n` contiguous
/// pages clamped to `region_limit` (the end of the not-yet-mapped run the
/// caller grants from). A single-page fault costs five crossings; a batched
/// fault costs seven regardless of how many pages it maps.
pub fn flow_demand(
    pool: &mut PagePool,
    fault_page: usize,
    n: usize,
    region_limit: usize,
) -> Result<EventLog> {
    let mut log = EventLog::new();
    demand(pool, fault_page, n, region_limit, &mut log)?;
    Ok(log)
}

pub(crate) fn demand(
    pool: &mut PagePool,
    fault_page: usize,
    n: usize,
    region_limit: usize,
    log: &mut EventLog,
) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("demand granularity must be at least 1".into()));
    }
    if region_limit <= fault_page {
        return Err(Error::InvalidArgument(format!(
            "demand fault at page {fault_page} has no room before limit {region_limit}"
        )));
    }
    let k = n.min(region_limit - fault_page);
    let pages = PageRun::new(fault_page, k);
    ensure_state(pool, pages, PageState::Unmapped, "demand fault")?;

    log.page(EventKind::PageFault, fault_page, Side::Kernel);
    log.ctl(EventKind::Aex, Side::Enclave);
    log.page(EventKind::Eaug, fault_page, Side::Kernel);
    if k > 1 {
        // One madvise round trip maps the neighbors before re-entry.
        log.ctl(EventKind::SyscallEnter, Side::Runtime);
        for page in fault_page + 1..fault_page + k {
            log.page(EventKind::Eaug, page, Side::Kernel);
        }
        log.ctl(EventKind::SyscallReturn, Side::Kernel);
    }
    log.ctl(EventKind::Eenter, Side::Runtime);
    for page in fault_page..fault_page + k {
        log.page(EventKind::Eaccept, page, Side::Enclave);
    }
    log.ctl(EventKind::Eexit, Side::Enclave);
    log.ctl(EventKind::Eresume, Side::Runtime);

    for page in fault_page..fault_page + k {
        pool.transition(page, PageState::Mapped)?;
    }
    Ok(())
}

/// Maps a whole range with one kernel round trip: an ocall issues the
/// madvise that adds every page, then the enclave accepts each page without
/// faulting. Four crossings regardless of the range length.
pub fn flow_batch_alloc(pool: &mut PagePool, pages: PageRun) -> Result<EventLog> {
    let mut log = EventLog::new();
    batch_alloc(pool, pages, &mut log)?;
    Ok(log)
}

pub(crate) fn batch_alloc(pool: &mut PagePool, pages: PageRun, log: &mut EventLog) -> Result<()> {
    ensure_state(pool, pages, PageState::Unmapped, "batch allocation")?;
    if pages.len == 0 {
        return Ok(());
    }
    log.ctl(EventKind::Eexit, Side::Enclave);
    log.ctl(EventKind::SyscallEnter, Side::Runtime);
    for page in pages.start..pages.end() {
        log.page(EventKind::Eaug, page, Side::Kernel);
    }
    log.ctl(EventKind::SyscallReturn, Side::Kernel);
    log.ctl(EventKind::Eenter, Side::Runtime);
    for page in pages.start..pages.end() {
        log.page(EventKind::Eaccept, page, Side::Enclave);
        pool.transition(page, PageState::Mapped)?;
    }
    Ok(())
}

/// Removes a mapped range: one round trip trims every page and shoots down
/// stale TLB entries on each enclave thread, the enclave accepts the type
/// changes, and a second round trip deletes the pages. Nine crossings with a
/// single enclave thread.
pub fn flow_remove(pool: &mut PagePool, pages: PageRun, enclave_threads: usize) -> Result<EventLog> {
    let mut log = EventLog::new();
    remove(pool, pages, enclave_threads, &mut log)?;
    Ok(log)
}

pub(crate) fn remove(
    pool: &mut PagePool,
    pages: PageRun,
    enclave_threads: usize,
    log: &mut EventLog,
) -> Result<()> {
    if pages.end() > pool.size() {
        return Err(Error::InvalidArgument(format!(
            "removal: range [{}, {}) exceeds pool size {}",
            pages.start,
            pages.end(),
            pool.size()
        )));
    }
    for page in pages.start..pages.end() {
        let state = pool.state(page);
        if matches!(state, PageState::Unmapped | PageState::TrimPending) {
            return Err(Error::ProtocolViolation(format!(
                "removal: page {page} is {state:?}, expected a mapped state"
            )));
        }
    }
    if pages.len == 0 {
        return Ok(());
    }

    log.ctl(EventKind::Eexit, Side::Enclave);
    log.ctl(EventKind::SyscallEnter, Side::Runtime);
    for page in pages.start..pages.end() {
        log.page(EventKind::Trim, page, Side::Kernel);
        pool.transition(page, PageState::TrimPending)?;
    }
    log.push(EventKind::Etrack, pages.start, pages.len, Side::Kernel);
    for _ in 0..enclave_threads {
        log.ctl(EventKind::Ipi, Side::Kernel);
    }
    log.ctl(EventKind::SyscallReturn, Side::Kernel);
    log.ctl(EventKind::Eenter, Side::Runtime);
    for page in pages.start..pages.end() {
        log.page(EventKind::Eaccept, page, Side::Enclave);
    }
    log.ctl(EventKind::Eexit, Side::Enclave);
    log.ctl(EventKind::SyscallEnter, Side::Runtime);
    for page in pages.start..pages.end() {
        log.page(EventKind::Eremove, page, Side::Kernel);
        pool.transition(page, PageState::Unmapped)?;
    }
    log.ctl(EventKind::SyscallReturn, Side::Kernel);
    log.ctl(EventKind::Eenter, Side::Runtime);
    Ok(())
}

/// Load-time add-and-measure of `measured_pages` pages. No runtime
/// crossings; the cost shows up in enclave loading time only.
pub fn flow_load(measured_pages: usize) -> EventLog {
    let mut log = EventLog::new();
    load(measured_pages, &mut log);
    log
}

pub(crate) fn load(measured_pages: usize, log: &mut EventLog) {
    for page in 0..measured_pages {
        log.page(EventKind::EaddMeasure, page, Side::Kernel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::summarize;

    fn fresh(pages: usize) -> PagePool {
        PagePool::new(pages).unwrap()
    }

    #[test]
    fn eager_accept_one_page() {
        let mut pool = fresh(8);
        let log = flow_eager_accept(&mut pool, PageRun::new(0, 1)).unwrap();
        let c = summarize(&log);
        assert_eq!(c.page_faults, 1);
        assert_eq!(c.aex, 1);
        assert_eq!(c.eaug, 1);
        assert_eq!(c.eresume, 1);
        assert_eq!(c.eaccept, 1);
        assert_eq!(c.crossings, 3);
        assert_eq!(pool.state(0), PageState::Mapped);
        assert!(log.check_entry_exit().is_ok());
    }

    #[test]
    fn eager_accept_sixteen_pages() {
        let mut pool = fresh(16);
        let log = flow_eager_accept(&mut pool, PageRun::new(0, 16)).unwrap();
        let c = summarize(&log);
        assert_eq!(c.crossings, 48);
        assert_eq!(c.eaug, 16);
        assert_eq!(c.eaccept, 16);
    }

    #[test]
    fn eager_accept_empty_range() {
        let mut pool = fresh(4);
        let log = flow_eager_accept(&mut pool, PageRun::new(0, 0)).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn eager_accept_rejects_mapped_page() {
        let mut pool = fresh(4);
        pool.transition(1, PageState::Mapped).unwrap();
        assert!(matches!(
            flow_eager_accept(&mut pool, PageRun::new(0, 2)),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn demand_single_page_costs_five_crossings() {
        let mut pool = fresh(8);
        let log = flow_demand(&mut pool, 0, 1, 8).unwrap();
        let c = summarize(&log);
        assert_eq!(c.crossings, 5);
        assert_eq!(c.page_faults, 1);
        assert_eq!(c.eaug, 1);
        assert_eq!(c.eaccept, 1);
        assert!(log.check_entry_exit().is_ok());
    }

    #[test]
    fn demand_batched_costs_seven_crossings() {
        let mut pool = fresh(8);
        let log = flow_demand(&mut pool, 0, 8, 8).unwrap();
        let c = summarize(&log);
        assert_eq!(c.crossings, 7);
        assert_eq!(c.eaug, 8);
        assert_eq!(c.eaccept, 8);
        assert_eq!(c.page_faults, 1);
        for page in 0..8 {
            assert_eq!(pool.state(page), PageState::Mapped);
        }
    }

    #[test]
    fn demand_clamps_to_region_limit() {
        // Only 3 unmapped pages remain before the limit; n=64 maps exactly 3.
        let mut pool = fresh(8);
        let log = flow_demand(&mut pool, 2, 64, 5).unwrap();
        let c = summarize(&log);
        assert_eq!(c.eaug, 3);
        assert_eq!(c.eaccept, 3);
        assert_eq!(c.crossings, 7);
        assert_eq!(pool.state(5), PageState::Unmapped);
    }

    #[test]
    fn demand_on_mapped_page_is_protocol_violation() {
        let mut pool = fresh(4);
        pool.transition(0, PageState::Mapped).unwrap();
        assert!(matches!(flow_demand(&mut pool, 0, 1, 4), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn demand_with_no_room_is_invalid() {
        let mut pool = fresh(4);
        assert!(matches!(flow_demand(&mut pool, 2, 4, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn batch_alloc_is_four_crossings_for_any_size() {
        for len in [1usize, 16, 64] {
            let mut pool = fresh(64);
            let log = flow_batch_alloc(&mut pool, PageRun::new(0, len)).unwrap();
            let c = summarize(&log);
            assert_eq!(c.crossings, 4, "len={len}");
            assert_eq!(c.eaug as usize, len);
            assert_eq!(c.eaccept as usize, len);
            assert_eq!(c.page_faults, 0);
            assert!(log.check_entry_exit().is_ok());
        }
    }

    #[test]
    fn batch_alloc_empty_range() {
        let mut pool = fresh(4);
        let log = flow_batch_alloc(&mut pool, PageRun::new(0, 0)).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn remove_is_nine_crossings_single_thread() {
        for len in [1usize, 32] {
            let mut pool = fresh(32);
            flow_batch_alloc(&mut pool, PageRun::new(0, len)).unwrap();
            let log = flow_remove(&mut pool, PageRun::new(0, len), 1).unwrap();
            let c = summarize(&log);
            assert_eq!(c.crossings, 9, "len={len}");
            assert_eq!(c.trim as usize, len);
            assert_eq!(c.eaccept as usize, len);
            assert_eq!(c.eremove as usize, len);
            assert_eq!(pool.state(0), PageState::Unmapped);
            assert!(log.check_entry_exit().is_ok());
        }
    }

    #[test]
    fn remove_adds_one_crossing_per_extra_thread() {
        let mut pool = fresh(4);
        flow_batch_alloc(&mut pool, PageRun::new(0, 1)).unwrap();
        let log = flow_remove(&mut pool, PageRun::new(0, 1), 4).unwrap();
        assert_eq!(summarize(&log).crossings, 12);
        assert_eq!(summarize(&log).ipi, 4);
    }

    #[test]
    fn remove_unmapped_page_is_protocol_violation() {
        let mut pool = fresh(4);
        assert!(matches!(
            flow_remove(&mut pool, PageRun::new(0, 1), 1),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn load_emits_one_measure_per_page() {
        assert!(flow_load(0).is_empty());
        let log = flow_load(16384);
        let c = summarize(&log);
        assert_eq!(c.eadd_measure, 16384);
        assert_eq!(c.crossings, 0);
    }

    #[test]
    fn allocation_flows_balance_augments_and_accepts() {
        let mut pool = fresh(64);
        let log = flow_batch_alloc(&mut pool, PageRun::new(0, 10)).unwrap();
        let c = summarize(&log);
        assert_eq!(c.eaug, c.eaccept);

        let mut pool = fresh(64);
        let log = flow_eager_accept(&mut pool, PageRun::new(0, 10)).unwrap();
        let c = summarize(&log);
        assert_eq!(c.eaug, c.eaccept);
    }

    #[test]
    fn removal_balances_trim_accept_remove() {
        let mut pool = fresh(64);
        flow_batch_alloc(&mut pool, PageRun::new(0, 10)).unwrap();
        let log = flow_remove(&mut pool, PageRun::new(0, 10), 1).unwrap();
        let c = summarize(&log);
        assert_eq!(c.trim, c.eaccept);
        assert_eq!(c.trim, c.eremove);
    }

    #[test]
    fn accepts_follow_augments_per_page() {
        // No EACCEPT on a page without a prior EAUG (allocation) or TRIM
        // (removal) in the same log.
        let mut pool = fresh(16);
        let mut log = flow_demand(&mut pool, 0, 8, 8).unwrap();
        let removal = flow_remove(&mut pool, PageRun::new(0, 8), 1).unwrap();
        for ev in &removal {
            log.push(ev.kind, ev.start, ev.len, ev.side);
        }
        let mut prepared: std::collections::HashSet<usize> = std::collections::HashSet::new();
        for ev in &log {
            match ev.kind {
                EventKind::Eaug | EventKind::Trim => {
                    prepared.insert(ev.start);
                }
                EventKind::Eaccept => {
                    assert!(prepared.remove(&ev.start), "unprepared accept on page {}", ev.start);
                }
                _ => {}
            }
        }
    }
}
