//! Independent brute-force reference simulator for differential testing.
//!
//! This is a literal per-page transcription of the protocol flows and the
//! strategy rules, deliberately sharing no code with the pool, flow, or
//! manager modules: no free-range index, no cached-run index, no event logs.
//! Every placement decision re-scans the page array and every flow is
//! counted with hand-written literal increments, so agreement with the
//! optimized implementation is meaningful evidence rather than tautology.
//! It is orders of magnitude slower and only suitable for small pools.

use crate::error::{Error, Result};
use crate::events::Counters;
use crate::strategy::{StrategyConfig, StrategyMode};
use crate::trace::{Trace, TraceEvent};

/// Same value set as the pool's page state, defined independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OraclePageState {
    Unmapped,
    Mapped,
    Allocated,
    Cached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Owner {
    Free,
    Binary,
    Ord(usize),
}

#[derive(Clone, Copy)]
struct Extent {
    start: usize,
    len: usize,
}

/// What the oracle computes for one replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleOutcome {
    pub counters: Counters,
    pub load_counters: Counters,
    pub peak_mapped: usize,
}

struct OracleSim {
    cfg: StrategyConfig,
    state: Vec<OraclePageState>,
    owner: Vec<Owner>,
    persistent: Vec<bool>,
    stamp: Vec<u64>,
    next_stamp: u64,
    regions: Vec<Extent>,
    counters: Counters,
    load_counters: Counters,
    peak: usize,
}

/// Replays `trace` under `config` by naive per-page interpretation and
/// returns the counters it accumulates. Errors mirror the strategy layer's,
/// annotated with the same event indexes.
pub fn oracle_replay(trace: &Trace, config: &StrategyConfig) -> Result<OracleOutcome> {
    let mut sim =
        OracleSim::load(config.clone(), trace.pool_size).map_err(|e| Error::Load {
            source: Box::new(e),
        })?;
    for (index, event) in trace.events.iter().enumerate() {
        let result = match *event {
            TraceEvent::Mmap { len } => sim.mmap(len),
            TraceEvent::Munmap { region, offset, len } => sim.munmap(region, offset, len),
            TraceEvent::Access { region, offset, len } => sim.access(region, offset, len),
        };
        result.map_err(|e| Error::Replay { event: index, source: Box::new(e) })?;
    }
    Ok(OracleOutcome {
        counters: sim.counters,
        load_counters: sim.load_counters,
        peak_mapped: sim.peak,
    })
}

impl OracleSim {
    fn load(cfg: StrategyConfig, pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::InvalidArgument("pool size must be at least 1 page".into()));
        }
        if cfg.demand_pages == 0 || cfg.enclave_threads == 0 {
            return Err(Error::InvalidArgument("degenerate configuration".into()));
        }
        if !(0.0..=1.0).contains(&cfg.lazy_free_fraction) {
            return Err(Error::InvalidArgument("lazy-free fraction out of range".into()));
        }
        let measured = match cfg.mode {
            StrategyMode::Static => {
                if cfg.binary_pages > pool {
                    return Err(Error::InvalidArgument("binary exceeds pool".into()));
                }
                pool
            }
            _ => {
                if cfg.binary_pages + cfg.prealloc_pages > pool {
                    return Err(Error::InvalidArgument("binary + prealloc exceeds pool".into()));
                }
                cfg.binary_pages + cfg.prealloc_pages
            }
        };
        let mut sim = OracleSim {
            cfg,
            state: vec![OraclePageState::Unmapped; pool],
            owner: vec![Owner::Free; pool],
            persistent: vec![false; pool],
            stamp: vec![0; pool],
            next_stamp: 0,
            regions: Vec::new(),
            counters: Counters::default(),
            load_counters: Counters::default(),
            peak: 0,
        };
        sim.load_counters.eadd_measure = measured as u64;
        for page in 0..measured {
            sim.state[page] = OraclePageState::Mapped;
            sim.persistent[page] = true;
        }
        for page in 0..sim.cfg.binary_pages {
            sim.owner[page] = Owner::Binary;
            sim.state[page] = OraclePageState::Allocated;
        }
        sim.update_peak();
        Ok(sim)
    }

    fn pool(&self) -> usize {
        self.state.len()
    }

    fn threshold(&self) -> usize {
        (self.cfg.lazy_free_fraction * self.pool() as f64).floor() as usize
    }

    fn update_peak(&mut self) {
        let mapped = self.state.iter().filter(|&&s| s != OraclePageState::Unmapped).count();
        self.peak = self.peak.max(mapped);
    }

    fn cached_pages(&self) -> Vec<usize> {
        (0..self.pool()).filter(|&p| self.state[p] == OraclePageState::Cached).collect()
    }

    // Literal transcriptions of the four flow figures.

    /// Accept-triggered fault per page: fault, exit, add, resume, accept.
    fn count_eager_page(&mut self) {
        let c = &mut self.counters;
        c.page_faults += 1;
        c.aex += 1;
        c.eaug += 1;
        c.eresume += 1;
        c.eaccept += 1;
        c.crossings += 3;
    }

    /// Demand fault mapping `k` pages: five crossings, plus the madvise
    /// round trip when neighbors are mapped too.
    fn count_demand_fault(&mut self, k: usize) {
        let c = &mut self.counters;
        c.page_faults += 1;
        c.aex += 1;
        c.eaug += k as u64;
        c.eenter += 1;
        c.eaccept += k as u64;
        c.eexit += 1;
        c.eresume += 1;
        c.crossings += 5;
        if k > 1 {
            c.syscall_enter += 1;
            c.syscall_return += 1;
            c.crossings += 2;
        }
    }

    /// One madvise round trip adds `k` pages, accepted without faults.
    fn count_batch(&mut self, k: usize) {
        let c = &mut self.counters;
        c.eexit += 1;
        c.syscall_enter += 1;
        c.eaug += k as u64;
        c.syscall_return += 1;
        c.eenter += 1;
        c.eaccept += k as u64;
        c.crossings += 4;
    }

    /// Two round trips trim, accept, and remove `k` pages, with one IPI per
    /// enclave thread.
    fn count_remove(&mut self, k: usize) {
        let threads = self.cfg.enclave_threads as u64;
        let c = &mut self.counters;
        c.eexit += 2;
        c.syscall_enter += 2;
        c.trim += k as u64;
        c.etrack += 1;
        c.ipi += threads;
        c.syscall_return += 2;
        c.eenter += 2;
        c.eaccept += k as u64;
        c.eremove += k as u64;
        c.crossings += 8 + threads;
    }

    /// Best-fit over all-cached runs when lazy free is on, then first-fit
    /// over free runs, by naive scanning.
    fn find_placement(&self, len: usize) -> Option<usize> {
        if self.cfg.lazy_free_fraction > 0.0 {
            let mut best: Option<(usize, usize)> = None;
            let mut page = 0;
            while page < self.pool() {
                if self.state[page] == OraclePageState::Cached {
                    let start = page;
                    while page < self.pool() && self.state[page] == OraclePageState::Cached {
                        page += 1;
                    }
                    let run = page - start;
                    if run >= len && best.map_or(true, |(bl, _)| run < bl) {
                        best = Some((run, start));
                    }
                } else {
                    page += 1;
                }
            }
            if let Some((_, start)) = best {
                return Some(start);
            }
        }
        let mut page = 0;
        while page < self.pool() {
            if self.owner[page] == Owner::Free {
                let start = page;
                while page < self.pool() && self.owner[page] == Owner::Free {
                    page += 1;
                }
                if page - start >= len {
                    return Some(start);
                }
            } else {
                page += 1;
            }
        }
        None
    }

    fn flush_cache(&mut self) {
        let mut page = 0;
        while page < self.pool() {
            if self.state[page] == OraclePageState::Cached {
                let start = page;
                while page < self.pool() && self.state[page] == OraclePageState::Cached {
                    page += 1;
                }
                self.count_remove(page - start);
                for p in start..page {
                    self.state[p] = OraclePageState::Unmapped;
                }
            } else {
                page += 1;
            }
        }
    }

    fn mmap(&mut self, len: usize) -> Result<()> {
        let ordinal = self.regions.len();
        if len == 0 {
            return Err(Error::InvalidArgument("mmap of 0 pages".into()));
        }
        let start = match self.find_placement(len) {
            Some(start) => start,
            None if !self.cached_pages().is_empty() => {
                self.flush_cache();
                self.find_placement(len).ok_or(Error::OutOfMemory { len })?
            }
            None => return Err(Error::OutOfMemory { len }),
        };
        for page in start..start + len {
            self.owner[page] = Owner::Ord(ordinal);
        }
        self.regions.push(Extent { start, len });

        // Walk the grant in maximal same-state runs.
        let mut page = start;
        while page < start + len {
            let state = self.state[page];
            let run_start = page;
            while page < start + len && self.state[page] == state {
                page += 1;
            }
            let run = page - run_start;
            match state {
                OraclePageState::Cached => {
                    for p in run_start..run_start + run {
                        self.state[p] = OraclePageState::Allocated;
                    }
                    self.counters.reused_cached_pages += run as u64;
                }
                OraclePageState::Mapped => {
                    for p in run_start..run_start + run {
                        self.state[p] = OraclePageState::Allocated;
                    }
                }
                OraclePageState::Unmapped => match self.cfg.mode {
                    StrategyMode::Static => {
                        return Err(Error::ProtocolViolation("unmapped static page".into()));
                    }
                    StrategyMode::Edmm => {
                        if self.cfg.batch {
                            self.count_batch(run);
                        } else {
                            for _ in 0..run {
                                self.count_eager_page();
                            }
                        }
                        for p in run_start..run_start + run {
                            self.state[p] = OraclePageState::Allocated;
                        }
                    }
                    StrategyMode::EdmmDemand => {}
                },
                OraclePageState::Allocated => {
                    return Err(Error::ProtocolViolation("granted an allocated page".into()));
                }
            }
        }
        self.update_peak();
        Ok(())
    }

    fn extent(&self, ordinal: usize) -> Result<Extent> {
        self.regions
            .get(ordinal)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("region ordinal {ordinal} not yet mapped")))
    }

    fn access(&mut self, ordinal: usize, offset: usize, len: usize) -> Result<()> {
        let extent = self.extent(ordinal)?;
        if offset + len > extent.len {
            return Err(Error::InvalidArgument("access out of range".into()));
        }
        let start = extent.start + offset;

        let mut foreign = false;
        for page in start..start + len {
            if self.owner[page] != Owner::Ord(ordinal) {
                if self.state[page] == OraclePageState::Unmapped {
                    return Err(Error::UseAfterFree { page });
                }
                foreign = true;
            }
        }
        if foreign {
            self.counters.posix_warnings += 1;
        }

        if self.cfg.mode == StrategyMode::EdmmDemand {
            let region_end = extent.start + extent.len;
            let mut page = start;
            while page < start + len {
                if self.owner[page] == Owner::Ord(ordinal)
                    && self.state[page] == OraclePageState::Unmapped
                {
                    let mut limit = page + 1;
                    while limit < region_end
                        && self.owner[limit] == Owner::Ord(ordinal)
                        && self.state[limit] == OraclePageState::Unmapped
                    {
                        limit += 1;
                    }
                    let k = self.cfg.demand_pages.min(limit - page);
                    self.count_demand_fault(k);
                    for p in page..page + k {
                        self.state[p] = OraclePageState::Allocated;
                    }
                    page += k;
                } else {
                    page += 1;
                }
            }
            self.update_peak();
        }
        Ok(())
    }

    fn munmap(&mut self, ordinal: usize, offset: usize, len: usize) -> Result<()> {
        let extent = self.extent(ordinal)?;
        let live = (extent.start..extent.start + extent.len)
            .any(|p| self.owner[p] == Owner::Ord(ordinal));
        if !live {
            return Err(Error::InvalidArgument("stale region".into()));
        }
        if offset + len > extent.len {
            return Err(Error::InvalidArgument("munmap out of range".into()));
        }
        let start = extent.start + offset;

        let mut dynamic = Vec::new();
        for page in start..start + len {
            if self.owner[page] != Owner::Ord(ordinal) {
                continue;
            }
            if self.persistent[page] {
                self.state[page] = OraclePageState::Mapped;
            } else {
                match self.state[page] {
                    OraclePageState::Unmapped => {}
                    OraclePageState::Allocated => dynamic.push(page),
                    other => {
                        return Err(Error::ProtocolViolation(format!(
                            "owned page in state {other:?}"
                        )));
                    }
                }
            }
        }

        if self.threshold() == 0 {
            for run in adjacent_groups(&dynamic) {
                self.count_remove(run.len());
                for &p in run {
                    self.state[p] = OraclePageState::Unmapped;
                }
            }
        } else {
            for &page in &dynamic {
                self.state[page] = OraclePageState::Cached;
                self.stamp[page] = self.next_stamp;
                self.next_stamp += 1;
            }
            self.evict_to_threshold();
        }

        for page in start..start + len {
            if self.owner[page] == Owner::Ord(ordinal) {
                self.owner[page] = Owner::Free;
            }
        }
        Ok(())
    }

    fn evict_to_threshold(&mut self) {
        let threshold = self.threshold();
        let cached = self.cached_pages();
        if cached.len() <= threshold {
            return;
        }
        let mut by_age: Vec<(u64, usize)> =
            cached.iter().map(|&p| (self.stamp[p], p)).collect();
        by_age.sort_unstable();
        let mut victims: Vec<usize> =
            by_age[..cached.len() - threshold].iter().map(|&(_, p)| p).collect();
        victims.sort_unstable();
        for run in adjacent_groups(&victims) {
            self.count_remove(run.len());
            for &p in run {
                self.state[p] = OraclePageState::Unmapped;
            }
        }
    }
}

/// Splits an ascending page list into maximal groups of adjacent pages.
fn adjacent_groups(pages: &[usize]) -> Vec<&[usize]> {
    let mut groups = Vec::new();
    let mut begin = 0;
    for i in 1..=pages.len() {
        if i == pages.len() || pages[i] != pages[i - 1] + 1 {
            groups.push(&pages[begin..i]);
            begin = i;
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demand1() -> StrategyConfig {
        StrategyConfig::new(StrategyMode::EdmmDemand)
    }

    #[test]
    fn empty_trace_is_all_zero() {
        let trace = Trace::new(64, "", 0);
        let out = oracle_replay(&trace, &StrategyConfig::new(StrategyMode::Edmm)).unwrap();
        assert!(out.counters.is_zero());
        assert_eq!(out.load_counters.eadd_measure, 0);
    }

    #[test]
    fn single_demand_fault_is_five_crossings() {
        let mut trace = Trace::new(64, "", 0);
        let r = trace.mmap(1);
        trace.access(r, 0, 1);
        let out = oracle_replay(&trace, &demand1()).unwrap();
        assert_eq!(out.counters.crossings, 5);
        assert_eq!(out.counters.page_faults, 1);
    }

    #[test]
    fn adjacent_grouping() {
        let pages = [1, 2, 3, 7, 9, 10];
        let groups = adjacent_groups(&pages);
        assert_eq!(groups, vec![&pages[0..3], &pages[3..4], &pages[4..6]]);
        assert!(adjacent_groups(&[]).is_empty());
    }
}
