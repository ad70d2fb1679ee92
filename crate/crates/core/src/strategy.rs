//! The memory manager: composes the page pool and the protocol flows into
//! the allocation-strategy grid, exposing mmap/munmap/access semantics and
//! accumulating counters.
//!
//! Three base designs are modeled. `Static` measures the whole pool at
//! launch and never changes a mapping afterwards. `Edmm` maps pool pages on
//! first use by an mmap, one accept fault per page or one batched round trip
//! per run. `EdmmDemand` defers mapping to the first access, servicing each
//! fault with a configurable number of neighboring pages.
//!
//! Orthogonal knobs: pre-allocating an initial pool slice at launch (those
//! pages behave like statically allocated memory for their whole lifetime,
//! so a full-pool pre-allocation degenerates to `Static`), and lazy free,
//! which caches freed dynamically-mapped pages for reuse instead of paying
//! the removal flow, evicting oldest-freed pages beyond a pool-fraction
//! threshold.

use crate::error::{Error, Result};
use crate::events::{summarize, Counters, EventLog};
use crate::flows;
use crate::page_pool::{PagePool, PageRun, PageState, Region, RegionHandle, PAGE_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyMode {
    /// Whole pool measured and mapped at launch; no runtime mapping changes.
    Static,
    /// Pages are mapped when an mmap hands them out.
    Edmm,
    /// Pages are mapped on first access.
    EdmmDemand,
}

/// One point in the strategy grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyConfig {
    pub mode: StrategyMode,
    /// Pool pages fully allocated during enclave launch, beyond the binary.
    pub prealloc_pages: usize,
    /// Map each unmapped run of an mmap with one kernel round trip instead
    /// of one accept fault per page. Only meaningful for `Edmm`.
    pub batch: bool,
    /// Pages mapped per demand fault (the fault page plus neighbors).
    pub demand_pages: usize,
    /// Fraction of the pool that may hold freed pages for reuse; 0 disables
    /// lazy free.
    pub lazy_free_fraction: f64,
    /// Pages measured at load for the runtime and application binaries.
    pub binary_pages: usize,
    /// Enclave threads receiving a TLB-shootdown IPI per removal.
    pub enclave_threads: usize,
}

impl StrategyConfig {
    pub fn new(mode: StrategyMode) -> Self {
        StrategyConfig {
            mode,
            prealloc_pages: 0,
            batch: false,
            demand_pages: 1,
            lazy_free_fraction: 0.0,
            binary_pages: 0,
            enclave_threads: 1,
        }
    }

    pub fn with_prealloc(mut self, pages: usize) -> Self {
        self.prealloc_pages = pages;
        self
    }

    pub fn with_batch(mut self, batch: bool) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_demand_pages(mut self, pages: usize) -> Self {
        self.demand_pages = pages;
        self
    }

    pub fn with_lazy_free(mut self, fraction: f64) -> Self {
        self.lazy_free_fraction = fraction;
        self
    }

    pub fn with_binary(mut self, pages: usize) -> Self {
        self.binary_pages = pages;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.enclave_threads = threads;
        self
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.demand_pages == 0 {
            return Err(Error::InvalidArgument("demand granularity must be at least 1".into()));
        }
        if self.enclave_threads == 0 {
            return Err(Error::InvalidArgument("enclave thread count must be at least 1".into()));
        }
        if !self.lazy_free_fraction.is_finite()
            || !(0.0..=1.0).contains(&self.lazy_free_fraction)
        {
            return Err(Error::InvalidArgument(format!(
                "lazy-free fraction must be within [0, 1], got {}",
                self.lazy_free_fraction
            )));
        }
        match self.mode {
            StrategyMode::Static => {
                if self.binary_pages > pool_size {
                    return Err(Error::InvalidArgument(format!(
                        "binary of {} pages exceeds pool size {pool_size}",
                        self.binary_pages
                    )));
                }
            }
            StrategyMode::Edmm | StrategyMode::EdmmDemand => {
                if self.binary_pages + self.prealloc_pages > pool_size {
                    return Err(Error::InvalidArgument(format!(
                        "binary ({}) plus pre-allocation ({}) exceeds pool size {pool_size}",
                        self.binary_pages, self.prealloc_pages
                    )));
                }
            }
        }
        Ok(())
    }

    /// Human-readable strategy label, e.g. `edmm+pre=64M+batch+lf=15` or
    /// `edmm+demand=8`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        match self.mode {
            StrategyMode::Static => s.push_str("static"),
            StrategyMode::Edmm => s.push_str("edmm"),
            StrategyMode::EdmmDemand => {
                s.push_str("edmm+demand");
                if self.demand_pages != 1 {
                    s.push_str(&format!("={}", self.demand_pages));
                }
            }
        }
        if self.prealloc_pages > 0 {
            s.push_str(&format!("+pre={}", format_bytes(self.prealloc_pages * PAGE_SIZE)));
        }
        if self.batch {
            s.push_str("+batch");
        }
        if self.lazy_free_fraction > 0.0 {
            s.push_str(&format!("+lf={}", format_percent(self.lazy_free_fraction)));
        }
        s
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::new(StrategyMode::Static)
    }
}

fn format_bytes(bytes: usize) -> String {
    const G: usize = 1 << 30;
    const M: usize = 1 << 20;
    const K: usize = 1 << 10;
    if bytes >= G && bytes % G == 0 {
        format!("{}G", bytes / G)
    } else if bytes >= M && bytes % M == 0 {
        format!("{}M", bytes / M)
    } else if bytes >= K && bytes % K == 0 {
        format!("{}K", bytes / K)
    } else {
        bytes.to_string()
    }
}

fn format_percent(fraction: f64) -> String {
    let pct = (fraction * 1000.0).round() / 10.0;
    if pct.fract() == 0.0 {
        format!("{pct:.0}")
    } else {
        format!("{pct:.1}")
    }
}

/// Snapshot of a run's metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Report {
    /// Runtime events, including cache-reuse and POSIX-warning tallies.
    pub counters: Counters,
    /// Load-time events (page measurement only).
    pub load_counters: Counters,
    /// High-water mark of pages added to the enclave.
    pub peak_mapped: usize,
}

impl Report {
    pub fn reused_cached_pages(&self) -> u64 {
        self.counters.reused_cached_pages
    }

    pub fn posix_warnings(&self) -> u64 {
        self.counters.posix_warnings
    }

    /// Runtime and load counters folded together, for time modeling.
    pub fn merged_counters(&self) -> Counters {
        let mut c = self.counters;
        c.merge(&self.load_counters);
        c
    }
}

/// A loaded enclave memory manager driving one simulation.
pub struct MemoryManager {
    pool: PagePool,
    config: StrategyConfig,
    counters: Counters,
    load_counters: Counters,
    peak_mapped: usize,
    /// Pages below this index were mapped at load and stay mapped forever.
    persistent_end: usize,
    free_seq: u64,
    scratch: EventLog,
}

impl MemoryManager {
    /// Models enclave launch: measures the load-time pages, maps them, and
    /// reserves the binary slice. Load events accumulate separately from
    /// runtime counters.
    pub fn load(config: StrategyConfig, pool_size: usize) -> Result<Self> {
        config.validate(pool_size)?;
        let mut pool = PagePool::new(pool_size)?;
        let measured = match config.mode {
            StrategyMode::Static => pool_size,
            StrategyMode::Edmm | StrategyMode::EdmmDemand => {
                config.binary_pages + config.prealloc_pages
            }
        };
        let mut log = EventLog::new();
        flows::load(measured, &mut log);
        let load_counters = summarize(&log);
        for page in 0..measured {
            pool.transition(page, PageState::Mapped)?;
        }
        if config.binary_pages > 0 {
            let region = pool.reserve(config.binary_pages, false)?;
            debug_assert_eq!(region.start, 0);
            for page in 0..config.binary_pages {
                pool.transition(page, PageState::Allocated)?;
            }
        }
        let peak_mapped = pool.counts().mapped_total();
        Ok(MemoryManager {
            pool,
            config,
            counters: Counters::default(),
            load_counters,
            peak_mapped,
            persistent_end: measured,
            free_seq: 0,
            scratch: log,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn pool(&self) -> &PagePool {
        &self.pool
    }

    fn lazy_threshold(&self) -> usize {
        (self.config.lazy_free_fraction * self.pool.size() as f64).floor() as usize
    }

    fn update_peak(&mut self) {
        self.peak_mapped = self.peak_mapped.max(self.pool.counts().mapped_total());
    }

    /// Runs one flow into the scratch log and folds it into the runtime
    /// counters.
    fn run_flow(
        &mut self,
        flow: impl FnOnce(&mut PagePool, &mut EventLog) -> Result<()>,
    ) -> Result<()> {
        self.scratch.clear();
        flow(&mut self.pool, &mut self.scratch)?;
        self.counters.merge(&summarize(&self.scratch));
        Ok(())
    }

    /// Serves an mmap of `len` pages from the pool.
    ///
    /// Freed-and-cached pages are reused without hardware events;
    /// pre-allocated pages are handed out without events; unmapped pages are
    /// mapped according to the strategy (eagerly, batched, or not at all
    /// until accessed). If no run fits, the page cache is flushed once and
    /// the reservation retried.
    pub fn mmap(&mut self, len: usize) -> Result<Region> {
        if len == 0 {
            return Err(Error::InvalidArgument("mmap must request at least 1 page".into()));
        }
        let prefer_cached = self.config.lazy_free_fraction > 0.0;
        let region = match self.pool.reserve(len, prefer_cached) {
            Ok(region) => region,
            Err(Error::OutOfSpace { .. }) if self.pool.cached_count() > 0 => {
                self.flush_cache()?;
                self.pool
                    .reserve(len, prefer_cached)
                    .map_err(|_| Error::OutOfMemory { len })?
            }
            Err(Error::OutOfSpace { .. }) => return Err(Error::OutOfMemory { len }),
            Err(e) => return Err(e),
        };

        for run in state_runs(&self.pool, PageRun::new(region.start, region.len)) {
            match run.state {
                PageState::Cached => {
                    for page in run.pages.start..run.pages.end() {
                        self.pool.transition(page, PageState::Allocated)?;
                    }
                    self.counters.reused_cached_pages += run.pages.len as u64;
                }
                PageState::Mapped => {
                    // Pre-allocated pages: already mapped, no events.
                    for page in run.pages.start..run.pages.end() {
                        self.pool.transition(page, PageState::Allocated)?;
                    }
                }
                PageState::Unmapped => match self.config.mode {
                    StrategyMode::Static => {
                        return Err(Error::ProtocolViolation(
                            "static pool page found unmapped".into(),
                        ));
                    }
                    StrategyMode::Edmm => {
                        if self.config.batch {
                            self.run_flow(|pool, log| flows::batch_alloc(pool, run.pages, log))?;
                        } else {
                            self.run_flow(|pool, log| flows::eager_accept(pool, run.pages, log))?;
                        }
                        for page in run.pages.start..run.pages.end() {
                            self.pool.transition(page, PageState::Allocated)?;
                        }
                    }
                    // Demand pages stay unmapped until first access.
                    StrategyMode::EdmmDemand => {}
                },
                PageState::Allocated | PageState::TrimPending => {
                    return Err(Error::ProtocolViolation(format!(
                        "granted page {} in state {:?}",
                        run.pages.start, run.state
                    )));
                }
            }
        }
        self.update_peak();
        Ok(region)
    }

    /// Touches `[offset, offset+len)` of a mapping, faulting in unmapped
    /// pages under demand allocation.
    ///
    /// Offsets are relative to the extent the mapping was created with.
    /// Touching freed pages succeeds silently when they are still mapped
    /// (cached or reallocated), at the price of a POSIX-compliance warning;
    /// touching freed unmapped pages is a hard use-after-free error.
    pub fn access(&mut self, handle: RegionHandle, offset: usize, len: usize) -> Result<()> {
        let extent = self
            .pool
            .region_extent(handle)
            .ok_or_else(|| Error::InvalidArgument("unknown region handle".into()))?;
        if offset + len > extent.len {
            return Err(Error::InvalidArgument(format!(
                "access of [{offset}, {}) exceeds region length {}",
                offset + len,
                extent.len
            )));
        }
        let abs = PageRun::new(extent.start + offset, len);

        let mut foreign = false;
        for page in abs.start..abs.end() {
            if !self.pool.owned_by(handle, page) {
                if self.pool.state(page) == PageState::Unmapped {
                    return Err(Error::UseAfterFree { page });
                }
                foreign = true;
            }
        }
        if foreign {
            self.counters.posix_warnings += 1;
        }

        if self.config.mode == StrategyMode::EdmmDemand {
            let region_end = extent.end();
            let mut page = abs.start;
            while page < abs.end() {
                if self.pool.owned_by(handle, page) && self.pool.state(page) == PageState::Unmapped
                {
                    // Forward clamp: the fault maps up to `demand_pages`
                    // neighbors within this region's unmapped run, which may
                    // extend past the accessed range.
                    let mut limit = page + 1;
                    while limit < region_end
                        && self.pool.owned_by(handle, limit)
                        && self.pool.state(limit) == PageState::Unmapped
                    {
                        limit += 1;
                    }
                    let n = self.config.demand_pages;
                    self.run_flow(|pool, log| flows::demand(pool, page, n, limit, log))?;
                    let mapped = n.min(limit - page);
                    for p in page..page + mapped {
                        self.pool.transition(p, PageState::Allocated)?;
                    }
                    page += mapped;
                } else {
                    page += 1;
                }
            }
            self.update_peak();
        }
        Ok(())
    }

    /// Frees `[offset, offset+len)` of a mapping.
    ///
    /// Pages mapped at load go back to the pool still mapped, for free.
    /// Dynamically mapped pages either enter the reuse cache (lazy free on)
    /// or are removed, one removal flow per contiguous run. Never-faulted
    /// pages of a demand mapping are released silently. Pages of the range
    /// freed earlier are skipped.
    pub fn munmap(&mut self, handle: RegionHandle, offset: usize, len: usize) -> Result<()> {
        let extent = self
            .pool
            .region_extent(handle)
            .ok_or_else(|| Error::InvalidArgument("unknown region handle".into()))?;
        if !self.pool.region_live(handle) {
            return Err(Error::InvalidArgument("stale region handle".into()));
        }
        if offset + len > extent.len {
            return Err(Error::InvalidArgument(format!(
                "munmap of [{offset}, {}) exceeds region length {}",
                offset + len,
                extent.len
            )));
        }
        let abs = PageRun::new(extent.start + offset, len);

        let mut dynamic = Vec::new();
        for page in abs.start..abs.end() {
            if !self.pool.owned_by(handle, page) {
                continue;
            }
            if page < self.persistent_end {
                // Load-time pages stay mapped in the pool, like static
                // allocation.
                self.pool.transition(page, PageState::Mapped)?;
            } else {
                match self.pool.state(page) {
                    PageState::Unmapped => {} // never faulted in
                    PageState::Allocated => dynamic.push(page),
                    other => {
                        return Err(Error::ProtocolViolation(format!(
                            "owned page {page} in state {other:?} at munmap"
                        )));
                    }
                }
            }
        }

        let threshold = self.lazy_threshold();
        if threshold == 0 {
            let threads = self.config.enclave_threads;
            for run in contiguous_runs(&dynamic) {
                self.run_flow(|pool, log| flows::remove(pool, run, threads, log))?;
            }
        } else {
            for &page in &dynamic {
                let seq = self.free_seq;
                self.free_seq += 1;
                self.pool.cache_page(page, seq)?;
            }
            self.evict_to_threshold(threshold)?;
        }

        self.pool.release(handle, offset, len)?;
        Ok(())
    }

    /// Evicts the oldest-freed cached pages until the cache fits the
    /// threshold, one removal flow per contiguous run of the eviction set.
    fn evict_to_threshold(&mut self, threshold: usize) -> Result<()> {
        let cached = self.pool.cached_count();
        if cached <= threshold {
            return Ok(());
        }
        let mut victims = self.pool.oldest_cached(cached - threshold);
        victims.sort_unstable();
        let threads = self.config.enclave_threads;
        for run in contiguous_runs(&victims) {
            self.run_flow(|pool, log| flows::remove(pool, run, threads, log))?;
        }
        Ok(())
    }

    /// Removes every cached page, one removal flow per cached run.
    fn flush_cache(&mut self) -> Result<()> {
        let threads = self.config.enclave_threads;
        for run in self.pool.cached_runs() {
            self.run_flow(|pool, log| flows::remove(pool, run, threads, log))?;
        }
        Ok(())
    }

    pub fn report(&self) -> Report {
        Report {
            counters: self.counters,
            load_counters: self.load_counters,
            peak_mapped: self.peak_mapped,
        }
    }
}

struct StateRun {
    state: PageState,
    pages: PageRun,
}

/// Splits a range into maximal runs of equal page state.
fn state_runs(pool: &PagePool, range: PageRun) -> Vec<StateRun> {
    let mut runs = Vec::new();
    let mut start = range.start;
    while start < range.end() {
        let state = pool.state(start);
        let mut end = start + 1;
        while end < range.end() && pool.state(end) == state {
            end += 1;
        }
        runs.push(StateRun { state, pages: PageRun::new(start, end - start) });
        start = end;
    }
    runs
}

/// Groups an ascending page list into maximal contiguous runs.
fn contiguous_runs(pages: &[usize]) -> Vec<PageRun> {
    let mut runs = Vec::new();
    let mut iter = pages.iter().copied();
    let Some(mut start) = iter.next() else {
        return runs;
    };
    let mut len = 1;
    for page in iter {
        if page == start + len {
            len += 1;
        } else {
            runs.push(PageRun::new(start, len));
            start = page;
            len = 1;
        }
    }
    runs.push(PageRun::new(start, len));
    runs
}
