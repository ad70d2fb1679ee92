//! Virtual page pool bookkeeping: per-page state, region ownership, and the
//! free-range and cached-range indexes the allocation strategies run on.
//!
//! The pool tracks which pages belong to which live mapping and which runs
//! are free, but it never decides *when* hardware events happen; page-state
//! transitions are driven by the flow and strategy layers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// SGX EPC page granularity. Byte lengths round up to whole pages.
pub const PAGE_SIZE: usize = 4096;

/// Lifecycle state of one pool page.
///
/// `Mapped` means added to the enclave but not owned by a live mapping;
/// `Allocated` means owned by a live mapping; `Cached` means freed but kept
/// mapped for reuse; `TrimPending` is the transient pending-removal state
/// between the type change and the final removal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PageState {
    Unmapped,
    Mapped,
    Allocated,
    Cached,
    TrimPending,
}

impl PageState {
    fn index(self) -> usize {
        match self {
            PageState::Unmapped => 0,
            PageState::Mapped => 1,
            PageState::Allocated => 2,
            PageState::Cached => 3,
            PageState::TrimPending => 4,
        }
    }

    /// Legal transition table. Cached pages are entered through
    /// [`PagePool::cache_page`] so the eviction queue stays coherent.
    fn can_become(self, to: PageState) -> bool {
        use PageState::*;
        matches!(
            (self, to),
            (Unmapped, Mapped)          // added via EAUG + EACCEPT (or load-time EADD)
                | (Unmapped, Allocated) // demand grant completed by a fault
                | (Mapped, Allocated)   // handed to a mapping
                | (Mapped, TrimPending) // removal of a never-owned mapped page
                | (Allocated, Mapped)   // released while persistently mapped
                | (Allocated, Cached)   // lazy free
                | (Allocated, TrimPending)
                | (Cached, Allocated)   // cache reuse
                | (Cached, TrimPending) // cache eviction
                | (TrimPending, Unmapped)
        )
    }
}

/// Opaque mapping identifier. Handles increase monotonically and are never
/// reused within one pool, so stale references are detectable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionHandle(u64);

impl RegionHandle {
    pub fn raw(self) -> u64 {
        self.0
    }
}

/// A contiguous run of pages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageRun {
    pub start: usize,
    pub len: usize,
}

impl PageRun {
    pub fn new(start: usize, len: usize) -> Self {
        PageRun { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// A granted mapping: handle plus the contiguous extent it was created with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub handle: RegionHandle,
    pub start: usize,
    pub len: usize,
}

/// Page totals per state. The five fields always sum to the pool size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PoolCounts {
    pub mapped: usize,
    pub allocated: usize,
    pub cached: usize,
    pub unmapped: usize,
    pub trim_pending: usize,
}

impl PoolCounts {
    pub fn total(&self) -> usize {
        self.mapped + self.allocated + self.cached + self.unmapped + self.trim_pending
    }

    /// Pages currently added to the enclave, i.e. everything but `Unmapped`.
    pub fn mapped_total(&self) -> usize {
        self.mapped + self.allocated + self.cached + self.trim_pending
    }
}

struct RegionRec {
    extent: PageRun,
    owned: usize,
}

pub struct PagePool {
    size: usize,
    states: Vec<PageState>,
    owner: Vec<Option<RegionHandle>>,
    regions: BTreeMap<RegionHandle, RegionRec>,
    /// Maximal disjoint runs of pages not owned by any live mapping,
    /// keyed by start page.
    free_runs: BTreeMap<usize, usize>,
    /// Maximal disjoint runs of `Cached` pages, keyed by start page.
    cached_runs: BTreeMap<usize, usize>,
    /// Eviction order: free-sequence number to page.
    fifo: BTreeMap<u64, usize>,
    /// Sequence stamp per page; meaningful only while the page is `Cached`.
    seq_of: Vec<u64>,
    tally: [usize; 5],
    next_handle: u64,
}

impl PagePool {
    /// Creates a pool of `pool_size` unmapped pages covered by a single free
    /// run.
    pub fn new(pool_size: usize) -> Result<Self> {
        if pool_size == 0 {
            return Err(Error::InvalidArgument("pool size must be at least 1 page".into()));
        }
        let mut free_runs = BTreeMap::new();
        free_runs.insert(0, pool_size);
        let mut tally = [0; 5];
        tally[PageState::Unmapped.index()] = pool_size;
        Ok(PagePool {
            size: pool_size,
            states: vec![PageState::Unmapped; pool_size],
            owner: vec![None; pool_size],
            regions: BTreeMap::new(),
            free_runs,
            cached_runs: BTreeMap::new(),
            fifo: BTreeMap::new(),
            seq_of: vec![0; pool_size],
            tally,
            next_handle: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn state(&self, page: usize) -> PageState {
        self.states[page]
    }

    pub fn owner(&self, page: usize) -> Option<RegionHandle> {
        self.owner[page]
    }

    pub fn owned_by(&self, handle: RegionHandle, page: usize) -> bool {
        self.owner[page] == Some(handle)
    }

    /// The extent a mapping was created with; available for dead handles too.
    pub fn region_extent(&self, handle: RegionHandle) -> Option<PageRun> {
        self.regions.get(&handle).map(|r| r.extent)
    }

    pub fn region_live(&self, handle: RegionHandle) -> bool {
        self.regions.get(&handle).map_or(false, |r| r.owned > 0)
    }

    /// Maximal runs of pages still owned by `handle`, in address order.
    pub fn region_runs(&self, handle: RegionHandle) -> Vec<PageRun> {
        let Some(rec) = self.regions.get(&handle) else {
            return Vec::new();
        };
        let mut runs = Vec::new();
        let mut run_start = None;
        for page in rec.extent.start..rec.extent.end() {
            if self.owner[page] == Some(handle) {
                run_start.get_or_insert(page);
            } else if let Some(s) = run_start.take() {
                runs.push(PageRun::new(s, page - s));
            }
        }
        if let Some(s) = run_start {
            runs.push(PageRun::new(s, rec.extent.end() - s));
        }
        runs
    }

    pub fn counts(&self) -> PoolCounts {
        PoolCounts {
            unmapped: self.tally[PageState::Unmapped.index()],
            mapped: self.tally[PageState::Mapped.index()],
            allocated: self.tally[PageState::Allocated.index()],
            cached: self.tally[PageState::Cached.index()],
            trim_pending: self.tally[PageState::TrimPending.index()],
        }
    }

    pub fn cached_count(&self) -> usize {
        self.tally[PageState::Cached.index()]
    }

    /// Maximal runs of cached pages, in address order.
    pub fn cached_runs(&self) -> Vec<PageRun> {
        self.cached_runs.iter().map(|(&s, &l)| PageRun::new(s, l)).collect()
    }

    /// Maximal free runs, in address order.
    pub fn free_runs(&self) -> Vec<PageRun> {
        self.free_runs.iter().map(|(&s, &l)| PageRun::new(s, l)).collect()
    }

    /// The `n` cached pages with the oldest free-sequence stamps, oldest
    /// first.
    pub fn oldest_cached(&self, n: usize) -> Vec<usize> {
        self.fifo.values().copied().take(n).collect()
    }

    /// Reserves `len` pages for a new mapping and returns it.
    ///
    /// With `prefer_cached`, an all-cached run is picked best-fit (smallest
    /// sufficient, ties to the lowest start). Otherwise, or when no cached
    /// run is large enough, the grant is first-fit from the lowest address
    /// over free runs regardless of the page-state mix. Page states are not
    /// changed here.
    pub fn reserve(&mut self, len: usize, prefer_cached: bool) -> Result<Region> {
        if len == 0 {
            return Err(Error::InvalidArgument("reservation must be at least 1 page".into()));
        }
        let start = self
            .best_fit_cached(len, prefer_cached)
            .or_else(|| self.first_fit_free(len))
            .ok_or(Error::OutOfSpace { len })?;

        self.carve_free(start, len);
        let handle = RegionHandle(self.next_handle);
        self.next_handle += 1;
        for page in start..start + len {
            debug_assert!(self.owner[page].is_none());
            self.owner[page] = Some(handle);
        }
        self.regions.insert(handle, RegionRec { extent: PageRun::new(start, len), owned: len });
        Ok(Region { handle, start, len })
    }

    fn best_fit_cached(&self, len: usize, prefer_cached: bool) -> Option<usize> {
        if !prefer_cached {
            return None;
        }
        let mut best: Option<(usize, usize)> = None; // (run_len, start)
        for (&start, &run_len) in &self.cached_runs {
            if run_len < len {
                continue;
            }
            // Cached pages are free by construction at reservation time.
            debug_assert!(self.owner[start].is_none());
            // Smallest sufficient run wins; address order breaks ties since
            // iteration is ascending by start.
            if best.map_or(true, |(bl, _)| run_len < bl) {
                best = Some((run_len, start));
            }
        }
        best.map(|(_, start)| start)
    }

    fn first_fit_free(&self, len: usize) -> Option<usize> {
        self.free_runs.iter().find(|&(_, &l)| l >= len).map(|(&s, _)| s)
    }

    /// Removes `[start, start+len)` from the free index, splitting the
    /// containing run.
    fn carve_free(&mut self, start: usize, len: usize) {
        let (&run_start, &run_len) = self
            .free_runs
            .range(..=start)
            .next_back()
            .expect("grant must come from a free run");
        debug_assert!(run_start + run_len >= start + len);
        self.free_runs.remove(&run_start);
        if run_start < start {
            self.free_runs.insert(run_start, start - run_start);
        }
        let tail = run_start + run_len - (start + len);
        if tail > 0 {
            self.free_runs.insert(start + len, tail);
        }
    }

    /// Returns the sub-range `[offset, offset+len)` of a mapping to free
    /// space and reports the coalesced runs that were actually released.
    ///
    /// Offsets are relative to the extent the mapping was created with.
    /// Pages of the range already released earlier are skipped, so partial
    /// frees may leave the mapping live in up to two remainders. Page states
    /// are not changed here.
    pub fn release(&mut self, handle: RegionHandle, offset: usize, len: usize) -> Result<Vec<PageRun>> {
        let rec = self
            .regions
            .get(&handle)
            .ok_or_else(|| Error::InvalidArgument("unknown region handle".into()))?;
        if rec.owned == 0 {
            return Err(Error::InvalidArgument("stale region handle".into()));
        }
        if offset + len > rec.extent.len {
            return Err(Error::InvalidArgument(format!(
                "release of [{offset}, {}) exceeds region length {}",
                offset + len,
                rec.extent.len
            )));
        }
        let abs_start = rec.extent.start + offset;
        let mut released = Vec::new();
        let mut run_start = None;
        for page in abs_start..abs_start + len {
            if self.owner[page] == Some(handle) {
                self.owner[page] = None;
                run_start.get_or_insert(page);
            } else if let Some(s) = run_start.take() {
                released.push(PageRun::new(s, page - s));
            }
        }
        if let Some(s) = run_start {
            released.push(PageRun::new(s, abs_start + len - s));
        }
        let freed: usize = released.iter().map(|r| r.len).sum();
        self.regions.get_mut(&handle).unwrap().owned -= freed;
        for run in &released {
            self.insert_free(*run);
        }
        Ok(released)
    }

    fn insert_free(&mut self, run: PageRun) {
        let mut start = run.start;
        let mut len = run.len;
        if let Some((&prev_start, &prev_len)) = self.free_runs.range(..start).next_back() {
            if prev_start + prev_len == start {
                self.free_runs.remove(&prev_start);
                start = prev_start;
                len += prev_len;
            }
        }
        if let Some(&next_len) = self.free_runs.get(&(run.start + run.len)) {
            self.free_runs.remove(&(run.start + run.len));
            len += next_len;
        }
        self.free_runs.insert(start, len);
    }

    /// Applies a state transition, keeping the tallies and the cached-run
    /// index coherent. Cached pages are entered via [`PagePool::cache_page`].
    pub fn transition(&mut self, page: usize, to: PageState) -> Result<()> {
        let from = self.states[page];
        if !from.can_become(to) || to == PageState::Cached {
            return Err(Error::ProtocolViolation(format!(
                "illegal page state transition {from:?} -> {to:?} on page {page}"
            )));
        }
        if from == PageState::Cached {
            self.drop_cached(page);
        }
        self.set_state(page, to);
        Ok(())
    }

    /// Moves an allocated page into the cache, stamped with its free
    /// sequence number for FIFO eviction.
    pub fn cache_page(&mut self, page: usize, seq: u64) -> Result<()> {
        let from = self.states[page];
        if !from.can_become(PageState::Cached) {
            return Err(Error::ProtocolViolation(format!(
                "illegal page state transition {from:?} -> Cached on page {page}"
            )));
        }
        self.set_state(page, PageState::Cached);
        self.seq_of[page] = seq;
        self.fifo.insert(seq, page);
        self.insert_cached_run(page);
        Ok(())
    }

    fn set_state(&mut self, page: usize, to: PageState) {
        let from = self.states[page];
        self.tally[from.index()] -= 1;
        self.tally[to.index()] += 1;
        self.states[page] = to;
    }

    fn drop_cached(&mut self, page: usize) {
        self.fifo.remove(&self.seq_of[page]);
        // Split the cached run containing this page.
        let (&run_start, &run_len) = self
            .cached_runs
            .range(..=page)
            .next_back()
            .expect("cached page must be in a cached run");
        debug_assert!(run_start + run_len > page);
        self.cached_runs.remove(&run_start);
        if run_start < page {
            self.cached_runs.insert(run_start, page - run_start);
        }
        if page + 1 < run_start + run_len {
            self.cached_runs.insert(page + 1, run_start + run_len - page - 1);
        }
    }

    fn insert_cached_run(&mut self, page: usize) {
        let mut start = page;
        let mut len = 1;
        if let Some((&prev_start, &prev_len)) = self.cached_runs.range(..page).next_back() {
            if prev_start + prev_len == page {
                self.cached_runs.remove(&prev_start);
                start = prev_start;
                len += prev_len;
            }
        }
        if let Some(&next_len) = self.cached_runs.get(&(page + 1)) {
            self.cached_runs.remove(&(page + 1));
            len += next_len;
        }
        self.cached_runs.insert(start, len);
    }

    /// Exhaustive structural check, used by tests.
    #[doc(hidden)]
    pub fn check_invariants(&self) {
        let counts = self.counts();
        assert_eq!(counts.total(), self.size, "state tallies must sum to the pool size");

        let mut tally = [0usize; 5];
        for &s in &self.states {
            tally[s.index()] += 1;
        }
        assert_eq!(tally, self.tally, "incremental tallies must match the state array");

        // Free runs are maximal, disjoint, and cover exactly the unowned pages.
        let mut prev_end: Option<usize> = None;
        let mut free_pages = 0;
        for (&start, &len) in &self.free_runs {
            assert!(len > 0);
            assert!(start + len <= self.size);
            if let Some(e) = prev_end {
                assert!(start > e, "free runs must be coalesced and disjoint");
            }
            for page in start..start + len {
                assert!(self.owner[page].is_none(), "free page {page} must be unowned");
            }
            free_pages += len;
            prev_end = Some(start + len);
        }
        let unowned = self.owner.iter().filter(|o| o.is_none()).count();
        assert_eq!(free_pages, unowned, "free index must cover every unowned page");

        // Owned counts per region match the owner map.
        for (handle, rec) in &self.regions {
            let owned = self.owner.iter().filter(|o| **o == Some(*handle)).count();
            assert_eq!(owned, rec.owned);
            for page in 0..self.size {
                if self.owner[page] == Some(*handle) {
                    assert!(page >= rec.extent.start && page < rec.extent.end());
                }
            }
        }

        // Cached index and FIFO agree with the state array.
        let mut cached_in_runs = 0;
        let mut prev: Option<usize> = None;
        for (&start, &len) in &self.cached_runs {
            if let Some(e) = prev {
                assert!(start > e, "cached runs must be coalesced and disjoint");
            }
            for page in start..start + len {
                assert_eq!(self.states[page], PageState::Cached);
            }
            cached_in_runs += len;
            prev = Some(start + len);
        }
        assert_eq!(cached_in_runs, self.cached_count());
        assert_eq!(self.fifo.len(), self.cached_count(), "fifo holds exactly the cached pages");
        for (&seq, &page) in &self.fifo {
            assert_eq!(self.states[page], PageState::Cached);
            assert_eq!(self.seq_of[page], seq);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mark_cached_range(pool: &mut PagePool, start: usize, len: usize, seq0: u64) {
        // Drive pages through a legal path to Cached: map, allocate, cache.
        for (i, page) in (start..start + len).enumerate() {
            pool.transition(page, PageState::Mapped).unwrap();
            pool.transition(page, PageState::Allocated).unwrap();
            pool.cache_page(page, seq0 + i as u64).unwrap();
        }
    }

    #[test]
    fn fresh_pool_has_one_free_run() {
        let pool = PagePool::new(8).unwrap();
        assert_eq!(pool.free_runs(), vec![PageRun::new(0, 8)]);
        assert_eq!(pool.counts(), PoolCounts { unmapped: 8, ..Default::default() });
        pool.check_invariants();
    }

    #[test]
    fn large_pool_construction() {
        // 512 MB at 4096-byte pages.
        let pool = PagePool::new(131072).unwrap();
        assert_eq!(pool.size(), 131072);
        assert_eq!(pool.counts().unmapped, 131072);
    }

    #[test]
    fn zero_size_pool_is_rejected() {
        assert!(matches!(PagePool::new(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn first_fit_on_fresh_pool() {
        let mut pool = PagePool::new(8).unwrap();
        let region = pool.reserve(4, false).unwrap();
        assert_eq!((region.start, region.len), (0, 4));
        assert_eq!(pool.free_runs(), vec![PageRun::new(4, 4)]);
        pool.check_invariants();
    }

    #[test]
    fn reserve_larger_than_pool_is_out_of_space() {
        let mut pool = PagePool::new(8).unwrap();
        assert!(matches!(pool.reserve(9, false), Err(Error::OutOfSpace { len: 9 })));
    }

    #[test]
    fn best_fit_picks_smallest_sufficient_cached_run() {
        // Cached runs [10, 12) and [20, 23): a 2-page request must come from
        // the exact-fit run at 10.
        let mut pool = PagePool::new(32).unwrap();
        mark_cached_range(&mut pool, 10, 2, 0);
        mark_cached_range(&mut pool, 20, 3, 10);
        let region = pool.reserve(2, true).unwrap();
        assert_eq!((region.start, region.len), (10, 2));
        pool.check_invariants();
    }

    #[test]
    fn best_fit_ties_break_to_lowest_start() {
        let mut pool = PagePool::new(32).unwrap();
        mark_cached_range(&mut pool, 20, 2, 0);
        mark_cached_range(&mut pool, 10, 2, 10);
        let region = pool.reserve(2, true).unwrap();
        assert_eq!(region.start, 10);
    }

    #[test]
    fn prefer_cached_falls_back_to_first_fit() {
        let mut pool = PagePool::new(32).unwrap();
        mark_cached_range(&mut pool, 10, 2, 0);
        // No 4-page cached run; falls back to first fit at 0.
        let region = pool.reserve(4, true).unwrap();
        assert_eq!(region.start, 0);
    }

    #[test]
    fn full_release_returns_one_run_and_kills_region() {
        let mut pool = PagePool::new(8).unwrap();
        let region = pool.reserve(4, false).unwrap();
        let runs = pool.release(region.handle, 0, 4).unwrap();
        assert_eq!(runs, vec![PageRun::new(0, 4)]);
        assert!(!pool.region_live(region.handle));
        assert_eq!(pool.free_runs(), vec![PageRun::new(0, 8)]);
        pool.check_invariants();
    }

    #[test]
    fn partial_release_splits_region_into_two_remainders() {
        let mut pool = PagePool::new(8).unwrap();
        let region = pool.reserve(3, false).unwrap();
        let runs = pool.release(region.handle, 1, 1).unwrap();
        assert_eq!(runs, vec![PageRun::new(1, 1)]);
        assert!(pool.region_live(region.handle));
        assert_eq!(
            pool.region_runs(region.handle),
            vec![PageRun::new(0, 1), PageRun::new(2, 1)]
        );
        pool.check_invariants();
    }

    #[test]
    fn release_out_of_bounds_is_invalid() {
        let mut pool = PagePool::new(8).unwrap();
        let region = pool.reserve(3, false).unwrap();
        assert!(matches!(pool.release(region.handle, 2, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn release_on_dead_handle_is_stale() {
        let mut pool = PagePool::new(8).unwrap();
        let region = pool.reserve(2, false).unwrap();
        pool.release(region.handle, 0, 2).unwrap();
        assert!(matches!(pool.release(region.handle, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn release_skips_pages_released_earlier() {
        let mut pool = PagePool::new(8).unwrap();
        let region = pool.reserve(4, false).unwrap();
        pool.release(region.handle, 1, 1).unwrap();
        let runs = pool.release(region.handle, 0, 4).unwrap();
        assert_eq!(runs, vec![PageRun::new(0, 1), PageRun::new(2, 2)]);
        assert!(!pool.region_live(region.handle));
        pool.check_invariants();
    }

    #[test]
    fn released_runs_coalesce() {
        let mut pool = PagePool::new(8).unwrap();
        let a = pool.reserve(4, false).unwrap();
        let b = pool.reserve(4, false).unwrap();
        pool.release(a.handle, 0, 4).unwrap();
        pool.release(b.handle, 0, 4).unwrap();
        assert_eq!(pool.free_runs(), vec![PageRun::new(0, 8)]);
        pool.check_invariants();
    }

    #[test]
    fn handles_are_never_reused() {
        let mut pool = PagePool::new(8).unwrap();
        let a = pool.reserve(2, false).unwrap();
        pool.release(a.handle, 0, 2).unwrap();
        let b = pool.reserve(2, false).unwrap();
        assert_ne!(a.handle, b.handle);
    }

    #[test]
    fn counts_conservation_through_transitions() {
        let mut pool = PagePool::new(8).unwrap();
        for page in 0..8 {
            pool.transition(page, PageState::Mapped).unwrap();
        }
        assert_eq!(pool.counts().mapped, 8);
        let region = pool.reserve(8, false).unwrap();
        for page in 0..8 {
            pool.transition(page, PageState::Allocated).unwrap();
        }
        assert_eq!(
            pool.counts(),
            PoolCounts { allocated: 8, ..Default::default() }
        );
        assert_eq!(pool.counts().total(), 8);
        pool.release(region.handle, 0, 8).unwrap();
        pool.check_invariants();
    }

    #[test]
    fn illegal_transition_is_protocol_violation() {
        let mut pool = PagePool::new(4).unwrap();
        assert!(matches!(
            pool.transition(0, PageState::TrimPending),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn cache_reuse_updates_fifo_and_runs() {
        let mut pool = PagePool::new(16).unwrap();
        mark_cached_range(&mut pool, 4, 4, 0);
        assert_eq!(pool.cached_runs(), vec![PageRun::new(4, 4)]);
        assert_eq!(pool.oldest_cached(2), vec![4, 5]);
        // Reusing the middle splits the cached run.
        pool.transition(5, PageState::Allocated).unwrap();
        assert_eq!(pool.cached_runs(), vec![PageRun::new(4, 1), PageRun::new(6, 2)]);
        assert_eq!(pool.oldest_cached(4), vec![4, 6, 7]);
        pool.check_invariants();
    }
}
