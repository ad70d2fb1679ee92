//! Deterministic synthetic workload generators.
//!
//! The three generators reproduce the allocation-pattern classes of typical
//! enclave applications rather than any particular program: garbage-collector
//! style allocate/free churn, a server with a large steady working set and
//! small per-request churn, and a batch job that maps far more memory than it
//! touches. All of them are pure functions of their parameters; the same seed
//! always yields a byte-identical trace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace::Trace;

/// Largest page range emitted per access record; larger touches are split.
const ACCESS_CHUNK: usize = 256;

fn touch_all(trace: &mut Trace, region: usize, len: usize) {
    let mut offset = 0;
    while offset < len {
        let chunk = ACCESS_CHUNK.min(len - offset);
        trace.access(region, offset, chunk);
        offset += chunk;
    }
}

/// Allocate/free churn: each iteration maps a tree-sized region, touches all
/// of it, and frees the oldest generation beyond `live_sets` live regions.
/// Region sizes jitter in `[tree_pages/2, tree_pages]`. Exactly `n_iters`
/// mmap events are emitted, and every page is touched before its munmap.
pub fn gen_churn(seed: u64, n_iters: usize, tree_pages: usize, live_sets: usize) -> Trace {
    assert!(n_iters >= 1 && tree_pages >= 1 && live_sets >= 1, "parameters must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Generous headroom over the worst-case live set; first-fit keeps actual
    // usage near the bottom of the pool.
    let pool = (live_sets + 1) * tree_pages * 2;
    let mut trace = Trace::new(pool, "churn", seed);
    let mut sizes = Vec::with_capacity(n_iters);
    for i in 0..n_iters {
        let len = rng.gen_range(tree_pages.div_ceil(2)..=tree_pages);
        let ord = trace.mmap(len);
        debug_assert_eq!(ord, i);
        sizes.push(len);
        touch_all(&mut trace, ord, len);
        if i >= live_sets {
            let old = i - live_sets;
            trace.munmap(old, 0, sizes[old]);
        }
    }
    for ord in n_iters.saturating_sub(live_sets)..n_iters {
        trace.munmap(ord, 0, sizes[ord]);
    }
    trace
}

/// Server-style workload: one large working set mapped and warmed up front,
/// then random small reads per request, with a short-lived scratch mapping
/// every eighth request. Mmap traffic is a small, bounded fraction of access
/// traffic and the peak live size stays within `working_set_pages` plus the
/// scratch bound returned by [`server_churn_bound`].
pub fn gen_server(seed: u64, n_requests: usize, working_set_pages: usize) -> Trace {
    assert!(n_requests >= 1 && working_set_pages >= 1, "parameters must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = working_set_pages + working_set_pages / 2 + 2 * server_churn_bound();
    let mut trace = Trace::new(pool, "server", seed);

    let ws = trace.mmap(working_set_pages);
    touch_all(&mut trace, ws, working_set_pages);

    let mut scratch: std::collections::VecDeque<(usize, usize)> = Default::default();
    for request in 0..n_requests {
        for _ in 0..2 {
            let len = rng.gen_range(1..=16.min(working_set_pages));
            let offset = rng.gen_range(0..=working_set_pages - len);
            trace.access(ws, offset, len);
        }
        if request % 8 == 0 {
            let len = rng.gen_range(1..=16);
            let ord = trace.mmap(len);
            touch_all(&mut trace, ord, len);
            scratch.push_back((ord, len));
            if scratch.len() > 4 {
                let (old, old_len) = scratch.pop_front().unwrap();
                trace.munmap(old, 0, old_len);
            }
        }
    }
    for (ord, len) in scratch {
        trace.munmap(ord, 0, len);
    }
    trace.munmap(ws, 0, working_set_pages);
    trace
}

/// Worst-case extra live pages of [`gen_server`] beyond its working set.
pub fn server_churn_bound() -> usize {
    5 * 16
}

/// Over-provisioned batch job: a handful of large mappings whose leading
/// `touch_fraction` of pages is accessed sequentially, with no frees until
/// the end. Each region touches `floor(len * touch_fraction)` pages.
pub fn gen_linear(seed: u64, total_pages: usize, touch_fraction: f64) -> Trace {
    assert!(total_pages >= 1, "parameters must be at least 1");
    assert!(
        touch_fraction > 0.0 && touch_fraction <= 1.0,
        "touch fraction must be within (0, 1]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Trace::new(total_pages, "linear", seed);

    // Split the total into 3-6 regions along multiple-of-8 boundaries so
    // that round fractions of round totals touch exact page counts.
    let mut sizes = Vec::new();
    let mut remaining = total_pages;
    let regions = rng.gen_range(3..=6).min(total_pages.div_ceil(8));
    for i in 0..regions {
        let left = regions - i - 1;
        let len = if left == 0 {
            remaining
        } else {
            let max_units = (remaining - left * 8) / 8;
            rng.gen_range(1..=max_units.max(1)) * 8
        };
        sizes.push(len);
        remaining -= len;
    }
    debug_assert_eq!(remaining, 0);

    let mut ords = Vec::new();
    for &len in &sizes {
        let ord = trace.mmap(len);
        ords.push(ord);
        let touched = (len as f64 * touch_fraction).floor() as usize;
        let mut offset = 0;
        while offset < touched {
            let chunk = ACCESS_CHUNK.min(touched - offset);
            trace.access(ord, offset, chunk);
            offset += chunk;
        }
    }
    for (&ord, &len) in ords.iter().zip(&sizes) {
        trace.munmap(ord, 0, len);
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;

    /// Trace-level live-page accounting, independent of any strategy.
    fn live_profile(trace: &Trace) -> (usize, bool) {
        let mut lens = Vec::new();
        let mut touched: Vec<Vec<bool>> = Vec::new();
        let mut live = 0usize;
        let mut peak = 0usize;
        let mut all_touched_before_unmap = true;
        for event in &trace.events {
            match *event {
                TraceEvent::Mmap { len } => {
                    lens.push(len);
                    touched.push(vec![false; len]);
                    live += len;
                }
                TraceEvent::Access { region, offset, len } => {
                    for p in offset..offset + len {
                        touched[region][p] = true;
                    }
                }
                TraceEvent::Munmap { region, offset, len } => {
                    live -= len;
                    for p in offset..offset + len {
                        if !touched[region][p] {
                            all_touched_before_unmap = false;
                        }
                    }
                }
            }
            peak = peak.max(live);
        }
        (peak, all_touched_before_unmap)
    }

    #[test]
    fn churn_is_deterministic_in_seed() {
        let a = gen_churn(7, 20, 16, 3);
        let b = gen_churn(7, 20, 16, 3);
        assert_eq!(a.serialize(), b.serialize());
        let c = gen_churn(8, 20, 16, 3);
        assert_ne!(a.serialize(), c.serialize());
    }

    #[test]
    fn churn_emits_exactly_n_iters_mmaps() {
        let trace = gen_churn(1, 25, 8, 4);
        assert_eq!(trace.mmap_count(), 25);
        let munmaps =
            trace.events.iter().filter(|e| matches!(e, TraceEvent::Munmap { .. })).count();
        assert_eq!(munmaps, 25, "every region is eventually freed");
    }

    #[test]
    fn churn_touches_every_page_before_free() {
        let trace = gen_churn(3, 30, 16, 2);
        let (peak, all_touched) = live_profile(&trace);
        assert!(all_touched);
        assert!(peak <= 3 * 16, "at most live_sets + 1 live regions");
        assert!(peak <= trace.pool_size);
    }

    #[test]
    fn server_accesses_dominate_mmaps() {
        let trace = gen_server(5, 200, 512);
        let mmaps = trace.mmap_count();
        let accesses =
            trace.events.iter().filter(|e| matches!(e, TraceEvent::Access { .. })).count();
        assert_eq!(mmaps, 1 + 200usize.div_ceil(8));
        assert!(accesses >= 2 * 200);
        assert!(mmaps * 4 < accesses);
    }

    #[test]
    fn server_peak_stays_near_working_set() {
        let trace = gen_server(11, 160, 512);
        let (peak, _) = live_profile(&trace);
        assert!(peak >= 512);
        assert!(peak <= 512 + server_churn_bound());
        assert!(peak <= trace.pool_size);
    }

    #[test]
    fn server_is_deterministic() {
        assert_eq!(gen_server(9, 64, 128).serialize(), gen_server(9, 64, 128).serialize());
    }

    #[test]
    fn linear_full_touch_covers_every_page_exactly_once() {
        let trace = gen_linear(2, 1024, 1.0);
        let mut counts = vec![0usize; 1024];
        let mut starts = Vec::new();
        let mut base = 0;
        for event in &trace.events {
            match *event {
                TraceEvent::Mmap { len } => {
                    starts.push(base);
                    base += len;
                }
                TraceEvent::Access { region, offset, len } => {
                    for p in offset..offset + len {
                        counts[starts[region] + p] += 1;
                    }
                }
                TraceEvent::Munmap { .. } => {}
            }
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn linear_half_touch_accesses_half_the_pages() {
        let trace = gen_linear(4, 1024, 0.5);
        let accessed: usize = trace
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Access { len, .. } => Some(len),
                _ => None,
            })
            .sum();
        assert_eq!(accessed, 512);
    }

    #[test]
    fn linear_is_deterministic_and_frees_only_at_end() {
        let a = gen_linear(6, 512, 0.25);
        assert_eq!(a.serialize(), gen_linear(6, 512, 0.25).serialize());
        let first_munmap =
            a.events.iter().position(|e| matches!(e, TraceEvent::Munmap { .. })).unwrap();
        assert!(a.events[first_munmap..].iter().all(|e| matches!(e, TraceEvent::Munmap { .. })));
    }

    #[test]
    fn generated_traces_round_trip() {
        for trace in [gen_churn(7, 12, 8, 2), gen_server(7, 40, 64), gen_linear(7, 256, 0.5)] {
            assert_eq!(Trace::parse(&trace.serialize()).unwrap(), trace);
        }
    }
}
