//! Seeded random workload corpus and the differential check against the
//! brute-force reference. Test support for this crate's own suites; not a
//! stable API.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost_model::CostParams;
use crate::oracle::oracle_replay;
use crate::replay::replay;
use crate::strategy::StrategyConfig;
use crate::trace::Trace;

/// Live sub-intervals of one generated region, offsets relative to its
/// grant.
struct LiveRegion {
    len: usize,
    intervals: Vec<(usize, usize)>, // (offset, len), disjoint, ascending
}

impl LiveRegion {
    fn live_pages(&self) -> usize {
        self.intervals.iter().map(|&(_, l)| l).sum()
    }

    fn remove(&mut self, offset: usize, len: usize) {
        let mut next = Vec::new();
        for &(s, l) in &self.intervals {
            let keep_left = (s, offset.saturating_sub(s).min(l));
            let cut_end = offset + len;
            let right_start = cut_end.max(s);
            let keep_right = (right_start, (s + l).saturating_sub(right_start));
            for (ks, kl) in [keep_left, keep_right] {
                if kl > 0 {
                    next.push((ks, kl));
                }
            }
        }
        self.intervals = next;
    }
}

/// Generates one valid random trace: a pool of at most 1024 pages and at
/// most 64 mmap/access/munmap events with no use-after-free and a live set
/// bounded by half the pool.
pub fn random_trace(seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = rng.gen_range(64..=1024);
    let budget = pool / 2;
    let n_events = rng.gen_range(1..=64);
    let mut trace = Trace::new(pool, format!("random-{seed}"), seed);
    let mut regions: Vec<LiveRegion> = Vec::new();

    for _ in 0..n_events {
        let live_total: usize = regions.iter().map(|r| r.live_pages()).sum();
        let alive: Vec<usize> =
            (0..regions.len()).filter(|&i| !regions[i].intervals.is_empty()).collect();
        let roll = rng.gen_range(0..100);
        if alive.is_empty() || (roll < 35 && live_total < budget) {
            // mmap
            let max_len = (budget - live_total).min(pool / 8).min(64);
            if max_len == 0 {
                continue;
            }
            let len = rng.gen_range(1..=max_len);
            let ord = trace.mmap(len);
            regions.push(LiveRegion { len, intervals: vec![(0, len)] });
            debug_assert_eq!(ord + 1, regions.len());
        } else if roll < 75 {
            // access a live sub-range
            let ord = alive[rng.gen_range(0..alive.len())];
            let region = &regions[ord];
            let &(s, l) = &region.intervals[rng.gen_range(0..region.intervals.len())];
            let len = rng.gen_range(1..=l);
            let offset = s + rng.gen_range(0..=l - len);
            trace.access(ord, offset, len);
        } else {
            // munmap: the whole extent or a slice of one live interval
            let ord = alive[rng.gen_range(0..alive.len())];
            if rng.gen_bool(0.4) {
                let len = regions[ord].len;
                trace.munmap(ord, 0, len);
                regions[ord].intervals.clear();
            } else {
                let (s, l) = {
                    let region = &regions[ord];
                    region.intervals[rng.gen_range(0..region.intervals.len())]
                };
                let len = rng.gen_range(1..=l);
                let offset = s + rng.gen_range(0..=l - len);
                trace.munmap(ord, offset, len);
                regions[ord].remove(offset, len);
            }
        }
    }
    trace
}

/// Replays the trace on both the strategy implementation and the
/// brute-force reference and demands identical outcomes: equal runtime
/// counters, load counters, and peak footprint on success, or the same
/// error class at the same event index on failure.
pub fn differential_check(trace: &Trace, config: &StrategyConfig) -> Result<(), String> {
    let fast = replay(trace, config, &CostParams::default());
    let slow = oracle_replay(trace, config);
    match (fast, slow) {
        (Ok(a), Ok(b)) => {
            if a.report.counters != b.counters {
                return Err(format!(
                    "runtime counters diverge:\n  strategy: {:?}\n  oracle:   {:?}",
                    a.report.counters, b.counters
                ));
            }
            if a.report.load_counters != b.load_counters {
                return Err(format!(
                    "load counters diverge:\n  strategy: {:?}\n  oracle:   {:?}",
                    a.report.load_counters, b.load_counters
                ));
            }
            if a.report.peak_mapped != b.peak_mapped {
                return Err(format!(
                    "peak mapped diverges: strategy {} vs oracle {}",
                    a.report.peak_mapped, b.peak_mapped
                ));
            }
            Ok(())
        }
        (Err(a), Err(b)) => {
            if a.category() != b.category() || a.event_index() != b.event_index() {
                Err(format!("errors diverge: strategy {a:?} vs oracle {b:?}"))
            } else {
                Ok(())
            }
        }
        (Ok(_), Err(e)) => Err(format!("oracle failed where strategy succeeded: {e:?}")),
        (Err(e), Ok(_)) => Err(format!("strategy failed where oracle succeeded: {e:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;

    #[test]
    fn random_traces_are_valid_and_deterministic() {
        for seed in 0..50 {
            let trace = random_trace(seed);
            assert_eq!(trace.serialize(), random_trace(seed).serialize());
            assert!(trace.events.len() <= 64);
            assert!(trace.pool_size <= 1024);
            // Round-trips through the text format.
            assert_eq!(Trace::parse(&trace.serialize()).unwrap(), trace);
        }
    }

    #[test]
    fn random_traces_mix_event_kinds() {
        let mut mmaps = 0;
        let mut accesses = 0;
        let mut munmaps = 0;
        for seed in 0..100 {
            for event in &random_trace(seed).events {
                match event {
                    TraceEvent::Mmap { .. } => mmaps += 1,
                    TraceEvent::Access { .. } => accesses += 1,
                    TraceEvent::Munmap { .. } => munmaps += 1,
                }
            }
        }
        assert!(mmaps > 100, "mmaps: {mmaps}");
        assert!(accesses > 100, "accesses: {accesses}");
        assert!(munmaps > 100, "munmaps: {munmaps}");
    }
}
