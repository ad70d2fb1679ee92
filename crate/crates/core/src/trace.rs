//! Workload traces: the data model and the line-oriented text format.
//!
//! A trace addresses memory by region ordinal and page offset, never by
//! absolute address, so every strategy replays the identical logical
//! workload regardless of pool layout. Ordinals index mmap events in order
//! of appearance, 0-based.
//!
//! Format, one record per line, all integers decimal:
//!
//! ```text
//! pool <pages>
//! # comment
//! mmap <len>
//! munmap <region> <offset> <len>
//! access <region> <offset> <len>
//! ```
//!
//! The first line must be the pool header. The trace name and seed round-trip
//! through `# name: <name>` and `# seed: <n>` comment lines; any other
//! comment is skipped.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Mmap { len: usize },
    Munmap { region: usize, offset: usize, len: usize },
    Access { region: usize, offset: usize, len: usize },
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub pool_size: usize,
    pub name: String,
    pub seed: u64,
    pub events: Vec<TraceEvent>,
    mmaps: usize,
}

impl PartialEq for Trace {
    fn eq(&self, other: &Self) -> bool {
        self.pool_size == other.pool_size
            && self.name == other.name
            && self.seed == other.seed
            && self.events == other.events
    }
}

impl Eq for Trace {}

impl Trace {
    pub fn new(pool_size: usize, name: impl Into<String>, seed: u64) -> Self {
        Trace { pool_size, name: name.into(), seed, events: Vec::new(), mmaps: 0 }
    }

    /// Appends an mmap and returns its region ordinal.
    pub fn mmap(&mut self, len: usize) -> usize {
        self.events.push(TraceEvent::Mmap { len });
        self.mmaps += 1;
        self.mmaps - 1
    }

    pub fn access(&mut self, region: usize, offset: usize, len: usize) {
        self.events.push(TraceEvent::Access { region, offset, len });
    }

    pub fn munmap(&mut self, region: usize, offset: usize, len: usize) {
        self.events.push(TraceEvent::Munmap { region, offset, len });
    }

    pub fn mmap_count(&self) -> usize {
        self.mmaps
    }

    pub fn parse(text: &str) -> Result<Trace> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty trace".into() })?;
        let pool_size = parse_pool_header(first)?;

        let mut trace = Trace::new(pool_size, "", 0);
        let mut mmap_lens: Vec<usize> = Vec::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim_start();
                if let Some(name) = comment.strip_prefix("name:") {
                    trace.name = name.trim().to_string();
                } else if let Some(seed) = comment.strip_prefix("seed:") {
                    if let Ok(seed) = seed.trim().parse() {
                        trace.seed = seed;
                    }
                }
                continue;
            }
            let event = parse_event(line, line_no)?;
            match event {
                TraceEvent::Mmap { len } => {
                    mmap_lens.push(len);
                    trace.mmap(len);
                }
                TraceEvent::Munmap { region, offset, len }
                | TraceEvent::Access { region, offset, len } => {
                    let region_len = *mmap_lens.get(region).ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!(
                            "region {region} referenced before its mmap ({} so far)",
                            mmap_lens.len()
                        ),
                    })?;
                    if offset + len > region_len {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!(
                                "range [{offset}, {}) exceeds region {region} length {region_len}",
                                offset + len
                            ),
                        });
                    }
                    trace.events.push(event);
                }
            }
        }
        Ok(trace)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("pool {}\n", self.pool_size);
        if !self.name.is_empty() {
            debug_assert!(!self.name.contains('\n'));
            out.push_str(&format!("# name: {}\n", self.name));
        }
        if self.seed != 0 {
            out.push_str(&format!("# seed: {}\n", self.seed));
        }
        for event in &self.events {
            match *event {
                TraceEvent::Mmap { len } => out.push_str(&format!("mmap {len}\n")),
                TraceEvent::Munmap { region, offset, len } => {
                    out.push_str(&format!("munmap {region} {offset} {len}\n"))
                }
                TraceEvent::Access { region, offset, len } => {
                    out.push_str(&format!("access {region} {offset} {len}\n"))
                }
            }
        }
        out
    }
}

fn parse_pool_header(line: &str) -> Result<usize> {
    let mut fields = line.split_whitespace();
    match (fields.next(), fields.next(), fields.next()) {
        (Some("pool"), Some(n), None) => {
            let pages: usize = n.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("invalid pool size {n:?}"),
            })?;
            if pages == 0 {
                return Err(Error::Parse { line: 1, msg: "pool size must be at least 1".into() });
            }
            Ok(pages)
        }
        _ => Err(Error::Parse {
            line: 1,
            msg: format!("expected `pool <pages>` header, got {line:?}"),
        }),
    }
}

fn parse_event(line: &str, line_no: usize) -> Result<TraceEvent> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid {what} {s:?}"),
        })
    };
    match fields.as_slice() {
        ["mmap", len] => {
            let len = num(len, "length")?;
            if len == 0 {
                return Err(Error::Parse { line: line_no, msg: "mmap of 0 pages".into() });
            }
            Ok(TraceEvent::Mmap { len })
        }
        ["munmap", region, offset, len] => {
            let (region, offset, len) =
                (num(region, "region")?, num(offset, "offset")?, num(len, "length")?);
            if len == 0 {
                return Err(Error::Parse { line: line_no, msg: "munmap of 0 pages".into() });
            }
            Ok(TraceEvent::Munmap { region, offset, len })
        }
        ["access", region, offset, len] => {
            let (region, offset, len) =
                (num(region, "region")?, num(offset, "offset")?, num(len, "length")?);
            if len == 0 {
                return Err(Error::Parse { line: line_no, msg: "access of 0 pages".into() });
            }
            Ok(TraceEvent::Access { region, offset, len })
        }
        _ => Err(Error::Parse { line: line_no, msg: format!("unrecognized record {line:?}") }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_event_round_trip() {
        let text = "pool 64\nmmap 16\naccess 0 0 16\nmunmap 0 0 16\n";
        let trace = Trace::parse(text).unwrap();
        assert_eq!(trace.pool_size, 64);
        assert_eq!(
            trace.events,
            vec![
                TraceEvent::Mmap { len: 16 },
                TraceEvent::Access { region: 0, offset: 0, len: 16 },
                TraceEvent::Munmap { region: 0, offset: 0, len: 16 },
            ]
        );
        assert_eq!(trace.serialize(), text);
    }

    #[test]
    fn name_and_seed_round_trip() {
        let mut trace = Trace::new(128, "churn", 7);
        trace.mmap(4);
        let parsed = Trace::parse(&trace.serialize()).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let trace = Trace::parse("pool 8\n# free-form note\n\nmmap 2\n").unwrap();
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.name, "");
    }

    #[test]
    fn forward_region_reference_is_rejected_with_line() {
        let err = Trace::parse("pool 8\nmmap 2\nmunmap 5 0 1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_range_offsets_are_rejected() {
        let err = Trace::parse("pool 8\nmmap 2\naccess 0 1 2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_records_carry_line_numbers() {
        for (text, bad_line) in [
            ("", 1),
            ("pool\n", 1),
            ("pool x\n", 1),
            ("pool 0\n", 1),
            ("pool 8\nmmap\n", 2),
            ("pool 8\nmmap 0\n", 2),
            ("pool 8\nmmap 2\nfrobnicate 1 2 3\n", 3),
            ("pool 8\nmmap 2\nmunmap 0 0\n", 3),
            ("pool 8\nmmap 2\naccess 0 0 zero\n", 3),
        ] {
            match Trace::parse(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, bad_line, "input {text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }
}
