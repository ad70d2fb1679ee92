//! Textual specs shared by the subcommands: sizes, strategy labels, and
//! inline generator descriptions.

use anyhow::{anyhow, bail, Context, Result};
use edmm_sim::{generators, StrategyConfig, StrategyMode, Trace, PAGE_SIZE};

/// Parses a size as a page count, or as bytes with a K/M/G suffix rounded up
/// to whole pages.
pub fn parse_size_pages(s: &str) -> Result<usize> {
    let s = s.trim();
    let (digits, unit): (&str, usize) = match s.chars().last() {
        Some('k') | Some('K') => (&s[..s.len() - 1], 1 << 10),
        Some('m') | Some('M') => (&s[..s.len() - 1], 1 << 20),
        Some('g') | Some('G') => (&s[..s.len() - 1], 1 << 30),
        _ => {
            return s.parse().with_context(|| format!("invalid page count {s:?}"));
        }
    };
    let value: f64 = digits.parse().map_err(|_| anyhow!("invalid size {s:?}"))?;
    if !value.is_finite() || value < 0.0 {
        bail!("invalid size {s:?}");
    }
    let bytes = value * unit as f64;
    Ok((bytes / PAGE_SIZE as f64).ceil() as usize)
}

/// Parses a strategy label of the form
/// `static | edmm[+demand[=N]][+pre=SIZE][+batch][+lf=PERCENT]`.
pub fn parse_strategy(s: &str) -> Result<StrategyConfig> {
    let mut parts = s.split('+');
    let base = parts.next().unwrap_or_default();
    let mut config = match base {
        "static" => StrategyConfig::new(StrategyMode::Static),
        "edmm" => StrategyConfig::new(StrategyMode::Edmm),
        other => bail!("unknown strategy {other:?} (expected `static` or `edmm`)"),
    };
    for part in parts {
        let (key, value) = match part.split_once('=') {
            Some((k, v)) => (k, Some(v)),
            None => (part, None),
        };
        if config.mode == StrategyMode::Static {
            bail!("strategy modifier {key:?} does not apply to static allocation");
        }
        match key {
            "demand" => {
                config.mode = StrategyMode::EdmmDemand;
                config.demand_pages = match value {
                    Some(v) => v.parse().with_context(|| format!("invalid demand size {v:?}"))?,
                    None => 1,
                };
                if config.demand_pages == 0 {
                    bail!("demand size must be at least 1");
                }
            }
            "pre" => {
                let v = value.ok_or_else(|| anyhow!("`pre` requires a size, e.g. pre=64M"))?;
                config.prealloc_pages = parse_size_pages(v)?;
            }
            "batch" => {
                if value.is_some() {
                    bail!("`batch` takes no value");
                }
                if config.mode == StrategyMode::EdmmDemand {
                    bail!("`batch` applies to plain edmm; use `demand=<N>` to batch faults");
                }
                config.batch = true;
            }
            "lf" => {
                let v = value.ok_or_else(|| anyhow!("`lf` requires a percentage, e.g. lf=15"))?;
                config.lazy_free_fraction = parse_percent(v)?;
            }
            other => bail!("unknown strategy modifier {other:?}"),
        }
    }
    if config.batch && config.mode == StrategyMode::EdmmDemand {
        bail!("`batch` applies to plain edmm; use `demand=<N>` to batch faults");
    }
    Ok(config)
}

/// Parses a percentage in [0, 100] into a fraction.
pub fn parse_percent(s: &str) -> Result<f64> {
    let pct: f64 = s.trim().parse().with_context(|| format!("invalid percentage {s:?}"))?;
    if !pct.is_finite() || !(0.0..=100.0).contains(&pct) {
        bail!("percentage must be within [0, 100], got {s}");
    }
    Ok(pct / 100.0)
}

/// Parses a fraction in (0, 1].
pub fn parse_fraction(s: &str) -> Result<f64> {
    let f: f64 = s.trim().parse().with_context(|| format!("invalid fraction {s:?}"))?;
    if !f.is_finite() || f <= 0.0 || f > 1.0 {
        bail!("fraction must be within (0, 1], got {s}");
    }
    Ok(f)
}

/// Builds a trace from an inline generator spec:
/// `churn:seed=7,iters=200,tree=2M,live=4`,
/// `server:seed=1,requests=500,ws=128M`, or
/// `linear:seed=2,total=64M,touch=0.5`, each with an optional `pool=SIZE`.
pub fn parse_generator(spec: &str) -> Result<Trace> {
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let mut fields = std::collections::BTreeMap::new();
    for pair in args.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value in generator spec, got {pair:?}"))?;
        if fields.insert(k.trim(), v.trim()).is_some() {
            bail!("duplicate generator parameter {k:?}");
        }
    }
    let mut take = |key: &str| fields.remove(key);
    let seed: u64 = match take("seed") {
        Some(v) => v.parse().with_context(|| format!("invalid seed {v:?}"))?,
        None => 0,
    };
    let pool = take("pool").map(parse_size_pages).transpose()?;

    let mut trace = match kind {
        "churn" => {
            let iters = required(take("iters"), "iters")?;
            let tree = parse_size_pages(required_str(take("tree"), "tree")?)?;
            let live = required(take("live"), "live")?;
            generators::gen_churn(seed, iters, tree, live)
        }
        "server" => {
            let requests = required(take("requests"), "requests")?;
            let ws = parse_size_pages(required_str(take("ws"), "ws")?)?;
            generators::gen_server(seed, requests, ws)
        }
        "linear" => {
            let total = parse_size_pages(required_str(take("total"), "total")?)?;
            let touch = parse_fraction(required_str(take("touch"), "touch")?)?;
            generators::gen_linear(seed, total, touch)
        }
        other => bail!("unknown generator {other:?} (expected churn, server, or linear)"),
    };
    if let Some((key, _)) = fields.into_iter().next() {
        bail!("unknown generator parameter {key:?}");
    }
    if let Some(pool) = pool {
        if pool < trace.pool_size {
            bail!(
                "pool of {pool} pages is below the generator's requirement of {}",
                trace.pool_size
            );
        }
        trace.pool_size = pool;
    }
    Ok(trace)
}

fn required<T: std::str::FromStr>(v: Option<&str>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let v = required_str(v, key)?;
    v.parse().map_err(|e| anyhow!("invalid {key} {v:?}: {e}"))
}

fn required_str<'a>(v: Option<&'a str>, key: &str) -> Result<&'a str> {
    v.ok_or_else(|| anyhow!("generator spec is missing {key:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse_as_pages_or_bytes() {
        assert_eq!(parse_size_pages("512").unwrap(), 512);
        assert_eq!(parse_size_pages("64M").unwrap(), 16384);
        assert_eq!(parse_size_pages("512M").unwrap(), 131072);
        assert_eq!(parse_size_pages("1G").unwrap(), 262144);
        assert_eq!(parse_size_pages("4k").unwrap(), 1);
        assert_eq!(parse_size_pages("5K").unwrap(), 2, "rounds up");
        assert!(parse_size_pages("x").is_err());
        assert!(parse_size_pages("-1M").is_err());
    }

    #[test]
    fn strategy_labels_round_trip() {
        for label in
            ["static", "edmm", "edmm+batch", "edmm+demand", "edmm+demand=8", "edmm+pre=64M+batch+lf=15"]
        {
            let config = parse_strategy(label).unwrap();
            assert_eq!(config.label(), label, "round-trip of {label}");
        }
    }

    #[test]
    fn bad_strategies_are_rejected() {
        for label in ["sgx1", "static+batch", "edmm+demand=0", "edmm+pre", "edmm+demand+batch", "edmm+lf=101"] {
            assert!(parse_strategy(label).is_err(), "{label}");
        }
    }

    #[test]
    fn generator_specs_parse() {
        let t = parse_generator("churn:seed=7,iters=20,tree=16,live=3").unwrap();
        assert_eq!(t.mmap_count(), 20);
        let t = parse_generator("linear:seed=1,total=256,touch=0.5,pool=4M").unwrap();
        assert_eq!(t.pool_size, 1024);
        assert!(parse_generator("linear:seed=1,total=256,touch=1.5").is_err());
        assert!(parse_generator("churn:iters=5,tree=8,live=2,bogus=1").is_err());
        assert!(parse_generator("fractal:seed=1").is_err());
    }
}
