//! Shared fixtures for the replay benchmarks.

use edmm_sim::{generators, StrategyConfig, StrategyMode, Trace};

/// Workloads exercised by the benchmarks, sized to run in milliseconds.
pub fn workloads() -> Vec<Trace> {
    vec![
        generators::gen_churn(7, 2000, 128, 4),
        generators::gen_server(7, 5000, 4096),
        generators::gen_linear(7, 65536, 0.5),
    ]
}

/// The strategy spread worth benchmarking: the three base designs plus the
/// fully optimized configuration.
pub fn strategies() -> Vec<StrategyConfig> {
    vec![
        StrategyConfig::new(StrategyMode::Static),
        StrategyConfig::new(StrategyMode::Edmm),
        StrategyConfig::new(StrategyMode::Edmm).with_batch(true),
        StrategyConfig::new(StrategyMode::EdmmDemand).with_demand_pages(8),
        StrategyConfig::new(StrategyMode::Edmm)
            .with_prealloc(4096)
            .with_batch(true)
            .with_lazy_free(0.15),
    ]
}
