//! Quick differential smoke test against the brute-force reference.
//! The full corpus-times-grid sweep lives in the acceptance suite.

use edmm_sim::corpus::{differential_check, random_trace};
use edmm_sim::{StrategyConfig, StrategyMode};

fn spot_grid() -> Vec<StrategyConfig> {
    vec![
        StrategyConfig::new(StrategyMode::Static),
        StrategyConfig::new(StrategyMode::Edmm),
        StrategyConfig::new(StrategyMode::Edmm).with_batch(true).with_lazy_free(0.15),
        StrategyConfig::new(StrategyMode::EdmmDemand),
        StrategyConfig::new(StrategyMode::EdmmDemand).with_demand_pages(8),
        StrategyConfig::new(StrategyMode::EdmmDemand).with_demand_pages(64).with_lazy_free(0.15),
    ]
}

#[test]
fn strategy_matches_oracle_on_random_traces() {
    for seed in 0..150 {
        let trace = random_trace(seed);
        for base in spot_grid() {
            let config = base.with_prealloc(if seed % 2 == 0 { trace.pool_size / 8 } else { 0 });
            if let Err(msg) = differential_check(&trace, &config) {
                panic!("seed {seed}, strategy {}: {msg}", config.label());
            }
        }
    }
}

#[test]
fn strategy_matches_oracle_on_generated_workloads() {
    let traces = vec![
        edmm_sim::generators::gen_churn(3, 40, 24, 3),
        edmm_sim::generators::gen_server(3, 120, 200),
        edmm_sim::generators::gen_linear(3, 640, 0.3),
    ];
    for trace in &traces {
        for config in spot_grid() {
            if let Err(msg) = differential_check(trace, &config) {
                panic!("trace {}, strategy {}: {msg}", trace.name, config.label());
            }
        }
    }
}
