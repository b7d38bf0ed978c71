use quench_core::exact::ExactCaps;
use quench_core::hierarchy::{
    uncovered_probability_scan, GoodnessCriterion, PartitionOptions,
};
use quench_core::mcmc::McmcOptions;
use quench_core::models::{ModelSpec, ModelVariant};
use std::time::Instant;

fn rfim(beta: f64, lambda: f64) -> ModelSpec {
    ModelSpec::new(ModelVariant::Rfim { h: 0.0, coupling: 1.0 }, 2, beta, lambda).unwrap()
}

#[test]
fn probe() {
    for (beta, sweeps) in [(1.0f64, 65_536usize), (0.5, 16_384), (0.4, 16_384)] {
        let opt = PartitionOptions {
            caps: ExactCaps { max_boundaries: 1 << 12, ..ExactCaps::default() },
            mcmc: McmcOptions { sweeps, burn_in: sweeps / 4, ..McmcOptions::default() },
            seed: 11,
            allow_mcmc_fallback: true,
            n_random_candidates: 4,
        };
        let t = Instant::now();
        let r = uncovered_probability_scan(
            &[2, 4, 8],
            2,
            &GoodnessCriterion::FlucThreshold { delta: 0.6 },
            &rfim(beta, 1.0),
            30,
            &opt,
        );
        match r {
            Ok(scan) => eprintln!(
                "beta={beta} sweeps={sweeps} t={:?} nonincr={} slope={:.4}\n{}",
                t.elapsed(),
                scan.nonincreasing_within_bands,
                scan.trend_slope,
                scan.to_csv()
            ),
            Err(e) => eprintln!("beta={beta} sweeps={sweeps} t={:?} ERR {e}", t.elapsed()),
        }
    }
}
