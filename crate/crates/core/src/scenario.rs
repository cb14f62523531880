//! Deployment geometry, cell construction and multi-seed runs.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::engine::{rng_stream, RngStream, SimTime};
use crate::network::{Network, SimOutput};
use crate::stats::DelayRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    /// Station positions in metres; the AP sits at the origin.
    pub sta_positions: Vec<(f64, f64)>,
    pub activation_times: Vec<SimTime>,
}

impl Deployment {
    pub fn distances(&self) -> Vec<f64> {
        self.sta_positions.iter().map(|(x, y)| x.hypot(*y)).collect()
    }
}

/// Area-uniform positions over the cell disk and uniform activation times.
pub fn deploy(cfg: &ScenarioConfig, position_rng: &mut RngStream, activation_rng: &mut RngStream) -> Deployment {
    let n = usize::from(cfg.n_sta);
    let sta_positions = (0..n)
        .map(|_| {
            let r = cfg.cell_radius_m * position_rng.uniform().sqrt();
            let theta = std::f64::consts::TAU * position_rng.uniform();
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    let window_us = SimTime::from_secs_f64(cfg.activation_window_s).as_micros();
    let activation_times = (0..n)
        .map(|_| SimTime::from_micros((activation_rng.uniform() * window_us as f64).floor() as u64))
        .collect();
    Deployment {
        sta_positions,
        activation_times,
    }
}

pub fn deploy_for_seed(cfg: &ScenarioConfig, seed: u64) -> Deployment {
    deploy(
        cfg,
        &mut rng_stream(seed, "deploy.position"),
        &mut rng_stream(seed, "deploy.activation"),
    )
}

/// Validates the configuration and wires one seed's cell.
pub fn build(cfg: &ScenarioConfig, deployment: &Deployment, seed: u64) -> Result<Network, ConfigError> {
    cfg.validate()?;
    assert_eq!(deployment.sta_positions.len(), usize::from(cfg.n_sta));
    Ok(Network::new(cfg, deployment, seed))
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: internal invariant violated: {message}")]
    Invariant { seed: u64, message: String },
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64) -> Result<SimOutput, RunError> {
    let deployment = deploy_for_seed(cfg, seed);
    let net = build(cfg, &deployment, seed)?;
    catch_unwind(AssertUnwindSafe(|| net.run())).map_err(|e| RunError::Invariant {
        seed,
        message: panic_message(e.as_ref()),
    })
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = e.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = e.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Runs every seed (in parallel on the current rayon pool) and concatenates
/// the records in seed-list order.
pub fn run_seeds(cfg: &ScenarioConfig) -> Result<Vec<DelayRecord>, RunError> {
    cfg.validate()?;
    if cfg.seeds.is_empty() {
        return Err(ConfigError::Invalid {
            key: "seeds".into(),
            message: "at least one seed is required".into(),
        }
        .into());
    }
    let outputs: Vec<Result<SimOutput, RunError>> = cfg.seeds.par_iter().map(|&seed| run_seed(cfg, seed)).collect();
    let mut records = Vec::new();
    for out in outputs {
        records.extend(out?.records);
    }
    Ok(records)
}

/// Same as [`run_seeds`] on a dedicated pool of `workers` threads.
pub fn run_seeds_with_workers(cfg: &ScenarioConfig, workers: Option<usize>) -> Result<Vec<DelayRecord>, RunError> {
    match workers {
        None => run_seeds(cfg),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .expect("thread pool");
            pool.install(|| run_seeds(cfg))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::link_set;
    use crate::mld::PolicyKind;

    #[test]
    fn positions_inside_cell_and_area_uniform() {
        let cfg = ScenarioConfig {
            n_sta: 10_000,
            ..ScenarioConfig::default()
        };
        let d = deploy_for_seed(&cfg, 7);
        let dist = d.distances();
        assert!(dist.iter().all(|&r| r <= 10.0));
        // E[r] for r = R sqrt(u) is 2R/3.
        let mean = dist.iter().sum::<f64>() / dist.len() as f64;
        assert!((mean - 20.0 / 3.0).abs() < 0.1, "mean distance {mean}");
        let window = SimTime::from_secs_f64(1.0);
        assert!(d.activation_times.iter().all(|t| *t <= window));
    }

    #[test]
    fn single_station_deployment() {
        let cfg = ScenarioConfig {
            n_sta: 1,
            ..ScenarioConfig::default()
        };
        let d = deploy_for_seed(&cfg, 1);
        assert_eq!(d.sta_positions.len(), 1);
        assert_eq!(d.activation_times.len(), 1);
        assert!(d.activation_times[0] <= SimTime::from_secs_f64(1.0));
    }

    #[test]
    fn build_rejects_invalid() {
        let cfg = ScenarioConfig {
            policy: PolicyKind::SingleLink,
            ..ScenarioConfig::default()
        };
        let d = deploy_for_seed(&cfg, 1);
        let err = build(&cfg, &d, 1).err().expect("two links under sl");
        assert!(err.to_string().contains("sl requires exactly 1 link"));
    }

    #[test]
    fn seeds_merge_in_order() {
        let cfg = ScenarioConfig {
            n_sta: 2,
            sim_duration_s: 1.0,
            seeds: vec![3, 1, 2],
            links: link_set("2x40").unwrap(),
            ..ScenarioConfig::default()
        };
        let records = run_seeds(&cfg).unwrap();
        let mut seen = Vec::new();
        for r in &records {
            if seen.last() != Some(&r.seed) {
                seen.push(r.seed);
            }
        }
        assert_eq!(seen, vec![3, 1, 2]);
        let single = run_seed(&cfg, 1).unwrap().records;
        assert_eq!(records.iter().filter(|r| r.seed == 1).count(), single.len());
    }
}
