//! Abstracted PHY: log-distance propagation, SNR, MCS table, airtime, the
//! per-MPDU error process, and a windowed rate selector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, SimTime};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

pub const CARRIERS_GHZ: [f64; 4] = [5.2, 5.5, 6.1, 6.5];
pub const BANDWIDTHS_MHZ: [u32; 4] = [20, 40, 80, 160];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub carrier_ghz: f64,
    pub bandwidth_mhz: u32,
}

impl LinkSpec {
    pub fn new(carrier_ghz: f64, bandwidth_mhz: u32) -> Self {
        Self {
            carrier_ghz,
            bandwidth_mhz,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !CARRIERS_GHZ.iter().any(|c| (c - self.carrier_ghz).abs() < 1e-9) {
            return Err(format!(
                "carrier {} GHz is not one of {CARRIERS_GHZ:?}",
                self.carrier_ghz
            ));
        }
        if !BANDWIDTHS_MHZ.contains(&self.bandwidth_mhz) {
            return Err(format!(
                "bandwidth {} MHz is not one of {BANDWIDTHS_MHZ:?}",
                self.bandwidth_mhz
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: u8,
    pub label: String,
    /// Single spatial stream rate at 20 MHz, 0.8 us GI.
    pub rate_20mhz_mbps: f64,
    pub min_snr_db: f64,
}

impl McsEntry {
    /// Rate at `bandwidth_mhz`; doubles with every bandwidth doubling.
    pub fn data_rate(&self, bandwidth_mhz: u32) -> f64 {
        self.rate_20mhz_mbps * f64::from(bandwidth_mhz) / 20.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    pub entries: Vec<McsEntry>,
}

impl Default for McsTable {
    fn default() -> Self {
        const ROWS: [(&str, f64, f64); 12] = [
            ("BPSK 1/2", 8.6, 2.0),
            ("QPSK 1/2", 17.2, 5.0),
            ("QPSK 3/4", 25.8, 9.0),
            ("16-QAM 1/2", 34.4, 11.0),
            ("16-QAM 3/4", 51.6, 15.0),
            ("64-QAM 2/3", 68.8, 18.0),
            ("64-QAM 3/4", 77.4, 20.0),
            ("64-QAM 5/6", 86.0, 22.0),
            ("256-QAM 3/4", 103.2, 26.0),
            ("256-QAM 5/6", 114.7, 28.0),
            ("1024-QAM 3/4", 129.0, 32.0),
            ("1024-QAM 5/6", 143.4, 34.0),
        ];
        Self {
            entries: ROWS
                .iter()
                .enumerate()
                .map(|(i, (label, rate, snr))| McsEntry {
                    index: i as u8,
                    label: (*label).to_string(),
                    rate_20mhz_mbps: *rate,
                    min_snr_db: *snr,
                })
                .collect(),
        }
    }
}

impl McsTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> &McsEntry {
        &self.entries[index]
    }

    pub fn rates(&self, bandwidth_mhz: u32) -> Vec<f64> {
        self.entries.iter().map(|e| e.data_rate(bandwidth_mhz)).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.entries.is_empty() {
            return Err("phy.mcs_table must not be empty".into());
        }
        for (i, w) in self.entries.windows(2).enumerate() {
            if !(w[1].rate_20mhz_mbps > w[0].rate_20mhz_mbps) {
                return Err(format!("phy.mcs_table rates must increase at index {}", i + 1));
            }
            if !(w[1].min_snr_db > w[0].min_snr_db) {
                return Err(format!("phy.mcs_table min_snr must increase at index {}", i + 1));
            }
        }
        if self.entries.iter().any(|e| !(e.rate_20mhz_mbps > 0.0)) {
            return Err("phy.mcs_table rates must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyConfig {
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub breakpoint_m: f64,
    pub path_loss_exponent: f64,
    pub preamble_us: u64,
    /// Half-width of the linear error ramp around an MCS threshold.
    pub error_ramp_db: f64,
    pub rate_window: usize,
    pub probe_probability: f64,
    pub initial_mcs: usize,
    pub mcs_table: McsTable,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            noise_figure_db: 7.0,
            breakpoint_m: 5.0,
            path_loss_exponent: 3.5,
            preamble_us: 44,
            error_ramp_db: 2.0,
            rate_window: 25,
            probe_probability: 0.1,
            initial_mcs: 4,
            mcs_table: McsTable::default(),
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.mcs_table.validate()?;
        if self.initial_mcs >= self.mcs_table.len() {
            return Err(format!(
                "phy.initial_mcs {} out of range for a {}-entry table",
                self.initial_mcs,
                self.mcs_table.len()
            ));
        }
        if self.rate_window == 0 {
            return Err("phy.rate_window must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.probe_probability) {
            return Err("phy.probe_probability must be in [0, 1]".into());
        }
        if !(self.breakpoint_m > 0.0) || !(self.path_loss_exponent > 0.0) {
            return Err("phy.breakpoint_m and phy.path_loss_exponent must be > 0".into());
        }
        if !(self.error_ramp_db > 0.0) {
            return Err("phy.error_ramp_db must be > 0".into());
        }
        Ok(())
    }

    /// Free-space loss up to the breakpoint, `path_loss_exponent` beyond.
    pub fn path_loss(&self, distance_m: f64, carrier_ghz: f64) -> f64 {
        assert!(distance_m > 0.0, "distance must be positive");
        let fspl = |d: f64| 20.0 * (4.0 * std::f64::consts::PI * d * carrier_ghz * 1e9 / SPEED_OF_LIGHT).log10();
        if distance_m <= self.breakpoint_m {
            fspl(distance_m)
        } else {
            fspl(self.breakpoint_m) + 10.0 * self.path_loss_exponent * (distance_m / self.breakpoint_m).log10()
        }
    }

    pub fn noise_floor_dbm(&self, bandwidth_mhz: u32) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * (f64::from(bandwidth_mhz) * 1e6).log10() + self.noise_figure_db
    }

    pub fn snr(&self, link: &LinkSpec, distance_m: f64) -> f64 {
        self.tx_power_dbm - self.path_loss(distance_m, link.carrier_ghz) - self.noise_floor_dbm(link.bandwidth_mhz)
    }

    /// Airtime of `payload_bytes` at `rate_mbps`, preamble included, rounded up.
    pub fn tx_duration(&self, payload_bytes: u64, rate_mbps: f64) -> SimTime {
        let payload_us = (payload_bytes as f64 * 8.0 / rate_mbps).ceil() as u64;
        SimTime::from_micros(self.preamble_us + payload_us)
    }

    /// MPDU error probability: 0 above `min_snr + ramp`, 1 below
    /// `min_snr - ramp`, linear in dB between.
    pub fn mpdu_error_probability(&self, mcs: &McsEntry, snr_db: f64) -> f64 {
        let hi = mcs.min_snr_db + self.error_ramp_db;
        let lo = mcs.min_snr_db - self.error_ramp_db;
        if snr_db >= hi {
            0.0
        } else if snr_db <= lo {
            1.0
        } else {
            (hi - snr_db) / (hi - lo)
        }
    }

    pub fn mpdu_error(&self, mcs: &McsEntry, snr_db: f64, rng: &mut RngStream) -> bool {
        rng.bernoulli(self.mpdu_error_probability(mcs, snr_db))
    }

    /// Highest MCS index that is error-free at `snr_db`, if any.
    pub fn highest_clean_mcs(&self, snr_db: f64) -> Option<usize> {
        self.mcs_table
            .entries
            .iter()
            .rposition(|e| self.mpdu_error_probability(e, snr_db) == 0.0)
    }
}

/// Windowed exploit/probe rate selector.
///
/// Each MCS keeps the outcomes of its last `window` attempts (an attempt is
/// one A-MPDU; its outcome is the acknowledged fraction). Exploit steps pick
/// the index with the highest `rate x mean outcome`. Probe steps sample a
/// different index whose nominal rate could beat the current estimate.
#[derive(Debug, Clone)]
pub struct RateSelector {
    rates: Vec<f64>,
    window: usize,
    probe_probability: f64,
    initial: usize,
    history: Vec<VecDeque<f64>>,
    sums: Vec<f64>,
}

impl RateSelector {
    pub fn new(rates: Vec<f64>, window: usize, probe_probability: f64, initial: usize) -> Self {
        assert!(!rates.is_empty() && initial < rates.len() && window > 0);
        let n = rates.len();
        Self {
            rates,
            window,
            probe_probability,
            initial,
            history: vec![VecDeque::with_capacity(window); n],
            sums: vec![0.0; n],
        }
    }

    pub fn from_config(cfg: &PhyConfig, bandwidth_mhz: u32) -> Self {
        Self::new(
            cfg.mcs_table.rates(bandwidth_mhz),
            cfg.rate_window,
            cfg.probe_probability,
            cfg.initial_mcs,
        )
    }

    pub fn rate(&self, index: usize) -> f64 {
        self.rates[index]
    }

    pub fn attempts(&self, index: usize) -> usize {
        self.history[index].len()
    }

    pub fn success_probability(&self, index: usize) -> Option<f64> {
        let h = &self.history[index];
        if h.is_empty() {
            None
        } else {
            // Recomputed from the window to avoid drift in the running sum.
            Some(h.iter().sum::<f64>() / h.len() as f64)
        }
    }

    pub fn throughput_estimate(&self, index: usize) -> f64 {
        if self.history[index].is_empty() {
            0.0
        } else {
            self.rates[index] * self.sums[index] / self.history[index].len() as f64
        }
    }

    /// Exploit choice without consuming randomness or altering state.
    pub fn peek(&self) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rates.len() {
            if self.history[i].is_empty() {
                continue;
            }
            let tp = self.throughput_estimate(i);
            if tp > 0.0 && best.is_none_or(|(_, b)| tp >= b) {
                best = Some((i, tp));
            }
        }
        best.map_or(self.initial, |(i, _)| i)
    }

    pub fn select(&mut self, rng: &mut RngStream) -> usize {
        let best = self.peek();
        if rng.uniform() >= self.probe_probability {
            return best;
        }
        let floor = self.throughput_estimate(best);
        let candidates: Vec<usize> = (0..self.rates.len())
            .filter(|&i| i != best && self.rates[i] > floor)
            .collect();
        if candidates.is_empty() {
            return best;
        }
        let pick = rng.uniform_inclusive(candidates.len() as u32 - 1) as usize;
        candidates[pick]
    }

    pub fn record(&mut self, index: usize, success_fraction: f64) {
        let h = &mut self.history[index];
        if h.len() == self.window {
            let old = h.pop_front().expect("full window");
            self.sums[index] -= old;
        }
        h.push_back(success_fraction);
        self.sums[index] += success_fraction;
    }
}
