//! Per-link lower MAC building blocks: CSMA/CA contention with binary
//! exponential backoff, A-MPDU aggregation, Block Ack, retries and
//! busy-time sensing.
//!
//! The channel-level state machine that drives these lives in
//! [`crate::network`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, SimTime};
use crate::phy::PhyConfig;
use crate::traffic::Mpdu;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacConfig {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub block_ack_us: u64,
    pub retry_limit: u8,
    pub max_ampdu_mpdus: usize,
    pub max_ampdu_us: u64,
    /// Whether a device's own transmissions count toward its busy time.
    pub count_own_tx: bool,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            slot_us: 9,
            sifs_us: 16,
            difs_us: 34,
            cw_min: 15,
            cw_max: 1023,
            block_ack_us: 32,
            retry_limit: 10,
            max_ampdu_mpdus: 64,
            max_ampdu_us: 5_484,
            count_own_tx: true,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<(), String> {
        let pow2m1 = |v: u32| (v + 1).is_power_of_two();
        if !pow2m1(self.cw_min) || !pow2m1(self.cw_max) || self.cw_min > self.cw_max {
            return Err("mac.cw_min/cw_max must be 2^k - 1 with cw_min <= cw_max".into());
        }
        if self.slot_us == 0 {
            return Err("mac.slot_us must be > 0".into());
        }
        if self.max_ampdu_mpdus == 0 {
            return Err("mac.max_ampdu_mpdus must be >= 1".into());
        }
        Ok(())
    }

    pub fn slot(&self) -> SimTime {
        SimTime(self.slot_us)
    }

    pub fn sifs(&self) -> SimTime {
        SimTime(self.sifs_us)
    }

    pub fn difs(&self) -> SimTime {
        SimTime(self.difs_us)
    }

    pub fn block_ack(&self) -> SimTime {
        SimTime(self.block_ack_us)
    }

    /// SIFS + Block Ack + two slots.
    pub fn ack_timeout(&self) -> SimTime {
        SimTime(self.sifs_us + self.block_ack_us + 2 * self.slot_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacState {
    Idle,
    /// Waiting for the medium to be idle for DIFS, or frozen mid-backoff.
    Sensing,
    Backoff,
    Tx,
    AwaitAck,
}

/// Contention window and backoff counter of one link-MAC.
#[derive(Debug, Clone)]
pub struct ContentionState {
    pub cw: u32,
    pub backoff_slots: u32,
    pub state: MacState,
    /// When the current countdown (DIFS then slots) started; `None` while
    /// the medium is busy.
    pub ready_from: Option<SimTime>,
    cw_min: u32,
    cw_max: u32,
}

impl ContentionState {
    pub fn new(cfg: &MacConfig) -> Self {
        Self {
            cw: cfg.cw_min,
            backoff_slots: 0,
            state: MacState::Idle,
            ready_from: None,
            cw_min: cfg.cw_min,
            cw_max: cfg.cw_max,
        }
    }

    /// Draws a backoff uniformly in `[0, cw]`.
    pub fn draw_backoff(&mut self, rng: &mut RngStream) -> u32 {
        self.backoff_slots = rng.uniform_inclusive(self.cw);
        self.backoff_slots
    }

    pub fn on_success(&mut self) {
        self.cw = self.cw_min;
    }

    pub fn on_failure(&mut self) {
        self.cw = (2 * self.cw + 1).min(self.cw_max);
    }

    /// Starts the DIFS + backoff countdown once the medium is idle at `idle_at`.
    pub fn resume(&mut self, idle_at: SimTime) {
        self.ready_from = Some(idle_at);
        self.state = MacState::Backoff;
    }

    /// Time at which access is granted if the medium stays idle.
    pub fn access_time(&self, cfg: &MacConfig) -> Option<SimTime> {
        self.ready_from
            .map(|t| t + cfg.difs() + SimTime(u64::from(self.backoff_slots) * cfg.slot_us))
    }

    /// Freezes the countdown when the medium turns busy at `busy_at`,
    /// keeping only fully elapsed idle slots.
    pub fn freeze(&mut self, busy_at: SimTime, cfg: &MacConfig) {
        if let Some(start) = self.ready_from.take() {
            let counting_from = start + cfg.difs();
            if busy_at > counting_from {
                let elapsed = (busy_at - counting_from).as_micros() / cfg.slot_us;
                self.backoff_slots = self.backoff_slots.saturating_sub(elapsed as u32);
            }
        }
        self.state = MacState::Sensing;
    }
}

/// One aggregated transmission.
#[derive(Debug, Clone)]
pub struct Ampdu {
    pub mpdus: Vec<Mpdu>,
    pub duration: SimTime,
    pub src: u16,
    pub dst: u16,
    pub link: usize,
    pub mcs: usize,
}

impl Ampdu {
    pub fn payload_bytes(&self) -> u64 {
        self.mpdus.iter().map(|m| u64::from(m.payload)).sum()
    }
}

/// Length of the longest same-destination prefix of `queue` that satisfies
/// both the MPDU-count and the duration limit at `rate_mbps`. At least one
/// MPDU is always included for a non-empty queue.
pub fn aggregate_len<'a, I>(queue: I, rate_mbps: f64, phy: &PhyConfig, mac: &MacConfig) -> usize
where
    I: IntoIterator<Item = &'a Mpdu>,
{
    let mut it = queue.into_iter();
    let Some(head) = it.next() else {
        return 0;
    };
    let dst = head.dst;
    let mut bytes = u64::from(head.payload);
    let mut n = 1;
    let limit = SimTime(mac.max_ampdu_us);
    for m in it {
        if n == mac.max_ampdu_mpdus || m.dst != dst {
            break;
        }
        let next = bytes + u64::from(m.payload);
        if phy.tx_duration(next, rate_mbps) > limit {
            break;
        }
        bytes = next;
        n += 1;
    }
    n
}

impl Ampdu {
    /// Wraps MPDUs already cut to the aggregation limits.
    pub fn from_mpdus(mpdus: Vec<Mpdu>, src: u16, link: usize, mcs: usize, rate_mbps: f64, phy: &PhyConfig) -> Self {
        assert!(!mpdus.is_empty(), "empty A-MPDU");
        let bytes = mpdus.iter().map(|m| u64::from(m.payload)).sum();
        Ampdu {
            dst: mpdus[0].dst,
            duration: phy.tx_duration(bytes, rate_mbps),
            mpdus,
            src,
            link,
            mcs,
        }
    }
}

/// Removes the aggregation prefix from `queue` and builds the A-MPDU.
pub fn aggregate(
    queue: &mut VecDeque<Mpdu>,
    src: u16,
    link: usize,
    mcs: usize,
    rate_mbps: f64,
    phy: &PhyConfig,
    mac: &MacConfig,
) -> Option<Ampdu> {
    let n = aggregate_len(queue.iter(), rate_mbps, phy, mac);
    if n == 0 {
        return None;
    }
    let mpdus: Vec<Mpdu> = queue.drain(..n).collect();
    Some(Ampdu::from_mpdus(mpdus, src, link, mcs, rate_mbps, phy))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAck {
    pub bitmap: Vec<bool>,
}

impl BlockAck {
    pub fn delivered(&self) -> usize {
        self.bitmap.iter().filter(|b| **b).count()
    }

    pub fn success_fraction(&self) -> f64 {
        self.delivered() as f64 / self.bitmap.len() as f64
    }
}

/// Receiver side: a Block Ack lists per-MPDU success. A fully corrupted
/// A-MPDU produces no Block Ack and the sender times out.
pub fn on_ampdu_received(ampdu: &Ampdu, corrupted: &[bool]) -> Option<BlockAck> {
    assert_eq!(ampdu.mpdus.len(), corrupted.len());
    if corrupted.iter().all(|c| *c) {
        return None;
    }
    Some(BlockAck {
        bitmap: corrupted.iter().map(|c| !c).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryOutcome {
    Requeue(Mpdu),
    Drop(Mpdu),
}

pub fn retry_or_drop(mut mpdu: Mpdu, retry_limit: u8) -> RetryOutcome {
    if mpdu.retries < retry_limit {
        mpdu.retries += 1;
        RetryOutcome::Requeue(mpdu)
    } else {
        RetryOutcome::Drop(mpdu)
    }
}

/// Splits a Block Ack outcome into delivered MPDUs and retry outcomes.
/// Delivered plus re-enqueued plus dropped always equals the A-MPDU size.
pub fn resolve_block_ack(mpdus: Vec<Mpdu>, bitmap: Option<&[bool]>, retry_limit: u8) -> (Vec<Mpdu>, Vec<RetryOutcome>) {
    let mut delivered = Vec::new();
    let mut failed = Vec::new();
    for (i, m) in mpdus.into_iter().enumerate() {
        if bitmap.is_some_and(|b| b[i]) {
            delivered.push(m);
        } else {
            failed.push(retry_or_drop(m, retry_limit));
        }
    }
    (delivered, failed)
}

/// Busy time sensed on one link during fixed-length update periods.
///
/// Intervals are merged on insertion so overlapping transmissions
/// (collisions) are not double counted; parts past the current period end
/// carry over to the next one.
#[derive(Debug, Clone)]
pub struct BusyTimeAccumulator {
    period_start: SimTime,
    period: SimTime,
    intervals: Vec<(SimTime, SimTime)>,
}

impl BusyTimeAccumulator {
    pub fn new(period_start: SimTime, period: SimTime) -> Self {
        assert!(period > SimTime::ZERO);
        Self {
            period_start,
            period,
            intervals: Vec::new(),
        }
    }

    pub fn period_start(&self) -> SimTime {
        self.period_start
    }

    pub fn period_end(&self) -> SimTime {
        self.period_start + self.period
    }

    /// Records a transmission occupying `[start, end)`.
    pub fn record(&mut self, start: SimTime, end: SimTime) {
        let start = start.max(self.period_start);
        if end <= start {
            return;
        }
        // Intervals are disjoint and sorted, so both ends are monotone.
        let first = self.intervals.partition_point(|&(_, b)| b < start);
        let last = self.intervals.partition_point(|&(a, _)| a <= end);
        let (mut s, mut e) = (start, end);
        if first < last {
            s = s.min(self.intervals[first].0);
            e = e.max(self.intervals[last - 1].1);
        }
        self.intervals.splice(first..last, std::iter::once((s, e)));
    }

    /// Busy time accumulated so far inside the current period.
    pub fn current_busy(&self) -> SimTime {
        let end = self.period_end();
        SimTime(
            self.intervals
                .iter()
                .map(|&(a, b)| b.min(end).as_micros().saturating_sub(a.as_micros()))
                .sum(),
        )
    }

    /// Closes the current period, returning its busy time, and opens the next.
    pub fn roll(&mut self) -> SimTime {
        let busy = self.current_busy();
        let end = self.period_end();
        self.intervals.retain_mut(|iv| {
            if iv.1 <= end {
                false
            } else {
                iv.0 = iv.0.max(end);
                true
            }
        });
        self.period_start = end;
        busy
    }
}
