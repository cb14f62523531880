//! Upper MAC of a multi-link device: the shared MPDU buffer, the
//! traffic-to-link allocation policies and the busy-time estimator.
//!
//! Simultaneous-access policies (uniform, congestion-aware,
//! condition-aware) pre-assign MPDUs to every link and re-run over the
//! whole buffer each time any link resolves a transmission. Greedy hands
//! the aggregation-limited head of the buffer to whichever link wins the
//! medium first.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::mac::{aggregate_len, MacConfig};
use crate::phy::PhyConfig;
use crate::traffic::Mpdu;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "sl")]
    SingleLink,
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "congestion")]
    CongestionAware,
    #[serde(rename = "condition")]
    ConditionAware,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::SingleLink,
        PolicyKind::Greedy,
        PolicyKind::Uniform,
        PolicyKind::CongestionAware,
        PolicyKind::ConditionAware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::SingleLink => "sl",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Uniform => "uniform",
            PolicyKind::CongestionAware => "congestion",
            PolicyKind::ConditionAware => "condition",
        }
    }

    /// Simultaneous-access policies pre-allocate MPDUs to all links.
    pub fn is_simultaneous_access(self) -> bool {
        matches!(
            self,
            PolicyKind::Uniform | PolicyKind::CongestionAware | PolicyKind::ConditionAware
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected sl, greedy, uniform, congestion or condition)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MldConfig {
    pub update_period_s: f64,
    pub ma_window: usize,
}

impl Default for MldConfig {
    fn default() -> Self {
        Self {
            update_period_s: 0.5,
            ma_window: 10,
        }
    }
}

impl MldConfig {
    pub fn update_period(&self) -> SimTime {
        SimTime::from_secs_f64(self.update_period_s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.update_period_s > 0.0 && self.update_period_s.is_finite()) {
            return Err("mld.update_period_s must be > 0".into());
        }
        if self.ma_window == 0 {
            return Err("mld.ma_window must be >= 1".into());
        }
        Ok(())
    }
}

/// Moving average of per-period busy time on one link.
#[derive(Debug, Clone)]
pub struct CongestionEstimate {
    window: VecDeque<u64>,
    capacity: usize,
    update_period: SimTime,
}

impl CongestionEstimate {
    pub fn new(update_period: SimTime, capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            update_period,
        }
    }

    pub fn update(&mut self, period_busy: SimTime) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window
            .push_back(period_busy.as_micros().min(self.update_period.as_micros()));
    }

    pub fn samples(&self) -> usize {
        self.window.len()
    }

    /// Mean busy microseconds per update period; zero before any sample.
    pub fn link_busy_time(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().sum::<u64>() as f64 / self.window.len() as f64
        }
    }

    /// Update period minus estimated busy time, in microseconds.
    pub fn link_free_time(&self) -> f64 {
        (self.update_period.as_micros() as f64 - self.link_busy_time()).max(0.0)
    }
}

/// Per-link MPDU counts for sequential prefix slices of `n` MPDUs: each
/// link in index order receives `min(ceil(n / i), remaining)`.
pub fn uniform_split(n: usize, links: usize) -> Vec<usize> {
    assert!(links >= 1);
    let share = n.div_ceil(links);
    let mut remaining = n;
    (0..links)
        .map(|_| {
            let take = share.min(remaining);
            remaining -= take;
            take
        })
        .collect()
}

/// Largest-remainder apportionment of `n` items proportional to `weights`.
/// Ties in the fractional part go to the lower link index. Falls back to
/// [`uniform_split`] when every weight is zero.
pub fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    assert!(!weights.is_empty());
    let clean: Vec<f64> = weights
        .iter()
        .map(|w| if w.is_finite() && *w > 0.0 { *w } else { 0.0 })
        .collect();
    let total: f64 = clean.iter().sum();
    if !(total > 0.0) {
        return uniform_split(n, weights.len());
    }
    let quotas: Vec<f64> = clean.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).min(n)).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&j| clean[j] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    // Floors never exceed their quotas, so at most `len` units remain.
    debug_assert!(assigned <= n);
    for j in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[*j] += 1;
    }
    counts
}

/// Packet ratio = link free time / total free time.
pub fn congestion_weights(estimates: &[CongestionEstimate]) -> Vec<f64> {
    estimates.iter().map(|e| e.link_free_time()).collect()
}

/// Information bits per period = link free time x data rate.
pub fn condition_weights(estimates: &[CongestionEstimate], rates_mbps: &[f64]) -> Vec<f64> {
    estimates
        .iter()
        .zip(rates_mbps)
        .map(|(e, r)| e.link_free_time() * r)
        .collect()
}

/// A policy decision: how many MPDUs each link was assigned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Allocation {
    pub counts: Vec<usize>,
}

impl Allocation {
    pub fn counts(&self) -> Vec<usize> {
        self.counts.clone()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// The upper-MAC buffer shared by a device's links.
///
/// All buffered MPDUs sit in one queue in admission order. Link `j`'s
/// allocation is the `alloc[j]` MPDUs following those of links `0..j`;
/// whatever follows the last allocation is pending. Policies only ever
/// assign contiguous slices in link order, so recalling every allocation
/// is just clearing the counts.
#[derive(Debug, Clone)]
pub struct MldBuffer {
    queue: VecDeque<Mpdu>,
    alloc: Vec<usize>,
    next_seq: u64,
}

impl MldBuffer {
    pub fn new(links: usize) -> Self {
        Self {
            queue: VecDeque::new(),
            alloc: vec![0; links],
            next_seq: 0,
        }
    }

    pub fn links(&self) -> usize {
        self.alloc.len()
    }

    /// True when nothing is pending or allocated (in-flight MPDUs are
    /// tracked by the link MACs).
    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    fn allocated_total(&self) -> usize {
        self.alloc.iter().sum()
    }

    fn offset(&self, link: usize) -> usize {
        self.alloc[..link].iter().sum()
    }

    pub fn pending_len(&self) -> usize {
        self.queue.len() - self.allocated_total()
    }

    pub fn pending(&self) -> impl Iterator<Item = &Mpdu> {
        self.queue.range(self.allocated_total()..)
    }

    pub fn allocated_len(&self, link: usize) -> usize {
        self.alloc[link]
    }

    pub fn allocated(&self, link: usize) -> impl Iterator<Item = &Mpdu> {
        let off = self.offset(link);
        self.queue.range(off..off + self.alloc[link])
    }

    /// Oldest buffered MPDU, allocated or not.
    pub fn front(&self) -> Option<&Mpdu> {
        self.queue.front()
    }

    pub fn push_mpdus(&mut self, mpdus: impl IntoIterator<Item = Mpdu>) {
        for mut m in mpdus {
            m.seq = self.next_seq;
            self.next_seq += 1;
            self.queue.push_back(m);
        }
    }

    /// Returns failed MPDUs to the pending set at their original position.
    /// Allocations are recalled if a returning MPDU would land inside them.
    pub fn requeue(&mut self, mpdus: impl IntoIterator<Item = Mpdu>) {
        for m in mpdus {
            let pos = self.queue.partition_point(|x| x.seq < m.seq);
            debug_assert!(self.queue.get(pos).is_none_or(|x| x.seq != m.seq), "duplicate MPDU");
            if pos < self.allocated_total() {
                self.recall_all();
            }
            self.queue.insert(pos, m);
        }
    }

    /// Moves every allocated, untransmitted MPDU back to pending.
    pub fn recall_all(&mut self) {
        self.alloc.iter_mut().for_each(|c| *c = 0);
    }

    /// Removes the first `n` MPDUs of a link's allocation for transmission.
    pub fn take_allocated(&mut self, link: usize, n: usize) -> Vec<Mpdu> {
        assert!(
            n <= self.alloc[link],
            "link {link} holds only {} MPDUs",
            self.alloc[link]
        );
        let off = self.offset(link);
        self.alloc[link] -= n;
        self.queue.drain(off..off + n).collect()
    }

    /// Splits the whole pending set into contiguous per-link slices.
    fn apportion(&mut self, counts: Vec<usize>) -> Allocation {
        debug_assert_eq!(self.allocated_total(), 0, "apportion over live allocations");
        debug_assert_eq!(counts.iter().sum::<usize>(), self.queue.len());
        self.alloc.clone_from(&counts);
        Allocation { counts }
    }

    /// Aggregation-limited prefix of pending for the link that won access.
    pub fn allocate_greedy(&mut self, winner: usize, rate_mbps: f64, phy: &PhyConfig, mac: &MacConfig) -> Allocation {
        assert_eq!(self.allocated_total(), 0, "greedy allocations are consumed at once");
        let n = aggregate_len(self.queue.iter(), rate_mbps, phy, mac);
        self.alloc[winner] = n;
        let mut counts = vec![0; self.links()];
        counts[winner] = n;
        Allocation { counts }
    }

    pub fn allocate_uniform(&mut self) -> Allocation {
        let counts = uniform_split(self.queue.len(), self.links());
        self.apportion(counts)
    }

    pub fn allocate_weighted(&mut self, weights: &[f64]) -> Allocation {
        assert_eq!(weights.len(), self.links());
        let counts = largest_remainder(weights, self.queue.len());
        self.apportion(counts)
    }

    pub fn allocate_congestion_aware(&mut self, estimates: &[CongestionEstimate]) -> Allocation {
        self.allocate_weighted(&congestion_weights(estimates))
    }

    pub fn allocate_condition_aware(&mut self, estimates: &[CongestionEstimate], rates_mbps: &[f64]) -> Allocation {
        self.allocate_weighted(&condition_weights(estimates, rates_mbps))
    }
}

/// Upper-MAC state of one device.
#[derive(Debug, Clone)]
pub struct Mld {
    pub policy: PolicyKind,
    pub buffer: MldBuffer,
    pub estimates: Vec<CongestionEstimate>,
    /// Policy re-runs triggered by a Block Ack or timeout with data pending.
    pub restarts: u64,
    /// Policy runs triggered by the buffer turning non-empty.
    pub initial_allocations: u64,
}

impl Mld {
    pub fn new(policy: PolicyKind, links: usize, cfg: &MldConfig) -> Self {
        Self {
            policy,
            buffer: MldBuffer::new(links),
            estimates: (0..links)
                .map(|_| CongestionEstimate::new(cfg.update_period(), cfg.ma_window))
                .collect(),
            restarts: 0,
            initial_allocations: 0,
        }
    }

    /// Recalls all untransmitted allocations and re-apportions the whole
    /// pending set with a simultaneous-access policy. `rates_mbps` is only
    /// read by the condition-aware policy.
    pub fn run_simultaneous_policy(&mut self, rates_mbps: &[f64]) -> Allocation {
        self.buffer.recall_all();
        match self.policy {
            PolicyKind::Uniform => self.buffer.allocate_uniform(),
            PolicyKind::CongestionAware => self.buffer.allocate_congestion_aware(&self.estimates),
            PolicyKind::ConditionAware => self.buffer.allocate_condition_aware(&self.estimates, rates_mbps),
            other => panic!("{other} is not a simultaneous-access policy"),
        }
    }

    /// Handles a resolved transmission on one link: failed MPDUs return to
    /// the buffer and, for simultaneous-access policies with data left, the
    /// policy restarts over the whole buffer.
    pub fn on_block_ack(&mut self, failed: impl IntoIterator<Item = Mpdu>, rates_mbps: &[f64]) -> Option<Allocation> {
        self.buffer.requeue(failed);
        if self.policy.is_simultaneous_access() && !self.buffer.is_empty() {
            self.restarts += 1;
            Some(self.run_simultaneous_policy(rates_mbps))
        } else {
            None
        }
    }

    /// Admits a new frame's MPDUs. Simultaneous-access policies allocate
    /// when the buffer turns non-empty; otherwise the MPDUs wait for the
    /// next restart.
    pub fn on_arrival(&mut self, mpdus: Vec<Mpdu>, rates_mbps: &[f64]) -> Option<Allocation> {
        let was_empty = self.buffer.is_empty();
        self.buffer.push_mpdus(mpdus);
        if self.policy.is_simultaneous_access() && was_empty {
            self.initial_allocations += 1;
            Some(self.run_simultaneous_policy(rates_mbps))
        } else {
            None
        }
    }
}
