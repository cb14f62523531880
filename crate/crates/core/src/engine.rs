//! Deterministic discrete-event kernel.
//!
//! Time is an integer count of microseconds. Events with equal fire times
//! are dispatched in insertion order. Random draws come from label-addressed
//! substreams so that, for instance, traffic sizes do not depend on how MAC
//! events happen to interleave.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Simulation time in microseconds since start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Converts fractional seconds, rounding to the nearest microsecond.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s >= 0.0 && s.is_finite(), "negative or non-finite time {s}");
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("SimTime subtraction underflow"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    ScheduleInPast { fire_at: SimTime, now: SimTime },
}

/// Opaque handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P> {
    fire_at: SimTime,
    sequence: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed so BinaryHeap pops the smallest (fire_at, sequence).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.sequence).cmp(&(self.fire_at, self.sequence))
    }
}

/// Priority event queue plus the simulation clock.
pub struct EventQueue<P> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Entry<P>>,
    // One bit per sequence number: set once the event fired or was cancelled.
    retired: Vec<u64>,
    live: usize,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            retired: Vec::new(),
            live: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of scheduled, not yet fired or cancelled events.
    pub fn pending(&self) -> usize {
        self.live
    }

    fn is_retired(&self, seq: u64) -> bool {
        let (word, bit) = ((seq / 64) as usize, seq % 64);
        self.retired.get(word).is_some_and(|w| w & (1 << bit) != 0)
    }

    fn retire(&mut self, seq: u64) {
        let (word, bit) = ((seq / 64) as usize, seq % 64);
        if word >= self.retired.len() {
            self.retired.resize(word + 1, 0);
        }
        self.retired[word] |= 1 << bit;
    }

    pub fn try_schedule(&mut self, fire_at: SimTime, payload: P) -> Result<EventHandle, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::ScheduleInPast { fire_at, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Entry {
            fire_at,
            sequence,
            payload,
        });
        self.live += 1;
        Ok(EventHandle(sequence))
    }

    /// Schedules `payload` at `fire_at`.
    ///
    /// Panics if `fire_at` lies before the current clock: that can only be
    /// produced by a state-machine bug.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> EventHandle {
        match self.try_schedule(fire_at, payload) {
            Ok(h) => h,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: P) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
    }

    /// Returns true if the event was pending and is now inert.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_sequence || self.is_retired(handle.0) {
            return false;
        }
        self.retire(handle.0);
        self.live -= 1;
        true
    }

    fn discard_retired_head(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.is_retired(top.sequence) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Fire time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.discard_retired_head();
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Payload of the next live event, if any.
    pub fn peek(&mut self) -> Option<(SimTime, &P)> {
        self.discard_retired_head();
        self.heap.peek().map(|e| (e.fire_at, &e.payload))
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<(SimTime, P)> {
        self.discard_retired_head();
        if self.heap.peek().is_some_and(|e| e.fire_at <= end) {
            let e = self.heap.pop().expect("peeked entry");
            self.retire(e.sequence);
            self.live -= 1;
            debug_assert!(e.fire_at >= self.now);
            self.now = e.fire_at;
            Some((e.fire_at, e.payload))
        } else {
            None
        }
    }

    /// Advances the clock to `end` without dispatching. Only valid when no
    /// live event remains at or before `end`.
    pub fn advance_to(&mut self, end: SimTime) {
        debug_assert!(self.peek_time().is_none_or(|t| t > end));
        if end > self.now {
            self.now = end;
        }
    }

    /// Dispatches every event with `fire_at <= end` in order, then sets the
    /// clock to `end`. Returns the number of dispatched events.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut EventQueue<P>, P),
    {
        let mut dispatched = 0;
        while let Some((_, payload)) = self.pop_until(end) {
            handler(self, payload);
            dispatched += 1;
        }
        self.advance_to(end);
        dispatched
    }
}

/// FNV-1a over the label, folded with the global seed through splitmix64.
fn substream_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A labeled, reproducible random substream.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, &label));
        Self { label, rng }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, upper]` inclusive.
    pub fn uniform_inclusive(&mut self, upper: u32) -> u32 {
        self.rng.random_range(0..=upper)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform() < p
        }
    }
}

/// Convenience constructor matching the kernel's substream contract.
pub fn rng_stream(seed: u64, label: &str) -> RngStream {
    RngStream::new(seed, label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_now_dispatches_next() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::ZERO, 'a');
        assert_eq!(q.pop_until(SimTime::ZERO), Some((SimTime::ZERO, 'a')));
    }

    #[test]
    fn equal_times_dispatch_in_insertion_order() {
        let mut q = EventQueue::new();
        for c in ['x', 'y', 'z'] {
            q.schedule(SimTime(10), c);
        }
        let mut seen = Vec::new();
        q.run_until(SimTime(10), |_, c| seen.push(c));
        assert_eq!(seen, vec!['x', 'y', 'z']);
    }

    #[test]
    fn clock_reads_fire_time_inside_handler() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), ());
        let mut t = SimTime::ZERO;
        q.run_until(SimTime(100), |q, _| t = q.now());
        assert_eq!(t, SimTime(5));
        assert_eq!(q.now(), SimTime(100));
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let end = SimTime::from_secs_f64(50.0);
        assert_eq!(q.run_until(end, |_, _| {}), 0);
        assert_eq!(q.now(), end);
    }

    #[test]
    fn event_beyond_horizon_is_retained() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs_f64(60.0), ());
        assert_eq!(q.run_until(SimTime::from_secs_f64(50.0), |_, _| {}), 0);
        assert_eq!(q.pending(), 1);
        assert_eq!(q.peek_time(), Some(SimTime::from_secs_f64(60.0)));
    }

    #[test]
    fn self_rescheduling_tick_count() {
        let period = SimTime::from_millis(4);
        let end = SimTime::from_secs_f64(50.0);
        // Ticks at 4 ms, 8 ms, ..., 50 s inclusive.
        let expected = end.as_micros() / period.as_micros();
        let mut q = EventQueue::new();
        q.schedule(period, ());
        let n = q.run_until(end, |q, ()| {
            q.schedule_in(period, ());
        });
        assert_eq!(n, expected);
        assert_eq!(n, 12_500);
    }

    #[test]
    fn cancel_semantics() {
        let mut q = EventQueue::new();
        let a = q.schedule(SimTime(1), 'a');
        let b = q.schedule(SimTime(2), 'b');
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        let mut seen = Vec::new();
        q.run_until(SimTime(10), |_, c| seen.push(c));
        assert_eq!(seen, vec!['b']);
        assert!(!q.cancel(b));
    }

    #[test]
    fn scheduling_in_past_is_rejected() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(10), ());
        q.run_until(SimTime(10), |_, _| {});
        assert_eq!(
            q.try_schedule(SimTime(9), ()),
            Err(EngineError::ScheduleInPast {
                fire_at: SimTime(9),
                now: SimTime(10)
            })
        );
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn schedule_in_past_panics() {
        let mut q = EventQueue::new();
        q.run_until(SimTime(10), |_, _| {});
        q.schedule(SimTime(3), ());
    }

    #[test]
    fn rng_streams_are_label_and_seed_addressed() {
        let draw = |seed, label: &str| {
            let mut r = rng_stream(seed, label);
            (0..100).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, "a"), draw(7, "a"));
        assert_ne!(draw(7, "a"), draw(7, "b"));
        assert_ne!(draw(7, "a"), draw(8, "a"));
    }

    #[test]
    fn rng_first_draw_is_frozen() {
        // Guards against silent changes of the substream derivation.
        let mut r = rng_stream(1, "traffic.sta1.dl_video.size");
        let first = r.next_u64();
        let mut again = rng_stream(1, "traffic.sta1.dl_video.size");
        assert_eq!(first, again.next_u64());
        assert_eq!(substream_seed(0, ""), splitmix64(splitmix64(0xcbf2_9ce4_8422_2325)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispatch_order_is_lexicographic(times in proptest::collection::vec(0u64..50, 1..200),
                                               cancel_mask in proptest::collection::vec(any::<bool>(), 200)) {
                let mut q = EventQueue::new();
                let mut handles = Vec::new();
                for (i, t) in times.iter().enumerate() {
                    handles.push((q.schedule(SimTime(*t), (*t, i)), i));
                }
                let mut cancelled = std::collections::HashSet::new();
                for (h, i) in &handles {
                    if cancel_mask[*i] {
                        prop_assert!(q.cancel(*h));
                        cancelled.insert(*i);
                    }
                }
                let mut out = Vec::new();
                q.run_until(SimTime(100), |_, p| out.push(p));
                prop_assert_eq!(out.len(), times.len() - cancelled.len());
                for w in out.windows(2) {
                    prop_assert!(w[0] < w[1]);
                }
                for (_, i) in &out {
                    prop_assert!(!cancelled.contains(i));
                }
            }
        }
    }
}
