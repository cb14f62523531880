//! The simulated cell: one AP and its stations, every device an MLD with one
//! lower MAC per link, all devices sharing one medium per link.

use crate::config::ScenarioConfig;
use crate::engine::{rng_stream, EventHandle, EventQueue, RngStream, SimTime};
use crate::mac::{
    aggregate_len, on_ampdu_received, resolve_block_ack, Ampdu, BlockAck, BusyTimeAccumulator, ContentionState,
    MacConfig, MacState, RetryOutcome,
};
use crate::mld::{Mld, PolicyKind};
use crate::phy::{LinkSpec, PhyConfig, RateSelector};
use crate::scenario::Deployment;
use crate::stats::{Delay, DelayRecord};
use crate::traffic::{
    fragment, frame_arrival, sample_frame_size, sample_jitter_us, AppFrame, FrameId, Mpdu, StreamConfig, StreamKind, AP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrival { frame: u32 },
    Access { channel: usize },
    Resolve { device: u16, link: usize },
    MediumIdle { channel: usize },
    CongestionTick,
}

/// Observable MAC activity, recorded when tracing is enabled.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Arrival {
        time: SimTime,
        frame: FrameId,
        station: u16,
        stream: StreamKind,
        size: u32,
    },
    Contend {
        time: SimTime,
        device: u16,
        link: usize,
        backoff: u32,
        cw: u32,
    },
    Tx {
        start: SimTime,
        device: u16,
        link: usize,
        dst: u16,
        mpdus: usize,
        bytes: u64,
        mcs: usize,
        rate_mbps: f64,
        duration: SimTime,
        collided: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceStats {
    pub device: u16,
    /// Policy re-runs after a Block Ack or timeout.
    pub restarts: u64,
    pub initial_allocations: u64,
    /// Channel accesses won, per link.
    pub accesses: Vec<u64>,
    pub dropped_mpdus: u64,
    /// MPDUs still buffered or in flight when the run ended.
    pub backlog: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<DelayRecord>,
    pub devices: Vec<DeviceStats>,
    pub trace: Vec<TraceEvent>,
    pub events: u64,
}

struct InFlight {
    ampdu: Ampdu,
    end: SimTime,
    block_ack: Option<BlockAck>,
}

struct LinkMac {
    cs: ContentionState,
    contending: bool,
    in_flight: Option<InFlight>,
    /// Indexed by peer device id.
    selectors: Vec<Option<RateSelector>>,
    backoff_rng: RngStream,
    error_rng: RngStream,
    rate_rng: RngStream,
    accesses: u64,
    /// Only used when own transmissions are excluded from busy time.
    busy: Option<BusyTimeAccumulator>,
}

struct Device {
    mld: Mld,
    links: Vec<LinkMac>,
    dropped: u64,
}

struct Channel {
    busy_until: SimTime,
    jammed: bool,
    next_access: Option<(SimTime, EventHandle)>,
    busy: BusyTimeAccumulator,
}

struct FrameState {
    frame: AppFrame,
    remaining: u32,
    lost: bool,
    done: Option<SimTime>,
    /// Periodic stream this frame belongs to, if any.
    source: Option<usize>,
}

struct StreamState {
    cfg: StreamConfig,
    station: u16,
    origin: SimTime,
    next_index: u64,
    size_rng: RngStream,
    jitter_rng: RngStream,
}

pub struct Network {
    policy: PolicyKind,
    links: Vec<LinkSpec>,
    phy: PhyConfig,
    mac: MacConfig,
    update_period: SimTime,
    traffic_end: SimTime,
    end: SimTime,
    seed: u64,
    queue: EventQueue<Event>,
    devices: Vec<Device>,
    channels: Vec<Channel>,
    /// SNR per station per link; index 0 (the AP) is unused.
    snr: Vec<Vec<f64>>,
    frames: Vec<FrameState>,
    streams: Vec<StreamState>,
    trace: Option<Vec<TraceEvent>>,
}

impl Network {
    /// Wires a validated configuration and a deployment into a runnable cell.
    pub fn new(cfg: &ScenarioConfig, deployment: &Deployment, seed: u64) -> Self {
        let n_dev = usize::from(cfg.n_sta) + 1;
        let update_period = cfg.mld.update_period();
        let snr = std::iter::once(Vec::new())
            .chain(deployment.sta_positions.iter().map(|&(x, y)| {
                let d = x.hypot(y).max(0.1);
                cfg.links.iter().map(|l| cfg.phy.snr(l, d)).collect()
            }))
            .collect();
        let devices = (0..n_dev as u16)
            .map(|d| Device {
                mld: Mld::new(cfg.policy, cfg.links.len(), &cfg.mld),
                links: cfg
                    .links
                    .iter()
                    .enumerate()
                    .map(|(j, spec)| LinkMac {
                        cs: ContentionState::new(&cfg.mac),
                        contending: false,
                        in_flight: None,
                        selectors: (0..n_dev as u16)
                            .map(|peer| {
                                let is_peer = if d == AP { peer != AP } else { peer == AP };
                                is_peer.then(|| RateSelector::from_config(&cfg.phy, spec.bandwidth_mhz))
                            })
                            .collect(),
                        backoff_rng: rng_stream(seed, &format!("mac.dev{d}.link{j}.backoff")),
                        error_rng: rng_stream(seed, &format!("phy.dev{d}.link{j}.error")),
                        rate_rng: rng_stream(seed, &format!("phy.dev{d}.link{j}.ratesel")),
                        accesses: 0,
                        busy: (!cfg.mac.count_own_tx).then(|| BusyTimeAccumulator::new(SimTime::ZERO, update_period)),
                    })
                    .collect(),
                dropped: 0,
            })
            .collect();
        let channels = cfg
            .links
            .iter()
            .map(|_| Channel {
                busy_until: SimTime::ZERO,
                jammed: false,
                next_access: None,
                busy: BusyTimeAccumulator::new(SimTime::ZERO, update_period),
            })
            .collect();
        let traffic_end = SimTime::from_secs_f64(cfg.sim_duration_s);
        let mut net = Network {
            policy: cfg.policy,
            links: cfg.links.clone(),
            phy: cfg.phy.clone(),
            mac: cfg.mac.clone(),
            update_period,
            traffic_end,
            end: traffic_end + SimTime::from_secs_f64(cfg.drain_s),
            seed,
            queue: EventQueue::new(),
            devices,
            channels,
            snr,
            frames: Vec::new(),
            streams: Vec::new(),
            trace: None,
        };
        for (i, &act) in deployment.activation_times.iter().enumerate() {
            let station = i as u16 + 1;
            for kind in StreamKind::ALL {
                let sc = cfg.traffic.get(kind);
                if !sc.enabled {
                    continue;
                }
                net.streams.push(StreamState {
                    cfg: sc.clone(),
                    station,
                    origin: act,
                    next_index: 0,
                    size_rng: rng_stream(seed, &format!("traffic.sta{station}.{kind}.size")),
                    jitter_rng: rng_stream(seed, &format!("traffic.sta{station}.{kind}.jitter")),
                });
                net.schedule_next_frame(net.streams.len() - 1);
            }
        }
        net.queue.schedule(update_period, Event::CongestionTick);
        net
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    /// Holds a link's medium busy from now on; nobody gains access to it.
    pub fn jam_channel(&mut self, channel: usize) {
        let now = self.now();
        let ch = &mut self.channels[channel];
        ch.jammed = true;
        ch.busy.record(now, SimTime::MAX);
        if let Some((_, h)) = ch.next_access.take() {
            self.queue.cancel(h);
        }
        for dev in &mut self.devices {
            let l = &mut dev.links[channel];
            if let Some(b) = l.busy.as_mut() {
                b.record(now, SimTime::MAX);
            }
            if l.contending {
                l.cs.freeze(now, &self.mac);
            }
        }
    }

    /// Adds a one-off frame outside the periodic streams.
    pub fn inject_frame(&mut self, station: u16, stream: StreamKind, size: u32, at: SimTime) -> FrameId {
        assert!(
            station >= 1 && usize::from(station) < self.devices.len(),
            "unknown station {station}"
        );
        let index = self
            .frames
            .iter()
            .filter(|f| f.frame.station == station && f.frame.stream == stream)
            .count();
        self.push_frame(stream, station, index as u64, at, at, size, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_frame(
        &mut self,
        stream: StreamKind,
        station: u16,
        frame_index: u64,
        gen_time: SimTime,
        arrival_time: SimTime,
        size: u32,
        source: Option<usize>,
    ) -> FrameId {
        let id = FrameId(u32::try_from(self.frames.len()).expect("frame id overflow"));
        let frame = AppFrame {
            id,
            stream,
            station,
            frame_index,
            gen_time,
            arrival_time,
            size,
        };
        self.frames.push(FrameState {
            remaining: size.div_ceil(crate::traffic::MPDU_PAYLOAD),
            frame,
            lost: false,
            done: None,
            source,
        });
        self.queue.schedule(arrival_time, Event::Arrival { frame: id.0 });
        id
    }

    fn schedule_next_frame(&mut self, s: usize) {
        let st = &mut self.streams[s];
        let k = st.next_index;
        let jitter = sample_jitter_us(&st.cfg, &mut st.jitter_rng);
        let (gen, arrival) = frame_arrival(&st.cfg, st.origin, k, jitter);
        if gen >= self.traffic_end {
            return;
        }
        let size = sample_frame_size(&st.cfg, &mut st.size_rng);
        st.next_index += 1;
        let (kind, station) = (st.cfg.kind, st.station);
        let arrival = arrival.max(self.queue.now());
        self.push_frame(kind, station, k, gen, arrival, size, Some(s));
    }

    /// Runs to the configured end (traffic duration plus drain).
    pub fn run(self) -> SimOutput {
        let end = self.end;
        self.run_until(end)
    }

    pub fn run_until(mut self, end: SimTime) -> SimOutput {
        let mut events = 0;
        while let Some((_, ev)) = self.queue.pop_until(end) {
            events += 1;
            self.dispatch(ev);
        }
        self.queue.advance_to(end);
        self.finish(events)
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Arrival { frame } => self.on_arrival(frame as usize),
            Event::Access { channel } => self.on_access_tick(channel),
            Event::Resolve { device, link } => self.on_resolve(usize::from(device), link),
            Event::MediumIdle { channel } => self.on_medium_idle(channel),
            Event::CongestionTick => self.on_congestion_tick(),
        }
    }

    fn trace(&mut self, ev: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(ev);
        }
    }

    fn on_arrival(&mut self, idx: usize) {
        let fs = &self.frames[idx];
        let frame = fs.frame.clone();
        let source = fs.source;
        if self.trace.is_some() {
            self.trace(TraceEvent::Arrival {
                time: self.now(),
                frame: frame.id,
                station: frame.station,
                stream: frame.stream,
                size: frame.size,
            });
        }
        let dev = usize::from(frame.src());
        let mpdus = fragment(&frame);
        let rates = if self.devices[dev].mld.buffer.is_empty() {
            self.condition_rates(dev, Some(frame.dst()))
        } else {
            Vec::new()
        };
        self.devices[dev].mld.on_arrival(mpdus, &rates);
        self.kick(dev);
        if let Some(s) = source {
            self.schedule_next_frame(s);
        }
    }

    /// Data rates each link would use for the next transmission to `dst`,
    /// without touching the selectors' state. Only needed by the
    /// condition-aware policy.
    fn condition_rates(&self, dev: usize, dst: Option<u16>) -> Vec<f64> {
        if self.policy != PolicyKind::ConditionAware {
            return Vec::new();
        }
        let Some(dst) = dst else {
            return vec![0.0; self.links.len()];
        };
        self.devices[dev]
            .links
            .iter()
            .map(|l| {
                let sel = l.selectors[usize::from(dst)].as_ref().expect("peer selector");
                sel.rate(sel.peek())
            })
            .collect()
    }

    fn wants_access(&self, dev: usize, link: usize) -> bool {
        let buf = &self.devices[dev].mld.buffer;
        if self.policy.is_simultaneous_access() {
            buf.allocated_len(link) > 0
        } else {
            buf.pending_len() > 0
        }
    }

    /// Starts contention on every idle link that has something to send and,
    /// for pre-allocating policies, withdraws links whose allocation vanished.
    fn kick(&mut self, dev: usize) {
        for j in 0..self.links.len() {
            let wants = self.wants_access(dev, j);
            let l = &self.devices[dev].links[j];
            if l.in_flight.is_some() {
                continue;
            }
            if wants && !l.contending {
                self.begin_contention(dev, j);
            } else if !wants && l.contending && self.policy.is_simultaneous_access() {
                self.withdraw(dev, j);
            }
        }
    }

    fn medium_idle(&self, channel: usize) -> bool {
        let ch = &self.channels[channel];
        !ch.jammed && self.now() >= ch.busy_until
    }

    fn begin_contention(&mut self, dev: usize, j: usize) {
        let now = self.now();
        let idle = self.medium_idle(j);
        let l = &mut self.devices[dev].links[j];
        l.contending = true;
        let backoff = l.cs.draw_backoff(&mut l.backoff_rng);
        let cw = l.cs.cw;
        if idle {
            l.cs.resume(now);
        } else {
            l.cs.ready_from = None;
            l.cs.state = MacState::Sensing;
        }
        self.trace(TraceEvent::Contend {
            time: now,
            device: dev as u16,
            link: j,
            backoff,
            cw,
        });
        self.reschedule_access(j);
    }

    fn withdraw(&mut self, dev: usize, j: usize) {
        let l = &mut self.devices[dev].links[j];
        l.contending = false;
        l.cs.ready_from = None;
        l.cs.state = MacState::Idle;
        self.reschedule_access(j);
    }

    /// Keeps exactly one access event per channel, at the earliest time any
    /// contender's countdown completes.
    fn reschedule_access(&mut self, j: usize) {
        let next = if self.medium_idle(j) {
            self.devices
                .iter()
                .filter_map(|d| {
                    let l = &d.links[j];
                    if l.contending && l.in_flight.is_none() {
                        l.cs.access_time(&self.mac)
                    } else {
                        None
                    }
                })
                .min()
        } else {
            None
        };
        let current = self.channels[j].next_access.map(|(t, _)| t);
        if current == next {
            return;
        }
        if let Some((_, h)) = self.channels[j].next_access.take() {
            self.queue.cancel(h);
        }
        if let Some(t) = next {
            let t = t.max(self.now());
            let h = self.queue.schedule(t, Event::Access { channel: j });
            self.channels[j].next_access = Some((t, h));
        }
    }

    /// Serves every channel whose access fires now, lowest link index first.
    fn on_access_tick(&mut self, fired: usize) {
        let now = self.now();
        self.channels[fired].next_access = None;
        let mut due = vec![fired];
        for (j, ch) in self.channels.iter_mut().enumerate() {
            if j != fired && ch.next_access.is_some_and(|(t, _)| t == now) {
                let (_, h) = ch.next_access.take().expect("checked");
                self.queue.cancel(h);
                due.push(j);
            }
        }
        due.sort_unstable();
        for j in due {
            self.on_access(j);
        }
    }

    fn on_access(&mut self, j: usize) {
        let now = self.now();
        let slot = self.mac.slot();
        let mut group: Vec<(usize, SimTime)> = Vec::new();
        for (d, dev) in self.devices.iter().enumerate() {
            let l = &dev.links[j];
            if !l.contending || l.in_flight.is_some() {
                continue;
            }
            if let Some(t) = l.cs.access_time(&self.mac) {
                debug_assert!(t >= now, "missed access at {t} (now {now})");
                if t < now + slot {
                    group.push((d, t));
                }
            }
        }
        let mut txs: Vec<(usize, SimTime, Ampdu)> = Vec::new();
        for (d, t) in group {
            match self.build_ampdu(d, j) {
                Some(a) => txs.push((d, t, a)),
                None => {
                    let l = &mut self.devices[d].links[j];
                    l.contending = false;
                    l.cs.ready_from = None;
                    l.cs.state = MacState::Idle;
                }
            }
        }
        if txs.is_empty() {
            self.reschedule_access(j);
            return;
        }
        for dev in &mut self.devices {
            let l = &mut dev.links[j];
            if l.contending && l.cs.ready_from.is_some() {
                l.cs.freeze(now, &self.mac);
            }
        }
        let collided = txs.len() > 1;
        let mut busy_end = now;
        let (sifs, ba, timeout) = (self.mac.sifs(), self.mac.block_ack(), self.mac.ack_timeout());
        for (d, start, ampdu) in txs {
            let end = start + ampdu.duration;
            let sta = if d == usize::from(AP) { ampdu.dst } else { d as u16 };
            let snr = self.snr[usize::from(sta)][j];
            let mcs = self.phy.mcs_table.get(ampdu.mcs).clone();
            let l = &mut self.devices[d].links[j];
            let corrupted: Vec<bool> = if collided {
                vec![true; ampdu.mpdus.len()]
            } else {
                ampdu
                    .mpdus
                    .iter()
                    .map(|_| self.phy.mpdu_error(&mcs, snr, &mut l.error_rng))
                    .collect()
            };
            let block_ack = on_ampdu_received(&ampdu, &corrupted);
            l.contending = false;
            l.cs.ready_from = None;
            l.cs.state = MacState::Tx;
            l.accesses += 1;
            self.record_busy(j, start, end, d);
            let resolve_at = if block_ack.is_some() {
                let ba_start = end + sifs;
                self.record_busy(j, ba_start, ba_start + ba, usize::from(ampdu.dst));
                busy_end = busy_end.max(ba_start + ba);
                ba_start + ba
            } else {
                busy_end = busy_end.max(end);
                end + timeout
            };
            if self.trace.is_some() {
                self.trace(TraceEvent::Tx {
                    start,
                    device: d as u16,
                    link: j,
                    dst: ampdu.dst,
                    mpdus: ampdu.mpdus.len(),
                    bytes: ampdu.payload_bytes(),
                    mcs: ampdu.mcs,
                    rate_mbps: mcs.data_rate(self.links[j].bandwidth_mhz),
                    duration: ampdu.duration,
                    collided,
                });
            }
            self.devices[d].links[j].in_flight = Some(InFlight { ampdu, end, block_ack });
            self.queue.schedule(
                resolve_at,
                Event::Resolve {
                    device: d as u16,
                    link: j,
                },
            );
        }
        let ch = &mut self.channels[j];
        ch.busy_until = ch.busy_until.max(busy_end);
        let at = ch.busy_until;
        self.queue.schedule(at, Event::MediumIdle { channel: j });
    }

    /// Takes the MPDUs for a transmission that just won the medium.
    fn build_ampdu(&mut self, d: usize, j: usize) -> Option<Ampdu> {
        let bw = self.links[j].bandwidth_mhz;
        let dev = &mut self.devices[d];
        let sap = self.policy.is_simultaneous_access();
        let head = if sap {
            dev.mld.buffer.allocated(j).next()
        } else {
            dev.mld.buffer.pending().next()
        };
        let dst = head?.dst;
        let l = &mut dev.links[j];
        let sel = l.selectors[usize::from(dst)].as_mut().expect("peer selector");
        let mcs = sel.select(&mut l.rate_rng);
        let rate = self.phy.mcs_table.get(mcs).data_rate(bw);
        let n = if sap {
            aggregate_len(dev.mld.buffer.allocated(j), rate, &self.phy, &self.mac)
        } else {
            dev.mld.buffer.allocate_greedy(j, rate, &self.phy, &self.mac).total()
        };
        let mpdus = dev.mld.buffer.take_allocated(j, n);
        Some(Ampdu::from_mpdus(mpdus, d as u16, j, mcs, rate, &self.phy))
    }

    fn record_busy(&mut self, j: usize, start: SimTime, end: SimTime, owner: usize) {
        if self.mac.count_own_tx {
            self.channels[j].busy.record(start, end);
        } else {
            for (d, dev) in self.devices.iter_mut().enumerate() {
                if d != owner {
                    dev.links[j].busy.as_mut().expect("per-device busy").record(start, end);
                }
            }
        }
    }

    fn on_resolve(&mut self, d: usize, j: usize) {
        let retry_limit = self.mac.retry_limit;
        let l = &mut self.devices[d].links[j];
        let InFlight { ampdu, end, block_ack } = l.in_flight.take().expect("resolve without transmission");
        l.cs.state = MacState::Idle;
        let fraction = block_ack.as_ref().map_or(0.0, BlockAck::success_fraction);
        if block_ack.is_some() {
            l.cs.on_success();
        } else {
            l.cs.on_failure();
        }
        l.selectors[usize::from(ampdu.dst)]
            .as_mut()
            .expect("peer selector")
            .record(ampdu.mcs, fraction);
        let (delivered, failed) = resolve_block_ack(
            ampdu.mpdus,
            block_ack.as_ref().map(|b| b.bitmap.as_slice()),
            retry_limit,
        );
        for m in delivered {
            let f = &mut self.frames[m.frame.0 as usize];
            f.remaining -= 1;
            if f.remaining == 0 {
                f.done = Some(end);
            }
        }
        let mut requeue: Vec<Mpdu> = Vec::new();
        for outcome in failed {
            match outcome {
                RetryOutcome::Requeue(m) => requeue.push(m),
                RetryOutcome::Drop(m) => {
                    self.frames[m.frame.0 as usize].lost = true;
                    self.devices[d].dropped += 1;
                }
            }
        }
        let rates = if self.policy == PolicyKind::ConditionAware {
            let head = requeue
                .iter()
                .chain(self.devices[d].mld.buffer.front())
                .min_by_key(|m| m.seq)
                .map(|m| m.dst);
            self.condition_rates(d, head)
        } else {
            Vec::new()
        };
        self.devices[d].mld.on_block_ack(requeue, &rates);
        self.kick(d);
    }

    fn on_medium_idle(&mut self, j: usize) {
        let now = self.now();
        if self.channels[j].jammed || now < self.channels[j].busy_until {
            return;
        }
        for dev in &mut self.devices {
            let l = &mut dev.links[j];
            if l.contending && l.in_flight.is_none() && l.cs.ready_from.is_none() {
                l.cs.resume(now);
            }
        }
        self.reschedule_access(j);
    }

    fn on_congestion_tick(&mut self) {
        for j in 0..self.links.len() {
            if self.mac.count_own_tx {
                let busy = self.channels[j].busy.roll();
                for dev in &mut self.devices {
                    dev.mld.estimates[j].update(busy);
                }
            } else {
                for dev in &mut self.devices {
                    let busy = dev.links[j].busy.as_mut().expect("per-device busy").roll();
                    dev.mld.estimates[j].update(busy);
                }
            }
        }
        let next = self.now() + self.update_period;
        if next <= self.end {
            self.queue.schedule(next, Event::CongestionTick);
        }
    }

    fn finish(self, events: u64) -> SimOutput {
        let seed = self.seed;
        let mut records: Vec<DelayRecord> = self
            .frames
            .iter()
            .map(|f| DelayRecord {
                seed,
                station: f.frame.station,
                stream: f.frame.stream,
                frame_index: f.frame.frame_index,
                delay: match f.done {
                    Some(t) if !f.lost => Delay::Us((t - f.frame.arrival_time).as_micros()),
                    _ => Delay::Lost,
                },
            })
            .collect();
        records.sort_unstable_by_key(|r| (r.station, r.stream, r.frame_index));
        let devices = self
            .devices
            .iter()
            .enumerate()
            .map(|(d, dev)| DeviceStats {
                device: d as u16,
                restarts: dev.mld.restarts,
                initial_allocations: dev.mld.initial_allocations,
                accesses: dev.links.iter().map(|l| l.accesses).collect(),
                dropped_mpdus: dev.dropped,
                backlog: dev.mld.buffer.len()
                    + dev
                        .links
                        .iter()
                        .filter_map(|l| l.in_flight.as_ref())
                        .map(|f| f.ampdu.mpdus.len())
                        .sum::<usize>(),
            })
            .collect();
        SimOutput {
            records,
            devices,
            trace: self.trace.unwrap_or_default(),
            events,
        }
    }
}
