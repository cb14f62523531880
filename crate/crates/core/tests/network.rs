use mlosim::config::{link_set, ScenarioConfig};
use mlosim::engine::SimTime;
use mlosim::mld::PolicyKind;
use mlosim::network::{Network, TraceEvent};
use mlosim::scenario::{deploy_for_seed, Deployment};
use mlosim::stats::Delay;
use mlosim::traffic::StreamKind;
use proptest::prelude::*;

fn quiet(policy: PolicyKind, links: &str, n_sta: u16) -> (ScenarioConfig, Deployment) {
    let mut cfg = ScenarioConfig {
        policy,
        n_sta,
        sim_duration_s: 1.0,
        links: link_set(links).unwrap(),
        ..ScenarioConfig::default()
    };
    for k in StreamKind::ALL {
        cfg.traffic.get_mut(k).enabled = false;
    }
    cfg.phy.initial_mcs = 11;
    cfg.phy.probe_probability = 0.0;
    let dep = Deployment {
        sta_positions: (0..n_sta).map(|i| (2.0, f64::from(i))).collect(),
        activation_times: vec![SimTime::ZERO; usize::from(n_sta)],
    };
    (cfg, dep)
}

fn txs(trace: &[TraceEvent]) -> Vec<(SimTime, u16, usize, usize, bool)> {
    trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Tx {
                start,
                device,
                link,
                mpdus,
                collided,
                ..
            } => Some((*start, *device, *link, *mpdus, *collided)),
            _ => None,
        })
        .collect()
}

#[test]
fn zero_backoff_contenders_collide_then_recover() {
    let (mut cfg, dep) = quiet(PolicyKind::SingleLink, "80", 2);
    cfg.mac.cw_min = 0;
    let mut net = Network::new(&cfg, &dep, 1);
    net.enable_trace();
    net.inject_frame(1, StreamKind::Pose, 100, SimTime::from_micros(10));
    net.inject_frame(2, StreamKind::Pose, 100, SimTime::from_micros(10));
    let out = net.run();
    let t = txs(&out.trace);
    assert!(t.len() >= 3, "{t:?}");
    // Both wait exactly DIFS and start together.
    let first = SimTime::from_micros(10 + cfg.mac.difs_us);
    assert_eq!((t[0].0, t[0].4), (first, true));
    assert_eq!((t[1].0, t[1].4), (first, true));
    assert!(t.iter().skip(2).any(|x| !x.4));
    assert!(out.records.iter().all(|r| !r.delay.is_lost()), "{:?}", out.records);
}

#[test]
fn jammed_single_link_loses_the_frame() {
    let (cfg, dep) = quiet(PolicyKind::SingleLink, "80", 1);
    let mut net = Network::new(&cfg, &dep, 1);
    net.jam_channel(0);
    net.inject_frame(1, StreamKind::DlVideo, 3_000, SimTime::from_millis(5));
    let out = net.run();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].delay, Delay::Lost);
    assert_eq!(out.devices[0].backlog, 2);
    assert_eq!(out.devices[0].accesses, vec![0]);
}

#[test]
fn greedy_spreads_a_large_frame_over_both_links() {
    let (cfg, dep) = quiet(PolicyKind::Greedy, "2x40", 1);
    let mut net = Network::new(&cfg, &dep, 3);
    net.enable_trace();
    net.inject_frame(1, StreamKind::DlVideo, 100 * 1_500, SimTime::ZERO);
    let out = net.run();
    let t = txs(&out.trace);
    assert_eq!(t.len(), 2, "{t:?}");
    assert_ne!(t[0].2, t[1].2);
    assert_eq!(t[0].3, cfg.mac.max_ampdu_mpdus);
    assert_eq!(t[0].3 + t[1].3, 100);
    assert_eq!(out.devices[0].accesses, vec![1, 1]);
    assert!(!out.records[0].delay.is_lost());
}

#[test]
fn uplink_goes_from_station_to_ap() {
    let (cfg, dep) = quiet(PolicyKind::Uniform, "2x40", 2);
    let mut net = Network::new(&cfg, &dep, 1);
    net.enable_trace();
    net.inject_frame(2, StreamKind::UlVideo, 6_000, SimTime::ZERO);
    let out = net.run();
    let t: Vec<_> = out
        .trace
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Tx { device, dst, mpdus, .. } => Some((*device, *dst, *mpdus)),
            _ => None,
        })
        .collect();
    // Uniform splits the 4 MPDUs 2 + 2 over the two links.
    assert_eq!(t, vec![(2, 0, 2), (2, 0, 2)]);
    // Both slices are in flight before either Block Ack, so nothing is left
    // to restart over.
    assert_eq!((out.devices[2].initial_allocations, out.devices[2].restarts), (1, 0));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn light_load_delivers_everything(
        policy in prop::sample::select(vec![
            PolicyKind::Greedy,
            PolicyKind::Uniform,
            PolicyKind::CongestionAware,
            PolicyKind::ConditionAware,
        ]),
        links in prop::sample::select(vec!["2x40", "4x20", "2x80"]),
        n_sta in 1u16..=3,
        seed in 1u64..1_000,
    ) {
        let cfg = ScenarioConfig {
            policy,
            n_sta,
            sim_duration_s: 1.5,
            links: link_set(links).unwrap(),
            ..ScenarioConfig::default()
        };
        let dep = deploy_for_seed(&cfg, seed);
        let mut net = Network::new(&cfg, &dep, seed);
        net.enable_trace();
        let out = net.run();
        let arrivals = out.trace.iter().filter(|e| matches!(e, TraceEvent::Arrival { .. })).count();
        prop_assert_eq!(out.records.len(), arrivals);
        // A frame can ride a countdown that started before it arrived, so
        // only the preamble is certain.
        let floor = cfg.phy.preamble_us;
        for r in &out.records {
            prop_assert!(matches!(r.delay, Delay::Us(d) if d >= floor), "{:?}", r);
        }
        prop_assert!(out.devices.iter().all(|d| d.backlog == 0 && d.dropped_mpdus == 0));
    }
}
