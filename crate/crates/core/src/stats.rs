//! Delay accounting, percentiles, CCDF export and the capacity search.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ScenarioConfig, TrafficConfig};
use crate::traffic::StreamKind;

/// Application-layer delay of one frame. `Lost` orders above every finite
/// delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Delay {
    Us(u64),
    Lost,
}

impl Delay {
    pub fn as_micros(self) -> Option<u64> {
        match self {
            Delay::Us(us) => Some(us),
            Delay::Lost => None,
        }
    }

    pub fn is_lost(self) -> bool {
        self == Delay::Lost
    }
}

impl fmt::Display for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Us(us) => write!(f, "{us}"),
            Delay::Lost => f.write_str("LOST"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelayRecord {
    pub seed: u64,
    pub station: u16,
    pub stream: StreamKind,
    pub frame_index: u64,
    pub delay: Delay,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("percentile of an empty sample set")]
    Empty,
    #[error("percentile fraction {0} outside (0, 1]")]
    BadFraction(f64),
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p * N)` of the
/// ascending sort.
pub fn percentile(samples: &[Delay], p: f64) -> Result<Delay, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    percentile_sorted(&sorted, p)
}

/// As [`percentile`] for input already in ascending order.
pub fn percentile_sorted(sorted: &[Delay], p: f64) -> Result<Delay, StatsError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(StatsError::BadFraction(p));
    }
    if sorted.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = sorted.len();
    // The epsilon keeps exact products such as 0.99 * 100 on rank 99.
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamVerdict {
    pub stream: StreamKind,
    /// Worst per-station 99th percentile; `None` if no frames were recorded.
    pub worst_p99: Option<Delay>,
    pub worst_station: Option<u16>,
    pub pdb_us: u64,
    pub pass: bool,
}

pub const P99: f64 = 0.99;

/// Per-station nearest-rank percentile over seed-merged samples, worst
/// station taken, compared against the stream's delay budget.
pub fn verdict(records: &[DelayRecord], stream: StreamKind, pdb_us: u64) -> StreamVerdict {
    let mut per_station: BTreeMap<u16, Vec<Delay>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stream == stream) {
        per_station.entry(r.station).or_default().push(r.delay);
    }
    let mut worst: Option<(u16, Delay)> = None;
    for (station, mut delays) in per_station {
        delays.sort_unstable();
        let p = percentile_sorted(&delays, P99).expect("non-empty station sample");
        if worst.is_none_or(|(_, w)| p > w) {
            worst = Some((station, p));
        }
    }
    let pass = match worst {
        Some((_, Delay::Us(us))) => us <= pdb_us,
        Some((_, Delay::Lost)) => false,
        None => true,
    };
    StreamVerdict {
        stream,
        worst_p99: worst.map(|w| w.1),
        worst_station: worst.map(|w| w.0),
        pdb_us,
        pass,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemVerdict {
    pub streams: Vec<StreamVerdict>,
}

impl SystemVerdict {
    pub fn pass(&self) -> bool {
        self.streams.iter().all(|v| v.pass)
    }

    pub fn get(&self, stream: StreamKind) -> &StreamVerdict {
        self.streams
            .iter()
            .find(|v| v.stream == stream)
            .expect("every stream has a verdict")
    }

    pub fn failing(&self) -> Vec<StreamKind> {
        self.streams.iter().filter(|v| !v.pass).map(|v| v.stream).collect()
    }
}

/// Verdicts for every enabled stream.
pub fn system_verdict(records: &[DelayRecord], traffic: &TrafficConfig) -> SystemVerdict {
    let streams = StreamKind::ALL
        .into_iter()
        .filter(|k| traffic.get(*k).enabled)
        .map(|k| verdict(records, k, traffic.get(k).pdb().as_micros()))
        .collect();
    SystemVerdict { streams }
}

/// One CCDF row: fraction of samples strictly above `delay_us`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcdfRow {
    pub delay_us: Option<u64>,
    pub ccdf: f64,
}

/// Empirical CCDF over the pooled delays of one stream. One row per distinct
/// finite delay; lost frames remain in the tail, so the last finite row holds
/// the loss fraction and a final `LOST` row closes at 0.
pub fn export_ccdf(records: &[DelayRecord], stream: StreamKind) -> Vec<CcdfRow> {
    let mut delays: Vec<Delay> = records.iter().filter(|r| r.stream == stream).map(|r| r.delay).collect();
    delays.sort_unstable();
    ccdf_of_sorted(&delays)
}

pub fn ccdf_of_sorted(sorted: &[Delay]) -> Vec<CcdfRow> {
    let n = sorted.len();
    let mut rows = Vec::new();
    let mut i = 0;
    while i < n {
        let d = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == d {
            j += 1;
        }
        rows.push(CcdfRow {
            delay_us: d.as_micros(),
            ccdf: (n - j) as f64 / n as f64,
        });
        i = j;
    }
    rows
}

/// CCDF evaluated at `delay_us`: fraction of samples strictly above it.
pub fn ccdf_at(rows: &[CcdfRow], delay_us: u64) -> f64 {
    let mut value = 1.0;
    for r in rows {
        match r.delay_us {
            Some(d) if d <= delay_us => value = r.ccdf,
            _ => break,
        }
    }
    value
}

pub fn write_delays_csv<W: Write>(mut w: W, records: &[DelayRecord]) -> io::Result<()> {
    writeln!(w, "seed,station,stream,frame_index,delay_us")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.seed, r.station, r.stream, r.frame_index, r.delay)?;
    }
    Ok(())
}

pub fn write_ccdf_csv<W: Write>(mut w: W, rows: &[CcdfRow]) -> io::Result<()> {
    writeln!(w, "delay_us,ccdf")?;
    for r in rows {
        match r.delay_us {
            Some(d) => writeln!(w, "{d},{:.9}", r.ccdf)?,
            None => writeln!(w, "LOST,{:.9}", r.ccdf)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub stream: String,
    /// Worst per-station p99 in microseconds, or "LOST"/"none".
    pub worst_p99_us: String,
    pub worst_station: Option<u16>,
    pub pdb_us: u64,
    pub frames: u64,
    pub lost: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub link_set: String,
    pub n_sta: u16,
    pub seeds: Vec<u64>,
    pub pass: bool,
    pub streams: Vec<StreamSummary>,
}

fn delay_label(d: Option<Delay>) -> String {
    d.map_or_else(|| "none".to_string(), |d| d.to_string())
}

pub fn summarize(cfg: &ScenarioConfig, records: &[DelayRecord]) -> (SystemVerdict, RunSummary) {
    let v = system_verdict(records, &cfg.traffic);
    let streams = v
        .streams
        .iter()
        .map(|sv| {
            let of_stream = records.iter().filter(|r| r.stream == sv.stream);
            let (frames, lost) = of_stream.fold((0, 0), |(f, l), r| (f + 1, l + u64::from(r.delay.is_lost())));
            StreamSummary {
                stream: sv.stream.to_string(),
                worst_p99_us: delay_label(sv.worst_p99),
                worst_station: sv.worst_station,
                pdb_us: sv.pdb_us,
                frames,
                lost,
                pass: sv.pass,
            }
        })
        .collect();
    let summary = RunSummary {
        policy: cfg.policy.to_string(),
        link_set: cfg.link_set_name(),
        n_sta: cfg.n_sta,
        seeds: cfg.seeds.clone(),
        pass: v.pass(),
        streams,
    };
    (v, summary)
}

/// Outcome of one station count in a capacity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPoint {
    pub n_sta: u16,
    pub pass: bool,
    pub dl_video_p99_us: String,
    pub ul_video_p99_us: String,
    pub pose_p99_us: String,
    pub failing: Vec<String>,
}

impl CapacityPoint {
    pub fn from_verdict(n_sta: u16, v: &SystemVerdict) -> Self {
        let p99 = |k: StreamKind| {
            v.streams
                .iter()
                .find(|s| s.stream == k)
                .map_or_else(|| "disabled".to_string(), |s| delay_label(s.worst_p99))
        };
        Self {
            n_sta,
            pass: v.pass(),
            dl_video_p99_us: p99(StreamKind::DlVideo),
            ul_video_p99_us: p99(StreamKind::UlVideo),
            pose_p99_us: p99(StreamKind::Pose),
            failing: v.failing().iter().map(|k| k.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub policy: String,
    pub link_set: String,
    pub max_sta: u16,
    /// True if the sweep stopped at the configured ceiling without failing.
    pub capped: bool,
    pub points: Vec<CapacityPoint>,
    pub warnings: Vec<String>,
}

impl CapacityResult {
    pub fn point(&self, n_sta: u16) -> Option<&CapacityPoint> {
        self.points.iter().find(|p| p.n_sta == n_sta)
    }
}

/// Sweeps the station count upward from 1 and stops at the first failing
/// count (plus `lookahead` extra counts, which only feed the monotonicity
/// warning). `eval` returns the system verdict for a given count.
pub fn capacity_search<F, E>(
    policy: &str,
    link_set: &str,
    max_sta: u16,
    lookahead: u16,
    mut eval: F,
) -> Result<CapacityResult, E>
where
    F: FnMut(u16) -> Result<SystemVerdict, E>,
{
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    let mut first_fail: Option<u16> = None;
    let mut n = 1;
    while n <= max_sta {
        if first_fail.is_some_and(|f| n > f.saturating_add(lookahead)) {
            break;
        }
        let v = eval(n)?;
        let point = CapacityPoint::from_verdict(n, &v);
        if point.pass {
            if let Some(f) = first_fail {
                let msg = format!("non-monotone verdicts: n={f} fails but n={n} passes");
                log::warn!("{policy}/{link_set}: {msg}");
                warnings.push(msg);
            }
        } else if first_fail.is_none() {
            first_fail = Some(n);
        }
        points.push(point);
        n += 1;
    }
    let max_sta_found = first_fail.map_or(max_sta, |f| f - 1);
    if max_sta_found == 0 {
        let msg = "capacity 0: a single station already fails".to_string();
        log::warn!("{policy}/{link_set}: {msg}");
        warnings.push(msg);
    }
    Ok(CapacityResult {
        policy: policy.to_string(),
        link_set: link_set.to_string(),
        max_sta: max_sta_found,
        capped: first_fail.is_none(),
        points,
        warnings,
    })
}

pub fn write_capacity_csv<W: Write>(mut w: W, results: &[CapacityResult]) -> io::Result<()> {
    writeln!(
        w,
        "policy,link_set,n_sta,pass,dl_video_p99_us,ul_video_p99_us,pose_p99_us"
    )?;
    for r in results {
        for p in &r.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.policy, r.link_set, p.n_sta, p.pass, p.dl_video_p99_us, p.ul_video_p99_us, p.pose_p99_us
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: u64) -> Delay {
        Delay::Us(v * 1000)
    }

    fn rec(station: u16, stream: StreamKind, delay: Delay) -> DelayRecord {
        DelayRecord {
            seed: 1,
            station,
            stream,
            frame_index: 0,
            delay,
        }
    }

    #[test]
    fn percentile_examples() {
        let s: Vec<Delay> = (1..=100).map(ms).collect();
        assert_eq!(percentile(&s, 0.99).unwrap(), ms(99));
        assert_eq!(percentile(&[ms(5)], 0.99).unwrap(), ms(5));
        assert_eq!(percentile(&[], 0.99), Err(StatsError::Empty));
        assert!(percentile(&s, 0.0).is_err());
    }

    #[test]
    fn lost_sorts_last() {
        let mut s: Vec<Delay> = (1..=99).map(ms).collect();
        s.push(Delay::Lost);
        assert_eq!(percentile(&s, 0.99).unwrap(), ms(99));
        let mut s: Vec<Delay> = (1..=98).map(ms).collect();
        s.extend([Delay::Lost, Delay::Lost]);
        assert_eq!(percentile(&s, 0.99).unwrap(), Delay::Lost);
    }

    #[test]
    fn verdict_boundaries() {
        let all_1ms: Vec<DelayRecord> = StreamKind::ALL
            .iter()
            .flat_map(|k| (1..=3).map(move |s| rec(s, *k, ms(1))))
            .collect();
        let v = system_verdict(&all_1ms, &TrafficConfig::default());
        assert!(v.pass());

        let over = [
            rec(1, StreamKind::DlVideo, Delay::Us(10_001)),
            rec(2, StreamKind::DlVideo, ms(1)),
        ];
        assert!(!verdict(&over, StreamKind::DlVideo, 10_000).pass);
        let at = [rec(1, StreamKind::DlVideo, Delay::Us(10_000))];
        assert!(verdict(&at, StreamKind::DlVideo, 10_000).pass);
    }

    #[test]
    fn ul_within_dl_over_fails_system() {
        let r = vec![
            rec(1, StreamKind::UlVideo, ms(25)),
            rec(1, StreamKind::DlVideo, ms(11)),
            rec(1, StreamKind::Pose, ms(1)),
        ];
        let v = system_verdict(&r, &TrafficConfig::default());
        assert!(v.get(StreamKind::UlVideo).pass);
        assert!(!v.get(StreamKind::DlVideo).pass);
        assert!(!v.pass());
        assert_eq!(v.failing(), vec![StreamKind::DlVideo]);
    }

    #[test]
    fn worst_station_is_reported() {
        let mut r: Vec<DelayRecord> = (0..100).map(|_| rec(1, StreamKind::Pose, ms(1))).collect();
        r.extend((0..100).map(|_| rec(2, StreamKind::Pose, ms(4))));
        let v = verdict(&r, StreamKind::Pose, 10_000);
        assert_eq!(v.worst_station, Some(2));
        assert_eq!(v.worst_p99, Some(ms(4)));
    }

    #[test]
    fn ccdf_examples() {
        let r: Vec<DelayRecord> = (1..=4).map(|d| rec(1, StreamKind::Pose, ms(d))).collect();
        let rows = export_ccdf(&r, StreamKind::Pose);
        assert_eq!(
            rows[0],
            CcdfRow {
                delay_us: Some(1000),
                ccdf: 0.75
            }
        );
        assert_eq!(rows.last().unwrap().ccdf, 0.0);

        let same: Vec<DelayRecord> = (0..5).map(|_| rec(1, StreamKind::Pose, ms(2))).collect();
        assert_eq!(
            export_ccdf(&same, StreamKind::Pose),
            vec![CcdfRow {
                delay_us: Some(2000),
                ccdf: 0.0
            }]
        );
    }

    #[test]
    fn ccdf_lost_residual() {
        let mut r: Vec<DelayRecord> = (1..=8).map(|d| rec(1, StreamKind::Pose, ms(d))).collect();
        r.extend((0..2).map(|_| rec(1, StreamKind::Pose, Delay::Lost)));
        let rows = export_ccdf(&r, StreamKind::Pose);
        let last_finite = rows[rows.len() - 2];
        assert_eq!(last_finite.delay_us, Some(8000));
        assert!((last_finite.ccdf - 0.2).abs() < 1e-12);
        assert_eq!(
            rows.last().unwrap(),
            &CcdfRow {
                delay_us: None,
                ccdf: 0.0
            }
        );
    }

    #[test]
    fn capacity_stops_at_first_fail() {
        let mut calls = Vec::new();
        let res: Result<CapacityResult, ()> = capacity_search("greedy", "2x40", 20, 0, |n| {
            calls.push(n);
            let d = if n <= 7 { ms(5) } else { ms(12) };
            Ok(system_verdict(
                &[
                    rec(1, StreamKind::DlVideo, d),
                    rec(1, StreamKind::UlVideo, ms(1)),
                    rec(1, StreamKind::Pose, ms(1)),
                ],
                &TrafficConfig::default(),
            ))
        });
        let res = res.unwrap();
        assert_eq!(res.max_sta, 7);
        assert_eq!(calls, (1..=8).collect::<Vec<_>>());
        assert!(!res.point(8).unwrap().pass);
        assert_eq!(res.point(8).unwrap().failing, vec!["dl_video".to_string()]);
    }

    #[test]
    fn capacity_zero_and_nonmonotone_warn() {
        let tc = TrafficConfig::default();
        let res: CapacityResult = capacity_search::<_, ()>("sl", "20", 10, 2, |n| {
            let d = if n == 2 { ms(1) } else { ms(50) };
            Ok(system_verdict(&[rec(1, StreamKind::DlVideo, d)], &tc))
        })
        .unwrap();
        assert_eq!(res.max_sta, 0);
        assert_eq!(res.points.len(), 3);
        assert_eq!(res.warnings.len(), 2);
    }

    proptest! {
        #[test]
        fn ccdf_monotone_bounded(raw in prop::collection::vec(prop::option::weighted(0.9, 0u64..50_000), 1..300)) {
            let r: Vec<DelayRecord> = raw.iter().map(|d| rec(1, StreamKind::Pose, d.map_or(Delay::Lost, Delay::Us))).collect();
            let rows = export_ccdf(&r, StreamKind::Pose);
            for w in rows.windows(2) {
                prop_assert!(w[1].ccdf < w[0].ccdf);
            }
            for row in &rows {
                prop_assert!((0.0..=1.0).contains(&row.ccdf));
            }
        }

        // Pass at the budget coincides with the pooled CCDF at the budget
        // staying within 1% for a single station.
        #[test]
        fn verdict_matches_ccdf(raw in prop::collection::vec(prop::option::weighted(0.97, 0u64..20_000), 1..400)) {
            let r: Vec<DelayRecord> = raw.iter().map(|d| rec(1, StreamKind::Pose, d.map_or(Delay::Lost, Delay::Us))).collect();
            let v = verdict(&r, StreamKind::Pose, 10_000);
            let c = ccdf_at(&export_ccdf(&r, StreamKind::Pose), 10_000);
            prop_assert_eq!(v.pass, c <= 0.01 + 1e-12);
        }

        #[test]
        fn percentile_is_a_sample(raw in prop::collection::vec(0u64..1_000_000, 1..200), p in 0.01f64..=1.0) {
            let s: Vec<Delay> = raw.iter().map(|d| Delay::Us(*d)).collect();
            let v = percentile(&s, p).unwrap();
            prop_assert!(s.contains(&v));
            let below = s.iter().filter(|x| **x <= v).count();
            prop_assert!(below as f64 >= p * s.len() as f64 - 1e-9);
        }
    }
}
