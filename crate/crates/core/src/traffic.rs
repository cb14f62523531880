//! AR traffic: DL video, UL video and UL pose/control streams per station,
//! plus MPDU fragmentation of application frames.

use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, SimTime};

/// Maximum MPDU payload in bytes.
pub const MPDU_PAYLOAD: u32 = 1500;

/// Device index of the access point. Stations are numbered from 1.
pub const AP: u16 = 0;

/// Gaussian conditioned on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncGaussModel {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncGaussModel {
    /// Size model from a mean: std 10.5 %, bounds 50 % .. 150 % of the mean.
    pub fn video_size(mean_bytes: f64) -> Self {
        Self {
            mean: mean_bytes,
            std: 0.105 * mean_bytes,
            min: 0.5 * mean_bytes,
            max: 1.5 * mean_bytes,
        }
    }

    /// DL network jitter in milliseconds: N(0, 2) truncated to [-4, 4].
    pub fn dl_jitter_ms() -> Self {
        Self {
            mean: 0.0,
            std: 2.0,
            min: -4.0,
            max: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.mean, self.std, self.min, self.max].iter().all(|v| v.is_finite());
        if !finite {
            return Err("truncated Gaussian parameters must be finite".into());
        }
        if !(self.min < self.max) {
            return Err(format!("min {} must be < max {}", self.min, self.max));
        }
        if !(self.min <= self.mean && self.mean <= self.max) {
            return Err(format!("mean {} outside [{}, {}]", self.mean, self.min, self.max));
        }
        if self.std < 0.0 {
            return Err(format!("std {} must be non-negative", self.std));
        }
        Ok(())
    }
}

/// Draws from the truncated Gaussian by rejection.
pub fn sample_trunc_gauss(model: &TruncGaussModel, rng: &mut RngStream) -> f64 {
    if model.std <= f64::EPSILON * model.mean.abs().max(1.0) {
        return model.mean;
    }
    loop {
        let v = model.mean + model.std * rng.standard_normal();
        if v >= model.min && v <= model.max {
            return v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    DlVideo,
    UlVideo,
    Pose,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::DlVideo, StreamKind::UlVideo, StreamKind::Pose];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::DlVideo => "dl_video",
            StreamKind::UlVideo => "ul_video",
            StreamKind::Pose => "pose",
        }
    }

    pub fn is_downlink(self) -> bool {
        matches!(self, StreamKind::DlVideo)
    }

    pub fn index(self) -> usize {
        match self {
            StreamKind::DlVideo => 0,
            StreamKind::UlVideo => 1,
            StreamKind::Pose => 2,
        }
    }
}

impl std::str::FromStr for StreamKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dl_video" => Ok(StreamKind::DlVideo),
            "ul_video" => Ok(StreamKind::UlVideo),
            "pose" => Ok(StreamKind::Pose),
            other => Err(format!("unknown stream kind '{other}'")),
        }
    }
}

impl std::fmt::Display for StreamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SizeModel {
    TruncGauss(TruncGaussModel),
    Fixed { bytes: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub kind: StreamKind,
    pub enabled: bool,
    pub frame_rate: f64,
    pub periodicity_ms: f64,
    pub data_rate_mbps: f64,
    pub size_model: SizeModel,
    pub jitter_ms: Option<TruncGaussModel>,
    pub pdb_ms: f64,
    pub success_rate: f64,
}

impl StreamConfig {
    pub fn dl_video() -> Self {
        Self {
            kind: StreamKind::DlVideo,
            enabled: true,
            frame_rate: 60.0,
            periodicity_ms: 16.667,
            data_rate_mbps: 10.0,
            size_model: SizeModel::TruncGauss(TruncGaussModel::video_size(21_000.0)),
            jitter_ms: Some(TruncGaussModel::dl_jitter_ms()),
            pdb_ms: 10.0,
            success_rate: 0.99,
        }
    }

    pub fn ul_video() -> Self {
        Self {
            kind: StreamKind::UlVideo,
            enabled: true,
            frame_rate: 60.0,
            periodicity_ms: 16.667,
            data_rate_mbps: 3.3,
            size_model: SizeModel::TruncGauss(TruncGaussModel::video_size(7_000.0)),
            jitter_ms: None,
            pdb_ms: 30.0,
            success_rate: 0.99,
        }
    }

    pub fn pose() -> Self {
        Self {
            kind: StreamKind::Pose,
            enabled: true,
            frame_rate: 250.0,
            periodicity_ms: 4.0,
            data_rate_mbps: 0.2,
            size_model: SizeModel::Fixed { bytes: 100 },
            jitter_ms: None,
            pdb_ms: 10.0,
            success_rate: 0.99,
        }
    }

    pub fn default_for(kind: StreamKind) -> Self {
        match kind {
            StreamKind::DlVideo => Self::dl_video(),
            StreamKind::UlVideo => Self::ul_video(),
            StreamKind::Pose => Self::pose(),
        }
    }

    pub fn periodicity(&self) -> SimTime {
        SimTime::from_micros((self.periodicity_ms * 1_000.0).round() as u64)
    }

    pub fn pdb(&self) -> SimTime {
        SimTime::from_micros((self.pdb_ms * 1_000.0).round() as u64)
    }

    pub fn mean_size_bytes(&self) -> f64 {
        match self.size_model {
            SizeModel::TruncGauss(m) => m.mean,
            SizeModel::Fixed { bytes } => f64::from(bytes),
        }
    }

    /// Offered load implied by the size model and periodicity.
    pub fn offered_mbps(&self) -> f64 {
        self.mean_size_bytes() * 8.0 / (self.periodicity_ms * 1_000.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let k = self.kind.as_str();
        if !(self.pdb_ms > 0.0) {
            return Err(format!("traffic.{k}.pdb_ms must be > 0"));
        }
        if !(self.periodicity_ms > 0.0) {
            return Err(format!("traffic.{k}.periodicity_ms must be > 0"));
        }
        if !(self.success_rate > 0.0 && self.success_rate <= 1.0) {
            return Err(format!("traffic.{k}.success_rate must be in (0, 1]"));
        }
        if self.jitter_ms.is_some() != (self.kind == StreamKind::DlVideo) {
            return Err(format!("traffic.{k}.jitter_ms is only allowed on dl_video"));
        }
        if let Some(j) = &self.jitter_ms {
            j.validate().map_err(|e| format!("traffic.{k}.jitter_ms: {e}"))?;
        }
        match &self.size_model {
            SizeModel::TruncGauss(m) => {
                m.validate().map_err(|e| format!("traffic.{k}.size_model: {e}"))?;
                if m.min < 1.0 {
                    return Err(format!("traffic.{k}.size_model.min must be >= 1 byte"));
                }
            }
            SizeModel::Fixed { bytes } => {
                if *bytes == 0 {
                    return Err(format!("traffic.{k}.size_model.bytes must be > 0"));
                }
            }
        }
        if self.kind != StreamKind::Pose {
            // Table values put UL video 1.8 % off (7000 B x 8 x 60 = 3.36 Mb/s).
            let implied = self.mean_size_bytes() * 8.0 * self.frame_rate / 1e6;
            let rel = (implied - self.data_rate_mbps).abs() / self.data_rate_mbps;
            if rel > RATE_CONSISTENCY_TOLERANCE {
                return Err(format!(
                    "traffic.{k}: mean size x 8 x frame_rate = {implied:.3} Mb/s does not match data_rate_mbps {}",
                    self.data_rate_mbps
                ));
            }
        }
        Ok(())
    }
}

/// Relative tolerance between a video stream's declared data rate and the
/// rate implied by its mean frame size.
pub const RATE_CONSISTENCY_TOLERANCE: f64 = 0.02;

/// Three AR streams attached to one station.
pub fn stream_set_for_station(_sta: u16) -> Vec<StreamConfig> {
    StreamKind::ALL.iter().map(|k| StreamConfig::default_for(*k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub u32);

/// An application-layer frame (video frame or pose packet).
#[derive(Debug, Clone, PartialEq)]
pub struct AppFrame {
    pub id: FrameId,
    pub stream: StreamKind,
    pub station: u16,
    pub frame_index: u64,
    /// Nominal periodic instant.
    pub gen_time: SimTime,
    /// When the frame enters the transmitter's MAC buffer.
    pub arrival_time: SimTime,
    pub size: u32,
}

impl AppFrame {
    pub fn src(&self) -> u16 {
        if self.stream.is_downlink() {
            AP
        } else {
            self.station
        }
    }

    pub fn dst(&self) -> u16 {
        if self.stream.is_downlink() {
            self.station
        } else {
            AP
        }
    }
}

/// A MAC fragment of an [`AppFrame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mpdu {
    pub frame: FrameId,
    pub index: u16,
    pub payload: u16,
    pub retries: u8,
    pub dst: u16,
    /// Buffer admission order; assigned by the upper MAC.
    pub seq: u64,
}

/// Splits a frame into `ceil(size / 1500)` MPDUs.
pub fn fragment(frame: &AppFrame) -> Vec<Mpdu> {
    assert!(frame.size > 0, "cannot fragment an empty frame");
    let count = frame.size.div_ceil(MPDU_PAYLOAD);
    (0..count)
        .map(|i| {
            let payload = if i + 1 == count {
                frame.size - i * MPDU_PAYLOAD
            } else {
                MPDU_PAYLOAD
            };
            Mpdu {
                frame: frame.id,
                index: i as u16,
                payload: payload as u16,
                retries: 0,
                dst: frame.dst(),
                seq: 0,
            }
        })
        .collect()
}

/// Draws a frame size in whole bytes.
pub fn sample_frame_size(cfg: &StreamConfig, rng: &mut RngStream) -> u32 {
    match &cfg.size_model {
        SizeModel::Fixed { bytes } => *bytes,
        SizeModel::TruncGauss(m) => {
            let v = sample_trunc_gauss(m, rng).round();
            // Rounding can step past a fractional bound; pull back inside.
            let lo = m.min.ceil();
            let hi = m.max.floor();
            v.clamp(lo, hi).max(1.0) as u32
        }
    }
}

/// Draws a jitter sample in microseconds (zero when the stream has none).
pub fn sample_jitter_us(cfg: &StreamConfig, rng: &mut RngStream) -> i64 {
    cfg.jitter_ms
        .as_ref()
        .map_or(0, |m| (sample_trunc_gauss(m, rng) * 1_000.0).round() as i64)
}

/// Arrival of frame `k` of a stream that starts at `origin`, given a jitter.
pub fn frame_arrival(cfg: &StreamConfig, origin: SimTime, k: u64, jitter_us: i64) -> (SimTime, SimTime) {
    let gen = origin + SimTime::from_micros(k * cfg.periodicity().as_micros());
    let arrival = (gen.as_micros() as i64 + jitter_us).max(0) as u64;
    (gen, SimTime::from_micros(arrival))
}

/// Arrival time of frame `k` for a stream starting at time zero.
pub fn next_frame_arrival(cfg: &StreamConfig, k: u64, rng: &mut RngStream) -> SimTime {
    let jitter = sample_jitter_us(cfg, rng);
    frame_arrival(cfg, SimTime::ZERO, k, jitter).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_stream;

    fn frame(size: u32) -> AppFrame {
        AppFrame {
            id: FrameId(0),
            stream: StreamKind::DlVideo,
            station: 3,
            frame_index: 0,
            gen_time: SimTime::ZERO,
            arrival_time: SimTime::ZERO,
            size,
        }
    }

    #[test]
    fn dl_size_model_matches_table() {
        let m = TruncGaussModel::video_size(21_000.0);
        assert_eq!((m.mean, m.min, m.max), (21_000.0, 10_500.0, 31_500.0));
        assert!((m.std - 2_205.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_gaussian_returns_mean() {
        let m = TruncGaussModel {
            mean: 5.0,
            std: 0.0,
            min: 1.0,
            max: 9.0,
        };
        let mut rng = rng_stream(1, "t");
        assert!((0..100).all(|_| sample_trunc_gauss(&m, &mut rng) == 5.0));
    }

    #[test]
    fn jitter_model_bounds_and_mean() {
        let m = TruncGaussModel::dl_jitter_ms();
        let mut rng = rng_stream(3, "jitter");
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = sample_trunc_gauss(&m, &mut rng);
            assert!((-4.0..=4.0).contains(&v));
            sum += v;
        }
        assert!((sum / n as f64).abs() < 0.1);
    }

    #[test]
    fn pose_arrival_is_periodic() {
        let cfg = StreamConfig::pose();
        let mut rng = rng_stream(1, "pose");
        assert_eq!(next_frame_arrival(&cfg, 3, &mut rng), SimTime::from_millis(12));
    }

    #[test]
    fn dl_arrival_without_jitter() {
        let cfg = StreamConfig::dl_video();
        let (gen, arr) = frame_arrival(&cfg, SimTime::ZERO, 6, 0);
        assert_eq!(gen, SimTime::from_micros(100_002));
        assert_eq!(arr, gen);
    }

    #[test]
    fn negative_jitter_clamps_at_zero() {
        let cfg = StreamConfig::dl_video();
        let (_, arr) = frame_arrival(&cfg, SimTime::ZERO, 0, -4_000);
        assert_eq!(arr, SimTime::ZERO);
    }

    #[test]
    fn fragmentation_cases() {
        let f = fragment(&frame(21_000));
        assert_eq!(f.len(), 14);
        assert!(f.iter().all(|m| m.payload == 1500));
        let p = fragment(&frame(100));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].payload, 100);
        let b: Vec<u16> = fragment(&frame(1501)).iter().map(|m| m.payload).collect();
        assert_eq!(b, vec![1500, 1]);
    }

    #[test]
    fn station_stream_set() {
        let s = stream_set_for_station(4);
        assert_eq!(s.len(), 3);
        let pdbs: Vec<f64> = s.iter().map(|c| c.pdb_ms).collect();
        assert_eq!(pdbs, vec![10.0, 30.0, 10.0]);
        assert!(s[0].jitter_ms.is_some());
        assert!(s[1].jitter_ms.is_none() && s[2].jitter_ms.is_none());
        let total: f64 = s.iter().map(|c| c.offered_mbps()).sum();
        let oracle = (21_000.0 + 7_000.0) * 8.0 / 16_667.0 + 100.0 * 8.0 / 4_000.0;
        assert!((total - oracle).abs() < 1e-9, "{total}");
        // Nominal per-station load is 10 + 3.3 + 0.2 Mb/s.
        assert!((total - 13.5).abs() / 13.5 < RATE_CONSISTENCY_TOLERANCE, "{total}");
        assert!((s[2].offered_mbps() - 0.2).abs() < 1e-12);
        for c in &s {
            c.validate().unwrap();
        }
    }

    #[test]
    fn jitter_on_uplink_is_rejected() {
        let mut c = StreamConfig::ul_video();
        c.jitter_ms = Some(TruncGaussModel::dl_jitter_ms());
        assert!(c.validate().is_err());
    }

    #[test]
    fn rate_inconsistency_is_rejected() {
        let mut c = StreamConfig::dl_video();
        c.data_rate_mbps = 20.0;
        assert!(c.validate().unwrap_err().contains("data_rate_mbps"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fragments_conserve_size(size in 1u32..200_000) {
                let frags = fragment(&frame(size));
                prop_assert_eq!(frags.len() as u32, size.div_ceil(1500));
                let total: u32 = frags.iter().map(|m| u32::from(m.payload)).sum();
                prop_assert_eq!(total, size);
                prop_assert!(frags.iter().all(|m| m.payload <= 1500 && m.payload > 0));
                prop_assert!(frags[..frags.len() - 1].iter().all(|m| m.payload == 1500));
            }

            #[test]
            fn sizes_stay_in_bounds(seed in any::<u64>(), mean in 50.0f64..50_000.0) {
                let mut cfg = StreamConfig::dl_video();
                cfg.size_model = SizeModel::TruncGauss(TruncGaussModel::video_size(mean));
                let mut rng = rng_stream(seed, "size");
                let m = TruncGaussModel::video_size(mean);
                for _ in 0..200 {
                    let s = f64::from(sample_frame_size(&cfg, &mut rng));
                    prop_assert!(s >= m.min.ceil() && s <= m.max.floor());
                }
            }
        }
    }
}
