//! Scenario configuration: TOML parsing, defaults and validation.
//!
//! Every key is optional; an empty file resolves to the reference setup
//! (greedy over 2x40 MHz, 6 stations, 50 s, 10 seeds).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::MacConfig;
use crate::mld::{MldConfig, PolicyKind};
use crate::phy::{LinkSpec, PhyConfig};
use crate::traffic::{SizeModel, StreamConfig, StreamKind, TruncGaussModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Standard link configurations by name.
pub fn link_set(name: &str) -> Option<Vec<LinkSpec>> {
    let l = LinkSpec::new;
    Some(match name {
        "20" => vec![l(5.5, 20)],
        "40" => vec![l(5.5, 40)],
        "80" => vec![l(5.5, 80)],
        "160" => vec![l(5.5, 160)],
        "2x40" => vec![l(5.2, 40), l(5.5, 40)],
        "2x80" => vec![l(5.2, 80), l(5.5, 80)],
        "4x20" => vec![l(5.2, 20), l(5.5, 20), l(6.1, 20), l(6.5, 20)],
        "2x20" => vec![l(5.2, 20), l(5.5, 20)],
        _ => return None,
    })
}

/// Short name of a link set, e.g. "2x40" or "80".
pub fn link_set_name(links: &[LinkSpec]) -> String {
    let bw = links.first().map_or(0, |l| l.bandwidth_mhz);
    if links.len() == 1 {
        format!("{bw}")
    } else if links.iter().all(|l| l.bandwidth_mhz == bw) {
        format!("{}x{bw}", links.len())
    } else {
        links
            .iter()
            .map(|l| l.bandwidth_mhz.to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// The single link with the same total bandwidth, used to compare
/// single-link operation against a multi-link set.
pub fn equivalent_single_link(links: &[LinkSpec]) -> Vec<LinkSpec> {
    let total: u32 = links.iter().map(|l| l.bandwidth_mhz).sum();
    vec![LinkSpec::new(5.5, total)]
}

/// Link sets evaluated in the reference study.
const REFERENCE_SETS: [&[u32]; 5] = [&[80], &[160], &[40, 40], &[20, 20, 20, 20], &[80, 80]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub dl_video: StreamConfig,
    pub ul_video: StreamConfig,
    pub pose: StreamConfig,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            dl_video: StreamConfig::dl_video(),
            ul_video: StreamConfig::ul_video(),
            pose: StreamConfig::pose(),
        }
    }
}

impl TrafficConfig {
    pub fn get(&self, kind: StreamKind) -> &StreamConfig {
        match kind {
            StreamKind::DlVideo => &self.dl_video,
            StreamKind::UlVideo => &self.ul_video,
            StreamKind::Pose => &self.pose,
        }
    }

    pub fn get_mut(&mut self, kind: StreamKind) -> &mut StreamConfig {
        match kind {
            StreamKind::DlVideo => &mut self.dl_video,
            StreamKind::UlVideo => &mut self.ul_video,
            StreamKind::Pose => &mut self.pose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityConfig {
    /// Upper bound of the station sweep.
    pub max_sta: u16,
    /// Extra station counts evaluated after the first failure to detect
    /// non-monotone verdicts.
    pub lookahead: u16,
    /// Additional (policy, link set) variants swept by `capacity`.
    pub variants: Vec<CapacityVariant>,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            max_sta: 64,
            lookahead: 0,
            variants: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityVariant {
    pub policy: PolicyKind,
    pub link_set: String,
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub policy: PolicyKind,
    pub n_sta: u16,
    pub cell_radius_m: f64,
    pub sim_duration_s: f64,
    pub activation_window_s: f64,
    /// Time after traffic stops during which queued frames may still finish.
    pub drain_s: f64,
    pub seeds: Vec<u64>,
    pub links: Vec<LinkSpec>,
    pub traffic: TrafficConfig,
    pub phy: PhyConfig,
    pub mac: MacConfig,
    pub mld: MldConfig,
    pub capacity: CapacityConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Greedy,
            n_sta: 6,
            cell_radius_m: 10.0,
            sim_duration_s: 50.0,
            activation_window_s: 1.0,
            drain_s: 1.0,
            seeds: (1..=10).collect(),
            links: link_set("2x40").expect("known set"),
            traffic: TrafficConfig::default(),
            phy: PhyConfig::default(),
            mac: MacConfig::default(),
            mld: MldConfig::default(),
            capacity: CapacityConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg = file.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Resolved configuration as TOML; parses back to an identical value.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn link_set_name(&self) -> String {
        link_set_name(&self.links)
    }

    /// Copy with a different policy and link set; single-link policy maps a
    /// multi-link set onto one link of the same total bandwidth.
    pub fn with_variant(&self, policy: PolicyKind, links: &[LinkSpec]) -> Self {
        let mut c = self.clone();
        c.policy = policy;
        c.links = if policy == PolicyKind::SingleLink && links.len() > 1 {
            equivalent_single_link(links)
        } else {
            links.to_vec()
        };
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_sta == 0 {
            return Err(ConfigError::invalid("n_sta", "must be >= 1"));
        }
        if self.links.is_empty() {
            return Err(ConfigError::invalid("links", "at least one link is required"));
        }
        match self.policy {
            PolicyKind::SingleLink if self.links.len() != 1 => {
                return Err(ConfigError::invalid("policy", "sl requires exactly 1 link"));
            }
            p if p != PolicyKind::SingleLink && self.links.len() < 2 => {
                return Err(ConfigError::invalid(
                    "policy",
                    format!("{p} is a multi-link policy and requires at least 2 links"),
                ));
            }
            _ => {}
        }
        for (i, l) in self.links.iter().enumerate() {
            l.validate()
                .map_err(|m| ConfigError::invalid(&format!("links[{i}]"), m))?;
        }
        for (i, a) in self.links.iter().enumerate() {
            if self.links[..i]
                .iter()
                .any(|b| (a.carrier_ghz - b.carrier_ghz).abs() < 1e-9)
            {
                return Err(ConfigError::invalid(
                    &format!("links[{i}]"),
                    "links of one device must use distinct carriers",
                ));
            }
        }
        let mut bws: Vec<u32> = self.links.iter().map(|l| l.bandwidth_mhz).collect();
        bws.sort_unstable();
        if !REFERENCE_SETS.contains(&bws.as_slice()) {
            log::warn!(
                "link set {} is outside the reference configurations",
                self.link_set_name()
            );
        }
        let positive = [
            ("cell_radius_m", self.cell_radius_m),
            ("sim_duration_s", self.sim_duration_s),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(k, "must be > 0"));
            }
        }
        for (k, v) in [
            ("activation_window_s", self.activation_window_s),
            ("drain_s", self.drain_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(k, "must be >= 0"));
            }
        }
        if self.activation_window_s > self.sim_duration_s {
            return Err(ConfigError::invalid(
                "activation_window_s",
                "must not exceed sim_duration_s",
            ));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "at least one seed is required"));
        }
        for k in StreamKind::ALL {
            self.traffic
                .get(k)
                .validate()
                .map_err(|m| ConfigError::invalid(&format!("traffic.{k}"), m))?;
            if self.traffic.get(k).kind != k {
                return Err(ConfigError::invalid(
                    &format!("traffic.{k}.kind"),
                    "does not match its table",
                ));
            }
        }
        self.phy.validate().map_err(|m| ConfigError::invalid("phy", m))?;
        self.mac.validate().map_err(|m| ConfigError::invalid("mac", m))?;
        self.mld.validate().map_err(|m| ConfigError::invalid("mld", m))?;
        if self.capacity.max_sta == 0 {
            return Err(ConfigError::invalid("capacity.max_sta", "must be >= 1"));
        }
        for (i, v) in self.capacity.variants.iter().enumerate() {
            if link_set(&v.link_set).is_none() {
                return Err(ConfigError::invalid(
                    &format!("capacity.variants[{i}].link_set"),
                    format!("unknown link set '{}'", v.link_set),
                ));
            }
        }
        Ok(())
    }
}

// On-disk form: every field optional, unknown keys rejected.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    policy: Option<PolicyKind>,
    n_sta: Option<u16>,
    cell_radius_m: Option<f64>,
    sim_duration_s: Option<f64>,
    activation_window_s: Option<f64>,
    drain_s: Option<f64>,
    seeds: Option<Vec<u64>>,
    link_set: Option<String>,
    links: Option<Vec<LinkSpec>>,
    traffic: Option<TrafficFile>,
    phy: Option<PhyFile>,
    mac: Option<MacFile>,
    mld: Option<MldFile>,
    capacity: Option<CapacityFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficFile {
    dl_video: Option<StreamFile>,
    ul_video: Option<StreamFile>,
    pose: Option<StreamFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamFile {
    kind: Option<StreamKind>,
    enabled: Option<bool>,
    frame_rate: Option<f64>,
    periodicity_ms: Option<f64>,
    data_rate_mbps: Option<f64>,
    size_model: Option<SizeModel>,
    /// Shorthand for a video size model derived from its mean.
    mean_size_bytes: Option<f64>,
    jitter_ms: Option<TruncGaussModel>,
    pdb_ms: Option<f64>,
    success_rate: Option<f64>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( if let Some(v) = $src.$field { $dst.$field = v; } )+
    };
}

impl StreamFile {
    fn apply(self, base: &mut StreamConfig) {
        if let Some(m) = self.mean_size_bytes {
            base.size_model = SizeModel::TruncGauss(TruncGaussModel::video_size(m));
        }
        if self.jitter_ms.is_some() {
            base.jitter_ms = self.jitter_ms;
        }
        overlay!(
            base,
            self,
            kind,
            enabled,
            frame_rate,
            periodicity_ms,
            data_rate_mbps,
            size_model,
            pdb_ms,
            success_rate
        );
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhyFile {
    tx_power_dbm: Option<f64>,
    noise_figure_db: Option<f64>,
    breakpoint_m: Option<f64>,
    path_loss_exponent: Option<f64>,
    preamble_us: Option<u64>,
    error_ramp_db: Option<f64>,
    rate_window: Option<usize>,
    probe_probability: Option<f64>,
    initial_mcs: Option<usize>,
    mcs_table: Option<crate::phy::McsTable>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MacFile {
    slot_us: Option<u64>,
    sifs_us: Option<u64>,
    difs_us: Option<u64>,
    cw_min: Option<u32>,
    cw_max: Option<u32>,
    block_ack_us: Option<u64>,
    retry_limit: Option<u8>,
    max_ampdu_mpdus: Option<usize>,
    max_ampdu_us: Option<u64>,
    count_own_tx: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MldFile {
    update_period_s: Option<f64>,
    ma_window: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityFile {
    max_sta: Option<u16>,
    lookahead: Option<u16>,
    variants: Option<Vec<CapacityVariant>>,
}

impl ScenarioFile {
    fn resolve(self) -> Result<ScenarioConfig, ConfigError> {
        let mut c = ScenarioConfig::default();
        overlay!(
            c,
            self,
            policy,
            n_sta,
            cell_radius_m,
            sim_duration_s,
            activation_window_s,
            drain_s,
            seeds
        );
        match (self.link_set, self.links) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid(
                    "link_set",
                    "give either link_set or links, not both",
                ));
            }
            (Some(name), None) => {
                c.links = link_set(&name)
                    .ok_or_else(|| ConfigError::invalid("link_set", format!("unknown link set '{name}'")))?;
            }
            (None, Some(links)) => c.links = links,
            (None, None) if c.policy == PolicyKind::SingleLink => {
                c.links = link_set("80").expect("known set");
            }
            (None, None) => {}
        }
        if let Some(t) = self.traffic {
            for (kind, f) in [
                (StreamKind::DlVideo, t.dl_video),
                (StreamKind::UlVideo, t.ul_video),
                (StreamKind::Pose, t.pose),
            ] {
                if let Some(f) = f {
                    f.apply(c.traffic.get_mut(kind));
                }
            }
        }
        if let Some(p) = self.phy {
            overlay!(
                c.phy,
                p,
                tx_power_dbm,
                noise_figure_db,
                breakpoint_m,
                path_loss_exponent,
                preamble_us,
                error_ramp_db,
                rate_window,
                probe_probability,
                initial_mcs,
                mcs_table
            );
        }
        if let Some(m) = self.mac {
            overlay!(
                c.mac,
                m,
                slot_us,
                sifs_us,
                difs_us,
                cw_min,
                cw_max,
                block_ack_us,
                retry_limit,
                max_ampdu_mpdus,
                max_ampdu_us,
                count_own_tx
            );
        }
        if let Some(m) = self.mld {
            overlay!(c.mld, m, update_period_s, ma_window);
        }
        if let Some(k) = self.capacity {
            overlay!(c.capacity, k, max_sta, lookahead, variants);
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_reference_setup() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.seeds.len(), 10);
        assert_eq!(c.link_set_name(), "2x40");
    }

    #[test]
    fn resolved_echo_round_trips() {
        let c = ScenarioConfig::from_toml_str(
            "policy = \"condition\"\nlink_set = \"4x20\"\nn_sta = 3\n[traffic.dl_video]\npdb_ms = 12.0\n",
        )
        .unwrap();
        let echo = c.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&echo).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.traffic.dl_video.pdb_ms, 12.0);
        assert_eq!(back.links.len(), 4);
    }

    #[test]
    fn sl_with_two_links_is_rejected() {
        let e = ScenarioConfig::from_toml_str("policy = \"sl\"\nlink_set = \"2x40\"\n").unwrap_err();
        assert!(e.to_string().contains("sl requires exactly 1 link"), "{e}");
    }

    #[test]
    fn sl_defaults_to_80mhz() {
        let c = ScenarioConfig::from_toml_str("policy = \"sl\"").unwrap();
        assert_eq!(c.links, vec![LinkSpec::new(5.5, 80)]);
    }

    #[test]
    fn mlo_needs_two_links() {
        let e = ScenarioConfig::from_toml_str("policy = \"greedy\"\nlink_set = \"80\"\n").unwrap_err();
        assert!(e.to_string().contains("`policy`"));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ScenarioConfig::from_toml_str("n_stas = 3").unwrap_err();
        assert!(e.to_string().contains("n_stas"), "{e}");
        let e = ScenarioConfig::from_toml_str("[mac]\nslots = 3").unwrap_err();
        assert!(e.to_string().contains("slots"), "{e}");
    }

    #[test]
    fn bad_values_name_the_key() {
        let e = ScenarioConfig::from_toml_str("n_sta = 0").unwrap_err();
        assert!(e.to_string().contains("`n_sta`"));
        let e = ScenarioConfig::from_toml_str(
            "[[links]]\ncarrier_ghz = 2.4\nbandwidth_mhz = 20\n[[links]]\ncarrier_ghz = 5.5\nbandwidth_mhz = 20\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("links[0]"));
        let e = ScenarioConfig::from_toml_str(
            "[traffic.ul_video]\njitter_ms = { mean = 0.0, std = 1.0, min = -1.0, max = 1.0 }",
        )
        .unwrap_err();
        assert!(e.to_string().contains("traffic.ul_video"));
    }

    #[test]
    fn equivalent_single_link_sums_bandwidth() {
        let c = ScenarioConfig::default().with_variant(PolicyKind::SingleLink, &link_set("4x20").unwrap());
        assert_eq!(c.links, vec![LinkSpec::new(5.5, 80)]);
        c.validate().unwrap();
        let c = ScenarioConfig::default().with_variant(PolicyKind::SingleLink, &link_set("2x80").unwrap());
        assert_eq!(c.link_set_name(), "160");
    }

    #[test]
    fn link_set_names() {
        for n in ["80", "160", "2x40", "4x20", "2x80"] {
            assert_eq!(link_set_name(&link_set(n).unwrap()), n);
        }
    }
}
