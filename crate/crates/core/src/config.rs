//! Flat pipeline configuration carrying every threshold with its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::extraction::{ExtractionConfig, RampAnchor};
use crate::gap::{GapConfig, RangeRateMode};
use crate::risk::RiskConfig;
use crate::scenario::GapModelKind;
use crate::synth::SynthConfig;
use crate::trace::CameraIntrinsics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // Classification queries.
    pub ramp_window: f64,
    pub ramp_anchor: RampAnchor,
    pub lead_range_min: f64,
    pub lead_range_max: f64,
    pub lead_rate_min: f64,
    pub lead_rate_max: f64,
    pub lead_lookback: f64,
    pub pass_window: f64,
    pub pass_gate: f64,
    pub speed_min_mph: f64,
    pub speed_max_mph: f64,

    // Segmentation.
    pub offset_threshold: f64,
    pub offset_hysteresis: f64,
    pub min_episode_gap: f64,

    // Gap estimation.
    pub min_valid_frames: usize,
    pub frame_count: usize,
    pub frame_rate: f64,
    pub range_rate_mode: RangeRateMode,
    /// Frames are matched to an extracted event whose cross start lies
    /// within this many seconds of the frames' anchor time.
    pub match_tolerance: f64,

    // Risk.
    pub faz_range: f64,
    pub ttc_thresholds: Vec<f64>,
    pub range_bin_width: f64,
    pub range_rate_bin_width: f64,

    // Scenario sampling.
    pub gap_model: GapModelKind,
    pub scenario_count: usize,
    pub scenario_class: crate::extraction::Classification,
    pub scenario_lane_width: f64,
    pub risk_bias: Option<f64>,

    pub seed: u64,

    // Synthetic corpus.
    pub synth_n_mlc: usize,
    pub synth_n_dlc: usize,
    pub synth_n_ambiguous: usize,
    pub synth_n_other: usize,
    pub synth_pixel_noise: f64,
    pub synth_frame_drop_probability: f64,
    pub synth_pov_probability: f64,
    pub synth_events_per_trip: usize,
    pub synth_lane_width: f64,
    pub synth_vehicle_width: f64,
    pub synth_cam_to_rear: f64,

    // Rear camera.
    pub camera_fx: f64,
    pub camera_fy: f64,
    pub camera_skew: f64,
    pub camera_cx: f64,
    pub camera_cy: f64,
    pub camera_k1: f64,
    pub camera_k2: f64,
    pub camera_k3: f64,
    pub camera_p1: f64,
    pub camera_p2: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let x = ExtractionConfig::default();
        let g = GapConfig::default();
        let r = RiskConfig::default();
        let s = SynthConfig::default();
        let k = CameraIntrinsics::default();
        Self {
            ramp_window: x.ramp_window,
            ramp_anchor: x.ramp_anchor,
            lead_range_min: x.lead_range_min,
            lead_range_max: x.lead_range_max,
            lead_rate_min: x.lead_rate_min,
            lead_rate_max: x.lead_rate_max,
            lead_lookback: x.lookback,
            pass_window: x.pass_window,
            pass_gate: x.pass_gate,
            speed_min_mph: x.speed_min_mph,
            speed_max_mph: x.speed_max_mph,
            offset_threshold: x.offset_threshold,
            offset_hysteresis: x.offset_hysteresis,
            min_episode_gap: x.min_episode_gap,
            min_valid_frames: g.min_valid_frames,
            frame_count: g.frame_count,
            frame_rate: g.frame_rate,
            range_rate_mode: g.mode,
            match_tolerance: 1.0,
            faz_range: r.faz_range,
            ttc_thresholds: r.ttc_thresholds,
            range_bin_width: r.range_bin_width,
            range_rate_bin_width: r.range_rate_bin_width,
            gap_model: GapModelKind::Empirical,
            scenario_count: 1000,
            scenario_class: crate::extraction::Classification::Mlc,
            scenario_lane_width: 3.66,
            risk_bias: None,
            seed: 0,
            synth_n_mlc: s.n_mlc,
            synth_n_dlc: s.n_dlc,
            synth_n_ambiguous: s.n_ambiguous,
            synth_n_other: s.n_other,
            synth_pixel_noise: s.pixel_noise,
            synth_frame_drop_probability: s.frame_drop_probability,
            synth_pov_probability: s.pov_probability,
            synth_events_per_trip: s.events_per_trip,
            synth_lane_width: s.lane_width,
            synth_vehicle_width: s.vehicle_width,
            synth_cam_to_rear: s.cam_to_rear,
            camera_fx: k.fx,
            camera_fy: k.fy,
            camera_skew: k.skew,
            camera_cx: k.cx,
            camera_cy: k.cy,
            camera_k1: k.k1,
            camera_k2: k.k2,
            camera_k3: k.k3,
            camera_p1: k.p1,
            camera_p2: k.p2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("ramp_window", self.ramp_window),
            ("lead_lookback", self.lead_lookback),
            ("pass_window", self.pass_window),
            ("pass_gate", self.pass_gate),
            ("offset_threshold", self.offset_threshold),
            ("frame_rate", self.frame_rate),
            ("match_tolerance", self.match_tolerance),
            ("faz_range", self.faz_range),
            ("range_bin_width", self.range_bin_width),
            ("range_rate_bin_width", self.range_rate_bin_width),
            ("scenario_lane_width", self.scenario_lane_width),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be > 0, got {v}")));
            }
        }
        let windows = [
            ("lead_range_min", self.lead_range_min, self.lead_range_max),
            ("lead_rate_min", self.lead_rate_min, self.lead_rate_max),
            ("speed_min_mph", self.speed_min_mph, self.speed_max_mph),
        ];
        for (field, lo, hi) in windows {
            if !(lo < hi) {
                return Err(invalid(field, format!("window must satisfy low < high, got [{lo}, {hi}]")));
            }
        }
        if !(self.offset_hysteresis >= 0.0 && self.offset_hysteresis < self.offset_threshold) {
            return Err(invalid("offset_hysteresis", "must be in [0, offset_threshold)"));
        }
        if !(self.min_episode_gap >= 0.0) {
            return Err(invalid("min_episode_gap", "must be >= 0"));
        }
        if self.frame_count < 2 {
            return Err(invalid("frame_count", "must be >= 2"));
        }
        if self.min_valid_frames < 2 || self.min_valid_frames > self.frame_count {
            return Err(invalid("min_valid_frames", "must be in [2, frame_count]"));
        }
        if self.ttc_thresholds.is_empty() || self.ttc_thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("ttc_thresholds", "need at least one threshold, all > 0"));
        }
        if self.scenario_count == 0 {
            return Err(invalid("scenario_count", "must be >= 1"));
        }
        if !matches!(
            self.scenario_class,
            crate::extraction::Classification::Mlc | crate::extraction::Classification::Dlc
        ) {
            return Err(invalid("scenario_class", "must be MLC or DLC"));
        }
        if let Some(t) = self.risk_bias {
            if !(t > 0.0) {
                return Err(invalid("risk_bias", format!("must be > 0, got {t}")));
            }
        }
        self.intrinsics()
            .validate()
            .map_err(|e| invalid("camera", e.to_string()))?;
        self.synth().validate().map_err(|e| match e {
            crate::synth::SynthError::Invalid { field, message } => invalid(&format!("synth_{field}"), message),
        })
    }

    pub fn extraction(&self) -> ExtractionConfig {
        ExtractionConfig {
            ramp_window: self.ramp_window,
            ramp_anchor: self.ramp_anchor,
            lead_range_min: self.lead_range_min,
            lead_range_max: self.lead_range_max,
            lead_rate_min: self.lead_rate_min,
            lead_rate_max: self.lead_rate_max,
            lookback: self.lead_lookback,
            pass_window: self.pass_window,
            pass_gate: self.pass_gate,
            speed_min_mph: self.speed_min_mph,
            speed_max_mph: self.speed_max_mph,
            offset_threshold: self.offset_threshold,
            offset_hysteresis: self.offset_hysteresis,
            min_episode_gap: self.min_episode_gap,
        }
    }

    pub fn gap(&self) -> GapConfig {
        GapConfig {
            mode: self.range_rate_mode,
            frame_rate: self.frame_rate,
            min_valid_frames: self.min_valid_frames,
            frame_count: self.frame_count,
        }
    }

    pub fn risk(&self) -> RiskConfig {
        RiskConfig {
            faz_range: self.faz_range,
            ttc_thresholds: self.ttc_thresholds.clone(),
            range_bin_width: self.range_bin_width,
            range_rate_bin_width: self.range_rate_bin_width,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_mlc: self.synth_n_mlc,
            n_dlc: self.synth_n_dlc,
            n_ambiguous: self.synth_n_ambiguous,
            n_other: self.synth_n_other,
            pixel_noise: self.synth_pixel_noise,
            frame_drop_probability: self.synth_frame_drop_probability,
            pov_probability: self.synth_pov_probability,
            seed: self.seed,
            sample_rate: self.frame_rate,
            lane_width: self.synth_lane_width,
            vehicle_width: self.synth_vehicle_width,
            cam_to_rear: self.synth_cam_to_rear,
            events_per_trip: self.synth_events_per_trip,
            ..SynthConfig::default()
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.camera_fx,
            fy: self.camera_fy,
            skew: self.camera_skew,
            cx: self.camera_cx,
            cy: self.camera_cy,
            k1: self.camera_k1,
            k2: self.camera_k2,
            k3: self.camera_k3,
            p1: self.camera_p1,
            p2: self.camera_p2,
        }
    }
}
