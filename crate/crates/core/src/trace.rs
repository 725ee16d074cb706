//! Driving traces, trips and camera intrinsics.
//!
//! A [`Trip`] is a uniformly sampled multi-channel time series recorded on the
//! subject vehicle (SV). Lane offset is the signed lateral displacement of the
//! SV center from the center of the lane it currently occupies, positive to
//! the left. Radar channels that have no return are `None`, never a sentinel.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

/// Meters per second in one mile per hour.
pub const MPS_PER_MPH: f64 = 0.44704;

/// Convert a speed in mph to m/s.
pub fn mph_to_mps(v: f64) -> f64 {
    v * MPS_PER_MPH
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    Highway,
    Other,
}

/// One sample of every recorded channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Seconds since trip start.
    pub t: f64,
    /// m/s.
    pub speed: f64,
    /// Meters from current-lane center, positive = left.
    pub lane_offset: f64,
    /// Width of the lane the SV currently occupies, meters.
    pub lane_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_to_next_onramp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_range: Option<f64>,
    /// Negative when closing on the lead vehicle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_range_rate: Option<f64>,
    /// Longitudinal offsets of radar targets in the right adjacent lane,
    /// positive = ahead of the SV.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub right_targets: Vec<f64>,
    pub daytime: bool,
    pub road_class: RoadClass,
}

/// Per-trip constants written as the first record of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripHeader {
    pub trip_id: String,
    pub sample_rate: f64,
    pub cam_to_rear: f64,
    pub vehicle_width: f64,
    pub lane_width_true: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trip {
    pub trip_id: String,
    pub samples: Vec<TraceSample>,
    /// Hz.
    pub sample_rate: f64,
    /// Camera to trailer rear edge, meters.
    pub cam_to_rear: f64,
    pub vehicle_width: f64,
    /// Measured lane width used as the range reference, meters.
    pub lane_width_true: f64,
}

impl Trip {
    pub fn header(&self) -> TripHeader {
        TripHeader {
            trip_id: self.trip_id.clone(),
            sample_rate: self.sample_rate,
            cam_to_rear: self.cam_to_rear,
            vehicle_width: self.vehicle_width,
            lane_width_true: self.lane_width_true,
        }
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Index of the sample whose timestamp is nearest `t`.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.t < t);
        if i == 0 {
            return Some(0);
        }
        if i == self.samples.len() {
            return Some(i - 1);
        }
        if (self.samples[i].t - t).abs() < (t - self.samples[i - 1].t).abs() {
            Some(i)
        } else {
            Some(i - 1)
        }
    }

    pub fn nearest_sample(&self, t: f64) -> Option<&TraceSample> {
        self.nearest_index(t).map(|i| &self.samples[i])
    }

    /// Samples with `lo <= t <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> &[TraceSample] {
        let a = self.samples.partition_point(|s| s.t < lo);
        let b = self.samples.partition_point(|s| s.t <= hi);
        &self.samples[a..b.max(a)]
    }
}

/// Rear-camera intrinsics in the Bouguet convention: `skew` is the
/// dimensionless shear so that `u = fx * (x + skew * y) + cx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            skew: 0.0,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let fields = [
            ("fx", self.fx),
            ("fy", self.fy),
            ("skew", self.skew),
            ("cx", self.cx),
            ("cy", self.cy),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("p1", self.p1),
            ("p2", self.p2),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(TraceError::Intrinsics(format!("{name} is not finite")));
        }
        if self.fx <= 0.0 {
            return Err(TraceError::Intrinsics("fx must be > 0".into()));
        }
        if self.fy <= 0.0 {
            return Err(TraceError::Intrinsics("fy must be > 0".into()));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
            .iter()
            .any(|&c| c != 0.0)
    }
}

impl Default for CameraIntrinsics {
    /// A 1280x720 mirror camera with moderate barrel distortion.
    fn default() -> Self {
        Self {
            fx: 800.0,
            fy: 800.0,
            skew: 0.0,
            cx: 640.0,
            cy: 360.0,
            k1: -0.25,
            k2: 0.08,
            k3: 0.0,
            p1: 0.001,
            p2: -0.0005,
        }
    }
}

/// A broken trip invariant. Violations are data, reported by
/// [`validate_trip`]; [`load_trip`] turns the first one into an error.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// Sample index, `None` for trip-level fields.
    pub sample: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.sample {
            Some(i) => write!(f, "sample {i}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: empty trace file (missing header record)")]
    MissingHeader { path: String },
    #[error("{path}: invalid trip: {violation}")]
    Invalid { path: String, violation: Violation },
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
}

/// Tolerance on the sample period, seconds.
const PERIOD_TOL: f64 = 1e-6;

/// Check every trip and sample invariant. Never fails.
pub fn validate_trip(trip: &Trip) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut trip_level = |field, ok: bool, message: &str| {
        if !ok {
            out.push(Violation {
                sample: None,
                field,
                message: message.to_string(),
            });
        }
    };
    trip_level("trip_id", !trip.trip_id.is_empty(), "must be non-empty");
    trip_level(
        "sample_rate",
        trip.sample_rate.is_finite() && trip.sample_rate > 0.0,
        "sample_rate > 0",
    );
    trip_level(
        "cam_to_rear",
        trip.cam_to_rear.is_finite() && trip.cam_to_rear >= 0.0,
        "cam_to_rear >= 0",
    );
    trip_level(
        "vehicle_width",
        trip.vehicle_width.is_finite() && trip.vehicle_width > 0.0,
        "vehicle_width > 0",
    );
    trip_level(
        "lane_width_true",
        trip.lane_width_true.is_finite() && trip.lane_width_true > 0.0,
        "lane_width_true > 0",
    );

    let period = 1.0 / trip.sample_rate;
    for (i, s) in trip.samples.iter().enumerate() {
        let mut push = |field, message: &str| {
            out.push(Violation {
                sample: Some(i),
                field,
                message: message.to_string(),
            })
        };
        if !s.t.is_finite() {
            push("t", "t must be finite");
        }
        if !(s.lane_width > 0.0) {
            push("lane_width", "lane_width > 0");
        }
        if !(s.speed >= 0.0) {
            push("speed", "speed ≥ 0");
        }
        if !s.lane_offset.is_finite() {
            push("lane_offset", "lane_offset must be finite");
        }
        if let Some(d) = s.dist_to_next_onramp {
            if !(d >= 0.0) {
                push("dist_to_next_onramp", "dist_to_next_onramp ≥ 0");
            }
        }
        if let Some(r) = s.lead_range {
            if !(r > 0.0) {
                push("lead_range", "lead_range > 0");
            }
        }
        if s.lead_range_rate.is_some_and(|r| !r.is_finite()) {
            push("lead_range_rate", "lead_range_rate must be finite");
        }
        if s.right_targets.iter().any(|x| !x.is_finite()) {
            push("right_targets", "right_targets must be finite");
        }
        if i > 0 {
            let dt = s.t - trip.samples[i - 1].t;
            if !(dt > 0.0) {
                push("t", "timestamps not increasing");
            } else if period.is_finite() && (dt - period).abs() > PERIOD_TOL {
                push("t", "sample spacing differs from 1/sample_rate");
            }
        }
    }
    out
}

/// Write a trip in the trace format: header record, then one record per sample.
pub fn save_trip(trip: &Trip, path: &Path) -> Result<(), TraceError> {
    let io_err = |source| {
        TraceError::Jsonl(JsonlError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    jsonl::write_record(&mut w, &trip.header()).map_err(io_err)?;
    for s in &trip.samples {
        jsonl::write_record(&mut w, s).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read and validate a trace file.
pub fn load_trip(path: &Path) -> Result<Trip, TraceError> {
    let lines = jsonl::read_lines(path)?;
    let mut it = lines.into_iter();
    let (n, first) = it.next().ok_or_else(|| TraceError::MissingHeader {
        path: path.display().to_string(),
    })?;
    let header: TripHeader = jsonl::parse_line(path, n, &first)?;
    let samples = it
        .map(|(n, line)| jsonl::parse_line::<TraceSample>(path, n, &line))
        .collect::<Result<Vec<_>, _>>()?;
    let trip = Trip {
        trip_id: header.trip_id,
        samples,
        sample_rate: header.sample_rate,
        cam_to_rear: header.cam_to_rear,
        vehicle_width: header.vehicle_width,
        lane_width_true: header.lane_width_true,
    };
    if let Some(violation) = validate_trip(&trip).into_iter().next() {
        return Err(TraceError::Invalid {
            path: path.display().to_string(),
            violation,
        });
    }
    Ok(trip)
}
