//! Synthetic trips with planted lane changes and exact ground truth.
//!
//! A trip is a sequence of slots, one lane change per slot: lane keeping,
//! the lateral transition, then a long settle so that the pass window of one
//! event never overlaps the next. Each slot carries only the channels needed
//! by the classification queries of its planted class.
//!
//! The lateral transition is a piecewise quintic Hermite curve with knots at
//! the four stage boundaries, so the threshold crossing times are the knot
//! times exactly. Knot velocities are the harmonic mean of the adjacent
//! secant slopes and accelerations are zero, which keeps every piece monotone.
//!
//! Rear-camera frames are synthesized by forward projection of the same five
//! points an annotator would click: two on each boundary of the target lane
//! and one on the POV's front-bottom edge.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera;
use crate::extraction::{Classification, Direction};
use crate::gap::{FrameSet, FRAMES_PER_EVENT};
use crate::par::{self, Execution};
use crate::stats::GevParams;
use crate::trace::{mph_to_mps, CameraIntrinsics, RoadClass, TraceSample, Trip};

/// Rear camera height above the road, meters.
pub const CAMERA_HEIGHT: f64 = 2.0;
/// Duration of the lateral ramp into the head threshold and out of the tail
/// threshold, seconds.
pub const EDGE_SEGMENT: f64 = 1.0;
/// Stage durations drawn outside this range are redrawn, seconds.
pub const STAGE_DURATION_RANGE: (f64, f64) = (0.2, 30.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum DurationModel {
    Uniform { lo: f64, hi: f64 },
    Gev(GevParams),
}

impl DurationModel {
    /// Draw a duration inside [`STAGE_DURATION_RANGE`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = STAGE_DURATION_RANGE;
        loop {
            let d = match *self {
                Self::Uniform { lo, hi } => rng.random_range(lo..=hi),
                Self::Gev(p) => p.sample(rng),
            };
            if (lo..=hi).contains(&d) {
                return d;
            }
        }
    }

    fn validate(&self, field: &'static str) -> Result<(), SynthError> {
        let (lo, hi) = STAGE_DURATION_RANGE;
        match *self {
            Self::Uniform { lo: a, hi: b } if !(a <= b && a >= lo && b <= hi) => Err(SynthError::invalid(
                field,
                format!("uniform bounds must satisfy {lo} <= lo <= hi <= {hi}, got [{a}, {b}]"),
            )),
            Self::Gev(p) => {
                p.validate().map_err(|e| SynthError::invalid(field, e.to_string()))?;
                // The redraw loop must be able to terminate.
                if !(p.cdf(hi) - p.cdf(lo) > 1e-3) {
                    return Err(SynthError::invalid(field, "almost no mass inside the stage duration range".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-class stage durations and gap distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub head: DurationModel,
    pub cross: DurationModel,
    pub tail: DurationModel,
    /// Range at crossing is uniform on `[range_lo, range_hi]`, meters.
    pub range_lo: f64,
    pub range_hi: f64,
    /// Range rate is normal, m/s.
    pub range_rate_mean: f64,
    pub range_rate_sd: f64,
}

impl ClassProfile {
    pub fn new_uniform(head: (f64, f64), cross: (f64, f64), tail: (f64, f64)) -> Self {
        let u = |(lo, hi)| DurationModel::Uniform { lo, hi };
        Self {
            head: u(head),
            cross: u(cross),
            tail: u(tail),
            range_lo: 3.0,
            range_hi: 60.0,
            range_rate_mean: 0.0,
            range_rate_sd: 2.5,
        }
    }

    fn validate(&self, prefix: &'static str) -> Result<(), SynthError> {
        self.head.validate(prefix)?;
        self.cross.validate(prefix)?;
        self.tail.validate(prefix)?;
        if !(self.range_lo > 0.0 && self.range_lo < self.range_hi) {
            return Err(SynthError::invalid(prefix, "need 0 < range_lo < range_hi".into()));
        }
        if !(self.range_rate_sd >= 0.0 && self.range_rate_mean.is_finite()) {
            return Err(SynthError::invalid(prefix, "range_rate_sd must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_mlc: usize,
    pub n_dlc: usize,
    pub n_ambiguous: usize,
    pub n_other: usize,
    pub mlc: ClassProfile,
    /// Also used for Ambiguous and Other events.
    pub dlc: ClassProfile,
    /// Standard deviation of isotropic pixel noise per annotated point.
    pub pixel_noise: f64,
    pub frame_drop_probability: f64,
    /// Chance that an event has a POV (and therefore frames).
    pub pov_probability: f64,
    pub seed: u64,
    pub sample_rate: f64,
    pub lane_width: f64,
    pub vehicle_width: f64,
    pub cam_to_rear: f64,
    /// Upper bound on lane changes per generated trip.
    pub events_per_trip: usize,
    /// Lane keeping at the start of every slot, seconds.
    pub lead_in: f64,
    /// Time from cross end to the end of the slot, seconds.
    pub settle: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut mlc = ClassProfile::new_uniform((1.5, 5.0), (1.8, 4.5), (1.5, 5.0));
        mlc.range_rate_mean = -1.5;
        mlc.range_rate_sd = 3.0;
        let mut dlc = ClassProfile::new_uniform((1.5, 5.0), (2.0, 5.0), (1.5, 5.0));
        dlc.range_rate_mean = 0.5;
        Self {
            n_mlc: 20,
            n_dlc: 60,
            n_ambiguous: 10,
            n_other: 10,
            mlc,
            dlc,
            pixel_noise: 0.5,
            frame_drop_probability: 0.05,
            pov_probability: 1.0,
            seed: 0,
            sample_rate: 10.0,
            lane_width: 3.66,
            vehicle_width: 2.6,
            cam_to_rear: 16.5,
            events_per_trip: 25,
            lead_in: 8.0,
            settle: 70.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let prob = |v: f64, f: &'static str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SynthError::invalid(f, format!("must be in [0, 1], got {v}")))
            }
        };
        self.mlc.validate("mlc")?;
        self.dlc.validate("dlc")?;
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return Err(SynthError::invalid("pixel_noise", format!("must be >= 0, got {}", self.pixel_noise)));
        }
        prob(self.frame_drop_probability, "frame_drop_probability")?;
        prob(self.pov_probability, "pov_probability")?;
        if !(self.sample_rate > 0.0) {
            return Err(SynthError::invalid("sample_rate", "must be > 0".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(SynthError::invalid("lane_width", "must be > 0".into()));
        }
        // Both the head and tail stages need room between the 10 cm threshold
        // and the vehicle edge touching the line.
        if !(self.vehicle_width > 0.0 && self.vehicle_width < self.lane_width - 0.4) {
            return Err(SynthError::invalid("vehicle_width", "must be in (0, lane_width - 0.4)".into()));
        }
        if !(self.cam_to_rear >= 0.0) {
            return Err(SynthError::invalid("cam_to_rear", "must be >= 0".into()));
        }
        if self.events_per_trip == 0 {
            return Err(SynthError::invalid("events_per_trip", "must be >= 1".into()));
        }
        // Frames need ten samples before cross start.
        if !(self.lead_in >= FRAMES_PER_EVENT as f64 / self.sample_rate) {
            return Err(SynthError::invalid("lead_in", "too short for the frame window".into()));
        }
        if !(self.settle >= 65.0) {
            return Err(SynthError::invalid("settle", "must cover the 60 s pass window, >= 65".into()));
        }
        Ok(())
    }

    pub fn total_events(&self) -> usize {
        self.n_mlc + self.n_dlc + self.n_ambiguous + self.n_other
    }

    fn profile(&self, class: Classification) -> &ClassProfile {
        match class {
            Classification::Mlc => &self.mlc,
            _ => &self.dlc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

impl SynthError {
    fn invalid(field: &'static str, message: String) -> Self {
        Self::Invalid { field, message }
    }
}

/// How a planted Other event fails the MLC/DLC queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtherKind {
    /// Left change with neither an on-ramp nor a slow lead.
    NoConditions,
    RightChange,
    /// Ramp present but speed below the band.
    LowSpeed,
    /// Slow lead and pass present but at night.
    Night,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub event_id: String,
    pub trip_id: String,
    pub true_class: Classification,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_kind: Option<OtherKind>,
    pub t_head_start: f64,
    pub t_cross_start: f64,
    pub t_cross_end: f64,
    pub t_tail_end: f64,
    /// Range at the last frame (the last sample at or before cross start).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_range_at_cross: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_range_rate: Option<f64>,
    /// Range per frame, frames 1..=10.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pov_trajectory: Vec<f64>,
    /// m/s, constant over the slot.
    pub speed: f64,
}

impl PlantedEvent {
    pub fn durations(&self) -> [f64; 3] {
        [
            self.t_cross_start - self.t_head_start,
            self.t_cross_end - self.t_cross_start,
            self.t_tail_end - self.t_cross_end,
        ]
    }
}

/// Lateral position, in the original lane's frame, of one lane change.
/// Zero before the transition and one lane width after it.
#[derive(Clone, Debug, PartialEq)]
pub struct LateralProfile {
    /// `(t, position, velocity)`; acceleration is zero at every knot.
    knots: Vec<(f64, f64, f64)>,
}

impl LateralProfile {
    /// Knots at the stage boundaries plus one [`EDGE_SEGMENT`] on each side.
    pub fn new(
        stage: [f64; 4],
        lane_width: f64,
        vehicle_width: f64,
        threshold: f64,
    ) -> Self {
        let [t_hs, t_cs, t_ce, t_te] = stage;
        let pts = [
            (t_hs - EDGE_SEGMENT, 0.0),
            (t_hs, threshold),
            (t_cs, 0.5 * (lane_width - vehicle_width)),
            (t_ce, 0.5 * (lane_width + vehicle_width)),
            (t_te, lane_width - threshold),
            (t_te + EDGE_SEGMENT, lane_width),
        ];
        let secant = |i: usize| (pts[i + 1].1 - pts[i].1) / (pts[i + 1].0 - pts[i].0);
        let knots = (0..pts.len())
            .map(|i| {
                let v = if i == 0 || i == pts.len() - 1 {
                    0.0
                } else {
                    let (a, b) = (secant(i - 1), secant(i));
                    2.0 * a * b / (a + b)
                };
                (pts[i].0, pts[i].1, v)
            })
            .collect();
        Self { knots }
    }

    pub fn start(&self) -> f64 {
        self.knots[0].0
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    pub fn position(&self, t: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if t <= first.0 {
            return first.1;
        }
        if t >= last.0 {
            return last.1;
        }
        let i = self.knots.partition_point(|k| k.0 <= t) - 1;
        let (t0, y0, v0) = self.knots[i];
        let (t1, y1, v1) = self.knots[i + 1];
        let h = t1 - t0;
        let u = (t - t0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let (u4, u5) = (u3 * u, u3 * u2);
        // Quintic Hermite basis with zero end accelerations.
        let h00 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
        let h10 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
        let h01 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
        let h11 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
        h00 * y0 + h10 * h * v0 + h01 * y1 + h11 * h * v1
    }
}

/// Positions of a POV and the SV at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameGeometry {
    /// SV center relative to the original lane center, toward the target lane.
    pub lateral_offset: f64,
    /// Trailer rear to POV front, meters.
    pub range: f64,
    pub lane_width: f64,
    pub vehicle_width: f64,
    pub cam_to_rear: f64,
}

/// Project the five annotation points for one frame. The camera sits on the
/// target-side mirror at [`CAMERA_HEIGHT`], looking backward; image x grows
/// toward the target lane.
pub fn synthesize_frame(k: &CameraIntrinsics, g: &FrameGeometry, frame_index: u32) -> FrameSet {
    let cam_x = g.lateral_offset + 0.5 * g.vehicle_width;
    let near = 0.5 * g.lane_width - cam_x;
    let far = 1.5 * g.lane_width - cam_x;
    let center = g.lane_width - cam_x;
    let depth = g.range + g.cam_to_rear;
    let za = (0.5 * depth).max(6.0);
    let zb = (0.8 * depth).max(za + 4.0);
    let px = |x: f64, z: f64| {
        // Every depth here is at least 6 m.
        let (u, v) = camera::project(k, [x, CAMERA_HEIGHT, z]).unwrap_or((f64::NAN, f64::NAN));
        [u, v]
    };
    FrameSet {
        frame_index,
        p_left_1: px(near, za),
        p_left_2: px(near, zb),
        p_right_1: px(far, za),
        p_right_2: px(far, zb),
        p_bottom: px(center, depth),
        valid: true,
    }
}

/// Indices of the last [`FRAMES_PER_EVENT`] samples at or before `t`.
fn frame_sample_indices(trip: &Trip, t: f64) -> Option<std::ops::Range<usize>> {
    let end = trip.samples.partition_point(|s| s.t <= t);
    (end >= FRAMES_PER_EVENT).then(|| end - FRAMES_PER_EVENT..end)
}

/// Ten rear-camera frames for an event with a POV, ending at the last sample
/// at or before cross start. Events without a POV yield no frames.
pub fn synthesize_frames(
    event: &PlantedEvent,
    trip: &Trip,
    intrinsics: &CameraIntrinsics,
    sigma_px: f64,
    drop_p: f64,
    seed: u64,
) -> Vec<FrameSet> {
    let (Some(_), Some(_)) = (event.true_range_at_cross, event.true_range_rate) else {
        return Vec::new();
    };
    let Some(idx) = frame_sample_indices(trip, event.t_cross_start) else {
        return Vec::new();
    };
    let sign = match event.direction {
        Direction::Left => 1.0,
        Direction::Right => -1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_px).ok().filter(|_| sigma_px > 0.0);
    idx.zip(event.pov_trajectory.iter())
        .enumerate()
        .map(|(i, (si, &range))| {
            let s = &trip.samples[si];
            let g = FrameGeometry {
                lateral_offset: sign * s.lane_offset,
                range,
                lane_width: trip.lane_width_true,
                vehicle_width: trip.vehicle_width,
                cam_to_rear: trip.cam_to_rear,
            };
            let mut f = synthesize_frame(intrinsics, &g, i as u32 + 1);
            if let Some(n) = noise {
                for p in [
                    &mut f.p_left_1,
                    &mut f.p_left_2,
                    &mut f.p_right_1,
                    &mut f.p_right_2,
                    &mut f.p_bottom,
                ] {
                    p[0] += n.sample(&mut rng);
                    p[1] += n.sample(&mut rng);
                }
            }
            f.valid = !rng.random_bool(drop_p);
            f
        })
        .collect()
}

/// A generated trip with its ground truth and frames (one entry per event,
/// empty when the event has no POV).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTrip {
    pub trip: Trip,
    pub events: Vec<PlantedEvent>,
    pub frames: Vec<Vec<FrameSet>>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn class_list(cfg: &SynthConfig) -> Vec<Classification> {
    let mut v = Vec::with_capacity(cfg.total_events());
    v.extend(std::iter::repeat_n(Classification::Mlc, cfg.n_mlc));
    v.extend(std::iter::repeat_n(Classification::Dlc, cfg.n_dlc));
    v.extend(std::iter::repeat_n(Classification::Ambiguous, cfg.n_ambiguous));
    v.extend(std::iter::repeat_n(Classification::Other, cfg.n_other));
    v
}

/// One trip holding every planted event of the config, in shuffled order.
pub fn generate_trip(
    config: &SynthConfig,
    intrinsics: &CameraIntrinsics,
    seed: u64,
) -> Result<SynthTrip, SynthError> {
    config.validate()?;
    let mut classes = class_list(config);
    let mut rng = rng_for(seed, 0);
    classes.shuffle(&mut rng);
    Ok(build_trip(&classes, config, intrinsics, &mut rng, format!("trip-{seed:016x}")))
}

/// The whole corpus described by `config`, split into trips of at most
/// `events_per_trip` events. Trip `i` draws from stream `i + 1` of the
/// config seed, so the result does not depend on the execution mode.
pub fn generate_corpus(
    config: &SynthConfig,
    intrinsics: &CameraIntrinsics,
    exec: Execution,
) -> Result<Vec<SynthTrip>, SynthError> {
    config.validate()?;
    let mut classes = class_list(config);
    classes.shuffle(&mut rng_for(config.seed, 0));
    let chunks: Vec<&[Classification]> = classes.chunks(config.events_per_trip).collect();
    Ok(par::map_indexed(exec, chunks.len(), |i| {
        let mut rng = rng_for(config.seed, i as u64 + 1);
        build_trip(chunks[i], config, intrinsics, &mut rng, format!("trip-{i:04}"))
    }))
}

/// Per-slot plan drawn before any sample is written.
struct Slot {
    end: f64,
    event: PlantedEvent,
    profile: LateralProfile,
    sign: f64,
    daytime: bool,
    /// On-ramp distance at head start.
    ramp_at_head: Option<f64>,
    /// Lead range and rate at cross start.
    lead: Option<(f64, f64)>,
    /// Right-lane target: pass time and closing speed.
    pass: Option<(f64, f64)>,
    frame_seed: u64,
}

fn plan_slot<R: Rng + ?Sized>(
    class: Classification,
    start: f64,
    n: usize,
    cfg: &SynthConfig,
    rng: &mut R,
    trip_id: &str,
) -> Slot {
    let other_kind = (class == Classification::Other).then(|| {
        [
            OtherKind::NoConditions,
            OtherKind::RightChange,
            OtherKind::LowSpeed,
            OtherKind::Night,
        ][rng.random_range(0..4)]
    });
    let profile = cfg.profile(class);
    let d_head = profile.head.sample(rng);
    let d_cross = profile.cross.sample(rng);
    let d_tail = profile.tail.sample(rng);
    let t_hs = start + cfg.lead_in + EDGE_SEGMENT;
    let t_cs = t_hs + d_head;
    let t_ce = t_cs + d_cross;
    let t_te = t_ce + d_tail;
    let end = (t_ce + cfg.settle).max(t_te + EDGE_SEGMENT + 1.0);

    let speed_mph = match other_kind {
        Some(OtherKind::LowSpeed) => rng.random_range(40.0..50.0),
        _ => rng.random_range(56.0..62.0),
    };
    let mlc_conditions = matches!(class, Classification::Mlc | Classification::Ambiguous)
        || other_kind == Some(OtherKind::LowSpeed);
    let dlc_conditions = matches!(class, Classification::Dlc | Classification::Ambiguous)
        || other_kind == Some(OtherKind::Night);
    let ramp_at_head = mlc_conditions.then(|| rng.random_range(50.0..280.0));
    let lead = dlc_conditions.then(|| (rng.random_range(15.0..80.0), rng.random_range(-5.0..0.0)));
    let pass = dlc_conditions.then(|| (t_ce + rng.random_range(5.0..50.0), rng.random_range(1.0..5.0)));

    let (mut r10, mut rdot) = (None, None);
    let mut pov_trajectory = Vec::new();
    if rng.random_bool(cfg.pov_probability) {
        let r = rng.random_range(profile.range_lo..=profile.range_hi);
        let normal = Normal::new(profile.range_rate_mean, profile.range_rate_sd).unwrap_or(Normal::new(0.0, 0.0).unwrap());
        let lookback = (FRAMES_PER_EVENT - 1) as f64 / cfg.sample_rate;
        // Keep every frame at least 1 m behind the trailer.
        let mut rd = normal.sample(rng);
        for _ in 0..100 {
            if r - rd * lookback >= 1.0 {
                break;
            }
            rd = normal.sample(rng);
        }
        if r - rd * lookback < 1.0 {
            rd = 0.0;
        }
        pov_trajectory = (1..=FRAMES_PER_EVENT)
            .map(|i| r + rd * (i as f64 - FRAMES_PER_EVENT as f64) / cfg.sample_rate)
            .collect();
        r10 = Some(r);
        rdot = Some(rd);
    }
    let direction = if other_kind == Some(OtherKind::RightChange) {
        Direction::Right
    } else {
        Direction::Left
    };
    let event = PlantedEvent {
        event_id: format!("{trip_id}/{n:04}"),
        trip_id: trip_id.to_string(),
        true_class: class,
        direction,
        other_kind,
        t_head_start: t_hs,
        t_cross_start: t_cs,
        t_cross_end: t_ce,
        t_tail_end: t_te,
        true_range_at_cross: r10,
        true_range_rate: rdot,
        pov_trajectory,
        speed: mph_to_mps(speed_mph),
    };
    Slot {
        end,
        profile: LateralProfile::new([t_hs, t_cs, t_ce, t_te], cfg.lane_width, cfg.vehicle_width, 0.10),
        sign: if direction == Direction::Left { 1.0 } else { -1.0 },
        daytime: other_kind != Some(OtherKind::Night),
        ramp_at_head,
        lead,
        pass,
        event,
        frame_seed: rng.next_u64(),
    }
}

fn build_trip<R: Rng + ?Sized>(
    classes: &[Classification],
    cfg: &SynthConfig,
    intrinsics: &CameraIntrinsics,
    rng: &mut R,
    trip_id: String,
) -> SynthTrip {
    let mut slots = Vec::with_capacity(classes.len());
    let mut start = 0.0;
    for (n, &class) in classes.iter().enumerate() {
        let slot = plan_slot(class, start, n, cfg, rng, &trip_id);
        start = slot.end;
        slots.push(slot);
    }

    let w = cfg.lane_width;
    let dt = 1.0 / cfg.sample_rate;
    let n_samples = (start * cfg.sample_rate).ceil() as usize;
    let mut samples = Vec::with_capacity(n_samples);
    let mut slot_i = 0;
    let mut lane = 0.0;
    for k in 0..n_samples {
        let t = k as f64 * dt;
        while slot_i + 1 < slots.len() && t >= slots[slot_i].end {
            lane += slots[slot_i].sign;
            slot_i += 1;
        }
        let s = &slots[slot_i];
        let e = &s.event;
        let o = lane * w + s.sign * s.profile.position(t);
        let lane_offset = o - w * (o / w).round();

        let dist_to_next_onramp = s.ramp_at_head.and_then(|d0| {
            let d = d0 - e.speed * (t - e.t_head_start);
            (d >= 0.0).then_some(d)
        });
        let (lead_range, lead_range_rate) = match s.lead {
            Some((r, rr)) if t <= e.t_cross_end => {
                let range = r + rr * (t - e.t_cross_start);
                if range > 0.5 {
                    (Some(range), Some(rr))
                } else {
                    (None, None)
                }
            }
            _ => (None, None),
        };
        let right_targets = match s.pass {
            Some((t_pass, v)) if t >= e.t_cross_end && t <= t_pass + 3.0 => vec![v * (t_pass - t)],
            _ => Vec::new(),
        };
        samples.push(TraceSample {
            t,
            speed: e.speed,
            lane_offset,
            lane_width: w,
            dist_to_next_onramp,
            lead_range,
            lead_range_rate,
            right_targets,
            daytime: s.daytime,
            road_class: RoadClass::Highway,
        });
    }

    let trip = Trip {
        trip_id,
        samples,
        sample_rate: cfg.sample_rate,
        cam_to_rear: cfg.cam_to_rear,
        vehicle_width: cfg.vehicle_width,
        lane_width_true: w,
    };
    let frames = slots
        .iter()
        .map(|s| {
            synthesize_frames(
                &s.event,
                &trip,
                intrinsics,
                cfg.pixel_noise,
                cfg.frame_drop_probability,
                s.frame_seed,
            )
        })
        .collect();
    let events = slots.into_iter().map(|s| s.event).collect();
    SynthTrip { trip, events, frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gap::event_range;

    fn single(class: Classification) -> SynthConfig {
        SynthConfig {
            n_mlc: usize::from(class == Classification::Mlc),
            n_dlc: usize::from(class == Classification::Dlc),
            n_ambiguous: usize::from(class == Classification::Ambiguous),
            n_other: usize::from(class == Classification::Other),
            pixel_noise: 0.0,
            frame_drop_probability: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn profile_hits_thresholds_at_knots() {
        let (w, vw) = (3.66, 2.6);
        let p = LateralProfile::new([10.0, 13.0, 15.5, 18.0], w, vw, 0.1);
        assert!((p.position(10.0) - 0.1).abs() < 1e-12);
        assert!((p.position(13.0) - 0.5 * (w - vw)).abs() < 1e-12);
        assert!((p.position(15.5) - 0.5 * (w + vw)).abs() < 1e-12);
        assert!((p.position(18.0) - (w - 0.1)).abs() < 1e-12);
        assert_eq!(p.position(0.0), 0.0);
        assert_eq!(p.position(30.0), w);
    }

    #[test]
    fn profile_is_monotone() {
        for stage in [[10.0, 10.5, 16.0, 16.3], [10.0, 18.0, 18.4, 30.0], [5.0, 7.0, 9.0, 11.0]] {
            let p = LateralProfile::new(stage, 3.66, 2.6, 0.1);
            let mut prev = p.position(p.start());
            let mut t = p.start();
            while t < p.end() {
                t += 1e-3;
                let y = p.position(t);
                assert!(y >= prev - 1e-12, "stage {stage:?} decreasing at {t}");
                prev = y;
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig::default();
        let k = CameraIntrinsics::default();
        let a = generate_trip(&cfg, &k, 7).unwrap();
        let b = generate_trip(&cfg, &k, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_trip(&cfg, &k, 8).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn corpus_independent_of_execution() {
        let cfg = SynthConfig {
            events_per_trip: 7,
            ..SynthConfig::default()
        };
        let k = CameraIntrinsics::default();
        let a = generate_corpus(&cfg, &k, Execution::Sequential).unwrap();
        let b = generate_corpus(&cfg, &k, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|t| t.events.len()).sum::<usize>(), cfg.total_events());
    }

    #[test]
    fn other_without_pov_has_no_range() {
        let cfg = SynthConfig {
            pov_probability: 0.0,
            ..single(Classification::Other)
        };
        let st = generate_trip(&cfg, &CameraIntrinsics::default(), 1).unwrap();
        assert_eq!(st.events.len(), 1);
        assert_eq!(st.events[0].true_range_at_cross, None);
        assert!(st.frames[0].is_empty());
    }

    #[test]
    fn noiseless_frames_recover_true_range() {
        let k = CameraIntrinsics::default();
        for seed in 0..5 {
            let st = generate_trip(&single(Classification::Dlc), &k, seed).unwrap();
            let e = &st.events[0];
            let r = event_range(&st.frames[0], st.trip.lane_width_true, st.trip.cam_to_rear, &k).unwrap();
            assert!((r.range - e.true_range_at_cross.unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_at_twenty_meters() {
        let k = CameraIntrinsics::default();
        let g = FrameGeometry {
            lateral_offset: 0.3,
            range: 20.0,
            lane_width: 3.66,
            vehicle_width: 2.6,
            cam_to_rear: 5.0,
        };
        let f = synthesize_frame(&k, &g, 10);
        let r = crate::gap::frame_range(&f, 3.66, 5.0, &k).unwrap();
        assert!((r - 20.0).abs() < 1e-6);
    }

    #[test]
    fn all_frames_dropped() {
        let cfg = SynthConfig {
            frame_drop_probability: 1.0,
            ..single(Classification::Mlc)
        };
        let st = generate_trip(&cfg, &CameraIntrinsics::default(), 3).unwrap();
        assert_eq!(st.frames[0].len(), 10);
        assert!(st.frames[0].iter().all(|f| !f.valid));
    }

    #[test]
    fn mlc_ramp_within_window_at_head_start() {
        let st = generate_trip(&single(Classification::Mlc), &CameraIntrinsics::default(), 4).unwrap();
        let e = &st.events[0];
        let d = st.trip.nearest_sample(e.t_head_start).unwrap().dist_to_next_onramp.unwrap();
        assert!(d <= 300.0);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig {
            frame_drop_probability: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(SynthError::Invalid { field: "frame_drop_probability", .. })
        ));
        let cfg = SynthConfig {
            pixel_noise: -1.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn generated_trip_is_valid() {
        let st = generate_trip(&SynthConfig::default(), &CameraIntrinsics::default(), 11).unwrap();
        assert!(crate::trace::validate_trip(&st.trip).is_empty());
    }
}
