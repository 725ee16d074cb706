//! Lane-change detection, context filtering, MLC/DLC classification and
//! head/cross/tail segmentation.
//!
//! Detection works on the lane-offset channel: when the SV center crosses a
//! lane line the offset reference switches lanes, so the channel jumps by
//! about one lane width with a sign change. Segmentation unwraps the offset
//! back onto the original lane's frame (`o(t)`, 0 at the original center, one
//! lane width at the destination center) and locates four threshold
//! crossings by linear interpolation between samples:
//!
//! - head start: `o` rises past the offset threshold (10 cm)
//! - cross start: the near vehicle edge touches the line, `o = W/2 - w/2`
//! - cross end: the far edge clears the line, `o = W/2 + w/2`
//! - tail end: `o` is within the offset threshold of the destination center

use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::trace::{mph_to_mps, RoadClass, TraceSample, Trip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "MLC")]
    Mlc,
    #[serde(rename = "DLC")]
    Dlc,
    Ambiguous,
    Other,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mlc => "MLC",
            Self::Dlc => "DLC",
            Self::Ambiguous => "Ambiguous",
            Self::Other => "Other",
        })
    }
}

impl std::str::FromStr for Classification {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlc" => Ok(Self::Mlc),
            "dlc" => Ok(Self::Dlc),
            "ambiguous" => Ok(Self::Ambiguous),
            "other" => Ok(Self::Other),
            _ => Err(format!("unknown class {s:?}")),
        }
    }
}

/// Which instant anchors the on-ramp distance test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampAnchor {
    #[default]
    HeadStart,
    CrossStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// On-ramp must be within this distance ahead, meters.
    pub ramp_window: f64,
    pub ramp_anchor: RampAnchor,
    pub lead_range_min: f64,
    pub lead_range_max: f64,
    pub lead_rate_min: f64,
    pub lead_rate_max: f64,
    /// Seconds before cross start searched for a slow lead.
    pub lookback: f64,
    /// Seconds after cross end searched for a right-side pass.
    pub pass_window: f64,
    /// Largest jump (meters) between consecutive samples for two right-side
    /// returns to count as the same target.
    pub pass_gate: f64,
    pub speed_min_mph: f64,
    pub speed_max_mph: f64,
    /// Offset from a lane center that opens and closes a lane change, meters.
    pub offset_threshold: f64,
    /// Head-start hysteresis, meters.
    pub offset_hysteresis: f64,
    /// Opposite-direction crossings closer than this (seconds) cancel out.
    pub min_episode_gap: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            ramp_window: 300.0,
            ramp_anchor: RampAnchor::HeadStart,
            lead_range_min: 1.0,
            lead_range_max: 100.0,
            lead_rate_min: -10.0,
            lead_rate_max: 2.5,
            lookback: 5.0,
            pass_window: 60.0,
            pass_gate: 5.0,
            speed_min_mph: 55.0,
            speed_max_mph: 63.0,
            offset_threshold: 0.10,
            offset_hysteresis: 0.02,
            min_episode_gap: 0.5,
        }
    }
}

/// A detected lane-line crossing of the SV center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub direction: Direction,
    pub t_boundary_cross: f64,
    /// Last sample referenced to the original lane.
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub t_head_start: f64,
    pub t_cross_start: f64,
    pub t_cross_end: f64,
    pub t_tail_end: f64,
    pub d_head: f64,
    pub d_cross: f64,
    pub d_tail: f64,
}

impl StageTiming {
    /// `t_cross_start == t_cross_end` is accepted only when `allow_point_cross`
    /// (a zero-width vehicle).
    pub fn new(
        t_head_start: f64,
        t_cross_start: f64,
        t_cross_end: f64,
        t_tail_end: f64,
        allow_point_cross: bool,
    ) -> Result<Self, ExtractionError> {
        let cross_ok = if allow_point_cross {
            t_cross_start <= t_cross_end
        } else {
            t_cross_start < t_cross_end
        };
        if !(t_head_start < t_cross_start && cross_ok && t_cross_end < t_tail_end) {
            return Err(ExtractionError::Ordering {
                times: [t_head_start, t_cross_start, t_cross_end, t_tail_end],
            });
        }
        Ok(Self {
            t_head_start,
            t_cross_start,
            t_cross_end,
            t_tail_end,
            d_head: t_cross_start - t_head_start,
            d_cross: t_cross_end - t_cross_start,
            d_tail: t_tail_end - t_cross_end,
        })
    }

    pub fn durations(&self) -> [f64; 3] {
        [self.d_head, self.d_cross, self.d_tail]
    }

    pub fn total(&self) -> f64 {
        self.t_tail_end - self.t_head_start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub event_id: String,
    pub trip_id: String,
    pub direction: Direction,
    pub classification: Classification,
    pub t_boundary_cross: f64,
    #[serde(flatten)]
    pub stage: StageTiming,
    /// m/s at the sample nearest cross start.
    pub speed_at_cross: f64,
    pub in_context: bool,
    pub mlc_condition: bool,
    pub dlc_condition: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractionError {
    #[error("incomplete event: trajectory never reaches the {boundary} threshold")]
    IncompleteEvent { boundary: &'static str },
    #[error("stage times out of order: {times:?}")]
    Ordering { times: [f64; 4] },
}

fn is_jump(a: &TraceSample, b: &TraceSample) -> Option<Direction> {
    let gate = 0.25 * (a.lane_width + b.lane_width);
    if a.lane_offset - b.lane_offset > gate && a.lane_offset > 0.0 && b.lane_offset < 0.0 {
        Some(Direction::Left)
    } else if b.lane_offset - a.lane_offset > gate && a.lane_offset < 0.0 && b.lane_offset > 0.0 {
        Some(Direction::Right)
    } else {
        None
    }
}

fn lerp_time(t0: f64, u0: f64, t1: f64, u1: f64, level: f64) -> f64 {
    if u1 == u0 {
        return t0;
    }
    t0 + (level - u0) / (u1 - u0) * (t1 - t0)
}

/// All lane-line crossings of the SV center, in time order. Opposite-direction
/// crossings closer than `min_episode_gap` are treated as jitter and dropped.
pub fn detect_lane_changes(trip: &Trip) -> Vec<Candidate> {
    detect_lane_changes_with(trip, &ExtractionConfig::default())
}

pub fn detect_lane_changes_with(trip: &Trip, cfg: &ExtractionConfig) -> Vec<Candidate> {
    let s = &trip.samples;
    let mut raw: Vec<Candidate> = Vec::new();
    for k in 0..s.len().saturating_sub(1) {
        let (a, b) = (&s[k], &s[k + 1]);
        let Some(direction) = is_jump(a, b) else {
            continue;
        };
        let sign = match direction {
            Direction::Left => 1.0,
            Direction::Right => -1.0,
        };
        let shift = 0.5 * (a.lane_width + b.lane_width);
        let u0 = sign * a.lane_offset;
        let u1 = sign * b.lane_offset + shift;
        let t = lerp_time(a.t, u0, b.t, u1, 0.5 * a.lane_width);
        raw.push(Candidate {
            direction,
            t_boundary_cross: t,
            index: k,
        });
    }

    let mut out: Vec<Candidate> = Vec::with_capacity(raw.len());
    for c in raw {
        match out.last() {
            Some(prev)
                if prev.direction != c.direction
                    && c.t_boundary_cross - prev.t_boundary_cross < cfg.min_episode_gap =>
            {
                out.pop();
            }
            _ => out.push(c),
        }
    }
    out
}

/// Unwrapped offset around a candidate: the sample range `[start, end)` between
/// the neighbouring crossings and `o(t)` on the original lane's frame.
struct Episode {
    start: usize,
    offsets: Vec<f64>,
    /// Position of the candidate's last original-lane sample in `offsets`.
    pivot: usize,
    /// Destination lane center in the original frame.
    dest_center: f64,
}

fn episode(trip: &Trip, cand: &Candidate) -> Episode {
    let s = &trip.samples;
    let k = cand.index;
    let mut start = k;
    while start > 0 && is_jump(&s[start - 1], &s[start]).is_none() {
        start -= 1;
    }
    let mut end = k + 2;
    while end < s.len() && is_jump(&s[end - 1], &s[end]).is_none() {
        end += 1;
    }
    let sign = match cand.direction {
        Direction::Left => 1.0,
        Direction::Right => -1.0,
    };
    let shift = 0.5 * (s[k].lane_width + s[k + 1].lane_width);
    let offsets = (start..end)
        .map(|i| {
            let o = sign * s[i].lane_offset;
            if i > k {
                o + shift
            } else {
                o
            }
        })
        .collect();
    Episode {
        start,
        offsets,
        pivot: k - start,
        dest_center: shift,
    }
}

/// Head/cross/tail boundaries of a detected lane change.
pub fn segment_stages(cand: &Candidate, trip: &Trip) -> Result<StageTiming, ExtractionError> {
    segment_stages_with(cand, trip, &ExtractionConfig::default())
}

pub fn segment_stages_with(
    cand: &Candidate,
    trip: &Trip,
    cfg: &ExtractionConfig,
) -> Result<StageTiming, ExtractionError> {
    let ep = episode(trip, cand);
    let u = &ep.offsets;
    let t = |i: usize| trip.samples[ep.start + i].t;
    let lane_w = trip.samples[cand.index].lane_width;
    let veh_w = trip.vehicle_width;
    let thr = cfg.offset_threshold;

    let th_cs = 0.5 * (lane_w - veh_w);
    let th_ce = 0.5 * (lane_w + veh_w);

    let j = (0..=ep.pivot)
        .rev()
        .find(|&i| u[i] < th_cs)
        .ok_or(ExtractionError::IncompleteEvent {
            boundary: "cross_start",
        })?;
    let t_cs = lerp_time(t(j), u[j], t(j + 1), u[j + 1], th_cs);

    let m = (j + 1..u.len())
        .find(|&i| u[i] >= th_ce)
        .ok_or(ExtractionError::IncompleteEvent {
            boundary: "cross_end",
        })?;
    let t_ce = lerp_time(t(m - 1), u[m - 1], t(m), u[m], th_ce);

    // Last sample clearly inside the original lane, then the first rise past
    // the threshold after it.
    let anchor = (0..=j)
        .rev()
        .find(|&i| u[i] <= thr - cfg.offset_hysteresis)
        .ok_or(ExtractionError::IncompleteEvent {
            boundary: "head_start",
        })?;
    let h = (anchor..=j)
        .find(|&i| u[i] <= thr && u[i + 1] > thr)
        .ok_or(ExtractionError::IncompleteEvent {
            boundary: "head_start",
        })?;
    let t_hs = lerp_time(t(h), u[h], t(h + 1), u[h + 1], thr);

    let c = ep.dest_center;
    let e = (m.max(1)..u.len())
        .find(|&i| (u[i] - c).abs() <= thr)
        .ok_or(ExtractionError::IncompleteEvent {
            boundary: "tail_end",
        })?;
    let level = if u[e - 1] < c { c - thr } else { c + thr };
    let t_te = lerp_time(t(e - 1), u[e - 1], t(e), u[e], level);

    StageTiming::new(t_hs, t_cs, t_ce, t_te, veh_w == 0.0)
}

/// Highway, daytime and speed band, all read at the sample nearest cross start.
pub fn filter_context(stage: &StageTiming, trip: &Trip, cfg: &ExtractionConfig) -> bool {
    let Some(s) = trip.nearest_sample(stage.t_cross_start) else {
        return false;
    };
    s.road_class == RoadClass::Highway
        && s.daytime
        && s.speed >= mph_to_mps(cfg.speed_min_mph)
        && s.speed <= mph_to_mps(cfg.speed_max_mph)
}

/// On-ramp within the ramp window ahead at the anchor instant.
pub fn mlc_condition(stage: &StageTiming, trip: &Trip, cfg: &ExtractionConfig) -> bool {
    let anchor = match cfg.ramp_anchor {
        RampAnchor::HeadStart => stage.t_head_start,
        RampAnchor::CrossStart => stage.t_cross_start,
    };
    trip.nearest_sample(anchor)
        .and_then(|s| s.dist_to_next_onramp)
        .is_some_and(|d| d <= cfg.ramp_window)
}

/// A slow lead inside the lookback window ending at cross start.
pub fn slow_lead_condition(stage: &StageTiming, trip: &Trip, cfg: &ExtractionConfig) -> bool {
    trip.window(stage.t_cross_start - cfg.lookback, stage.t_cross_start)
        .iter()
        .any(|s| match (s.lead_range, s.lead_range_rate) {
            (Some(r), Some(rr)) => {
                (cfg.lead_range_min..=cfg.lead_range_max).contains(&r)
                    && (cfg.lead_rate_min..=cfg.lead_rate_max).contains(&rr)
            }
            _ => false,
        })
}

/// A right-adjacent target moving from ahead to behind within the pass window
/// after cross end.
pub fn right_pass_condition(stage: &StageTiming, trip: &Trip, cfg: &ExtractionConfig) -> bool {
    let w = trip.window(stage.t_cross_end, stage.t_cross_end + cfg.pass_window);
    w.windows(2).any(|pair| {
        pair[0].right_targets.iter().any(|&a| {
            a > 0.0
                && pair[1]
                    .right_targets
                    .iter()
                    .any(|&b| b <= 0.0 && a - b <= cfg.pass_gate)
        })
    })
}

/// MLC when only the ramp test holds, DLC when only the slow-lead-and-pass
/// test holds, Ambiguous when both do, Other otherwise. Right lane changes
/// are always Other. Context filtering is the caller's job.
pub fn classify(cand: &Candidate, stage: &StageTiming, trip: &Trip, cfg: &ExtractionConfig) -> Classification {
    if cand.direction == Direction::Right {
        return Classification::Other;
    }
    let mlc = mlc_condition(stage, trip, cfg);
    let dlc = slow_lead_condition(stage, trip, cfg) && right_pass_condition(stage, trip, cfg);
    match (mlc, dlc) {
        (true, false) => Classification::Mlc,
        (false, true) => Classification::Dlc,
        (true, true) => Classification::Ambiguous,
        (false, false) => Classification::Other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompleteCandidate {
    pub trip_id: String,
    pub t_boundary_cross: f64,
    pub direction: Direction,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripExtraction {
    pub events: Vec<LaneChangeEvent>,
    pub incomplete: Vec<IncompleteCandidate>,
}

/// Detect, segment, filter and classify every lane change in a trip.
pub fn extract_events(trip: &Trip, cfg: &ExtractionConfig) -> TripExtraction {
    let mut out = TripExtraction::default();
    for (n, cand) in detect_lane_changes_with(trip, cfg).into_iter().enumerate() {
        let stage = match segment_stages_with(&cand, trip, cfg) {
            Ok(s) => s,
            Err(e) => {
                out.incomplete.push(IncompleteCandidate {
                    trip_id: trip.trip_id.clone(),
                    t_boundary_cross: cand.t_boundary_cross,
                    direction: cand.direction,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let in_context = filter_context(&stage, trip, cfg);
        let left = cand.direction == Direction::Left;
        let mlc = left && mlc_condition(&stage, trip, cfg);
        let dlc = left
            && slow_lead_condition(&stage, trip, cfg)
            && right_pass_condition(&stage, trip, cfg);
        let classification = if in_context {
            classify(&cand, &stage, trip, cfg)
        } else {
            Classification::Other
        };
        let speed_at_cross = trip
            .nearest_sample(stage.t_cross_start)
            .map_or(f64::NAN, |s| s.speed);
        out.events.push(LaneChangeEvent {
            event_id: format!("{}/{n:04}", trip.trip_id),
            trip_id: trip.trip_id.clone(),
            direction: cand.direction,
            classification,
            t_boundary_cross: cand.t_boundary_cross,
            stage,
            speed_at_cross,
            in_context,
            mlc_condition: mlc,
            dlc_condition: dlc,
        });
    }
    out
}

/// [`extract_events`] over many trips; one result per trip, in input order.
pub fn extract_corpus(trips: &[Trip], cfg: &ExtractionConfig, exec: Execution) -> Vec<TripExtraction> {
    par::map(exec, trips, |t| extract_events(t, cfg))
}
