//! Rear-gap range and range-rate estimation from rear-camera annotations.
//!
//! Each frame carries five pixel points: two on each boundary of the POV's
//! lane and one on the POV's front-bottom edge. After undistortion the two
//! boundaries are extended as lines and cut by the horizontal line through
//! the bottom point; the cut length `b` is the lane width on the z = 1 plane,
//! so the camera-to-POV distance is `B / b` for a real lane width `B`, and the
//! gap to the trailer rear is that distance minus the camera-to-rear offset.

use serde::{Deserialize, Serialize};

use crate::camera::{self, CameraError};
use crate::trace::CameraIntrinsics;

/// Frames per event; the last one is the boundary-crossing frame.
pub const FRAMES_PER_EVENT: usize = 10;
/// Events with fewer valid frames are discarded.
pub const MIN_VALID_FRAMES: usize = 7;

pub type Pixel = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    /// 1-based position within the event.
    pub frame_index: u32,
    pub p_left_1: Pixel,
    pub p_left_2: Pixel,
    pub p_right_1: Pixel,
    pub p_right_2: Pixel,
    pub p_bottom: Pixel,
    pub valid: bool,
}

/// A [`FrameSet`] tagged with the event it belongs to, as stored in a frames
/// file. `anchor_time` is the planted or annotated cross-start time used to
/// match frames to extracted events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub trip_id: String,
    pub event_id: String,
    pub anchor_time: f64,
    #[serde(flatten)]
    pub frame: FrameSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeRateMode {
    /// Through-origin weighted regression of range on frame index, scaled by
    /// the frame rate. Kept for comparison; its value depends on the range
    /// level, not just on its trend.
    PaperLiteral,
    /// Slope of a weighted affine fit of range on time.
    #[default]
    WlsAffine,
}

impl std::str::FromStr for RangeRateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_literal" => Ok(Self::PaperLiteral),
            "wls_affine" => Ok(Self::WlsAffine),
            other => Err(format!(
                "unknown range-rate mode {other:?} (expected paper_literal or wls_affine)"
            )),
        }
    }
}

impl std::fmt::Display for RangeRateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PaperLiteral => "paper_literal",
            Self::WlsAffine => "wls_affine",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Range at boundary crossing, meters.
    pub range: f64,
    /// Range rate, m/s; negative when the POV closes on the SV.
    pub range_rate: f64,
    pub n_valid: usize,
    pub crossing_frame_extrapolated: bool,
    pub mode: RangeRateMode,
}

/// One line of a gaps file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub trip_id: String,
    pub event_id: String,
    #[serde(flatten)]
    pub estimate: GapEstimate,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GapError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("non-positive image lane width {0}")]
    NonPositiveWidth(f64),
    #[error("reference lane width must be > 0, got {0}")]
    InvalidReference(f64),
    #[error("invalid event: {n_valid} valid frames, need at least {min}")]
    InvalidEvent { n_valid: usize, min: usize },
    #[error("range {range} at frame {frame} leaves the weight undefined")]
    WeightUndefined { frame: u32, range: f64 },
    #[error("estimated range {0} m at crossing is not positive")]
    NonPositiveRange(f64),
    #[error("singular normal equations")]
    Singular,
    #[error("expected {expected} frames, got {got}")]
    FrameCount { expected: usize, got: usize },
}

/// Pixel to normalized coordinates on the z = 1 plane.
pub fn undistort_point(pixel: Pixel, intrinsics: &CameraIntrinsics) -> Result<[f64; 2], GapError> {
    let (x, y) = camera::undistort(intrinsics, pixel[0], pixel[1])?;
    Ok([x, y])
}

/// x-coordinate where the line through `a` and `b` meets the horizontal line `y`.
fn cut_at(a: [f64; 2], b: [f64; 2], y: f64) -> Result<f64, GapError> {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    if dx == 0.0 && dy == 0.0 {
        return Err(GapError::DegenerateGeometry("coincident boundary points"));
    }
    if dy.abs() <= 1e-12 * dx.abs() {
        return Err(GapError::DegenerateGeometry("horizontal lane boundary"));
    }
    Ok(a[0] + (y - a[1]) * dx / dy)
}

/// Lane width on the z = 1 plane at the depth of the POV's bottom edge.
pub fn lane_width_in_image(frame: &FrameSet, intrinsics: &CameraIntrinsics) -> Result<f64, GapError> {
    let l1 = undistort_point(frame.p_left_1, intrinsics)?;
    let l2 = undistort_point(frame.p_left_2, intrinsics)?;
    let r1 = undistort_point(frame.p_right_1, intrinsics)?;
    let r2 = undistort_point(frame.p_right_2, intrinsics)?;
    let bottom = undistort_point(frame.p_bottom, intrinsics)?;
    let left = cut_at(l1, l2, bottom[1])?;
    let right = cut_at(r1, r2, bottom[1])?;
    let b = right - left;
    if !(b > 0.0) {
        return Err(GapError::NonPositiveWidth(b));
    }
    Ok(b)
}

/// Single-frame range `B / b - l_t`. May be negative; callers decide.
pub fn frame_range(
    frame: &FrameSet,
    lane_width: f64,
    cam_to_rear: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<f64, GapError> {
    if !(lane_width > 0.0) {
        return Err(GapError::InvalidReference(lane_width));
    }
    let b = lane_width_in_image(frame, intrinsics)?;
    Ok(range_from_width(b, lane_width, cam_to_rear))
}

/// Pinhole similar triangles at z = 1, then shift to the trailer rear.
pub fn range_from_width(b: f64, lane_width: f64, cam_to_rear: f64) -> f64 {
    lane_width / b - cam_to_rear
}

/// Range at the crossing frame plus the per-frame ranges it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRange {
    pub range: f64,
    pub n_valid: usize,
    pub extrapolated: bool,
    /// `(frame_index, R_i)` for every valid frame.
    pub per_frame: Vec<(u32, f64)>,
}

/// Range at the boundary-crossing frame (index 10). When that frame is
/// invalid the value comes from an ordinary least-squares line through all
/// valid `(frame_index, R_i)` pairs, evaluated at index 10.
pub fn event_range(
    frames: &[FrameSet],
    lane_width: f64,
    cam_to_rear: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<EventRange, GapError> {
    event_range_with(frames, lane_width, cam_to_rear, intrinsics, MIN_VALID_FRAMES)
}

pub fn event_range_with(
    frames: &[FrameSet],
    lane_width: f64,
    cam_to_rear: f64,
    intrinsics: &CameraIntrinsics,
    min_valid: usize,
) -> Result<EventRange, GapError> {
    let crossing = frames.iter().map(|f| f.frame_index).max().unwrap_or(0);
    let mut per_frame = Vec::with_capacity(frames.len());
    for f in frames.iter().filter(|f| f.valid) {
        per_frame.push((f.frame_index, frame_range(f, lane_width, cam_to_rear, intrinsics)?));
    }
    let n_valid = per_frame.len();
    if n_valid < min_valid {
        return Err(GapError::InvalidEvent {
            n_valid,
            min: min_valid,
        });
    }
    if let Some(&(_, r)) = per_frame.iter().find(|(i, _)| *i == crossing) {
        return Ok(EventRange {
            range: r,
            n_valid,
            extrapolated: false,
            per_frame,
        });
    }
    let range = ols_line_at(&per_frame, crossing as f64)?;
    Ok(EventRange {
        range,
        n_valid,
        extrapolated: true,
        per_frame,
    })
}

fn ols_line_at(points: &[(u32, f64)], at: f64) -> Result<f64, GapError> {
    let n = points.len() as f64;
    let mx = points.iter().map(|&(i, _)| i as f64).sum::<f64>() / n;
    let my = points.iter().map(|&(_, r)| r).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(i, r) in points {
        let dx = i as f64 - mx;
        sxx += dx * dx;
        sxy += dx * (r - my);
    }
    if sxx == 0.0 {
        return Err(GapError::Singular);
    }
    Ok(my + sxy / sxx * (at - mx))
}

fn check_weights(points: &[(u32, f64)]) -> Result<(), GapError> {
    if points.len() < 2 {
        return Err(GapError::Singular);
    }
    match points.iter().find(|(_, r)| !(*r > 0.0) || !r.is_finite()) {
        Some(&(frame, range)) => Err(GapError::WeightUndefined { frame, range }),
        None => Ok(()),
    }
}

/// `(Fᵀ W F)⁻¹ Fᵀ W R` with `F` the valid frame indices and `W = diag(1/R_i)`:
/// a per-frame coefficient of a through-origin weighted regression.
pub fn paper_literal_coefficient(points: &[(u32, f64)]) -> Result<f64, GapError> {
    check_weights(points)?;
    let (mut ftwf, mut ftwr) = (0.0, 0.0);
    for &(i, r) in points {
        let f = i as f64;
        let w = 1.0 / r;
        ftwf += f * w * f;
        ftwr += f * w * r;
    }
    if ftwf == 0.0 {
        return Err(GapError::Singular);
    }
    Ok(ftwr / ftwf)
}

/// Slope (m/s) of the weighted affine fit `R ≈ a + s * t` with
/// `t = frame_index / frame_rate` and weights `1/R_i`.
pub fn wls_affine_slope(points: &[(u32, f64)], frame_rate: f64) -> Result<f64, GapError> {
    check_weights(points)?;
    if points.iter().all(|p| p.0 == points[0].0) {
        return Err(GapError::Singular);
    }
    let mut sw = 0.0;
    let mut swt = 0.0;
    let mut swr = 0.0;
    for &(i, r) in points {
        let w = 1.0 / r;
        sw += w;
        swt += w * i as f64 / frame_rate;
        swr += w * r;
    }
    let (mt, mr) = (swt / sw, swr / sw);
    let (mut stt, mut str_) = (0.0, 0.0);
    for &(i, r) in points {
        let w = 1.0 / r;
        let dt = i as f64 / frame_rate - mt;
        stt += w * dt * dt;
        str_ += w * dt * (r - mr);
    }
    if !(stt > 0.0) {
        return Err(GapError::Singular);
    }
    Ok(str_ / stt)
}

/// Range rate from valid `(frame_index, R_i)` pairs.
pub fn range_rate(points: &[(u32, f64)], mode: RangeRateMode, frame_rate: f64) -> Result<f64, GapError> {
    match mode {
        RangeRateMode::PaperLiteral => Ok(paper_literal_coefficient(points)? * frame_rate),
        RangeRateMode::WlsAffine => wls_affine_slope(points, frame_rate),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GapConfig {
    pub mode: RangeRateMode,
    pub frame_rate: f64,
    pub min_valid_frames: usize,
    pub frame_count: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            mode: RangeRateMode::WlsAffine,
            frame_rate: 10.0,
            min_valid_frames: MIN_VALID_FRAMES,
            frame_count: FRAMES_PER_EVENT,
        }
    }
}

/// Full per-event estimate: range at crossing and range rate.
pub fn estimate_gap(
    frames: &[FrameSet],
    lane_width: f64,
    cam_to_rear: f64,
    intrinsics: &CameraIntrinsics,
    cfg: &GapConfig,
) -> Result<GapEstimate, GapError> {
    if frames.len() != cfg.frame_count {
        return Err(GapError::FrameCount {
            expected: cfg.frame_count,
            got: frames.len(),
        });
    }
    let er = event_range_with(frames, lane_width, cam_to_rear, intrinsics, cfg.min_valid_frames)?;
    if !(er.range > 0.0) {
        return Err(GapError::NonPositiveRange(er.range));
    }
    let range_rate = range_rate(&er.per_frame, cfg.mode, cfg.frame_rate)?;
    Ok(GapEstimate {
        range: er.range,
        range_rate,
        n_valid: er.n_valid,
        crossing_frame_extrapolated: er.extrapolated,
        mode: cfg.mode,
    })
}

/// Frames of one annotated event.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGroup {
    pub trip_id: String,
    pub event_id: String,
    pub anchor_time: f64,
    pub frames: Vec<FrameSet>,
}

/// Group frame records by `(trip_id, event_id)`, keeping
/// first-seen order; frames inside a group are sorted by index.
pub fn group_frames(records: &[FrameRecord]) -> Vec<FrameGroup> {
    let mut index: std::collections::HashMap<(&str, &str), usize> = std::collections::HashMap::new();
    let mut groups: Vec<FrameGroup> = Vec::new();
    for r in records {
        let key = (r.trip_id.as_str(), r.event_id.as_str());
        let i = *index.entry(key).or_insert_with(|| {
            groups.push(FrameGroup {
                trip_id: r.trip_id.clone(),
                event_id: r.event_id.clone(),
                anchor_time: r.anchor_time,
                frames: Vec::new(),
            });
            groups.len() - 1
        });
        groups[i].frames.push(r.frame.clone());
    }
    for g in &mut groups {
        g.frames.sort_by_key(|f| f.frame_index);
    }
    groups
}

/// Index of the event of the same trip whose cross start is nearest the
/// group's anchor time, if within `tolerance` seconds.
pub fn match_event(
    group: &FrameGroup,
    events: &[crate::extraction::LaneChangeEvent],
    tolerance: f64,
) -> Option<usize> {
    events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.trip_id == group.trip_id)
        .map(|(i, e)| (i, (e.stage.t_cross_start - group.anchor_time).abs()))
        .filter(|&(_, d)| d <= tolerance)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Frame for a straight road seen by an ideal camera at height `h`: the
    /// boundaries sit at lateral offsets `xl`, `xr` and the POV at depth `z`.
    fn ideal_frame(k: &CameraIntrinsics, xl: f64, xr: f64, h: f64, z: f64, idx: u32) -> FrameSet {
        let px = |x: f64, zz: f64| {
            let (u, v) = camera::project(k, [x, h, zz]).unwrap();
            [u, v]
        };
        FrameSet {
            frame_index: idx,
            p_left_1: px(xl, 0.6 * z),
            p_left_2: px(xl, 0.9 * z),
            p_right_1: px(xr, 0.6 * z),
            p_right_2: px(xr, 0.9 * z),
            p_bottom: px(0.5 * (xl + xr), z),
            valid: true,
        }
    }

    #[test]
    fn principal_point_undistorts_to_origin() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0);
        assert_eq!(undistort_point([640.0, 360.0], &k).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn image_width_is_reference_over_depth() {
        let k = CameraIntrinsics::default();
        let f = ideal_frame(&k, 0.4, 4.06, 2.0, 25.0, 10);
        let b = lane_width_in_image(&f, &k).unwrap();
        assert!((b - 3.66 / 25.0).abs() < 1e-9);
        let r = frame_range(&f, 3.66, 5.0, &k).unwrap();
        assert!((r - 20.0).abs() < 1e-6);
    }

    #[test]
    fn unit_depth_when_width_equals_reference() {
        assert_eq!(range_from_width(3.5, 3.5, 0.0), 1.0);
        assert_eq!(range_from_width(3.5 / 4.0, 3.5, 5.0), -1.0);
    }

    #[test]
    fn coincident_boundary_points() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0);
        let mut f = ideal_frame(&k, 0.4, 4.06, 2.0, 25.0, 10);
        f.p_left_2 = f.p_left_1;
        assert!(matches!(
            lane_width_in_image(&f, &k),
            Err(GapError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn horizontal_boundary() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0);
        let mut f = ideal_frame(&k, 0.4, 4.06, 2.0, 25.0, 10);
        f.p_right_2 = [f.p_right_1[0] + 50.0, f.p_right_1[1]];
        assert!(matches!(
            lane_width_in_image(&f, &k),
            Err(GapError::DegenerateGeometry("horizontal lane boundary"))
        ));
    }

    #[test]
    fn swapped_boundaries_give_non_positive_width() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0);
        let f = ideal_frame(&k, 4.06, 0.4, 2.0, 25.0, 10);
        assert!(matches!(lane_width_in_image(&f, &k), Err(GapError::NonPositiveWidth(_))));
    }

    fn line_points(valid: impl Fn(u32) -> bool) -> Vec<(u32, f64)> {
        (1..=10).filter(|&i| valid(i)).map(|i| (i, 30.0 - i as f64)).collect()
    }

    #[test]
    fn paper_literal_constant_range() {
        let pts: Vec<(u32, f64)> = (1..=10).map(|i| (i, 10.0)).collect();
        let c = paper_literal_coefficient(&pts).unwrap();
        assert!((c - 10.0 / 7.0).abs() < 1e-15);
        let rate = range_rate(&pts, RangeRateMode::PaperLiteral, 10.0).unwrap();
        assert!((rate - 100.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn affine_slope_on_exact_line() {
        let pts = line_points(|_| true);
        let s = range_rate(&pts, RangeRateMode::WlsAffine, 10.0).unwrap();
        assert!((s + 10.0).abs() < 1e-12);
        let flat: Vec<(u32, f64)> = (1..=10).map(|i| (i, 20.0)).collect();
        assert!(range_rate(&flat, RangeRateMode::WlsAffine, 10.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn non_positive_range_leaves_weight_undefined() {
        let mut pts = line_points(|_| true);
        pts[3].1 = 0.0;
        assert_eq!(
            range_rate(&pts, RangeRateMode::WlsAffine, 10.0).unwrap_err(),
            GapError::WeightUndefined { frame: 4, range: 0.0 }
        );
        assert!(paper_literal_coefficient(&pts).is_err());
    }

    #[test]
    fn single_frame_is_singular() {
        assert_eq!(
            wls_affine_slope(&[(3, 10.0)], 10.0).unwrap_err(),
            GapError::Singular
        );
        assert_eq!(
            wls_affine_slope(&[(3, 10.0), (3, 11.0)], 10.0).unwrap_err(),
            GapError::Singular
        );
    }

    fn frames_at_ranges(k: &CameraIntrinsics, ranges: impl Fn(u32) -> f64) -> Vec<FrameSet> {
        (1..=10)
            .map(|i| ideal_frame(k, 0.3, 3.96, 2.0, ranges(i) + 5.0, i))
            .collect()
    }

    #[test]
    fn crossing_frame_read_directly() {
        let k = CameraIntrinsics::default();
        let frames = frames_at_ranges(&k, |i| 30.0 - i as f64);
        let er = event_range(&frames, 3.66, 5.0, &k).unwrap();
        assert!(!er.extrapolated);
        assert_eq!(er.n_valid, 10);
        assert!((er.range - 20.0).abs() < 1e-6);
    }

    #[test]
    fn dropped_crossing_frame_is_extrapolated() {
        let k = CameraIntrinsics::default();
        let mut frames = frames_at_ranges(&k, |i| 30.0 - i as f64);
        frames[8].valid = false;
        frames[9].valid = false;
        let er = event_range(&frames, 3.66, 5.0, &k).unwrap();
        assert!(er.extrapolated);
        assert_eq!(er.n_valid, 8);
        assert!((er.range - 20.0).abs() < 1e-6);
    }

    #[test]
    fn six_valid_frames_is_invalid() {
        let k = CameraIntrinsics::default();
        let mut frames = frames_at_ranges(&k, |i| 30.0 - i as f64);
        for f in frames.iter_mut().take(4) {
            f.valid = false;
        }
        assert_eq!(
            event_range(&frames, 3.66, 5.0, &k).unwrap_err(),
            GapError::InvalidEvent { n_valid: 6, min: 7 }
        );
    }

    #[test]
    fn estimate_requires_positive_range() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0);
        // POV 4 m from the camera but the trailer rear is 5 m behind it.
        let frames: Vec<FrameSet> = (1..=10).map(|i| ideal_frame(&k, 0.3, 3.96, 2.0, 4.0, i)).collect();
        let err = estimate_gap(&frames, 3.66, 5.0, &k, &GapConfig::default()).unwrap_err();
        assert!(matches!(err, GapError::NonPositiveRange(r) if (r + 1.0).abs() < 1e-6));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("paper_literal".parse::<RangeRateMode>().unwrap(), RangeRateMode::PaperLiteral);
        assert_eq!("wls_affine".parse::<RangeRateMode>().unwrap(), RangeRateMode::WlsAffine);
        assert!("ols".parse::<RangeRateMode>().is_err());
    }
}
