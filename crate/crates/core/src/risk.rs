//! Time-to-collision risk measures and MLC/DLC comparisons.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::extraction::{Classification, LaneChangeEvent};
use crate::gap::GapRecord;
use crate::par::{self, Execution};
use crate::stats::{fit_gev_mle, mww_test, GevFit, MwwResult, StatsError};

pub const STAGE_NAMES: [&str; 3] = ["head", "cross", "tail"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Fast-approach-zone range limit, meters, inclusive.
    pub faz_range: f64,
    /// TTC thresholds, seconds.
    pub ttc_thresholds: Vec<f64>,
    pub range_bin_width: f64,
    pub range_rate_bin_width: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            faz_range: 50.0,
            ttc_thresholds: vec![2.0, 3.0],
            range_bin_width: 5.0,
            range_rate_bin_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("range must be > 0 for TTC, got {0}")]
    NonPositiveRange(f64),
    #[error("no {0} events with stage durations")]
    EmptyClass(Classification),
    #[error("{stage} stage, {class}: {source}")]
    Stats {
        stage: &'static str,
        class: Classification,
        #[source]
        source: StatsError,
    },
}

/// Time to collision, `R / -Ṙ` while closing and infinite otherwise.
pub fn ttc(range: f64, range_rate: f64) -> Result<f64, RiskError> {
    if !(range > 0.0) {
        return Err(RiskError::NonPositiveRange(range));
    }
    Ok(if range_rate < 0.0 {
        range / -range_rate
    } else {
        f64::INFINITY
    })
}

/// A classified event with an estimated gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapObservation {
    pub event_id: String,
    pub class: Classification,
    pub range: f64,
    pub range_rate: f64,
}

/// Events with range at most `faz_range`.
pub fn faz_filter(obs: &[GapObservation], faz_range: f64) -> Vec<GapObservation> {
    obs.iter().filter(|o| o.range <= faz_range).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRisk {
    pub threshold: f64,
    pub mlc: Option<f64>,
    pub dlc: Option<f64>,
    /// `mlc / dlc`; absent when either fraction is absent or DLC is zero.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskFractions {
    pub mlc_events: usize,
    pub dlc_events: usize,
    pub per_threshold: Vec<ThresholdRisk>,
    /// Mean of the per-threshold ratios; absent if any of them is.
    pub mean_ratio: Option<f64>,
}

fn fraction_below(obs: &[&GapObservation], tau: f64) -> Option<f64> {
    if obs.is_empty() {
        return None;
    }
    let hits = obs
        .iter()
        .filter(|o| ttc(o.range, o.range_rate).is_ok_and(|t| t < tau))
        .count();
    Some(hits as f64 / obs.len() as f64)
}

/// Share of MLC and DLC events with TTC below each threshold. The caller
/// chooses the population (normally the FAZ subset); Ambiguous and Other
/// events are ignored.
pub fn risk_fractions(obs: &[GapObservation], thresholds: &[f64]) -> RiskFractions {
    let of = |c| obs.iter().filter(|o| o.class == c).collect::<Vec<_>>();
    let (mlc, dlc) = (of(Classification::Mlc), of(Classification::Dlc));
    let per_threshold: Vec<ThresholdRisk> = thresholds
        .iter()
        .map(|&tau| {
            let m = fraction_below(&mlc, tau);
            let d = fraction_below(&dlc, tau);
            let ratio = match (m, d) {
                (Some(m), Some(d)) if d > 0.0 => Some(m / d),
                _ => None,
            };
            ThresholdRisk {
                threshold: tau,
                mlc: m,
                dlc: d,
                ratio,
            }
        })
        .collect();
    let ratios: Option<Vec<f64>> = per_threshold.iter().map(|r| r.ratio).collect();
    let mean_ratio = ratios
        .filter(|r| !r.is_empty())
        .map(|r| r.iter().sum::<f64>() / r.len() as f64);
    RiskFractions {
        mlc_events: mlc.len(),
        dlc_events: dlc.len(),
        per_threshold,
        mean_ratio,
    }
}

/// Fixed-width histogram. Bin `i` covers `[edges[i], edges[i+1])`; edges are
/// multiples of the width.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts divided by the number of values.
    pub frequencies: Vec<f64>,
}

pub fn histogram(values: &[f64], width: f64) -> Histogram {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || !(width > 0.0) {
        return Histogram::default();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / width).floor();
    let nbins = ((hi / width).floor() - first) as usize + 1;
    let mut counts = vec![0usize; nbins];
    for v in &finite {
        let i = ((v / width).floor() - first) as usize;
        counts[i.min(nbins - 1)] += 1;
    }
    let n = finite.len() as f64;
    Histogram {
        edges: (0..=nbins).map(|i| (first + i as f64) * width).collect(),
        frequencies: counts.iter().map(|&c| c as f64 / n).collect(),
        counts,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageComparison {
    pub stage: String,
    pub mlc_n: usize,
    pub dlc_n: usize,
    pub mlc_fit: GevFit,
    pub dlc_fit: GevFit,
    pub mww: MwwResult,
}

/// Per-stage GEV fits for both classes and the MWW test between them.
/// Each input row is `[head, cross, tail]` durations in seconds.
pub fn duration_comparison(
    mlc: &[[f64; 3]],
    dlc: &[[f64; 3]],
    exec: Execution,
) -> Result<Vec<StageComparison>, RiskError> {
    if mlc.is_empty() {
        return Err(RiskError::EmptyClass(Classification::Mlc));
    }
    if dlc.is_empty() {
        return Err(RiskError::EmptyClass(Classification::Dlc));
    }
    let stages: Vec<usize> = (0..3).collect();
    par::map(exec, &stages, |&s| {
        let stage = STAGE_NAMES[s];
        let a: Vec<f64> = mlc.iter().map(|d| d[s]).collect();
        let b: Vec<f64> = dlc.iter().map(|d| d[s]).collect();
        let err = |class| move |source| RiskError::Stats { stage, class, source };
        Ok(StageComparison {
            stage: stage.to_string(),
            mlc_n: a.len(),
            dlc_n: b.len(),
            mlc_fit: fit_gev_mle(&a).map_err(err(Classification::Mlc))?,
            dlc_fit: fit_gev_mle(&b).map_err(err(Classification::Dlc))?,
            mww: mww_test(&a, &b).map_err(err(Classification::Mlc))?,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub mlc: usize,
    pub dlc: usize,
    pub ambiguous: usize,
    pub other: usize,
}

impl ClassCounts {
    pub fn add(&mut self, c: Classification) {
        match c {
            Classification::Mlc => self.mlc += 1,
            Classification::Dlc => self.dlc += 1,
            Classification::Ambiguous => self.ambiguous += 1,
            Classification::Other => self.other += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassHistograms {
    pub mlc: Histogram,
    pub dlc: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub event_counts: ClassCounts,
    /// MLC and DLC events with a usable gap estimate.
    pub gap_counts: ClassCounts,
    pub faz_counts: ClassCounts,
    pub risk: RiskFractions,
    pub range_histograms: ClassHistograms,
    pub range_rate_histograms: ClassHistograms,
    /// Empty when either class has too few events to fit.
    pub durations: Vec<StageComparison>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Join events with gap records by event id; only MLC and DLC events are kept.
pub fn gap_observations(events: &[LaneChangeEvent], gaps: &[GapRecord]) -> Vec<GapObservation> {
    let by_id: HashMap<&str, &GapRecord> = gaps.iter().map(|g| (g.event_id.as_str(), g)).collect();
    events
        .iter()
        .filter(|e| matches!(e.classification, Classification::Mlc | Classification::Dlc))
        .filter_map(|e| {
            by_id.get(e.event_id.as_str()).map(|g| GapObservation {
                event_id: e.event_id.clone(),
                class: e.classification,
                range: g.estimate.range,
                range_rate: g.estimate.range_rate,
            })
        })
        .collect()
}

/// Stage durations of every event of one class.
pub fn class_durations(events: &[LaneChangeEvent], class: Classification) -> Vec<[f64; 3]> {
    events
        .iter()
        .filter(|e| e.classification == class)
        .map(|e| e.stage.durations())
        .collect()
}

/// The full report. Ambiguous events are counted but excluded from every
/// statistic.
pub fn risk_report(
    events: &[LaneChangeEvent],
    gaps: &[GapRecord],
    cfg: &RiskConfig,
    exec: Execution,
) -> RiskReport {
    let mut event_counts = ClassCounts::default();
    for e in events {
        event_counts.add(e.classification);
    }
    let obs = gap_observations(events, gaps);
    let mut gap_counts = ClassCounts::default();
    for o in &obs {
        gap_counts.add(o.class);
    }
    let faz = faz_filter(&obs, cfg.faz_range);
    let mut faz_counts = ClassCounts::default();
    for o in &faz {
        faz_counts.add(o.class);
    }
    let risk = risk_fractions(&faz, &cfg.ttc_thresholds);

    let values = |class, f: fn(&GapObservation) -> f64| -> Vec<f64> {
        obs.iter().filter(|o| o.class == class).map(f).collect()
    };
    let hists = |f: fn(&GapObservation) -> f64, w| ClassHistograms {
        mlc: histogram(&values(Classification::Mlc, f), w),
        dlc: histogram(&values(Classification::Dlc, f), w),
    };
    let range_histograms = hists(|o| o.range, cfg.range_bin_width);
    let range_rate_histograms = hists(|o| o.range_rate, cfg.range_rate_bin_width);

    let mut notes = Vec::new();
    let durations = match duration_comparison(
        &class_durations(events, Classification::Mlc),
        &class_durations(events, Classification::Dlc),
        exec,
    ) {
        Ok(d) => d,
        Err(e) => {
            notes.push(format!("duration comparison skipped: {e}"));
            Vec::new()
        }
    };
    RiskReport {
        event_counts,
        gap_counts,
        faz_counts,
        risk,
        range_histograms,
        range_rate_histograms,
        durations,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(class: Classification, range: f64, range_rate: f64) -> GapObservation {
        GapObservation {
            event_id: String::new(),
            class,
            range,
            range_rate,
        }
    }

    #[test]
    fn ttc_values() {
        assert_eq!(ttc(30.0, -10.0).unwrap(), 3.0);
        assert_eq!(ttc(50.0, -25.0).unwrap(), 2.0);
        assert_eq!(ttc(50.0, 2.0).unwrap(), f64::INFINITY);
        assert_eq!(ttc(50.0, 0.0).unwrap(), f64::INFINITY);
        assert_eq!(ttc(0.0, -1.0), Err(RiskError::NonPositiveRange(0.0)));
    }

    #[test]
    fn faz_boundary_is_inclusive() {
        let v = vec![
            obs(Classification::Mlc, 50.0, 0.0),
            obs(Classification::Mlc, 50.01, 0.0),
        ];
        let f = faz_filter(&v, 50.0);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].range, 50.0);
        assert!(faz_filter(&[], 50.0).is_empty());
    }

    #[test]
    fn counting_fraction() {
        let mut v: Vec<_> = (0..8).map(|_| obs(Classification::Mlc, 40.0, 1.0)).collect();
        v.push(obs(Classification::Mlc, 10.0, -10.0));
        v.push(obs(Classification::Mlc, 15.0, -10.0));
        let r = risk_fractions(&v, &[2.0]);
        assert_eq!(r.per_threshold[0].mlc, Some(0.2));
        assert_eq!(r.per_threshold[0].dlc, None);
        assert_eq!(r.per_threshold[0].ratio, None);
        assert_eq!(r.mean_ratio, None);
    }

    #[test]
    fn zero_dlc_fraction_has_no_ratio() {
        let v = vec![
            obs(Classification::Mlc, 10.0, -10.0),
            obs(Classification::Dlc, 40.0, 1.0),
        ];
        let r = risk_fractions(&v, &[2.0]);
        assert_eq!(r.per_threshold[0].dlc, Some(0.0));
        assert_eq!(r.per_threshold[0].ratio, None);
    }

    #[test]
    fn ttc_exactly_at_threshold_is_not_below() {
        let v = vec![obs(Classification::Mlc, 20.0, -10.0)];
        assert_eq!(risk_fractions(&v, &[2.0]).per_threshold[0].mlc, Some(0.0));
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.0, 4.9, 5.0, 12.0, -0.5], 5.0);
        assert_eq!(h.edges, vec![-5.0, 0.0, 5.0, 10.0, 15.0]);
        assert_eq!(h.counts, vec![1, 2, 1, 1]);
        assert!((h.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(histogram(&[], 5.0), Histogram::default());
    }

    #[test]
    fn empty_class_is_an_error() {
        let d = vec![[1.0, 2.0, 3.0]; 30];
        assert_eq!(
            duration_comparison(&[], &d, Execution::Sequential).unwrap_err(),
            RiskError::EmptyClass(Classification::Mlc)
        );
    }
}
