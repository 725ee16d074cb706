//! Behavior models fitted to classified events and a cut-in scenario sampler.
//!
//! Sampling is split into batches of [`BATCH_SIZE`] scenarios. Batch `b` uses
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `b`, so the output depends only
//! on the seed and never on the number of worker threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::extraction::Classification;
use crate::jsonl::{self, JsonlError};
use crate::par::{self, Execution};
use crate::risk::ttc;
use crate::stats::{fit_gev_mle, ks_statistic, GevParams, StatsError};
use crate::trace::mph_to_mps;

pub const BATCH_SIZE: usize = 1024;
/// Rejections allowed per scenario before giving up.
pub const MAX_REJECTIONS: usize = 10_000;
pub const MIN_EVENTS: usize = 20;
pub const SCENARIO_FORMAT: &str = "lanechange-scenarios";
pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapModelKind {
    #[default]
    Empirical,
    Fitted,
}

impl std::str::FromStr for GapModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empirical" => Ok(Self::Empirical),
            "fitted" => Ok(Self::Fitted),
            _ => Err(format!("unknown gap model {s:?} (expected empirical or fitted)")),
        }
    }
}

/// Joint model of range and range rate at the boundary crossing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapModel {
    /// Resample observed `[range, range_rate]` pairs uniformly.
    Empirical { pairs: Vec<[f64; 2]> },
    /// GEV range and normal range rate coupled by a Gaussian copula.
    Fitted {
        range: GevParams,
        range_rate_mean: f64,
        range_rate_sd: f64,
        /// Spearman correlation of the observed pairs.
        spearman: f64,
        /// Correlation of the latent normals, `2 sin(π ρ_s / 6)`.
        latent_correlation: f64,
    },
}

impl GapModel {
    /// Draw `(range, range_rate)` with range > 0.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, f64), ScenarioError> {
        match self {
            Self::Empirical { pairs } => {
                let [r, rr] = pairs[rng.random_range(0..pairs.len())];
                Ok((r, rr))
            }
            Self::Fitted {
                range,
                range_rate_mean,
                range_rate_sd,
                latent_correlation: rho,
                ..
            } => {
                let std = Normal::new(0.0, 1.0).expect("unit normal");
                for _ in 0..=MAX_REJECTIONS {
                    let z1: f64 = rng.sample(StandardNormal);
                    let e: f64 = rng.sample(StandardNormal);
                    let z2 = rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * e;
                    let u = std.cdf(z1).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    let r = range.quantile(u).unwrap_or(f64::NAN);
                    if r > 0.0 && r.is_finite() {
                        return Ok((r, range_rate_mean + range_rate_sd * z2));
                    }
                }
                Err(ScenarioError::RejectionCap("range > 0"))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub log_likelihood: f64,
    pub ks_statistic: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_events: usize,
    pub n_gaps: usize,
    /// Head, cross, tail.
    pub duration_fits: [FitDiagnostics; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_fit: Option<FitDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub class: Classification,
    pub gap_model: GapModel,
    /// Head, cross, tail.
    pub duration_model: [GevParams; 3],
    pub provenance: Provenance,
}

/// One classified event's inputs to a behavior model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorSample {
    pub durations: [f64; 3],
    /// `(range, range_rate)` when a valid gap estimate exists.
    pub gap: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("behavior models exist only for MLC and DLC, not {0}")]
    UnsupportedClass(Classification),
    #[error("need at least {min} {what}, got {got}")]
    TooFewEvents { what: &'static str, got: usize, min: usize },
    #[error("{stage} duration fit: {source}")]
    Fit {
        stage: &'static str,
        #[source]
        source: StatsError,
    },
    #[error("rejection cap of {MAX_REJECTIONS} hit while enforcing {0}")]
    RejectionCap(&'static str),
    #[error("invalid sampler option: {0}")]
    InvalidOption(String),
}

fn diagnostics(params: &GevParams, xs: &[f64], ll: f64, converged: bool) -> FitDiagnostics {
    FitDiagnostics {
        n: xs.len(),
        log_likelihood: ll,
        ks_statistic: ks_statistic(xs, |x| params.cdf(x)),
        converged,
    }
}

/// Midranks, 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..j] {
            r[k] = (i + j + 1) as f64 / 2.0;
        }
        i = j;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Fit per-stage GEV durations and a gap model for one class.
pub fn fit_behavior_model(
    samples: &[BehaviorSample],
    class: Classification,
    gap_kind: GapModelKind,
) -> Result<BehaviorModel, ScenarioError> {
    if !matches!(class, Classification::Mlc | Classification::Dlc) {
        return Err(ScenarioError::UnsupportedClass(class));
    }
    let gaps: Vec<(f64, f64)> = samples.iter().filter_map(|s| s.gap).filter(|g| g.0 > 0.0).collect();
    if samples.len() < MIN_EVENTS {
        return Err(ScenarioError::TooFewEvents {
            what: "events",
            got: samples.len(),
            min: MIN_EVENTS,
        });
    }
    if gaps.len() < MIN_EVENTS {
        return Err(ScenarioError::TooFewEvents {
            what: "events with valid gaps",
            got: gaps.len(),
            min: MIN_EVENTS,
        });
    }

    let mut duration_model = [GevParams {
        shape: 0.0,
        loc: 0.0,
        scale: 1.0,
    }; 3];
    let mut duration_fits = [FitDiagnostics {
        n: 0,
        log_likelihood: 0.0,
        ks_statistic: 0.0,
        converged: false,
    }; 3];
    for (s, stage) in crate::risk::STAGE_NAMES.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|e| e.durations[s]).collect();
        let fit = fit_gev_mle(&xs).map_err(|source| ScenarioError::Fit { stage, source })?;
        duration_model[s] = fit.params;
        duration_fits[s] = diagnostics(&fit.params, &xs, fit.log_likelihood, fit.converged);
    }

    let (gap_model, range_fit) = match gap_kind {
        GapModelKind::Empirical => (
            GapModel::Empirical {
                pairs: gaps.iter().map(|&(r, rr)| [r, rr]).collect(),
            },
            None,
        ),
        GapModelKind::Fitted => {
            let rs: Vec<f64> = gaps.iter().map(|g| g.0).collect();
            let rrs: Vec<f64> = gaps.iter().map(|g| g.1).collect();
            let fit = fit_gev_mle(&rs).map_err(|source| ScenarioError::Fit { stage: "range", source })?;
            let n = rrs.len() as f64;
            let mean = rrs.iter().sum::<f64>() / n;
            let sd = (rrs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let rho_s = spearman(&rs, &rrs);
            (
                GapModel::Fitted {
                    range: fit.params,
                    range_rate_mean: mean,
                    range_rate_sd: sd,
                    spearman: rho_s,
                    latent_correlation: 2.0 * (std::f64::consts::PI * rho_s / 6.0).sin(),
                },
                Some(diagnostics(&fit.params, &rs, fit.log_likelihood, fit.converged)),
            )
        }
    };

    Ok(BehaviorModel {
        class,
        gap_model,
        duration_model,
        provenance: Provenance {
            n_events: samples.len(),
            n_gaps: gaps.len(),
            duration_fits,
            range_fit,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub class: Classification,
    /// m/s.
    pub sv_speed: f64,
    /// Trailer rear to POV front at the boundary crossing, meters.
    pub initial_gap: f64,
    /// `-Ṙ`; positive when the POV approaches.
    pub closing_rate: f64,
    pub d_head: f64,
    pub d_cross: f64,
    pub d_tail: f64,
    pub lane_width: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn ttc(&self) -> f64 {
        ttc(self.initial_gap, -self.closing_rate).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerOptions {
    /// Keep only scenarios with TTC below this many seconds.
    pub risk_bias: Option<f64>,
    pub lane_width: f64,
    /// SV speed is uniform over this band, mph.
    pub speed_band_mph: (f64, f64),
    pub exec: Execution,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            risk_bias: None,
            lane_width: 3.66,
            speed_band_mph: (55.0, 63.0),
            exec: Execution::Parallel,
        }
    }
}

fn positive_duration<R: Rng + ?Sized>(p: &GevParams, rng: &mut R) -> Result<f64, ScenarioError> {
    for _ in 0..=MAX_REJECTIONS {
        let u: f64 = rng.sample(Open01);
        let d = p.quantile(u).unwrap_or(f64::NAN);
        if d > 0.0 && d.is_finite() {
            return Ok(d);
        }
    }
    Err(ScenarioError::RejectionCap("duration > 0"))
}

fn sample_one<R: Rng + ?Sized>(
    model: &BehaviorModel,
    rng: &mut R,
    opts: &SamplerOptions,
    seed: u64,
    index: usize,
) -> Result<ScenarioSpec, ScenarioError> {
    let [d_head, d_cross, d_tail] = [
        positive_duration(&model.duration_model[0], rng)?,
        positive_duration(&model.duration_model[1], rng)?,
        positive_duration(&model.duration_model[2], rng)?,
    ];
    let (lo, hi) = opts.speed_band_mph;
    let sv_speed = mph_to_mps(rng.random_range(lo..=hi));
    let mut gap = model.gap_model.sample(rng)?;
    if let Some(tau) = opts.risk_bias {
        let mut rejections = 0;
        while !ttc(gap.0, gap.1).is_ok_and(|t| t < tau) {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(ScenarioError::RejectionCap("the TTC ceiling"));
            }
            gap = model.gap_model.sample(rng)?;
        }
    }
    Ok(ScenarioSpec {
        scenario_id: format!("{}-{seed}-{index:06}", model.class.to_string().to_lowercase()),
        class: model.class,
        sv_speed,
        initial_gap: gap.0,
        closing_rate: -gap.1,
        d_head,
        d_cross,
        d_tail,
        lane_width: opts.lane_width,
        seed,
    })
}

/// `n` scenarios drawn from `model`. With a risk bias τ, gaps are redrawn
/// until TTC < τ.
pub fn sample_scenarios(
    model: &BehaviorModel,
    n: usize,
    seed: u64,
    opts: &SamplerOptions,
) -> Result<Vec<ScenarioSpec>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::InvalidOption("n must be >= 1".into()));
    }
    if let Some(tau) = opts.risk_bias {
        if !(tau > 0.0) {
            return Err(ScenarioError::InvalidOption(format!("risk bias must be > 0, got {tau}")));
        }
    }
    let batches = n.div_ceil(BATCH_SIZE);
    let out = par::map_indexed(opts.exec, batches, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let lo = b * BATCH_SIZE;
        let hi = (lo + BATCH_SIZE).min(n);
        (lo..hi)
            .map(|i| sample_one(model, &mut rng, opts, seed, i))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut specs = Vec::with_capacity(n);
    for batch in out {
        specs.extend(batch?);
    }
    Ok(specs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub format: String,
    pub version: u32,
    pub count: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioFileError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Header record, then one record per scenario.
pub fn export_scenarios(specs: &[ScenarioSpec], path: &Path) -> Result<(), ScenarioFileError> {
    let io_err = |source| {
        ScenarioFileError::Jsonl(JsonlError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let header = ScenarioHeader {
        format: SCENARIO_FORMAT.into(),
        version: SCENARIO_VERSION,
        count: specs.len(),
    };
    jsonl::write_record(&mut w, &header).map_err(io_err)?;
    for s in specs {
        jsonl::write_record(&mut w, s).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn import_scenarios(path: &Path) -> Result<Vec<ScenarioSpec>, ScenarioFileError> {
    let fmt_err = |message: String| ScenarioFileError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut lines = jsonl::read_lines(path)?.into_iter();
    let (n, first) = lines.next().ok_or_else(|| fmt_err("missing header".into()))?;
    let header: ScenarioHeader = jsonl::parse_line(path, n, &first)?;
    if header.format != SCENARIO_FORMAT || header.version != SCENARIO_VERSION {
        return Err(fmt_err(format!(
            "unsupported format {:?} version {}",
            header.format, header.version
        )));
    }
    let specs = lines
        .map(|(n, l)| jsonl::parse_line(path, n, &l))
        .collect::<Result<Vec<ScenarioSpec>, _>>()?;
    if specs.len() != header.count {
        return Err(fmt_err(format!(
            "header declares {} scenarios, file has {}",
            header.count,
            specs.len()
        )));
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> BehaviorModel {
        let g = |shape, loc, scale| GevParams { shape, loc, scale };
        BehaviorModel {
            class: Classification::Mlc,
            gap_model: GapModel::Empirical {
                pairs: vec![[10.0, -8.0], [30.0, 1.0], [45.0, -2.0]],
            },
            duration_model: [g(-0.1, 3.0, 0.8), g(0.0, 2.5, 0.5), g(0.1, 3.5, 1.0)],
            provenance: Provenance {
                n_events: 0,
                n_gaps: 3,
                duration_fits: [FitDiagnostics {
                    n: 0,
                    log_likelihood: 0.0,
                    ks_statistic: 0.0,
                    converged: true,
                }; 3],
                range_fit: None,
            },
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let m = model();
        let opts = SamplerOptions::default();
        let a = sample_scenarios(&m, 3000, 5, &opts).unwrap();
        let b = sample_scenarios(
            &m,
            3000,
            5,
            &SamplerOptions {
                exec: Execution::Sequential,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_scenarios(&m, 3000, 6, &opts).unwrap());
    }

    #[test]
    fn empirical_gaps_are_table_entries() {
        let s = sample_scenarios(&model(), 500, 1, &SamplerOptions::default()).unwrap();
        for x in &s {
            assert!([(10.0, 8.0), (30.0, -1.0), (45.0, 2.0)].contains(&(x.initial_gap, x.closing_rate)));
        }
    }

    #[test]
    fn risk_bias_enforced() {
        let opts = SamplerOptions {
            risk_bias: Some(2.0),
            ..SamplerOptions::default()
        };
        let s = sample_scenarios(&model(), 200, 2, &opts).unwrap();
        assert!(s.iter().all(|x| x.ttc() < 2.0));
    }

    #[test]
    fn infeasible_risk_bias_hits_cap() {
        let opts = SamplerOptions {
            risk_bias: Some(0.5),
            ..SamplerOptions::default()
        };
        assert_eq!(
            sample_scenarios(&model(), 1, 2, &opts).unwrap_err(),
            ScenarioError::RejectionCap("the TTC ceiling")
        );
    }

    #[test]
    fn too_few_events() {
        let s = vec![
            BehaviorSample {
                durations: [1.0, 2.0, 3.0],
                gap: Some((10.0, 0.0))
            };
            19
        ];
        assert!(matches!(
            fit_behavior_model(&s, Classification::Mlc, GapModelKind::Empirical),
            Err(ScenarioError::TooFewEvents { got: 19, .. })
        ));
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let s = sample_scenarios(&model(), 50, 3, &SamplerOptions::default()).unwrap();
        export_scenarios(&s, &p).unwrap();
        assert_eq!(import_scenarios(&p).unwrap(), s);
        export_scenarios(&[], &p).unwrap();
        assert!(import_scenarios(&p).unwrap().is_empty());
    }

    #[test]
    fn spearman_of_monotone_pairs() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 25.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
