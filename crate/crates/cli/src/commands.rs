use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};

use lanechange::extraction::{extract_corpus, IncompleteCandidate};
use lanechange::gap::{estimate_gap, group_frames, match_event, FrameRecord, GapRecord};
use lanechange::jsonl::{read_records, write_records};
use lanechange::risk::{gap_observations, risk_report, ttc, Histogram, RiskReport};
use lanechange::scenario::{
    export_scenarios, fit_behavior_model, sample_scenarios, BehaviorModel, BehaviorSample, SamplerOptions,
};
use lanechange::synth::generate_corpus;
use lanechange::trace::{load_trip, save_trip};
use lanechange::{par, Classification, LaneChangeEvent, RangeRateMode, Trip};

use crate::output::*;
use crate::{data_err, CliError, Context};

pub fn synth(ctx: &Context, out: &Path) -> Result<(), CliError> {
    let cfg = ctx.config.synth();
    let corpus = generate_corpus(&cfg, &ctx.config.intrinsics(), ctx.exec).map_err(data_err)?;
    let trips_dir = out.join(TRIPS_DIR);
    ensure_dir(&trips_dir)?;

    let mut outputs = Vec::new();
    for st in &corpus {
        let p = trips_dir.join(format!("{}.jsonl", st.trip.trip_id));
        save_trip(&st.trip, &p).map_err(data_err)?;
        outputs.push(p);
    }
    let truth: Vec<_> = corpus.iter().flat_map(|st| st.events.iter()).collect();
    let truth_path = out.join(TRUTH_FILE);
    write_records(&truth_path, truth.iter().copied()).map_err(data_err)?;
    outputs.push(truth_path);

    let frames: Vec<FrameRecord> = corpus
        .iter()
        .flat_map(|st| {
            st.events.iter().zip(&st.frames).flat_map(|(e, fs)| {
                fs.iter().map(|f| FrameRecord {
                    trip_id: e.trip_id.clone(),
                    event_id: e.event_id.clone(),
                    anchor_time: e.t_cross_start,
                    frame: f.clone(),
                })
            })
        })
        .collect();
    let frames_path = out.join(FRAMES_FILE);
    write_records(&frames_path, &frames).map_err(data_err)?;
    outputs.push(frames_path);

    write_manifest(ctx, "synth", out, &ctx.inputs(), &outputs)?;
    println!(
        "synth: {} trips, {} events ({} MLC, {} DLC, {} ambiguous, {} other), {} frames",
        corpus.len(),
        truth.len(),
        cfg.n_mlc,
        cfg.n_dlc,
        cfg.n_ambiguous,
        cfg.n_other,
        frames.len()
    );
    Ok(())
}

fn load_trips(ctx: &Context, input: &Path) -> Result<(Vec<Trip>, Vec<PathBuf>), CliError> {
    let files = trip_files(input)?;
    let trips = par::map(ctx.exec, &files, |p| load_trip(p))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(data_err)?;
    Ok((trips, files))
}

struct Extracted {
    events: Vec<LaneChangeEvent>,
    outputs: Vec<PathBuf>,
}

fn run_extract(ctx: &Context, trips: &[Trip], out: &Path) -> Result<Extracted, CliError> {
    ensure_dir(out)?;
    let results = extract_corpus(trips, &ctx.config.extraction(), ctx.exec);
    let events: Vec<LaneChangeEvent> = results.iter().flat_map(|r| r.events.iter().cloned()).collect();
    let incomplete: Vec<IncompleteCandidate> = results.into_iter().flat_map(|r| r.incomplete).collect();
    let events_path = out.join(EVENTS_FILE);
    let incomplete_path = out.join(INCOMPLETE_FILE);
    write_records(&events_path, &events).map_err(data_err)?;
    write_records(&incomplete_path, &incomplete).map_err(data_err)?;

    let mut counts: HashMap<Classification, usize> = HashMap::new();
    for e in &events {
        *counts.entry(e.classification).or_default() += 1;
    }
    let n = |c| counts.get(&c).copied().unwrap_or(0);
    println!(
        "extract: {} lane changes ({} MLC, {} DLC, {} ambiguous, {} other), {} incomplete",
        events.len(),
        n(Classification::Mlc),
        n(Classification::Dlc),
        n(Classification::Ambiguous),
        n(Classification::Other),
        incomplete.len()
    );
    Ok(Extracted {
        events,
        outputs: vec![events_path, incomplete_path],
    })
}

pub fn extract(ctx: &Context, input: &Path, out: &Path) -> Result<(), CliError> {
    let (trips, mut inputs) = load_trips(ctx, input)?;
    let ex = run_extract(ctx, &trips, out)?;
    inputs.extend(ctx.inputs());
    write_manifest(ctx, "extract", out, &inputs, &ex.outputs)
}

#[derive(Serialize, Deserialize)]
struct GapFailure {
    trip_id: String,
    /// Extracted event id when matched, else the frames' own id.
    event_id: String,
    reason: String,
}

struct Estimated {
    gaps: Vec<GapRecord>,
    outputs: Vec<PathBuf>,
    frames_path: PathBuf,
}

fn run_estimate(
    ctx: &Context,
    trips: &[Trip],
    events: &[LaneChangeEvent],
    input: &Path,
    out: &Path,
) -> Result<Estimated, CliError> {
    let frames_path = input.join(FRAMES_FILE);
    let records: Vec<FrameRecord> = read_records(&frames_path).map_err(data_err)?;
    let groups = group_frames(&records);
    let trip_meta: HashMap<&str, &Trip> = trips.iter().map(|t| (t.trip_id.as_str(), t)).collect();
    let intrinsics = ctx.config.intrinsics();
    let gap_cfg = ctx.config.gap();

    let results = par::map(ctx.exec, &groups, |g| {
        let fail = |event_id: &str, reason: String| {
            Err(GapFailure {
                trip_id: g.trip_id.clone(),
                event_id: event_id.to_string(),
                reason,
            })
        };
        let Some(i) = match_event(g, events, ctx.config.match_tolerance) else {
            return fail(&g.event_id, "no extracted event near the anchor time".into());
        };
        let e = &events[i];
        let Some(trip) = trip_meta.get(g.trip_id.as_str()) else {
            return fail(&e.event_id, "unknown trip".into());
        };
        match estimate_gap(&g.frames, trip.lane_width_true, trip.cam_to_rear, &intrinsics, &gap_cfg) {
            Ok(estimate) => Ok(GapRecord {
                trip_id: g.trip_id.clone(),
                event_id: e.event_id.clone(),
                estimate,
            }),
            Err(err) => fail(&e.event_id, err.to_string()),
        }
    });
    let mut gaps = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(g) => gaps.push(g),
            Err(f) => failures.push(f),
        }
    }
    let gaps_path = out.join(GAPS_FILE);
    let failures_path = out.join(GAP_FAILURES_FILE);
    write_records(&gaps_path, &gaps).map_err(data_err)?;
    write_records(&failures_path, &failures).map_err(data_err)?;
    println!(
        "estimate: {} gaps from {} frame groups ({} failed, mode {})",
        gaps.len(),
        groups.len(),
        failures.len(),
        gap_cfg.mode
    );
    Ok(Estimated {
        gaps,
        outputs: vec![gaps_path, failures_path],
        frames_path,
    })
}

pub fn estimate(ctx: &Context, input: &Path, out: &Path) -> Result<(), CliError> {
    let (trips, mut inputs) = load_trips(ctx, input)?;
    let events_path = out.join(EVENTS_FILE);
    let events: Vec<LaneChangeEvent> = read_records(&events_path).map_err(data_err)?;
    let est = run_estimate(ctx, &trips, &events, input, out)?;
    inputs.push(events_path);
    inputs.push(est.frames_path);
    inputs.extend(ctx.inputs());
    write_manifest(ctx, "estimate", out, &inputs, &est.outputs)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Models {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlc: Option<BehaviorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dlc: Option<BehaviorModel>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub range_rate_mode: RangeRateMode,
    pub risk: RiskReport,
    pub models: Models,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct HistRow {
    class: &'static str,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
    frequency: f64,
}

fn hist_rows(rows: &mut Vec<HistRow>, class: &'static str, h: &Histogram) {
    for i in 0..h.counts.len() {
        rows.push(HistRow {
            class,
            bin_lo: h.edges[i],
            bin_hi: h.edges[i + 1],
            count: h.counts[i],
            frequency: h.frequencies[i],
        });
    }
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    event_id: &'a str,
    class: Classification,
    range: f64,
    range_rate: f64,
    /// Empty when the gap is opening.
    ttc: Option<f64>,
}

#[derive(Serialize)]
struct DurationRow<'a> {
    event_id: &'a str,
    class: Classification,
    d_head: f64,
    d_cross: f64,
    d_tail: f64,
}

#[derive(Serialize)]
struct CurveRow {
    class: &'static str,
    stage: String,
    x: f64,
    pdf: f64,
    cdf: f64,
}

fn behavior_samples(
    events: &[LaneChangeEvent],
    gaps: &[GapRecord],
    class: Classification,
) -> Vec<BehaviorSample> {
    let by_id: HashMap<&str, &GapRecord> = gaps.iter().map(|g| (g.event_id.as_str(), g)).collect();
    events
        .iter()
        .filter(|e| e.classification == class)
        .map(|e| BehaviorSample {
            durations: e.stage.durations(),
            gap: by_id
                .get(e.event_id.as_str())
                .map(|g| (g.estimate.range, g.estimate.range_rate)),
        })
        .collect()
}

fn run_analyze(
    ctx: &Context,
    events: &[LaneChangeEvent],
    gaps: &[GapRecord],
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let risk = risk_report(events, gaps, &ctx.config.risk(), ctx.exec);
    let mut notes = Vec::new();
    let mut fit = |class| match fit_behavior_model(&behavior_samples(events, gaps, class), class, ctx.config.gap_model) {
        Ok(m) => Some(m),
        Err(e) => {
            notes.push(format!("no {class} behavior model: {e}"));
            None
        }
    };
    let models = Models {
        mlc: fit(Classification::Mlc),
        dlc: fit(Classification::Dlc),
    };
    let report = AnalysisReport {
        range_rate_mode: ctx.config.range_rate_mode,
        risk,
        models,
        notes,
    };
    let mut outputs = Vec::new();
    let report_path = out.join(REPORT_FILE);
    write_json(&report_path, &report)?;
    outputs.push(report_path);

    let mut rows = Vec::new();
    hist_rows(&mut rows, "MLC", &report.risk.range_histograms.mlc);
    hist_rows(&mut rows, "DLC", &report.risk.range_histograms.dlc);
    let p = out.join("hist_range.csv");
    write_csv(&p, &rows)?;
    outputs.push(p);

    let mut rows = Vec::new();
    hist_rows(&mut rows, "MLC", &report.risk.range_rate_histograms.mlc);
    hist_rows(&mut rows, "DLC", &report.risk.range_rate_histograms.dlc);
    let p = out.join("hist_range_rate.csv");
    write_csv(&p, &rows)?;
    outputs.push(p);

    let obs = gap_observations(events, gaps);
    let scatter: Vec<ScatterRow> = obs
        .iter()
        .map(|o| ScatterRow {
            event_id: &o.event_id,
            class: o.class,
            range: o.range,
            range_rate: o.range_rate,
            ttc: ttc(o.range, o.range_rate).ok().filter(|t| t.is_finite()),
        })
        .collect();
    let p = out.join("gap_scatter.csv");
    write_csv(&p, &scatter)?;
    outputs.push(p);

    let durations: Vec<DurationRow> = events
        .iter()
        .filter(|e| matches!(e.classification, Classification::Mlc | Classification::Dlc))
        .map(|e| DurationRow {
            event_id: &e.event_id,
            class: e.classification,
            d_head: e.stage.d_head,
            d_cross: e.stage.d_cross,
            d_tail: e.stage.d_tail,
        })
        .collect();
    let p = out.join("durations.csv");
    write_csv(&p, &durations)?;
    outputs.push(p);

    let mut curves = Vec::new();
    for s in &report.risk.durations {
        for (class, fit) in [("MLC", &s.mlc_fit), ("DLC", &s.dlc_fit)] {
            let g = fit.params;
            let (lo, hi) = (g.quantile(0.001).unwrap_or(0.0), g.quantile(0.999).unwrap_or(1.0));
            for i in 0..=200 {
                let x = lo + (hi - lo) * i as f64 / 200.0;
                curves.push(CurveRow {
                    class,
                    stage: s.stage.clone(),
                    x,
                    pdf: g.pdf(x),
                    cdf: g.cdf(x),
                });
            }
        }
    }
    let p = out.join("gev_curves.csv");
    write_csv(&p, &curves)?;
    outputs.push(p);

    let fr = &report.risk.risk;
    println!(
        "analyze: {} MLC / {} DLC in FAZ, mean risk ratio {}",
        fr.mlc_events,
        fr.dlc_events,
        fr.mean_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}"))
    );
    for s in &report.risk.durations {
        println!("  {:<5} MWW p = {:.4}", s.stage, s.mww.p_two_sided);
    }
    for n in &report.notes {
        println!("  note: {n}");
    }
    Ok(outputs)
}

pub fn analyze(ctx: &Context, out: &Path) -> Result<(), CliError> {
    let events_path = out.join(EVENTS_FILE);
    let gaps_path = out.join(GAPS_FILE);
    let events: Vec<LaneChangeEvent> = read_records(&events_path).map_err(data_err)?;
    let gaps: Vec<GapRecord> = read_records(&gaps_path).map_err(data_err)?;
    let outputs = run_analyze(ctx, &events, &gaps, out)?;
    let mut inputs = vec![events_path, gaps_path];
    inputs.extend(ctx.inputs());
    write_manifest(ctx, "analyze", out, &inputs, &outputs)
}

pub fn report(ctx: &Context, input: &Path, out: &Path) -> Result<(), CliError> {
    let (trips, mut inputs) = load_trips(ctx, input)?;
    let ex = run_extract(ctx, &trips, out)?;
    let est = run_estimate(ctx, &trips, &ex.events, input, out)?;
    let mut outputs = ex.outputs;
    outputs.extend(est.outputs);
    outputs.extend(run_analyze(ctx, &ex.events, &est.gaps, out)?);
    inputs.push(est.frames_path);
    inputs.extend(ctx.inputs());
    write_manifest(ctx, "report", out, &inputs, &outputs)
}

pub fn sample(
    ctx: &Context,
    model_path: &Path,
    n: Option<usize>,
    class: Option<Classification>,
    out: &Path,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| data_err(anyhow!("reading model {}: {e}", model_path.display())))?;
    let report: AnalysisReport = serde_json::from_str(&text)
        .map_err(|e| data_err(anyhow!("parsing model {}: {e}", model_path.display())))?;
    let class = class.unwrap_or(ctx.config.scenario_class);
    let model = match class {
        Classification::Mlc => report.models.mlc,
        Classification::Dlc => report.models.dlc,
        other => return Err(data_err(anyhow!("no behavior model for class {other}"))),
    }
    .ok_or_else(|| data_err(anyhow!("{} has no {class} behavior model", model_path.display())))?;

    let n = n.unwrap_or(ctx.config.scenario_count);
    let opts = SamplerOptions {
        risk_bias: ctx.config.risk_bias,
        lane_width: ctx.config.scenario_lane_width,
        exec: ctx.exec,
        ..SamplerOptions::default()
    };
    let specs = sample_scenarios(&model, n, ctx.config.seed, &opts).map_err(data_err)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    export_scenarios(&specs, out).map_err(data_err)?;

    let mean = |f: fn(&lanechange::ScenarioSpec) -> f64| specs.iter().map(f).sum::<f64>() / specs.len() as f64;
    let closing = specs.iter().filter(|s| s.ttc().is_finite()).count();
    println!(
        "sample: {} {class} scenarios (seed {}), mean gap {:.2} m, {} closing, mean durations {:.2}/{:.2}/{:.2} s",
        specs.len(),
        ctx.config.seed,
        mean(|s| s.initial_gap),
        closing,
        mean(|s| s.d_head),
        mean(|s| s.d_cross),
        mean(|s| s.d_tail)
    );
    let manifest_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut inputs = vec![model_path.to_path_buf()];
    inputs.extend(ctx.inputs());
    write_manifest(ctx, "sample", manifest_dir, &inputs, &[out.to_path_buf()])
}
