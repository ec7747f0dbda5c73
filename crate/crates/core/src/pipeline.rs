//! End-to-end runs: simulate, train, infer, filter, track, evaluate.
//!
//! Training scenarios and test scenarios come from disjoint seed ranges.
//! Every variant starts from the same initialization seed and draws the
//! same training batches, so the ablation differs only in architecture.
//! Event AP is measured with the true event history driving the async
//! stream; filtering feeds back the model's own judgments (see [`infer`]).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{InferMode, RunConfig};
use crate::detection::{Detection, Label};
use crate::error::Result;
use crate::filter::filter_detections;
use crate::io::trajectories_to_tracked;
use crate::metrics::{clear_mot, event_ap, positive_rate, pr_curve, MotReport, PrPoint};
use crate::model::{EventFeed, ModelVariant, StppModel};
use crate::pointprocess::{predict_events, EventGrid, IntensityMap, Prediction};
use crate::simulate::{events_from_labels, generate_scenario, label_confusing, Scenario};
use crate::tensor::Graph;
use crate::tracker::{track, Trajectory};
use crate::training::{train, LossTrace, TrainSample};

pub const SCHEMA_VERSION: u32 = 1;

/// Points kept when a precision-recall curve is stored for plotting.
pub const PR_PLOT_POINTS: usize = 200;

const STREAM_MODEL: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

/// Seed for one purpose, derived from the run seed.
pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

pub fn model_seed(cfg: &RunConfig) -> u64 {
    derived_seed(cfg.seed, STREAM_MODEL)
}

pub fn train_seed(cfg: &RunConfig) -> u64 {
    derived_seed(cfg.seed, STREAM_TRAIN)
}

/// Event prediction mode for the scenario with seed `scenario_seed`.
pub fn prediction_mode(cfg: &RunConfig, scenario_seed: u64) -> Prediction {
    match cfg.infer_mode {
        InferMode::Threshold => Prediction::Threshold {
            threshold: cfg.event_threshold,
        },
        InferMode::Bernoulli => Prediction::Bernoulli {
            seed: derived_seed(cfg.seed, STREAM_SAMPLING) ^ scenario_seed,
        },
    }
}

/// A scenario with confusing labels from the unfiltered tracker and the
/// resulting event grids.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub scenario: Scenario,
    pub events: Vec<EventGrid>,
    pub baseline: Vec<Trajectory>,
}

pub fn label_scenario(mut scenario: Scenario, cfg: &RunConfig) -> Result<LabeledScenario> {
    let baseline = track(&scenario.raw_detections(), &cfg.tracker)?;
    label_confusing(&mut scenario, &baseline);
    let events = events_from_labels(&scenario);
    Ok(LabeledScenario {
        scenario,
        events,
        baseline,
    })
}

pub fn prepare_scenario(cfg: &RunConfig, seed: u64) -> Result<LabeledScenario> {
    label_scenario(generate_scenario(&cfg.sim, seed)?, cfg)
}

pub fn training_sample(ls: &LabeledScenario) -> Result<TrainSample> {
    TrainSample::new(ls.scenario.sequence(&ls.scenario.raw_detections())?, ls.events.clone())
}

pub fn train_variant(
    cfg: &RunConfig,
    variant: ModelVariant,
    samples: &[TrainSample],
    checkpoint: Option<&Path>,
) -> Result<(StppModel, LossTrace)> {
    let mut model = StppModel::new(variant, cfg.model, model_seed(cfg))?;
    let tc = crate::training::TrainConfig {
        seed: train_seed(cfg),
        ..cfg.train
    };
    let trace = train(&mut model, samples, &tc, checkpoint)?;
    Ok((model, trace))
}

/// Output of [`infer`].
#[derive(Debug, Clone)]
pub struct Inference {
    pub maps: Vec<IntensityMap>,
    /// Cells predicted from each intensity map; the filter reads these.
    pub events: Vec<EventGrid>,
    /// Pixels of the detections the filter removes at each frame; this is
    /// the history the async stream sees.
    pub history: Vec<EventGrid>,
}

/// Runs the model over a scenario's raw detections. Events are defined as
/// pixels of bad detections, so the history fed back at each frame is the
/// union of the boxes that the filter removes given the predicted cells,
/// in the same way that labels are turned into training events.
pub fn infer(model: &StppModel, scenario: &Scenario, mode: Prediction, ratio_threshold: f64) -> Result<Inference> {
    let dets = scenario.raw_detections();
    let seq = scenario.sequence(&dets)?;
    let (h, w) = (seq.height(), seq.width());
    let mut by_frame: Vec<Vec<Detection>> = vec![Vec::new(); seq.len()];
    for d in dets {
        if d.frame < seq.len() {
            by_frame[d.frame].push(d);
        }
    }
    let mut state = model.initial_state(h, w);
    let mut out = Inference {
        maps: Vec::with_capacity(seq.len()),
        events: Vec::with_capacity(seq.len()),
        history: Vec::with_capacity(seq.len()),
    };
    for t in 0..seq.len() {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, false);
        let mut st = model.bind_state(&mut g, &state);
        let prev = if t > 0 { out.history.last() } else { None };
        let lam = model.frame_step(&mut g, &p, &mut st, t, &seq.frames()[t], &seq.masks()[t], prev)?;
        state = model.read_state(&g, &st);
        let map = IntensityMap::new(t, h, w, g.value(lam).to_vec())?;
        let events = predict_events(&map, mode)?;
        let (_, report) = filter_detections(&by_frame[t], std::slice::from_ref(&events), ratio_threshold)?;
        let mut history = EventGrid::empty(t, h, w);
        for e in report.entries.iter().filter(|e| !e.kept) {
            let (rows, cols) = e.bbox.pixel_ranges(h, w);
            for r in rows {
                for c in cols.clone() {
                    history.set(r, c, true);
                }
            }
        }
        out.maps.push(map);
        out.events.push(events);
        out.history.push(history);
    }
    Ok(out)
}

/// Intensities with the true history driving the async stream.
pub fn infer_teacher(model: &StppModel, ls: &LabeledScenario) -> Result<Vec<IntensityMap>> {
    let seq = ls.scenario.sequence(&ls.scenario.raw_detections())?;
    Ok(model.forward_sequence(&seq, EventFeed::Teacher(&ls.events))?.0)
}

pub fn evaluate_tracks(scenario: &Scenario, trajectories: &[Trajectory]) -> Result<MotReport> {
    clear_mot(&scenario.gt_boxes(), &trajectories_to_tracked(trajectories))
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// At most `n` points of `curve`: the first point reaching each recall
/// level `k / n`, plus the last point.
pub fn downsample_pr(curve: &[PrPoint], n: usize) -> Vec<PrPoint> {
    let mut out: Vec<PrPoint> = Vec::new();
    let mut level = 0usize;
    for (i, p) in curve.iter().enumerate() {
        let reached = (p.recall * n as f64).floor() as usize;
        if reached > level || i + 1 == curve.len() || out.is_empty() {
            if out.last() != Some(p) {
                out.push(*p);
            }
            level = reached;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub seed: u64,
    pub mot: MotReport,
    pub detections: usize,
    pub removed: usize,
    /// Removed detections labeled noisy or confusing.
    pub removed_bad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: ModelVariant,
    pub parameters: usize,
    pub loss_trace: Vec<f64>,
    pub median_mota: f64,
    pub event_ap: f64,
    pub pr_curve: Vec<PrPoint>,
    pub scenarios: Vec<ScenarioResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub median_mota: f64,
    pub scenarios: Vec<ScenarioResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub seed: u64,
    pub model_seed: u64,
    pub train_seed: u64,
    pub config: RunConfig,
    pub train_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    /// Fraction of event cells in the test suite: the AP of a constant intensity.
    pub event_prior: f64,
    pub baseline: BaselineReport,
    pub variants: Vec<VariantReport>,
}

impl PipelineReport {
    pub fn variant(&self, v: ModelVariant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub const REPORT_FILE: &str = "report.json";

fn scenario_result(ls: &LabeledScenario, kept: &[Detection], trajectories: &[Trajectory]) -> Result<ScenarioResult> {
    let all = &ls.scenario.detections;
    // Filtering keeps input order, so removed detections are the gaps.
    let mut removed_bad = 0;
    let mut k = 0;
    for d in all {
        if k < kept.len() && kept[k].frame == d.frame && kept[k].bbox == d.bbox {
            k += 1;
        } else if d.label.is_some_and(Label::is_bad) {
            removed_bad += 1;
        }
    }
    Ok(ScenarioResult {
        seed: ls.scenario.seed,
        mot: evaluate_tracks(&ls.scenario, trajectories)?,
        detections: all.len(),
        removed: all.len() - kept.len(),
        removed_bad,
    })
}

/// Runs the whole chain. With `out_dir`, writes the report, loss traces and
/// model checkpoints there. `log` receives one line per stage.
pub fn run_pipeline(cfg: &RunConfig, out_dir: Option<&Path>, log: &mut dyn FnMut(&str)) -> Result<PipelineReport> {
    cfg.validate()?;
    let p = &cfg.pipeline;
    let train_seeds: Vec<u64> = (0..p.train_scenarios as u64).map(|i| p.train_seed_offset + i).collect();
    let test_seeds: Vec<u64> = (0..p.test_scenarios as u64).map(|i| p.test_seed_offset + i).collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    log(&format!(
        "simulating {} training and {} test scenarios",
        train_seeds.len(),
        test_seeds.len()
    ));
    let samples = train_seeds
        .iter()
        .map(|&s| training_sample(&prepare_scenario(cfg, s)?))
        .collect::<Result<Vec<_>>>()?;
    let tests = test_seeds
        .iter()
        .map(|&s| prepare_scenario(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let all_events: Vec<EventGrid> = tests.iter().flat_map(|t| t.events.iter().cloned()).collect();
    let event_prior = positive_rate(&all_events);

    let baseline_results = tests
        .iter()
        .map(|t| scenario_result(t, &t.scenario.detections, &t.baseline))
        .collect::<Result<Vec<_>>>()?;
    let baseline = BaselineReport {
        median_mota: median(&baseline_results.iter().map(|r| r.mot.mota).collect::<Vec<_>>()),
        scenarios: baseline_results,
    };
    log(&format!("baseline median MOTA {:.4}", baseline.median_mota));

    let mut variants = Vec::new();
    for &variant in &p.variants {
        log(&format!("training {variant}"));
        let ckpt = out_dir.map(|d| d.join(format!("model_{variant}.ckpt")));
        let (model, trace) = train_variant(cfg, variant, &samples, ckpt.as_deref())?;
        if let Some(path) = &ckpt {
            model.save(path)?;
        }
        if let Some(dir) = out_dir {
            trace.write_csv(&dir.join(format!("loss_{variant}.csv")))?;
        }
        let mut results = Vec::new();
        let mut maps_all = Vec::new();
        for t in &tests {
            let inference = infer(
                &model,
                &t.scenario,
                prediction_mode(cfg, t.scenario.seed),
                cfg.ratio_threshold,
            )?;
            let (kept, _) = filter_detections(&t.scenario.raw_detections(), &inference.events, cfg.ratio_threshold)?;
            let trajectories = track(&kept, &cfg.tracker)?;
            results.push(scenario_result(t, &kept, &trajectories)?);
            if variant.has_async() {
                maps_all.extend(infer_teacher(&model, t)?);
            } else {
                maps_all.extend(inference.maps);
            }
        }
        let curve = pr_curve(&maps_all, &all_events)?;
        let report = VariantReport {
            variant,
            parameters: model.params().scalar_count(),
            loss_trace: trace.values.clone(),
            median_mota: median(&results.iter().map(|r| r.mot.mota).collect::<Vec<_>>()),
            event_ap: event_ap(&maps_all, &all_events)?,
            pr_curve: downsample_pr(&curve, PR_PLOT_POINTS),
            scenarios: results,
        };
        log(&format!(
            "{variant}: median MOTA {:.4}, event AP {:.4} (prior {:.4})",
            report.median_mota, report.event_ap, event_prior
        ));
        variants.push(report);
    }

    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        model_seed: model_seed(cfg),
        train_seed: train_seed(cfg),
        config: cfg.clone(),
        train_seeds,
        test_seeds,
        event_prior,
        baseline,
        variants,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join(REPORT_FILE), report.to_json()?)?;
    }
    Ok(report)
}
