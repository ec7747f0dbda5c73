//! `stpp`: simulate scenarios, train intensity models, filter detections,
//! track and evaluate.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use stpp_core::config::RunConfig;
use stpp_core::filter::filter_detections;
use stpp_core::io::{read_detections, read_intensities, read_tracked, write_detections, write_intensities};
use stpp_core::metrics::{clear_mot, event_ap, positive_rate, MotReport};
use stpp_core::model::{ModelVariant, StppModel};
use stpp_core::pipeline::{
    infer, label_scenario, prediction_mode, run_pipeline, train_variant, PipelineReport, REPORT_FILE,
};
use stpp_core::pointprocess::{read_event_grids, write_event_grids};
use stpp_core::simulate::{generate_scenario, load_scenario, save_scenario};
use stpp_core::tracker::{format_trajectories, track};
use stpp_core::training::TrainSample;
use stpp_core::Error;

/// Name of the ground-truth event file written next to a scenario.
const EVENTS_FILE: &str = "events.txt";

#[derive(Parser)]
#[command(
    name = "stpp",
    version,
    about = "Point-process detection filtering and tracklet tracking"
)]
struct Cli {
    /// Key-value configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant for train, and the only variant for pipeline.
    #[arg(long, global = true)]
    variant: Option<ModelVariant>,
    /// Directory for outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one labeled scenario from the run seed.
    Simulate,
    /// Train a model on scenario directories.
    Train {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Predict intensities and events for a scenario.
    Infer {
        #[arg(long)]
        model: PathBuf,
        scenario: PathBuf,
    },
    /// Remove detections dense in predicted events.
    Filter {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        events: PathBuf,
    },
    /// Track detections into trajectories.
    Track {
        #[arg(long)]
        detections: PathBuf,
    },
    /// CLEAR-MOT metrics, plus event AP when intensities and events are given.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, requires = "events")]
        intensities: Option<PathBuf>,
        #[arg(long, requires = "intensities")]
        events: Option<PathBuf>,
    },
    /// Simulate, train, infer, filter, track and evaluate every variant.
    Pipeline,
    /// CSV series for plotting from a pipeline report.
    PlotData {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) => 2,
            Error::Numeric { .. } => 4,
            _ => 3,
        };
        Failure { code, error }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|error| Failure { code: 2, error })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Outcome {
    let ls = label_scenario(generate_scenario(&cfg.sim, cfg.seed)?, cfg)?;
    save_scenario(&ls.scenario, out)?;
    write_event_grids(&out.join(EVENTS_FILE), &ls.events)?;
    println!("scenario {} written to {}", cfg.seed, out.display());
    Ok(())
}

fn train(cfg: &RunConfig, variant: ModelVariant, scenarios: &[PathBuf], out: &Path) -> Outcome {
    let samples = scenarios
        .iter()
        .map(|dir| {
            let s = load_scenario(dir)?;
            let events = read_event_grids(&dir.join(EVENTS_FILE))?;
            TrainSample::new(s.sequence(&s.raw_detections())?, events)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ckpt = out.join(format!("model_{variant}.ckpt"));
    let (model, trace) = train_variant(cfg, variant, &samples, Some(&ckpt))?;
    model.save(&ckpt)?;
    trace.write_csv(&out.join(format!("loss_{variant}.csv")))?;
    println!(
        "{variant}: {} iterations, final loss {:.6}, model at {}",
        trace.len(),
        trace.values.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn infer_cmd(cfg: &RunConfig, model: &Path, scenario: &Path, out: &Path) -> Outcome {
    if !model.exists() {
        return Err(Error::MissingArtifact(model.to_path_buf()).into());
    }
    let model = StppModel::load(model)?;
    let s = load_scenario(scenario)?;
    let inference = infer(&model, &s, prediction_mode(cfg, s.seed), cfg.ratio_threshold)?;
    write_intensities(&out.join("intensities.bin"), &inference.maps)?;
    write_event_grids(&out.join("events_pred.txt"), &inference.events)?;
    println!("predicted {} frames", inference.maps.len());
    Ok(())
}

fn filter_cmd(cfg: &RunConfig, detections: &Path, events: &Path, out: &Path) -> Outcome {
    let dets = read_detections(detections)?;
    let grids = read_event_grids(events)?;
    let (kept, report) = filter_detections(&dets, &grids, cfg.ratio_threshold)?;
    write_detections(&out.join("filtered.txt"), &kept)?;
    report.write_csv(&out.join("filter_report.csv"))?;
    println!("kept {} of {} detections", kept.len(), dets.len());
    Ok(())
}

fn track_cmd(cfg: &RunConfig, detections: &Path, out: &Path) -> Outcome {
    let dets: Vec<_> = read_detections(detections)?
        .into_iter()
        .map(|mut d| {
            d.id = None;
            d
        })
        .collect();
    let trajectories = track(&dets, &cfg.tracker)?;
    fs::write(out.join("tracks.txt"), format_trajectories(&trajectories)).map_err(Error::from)?;
    println!("{} trajectories", trajectories.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    mot: MotReport,
    event_ap: Option<f64>,
    event_prior: Option<f64>,
}

fn eval_cmd(gt: &Path, pred: &Path, ap_inputs: Option<(&Path, &Path)>, out: &Path) -> Outcome {
    let mot = clear_mot(&read_tracked(gt)?, &read_tracked(pred)?)?;
    let (mut event_ap_value, mut prior) = (None, None);
    if let Some((intensities, events)) = ap_inputs {
        let maps = read_intensities(intensities)?;
        let grids = read_event_grids(events)?;
        event_ap_value = Some(event_ap(&maps, &grids)?);
        prior = Some(positive_rate(&grids));
    }
    let report = EvalReport {
        mot,
        event_ap: event_ap_value,
        event_prior: prior,
    };
    write_json(&out.join("eval.json"), &report)?;
    println!("MOTA {:.4} MOTP {:.2} IDS {}", mot.mota, mot.motp, mot.ids);
    Ok(())
}

fn pipeline_cmd(cfg: &mut RunConfig, variant: Option<ModelVariant>, out: &Path) -> Outcome {
    if let Some(v) = variant {
        cfg.pipeline.variants = vec![v];
    }
    let report = run_pipeline(cfg, Some(out), &mut |line| eprintln!("{line}"))?;
    println!("report written to {}", out.join(REPORT_FILE).display());
    for v in &report.variants {
        println!(
            "{}: median MOTA {:.4}, event AP {:.4}",
            v.variant, v.median_mota, v.event_ap
        );
    }
    Ok(())
}

fn plot_data(report: &Path, out: &Path) -> Outcome {
    let text = stpp_core::io::read_text(report)?;
    let report: PipelineReport = serde_json::from_str(&text).map_err(Error::from)?;
    let mut loss = String::from("variant,iteration,nll\n");
    let mut pr = String::from("variant,threshold,recall,precision\n");
    let mut bars = format!("variant,median_mota\nbaseline,{}\n", report.baseline.median_mota);
    for v in &report.variants {
        for (k, value) in v.loss_trace.iter().enumerate() {
            let _ = writeln!(loss, "{},{k},{value}", v.variant);
        }
        for p in &v.pr_curve {
            let _ = writeln!(pr, "{},{},{},{}", v.variant, p.threshold, p.recall, p.precision);
        }
        let _ = writeln!(bars, "{},{}", v.variant, v.median_mota);
    }
    for (name, body) in [("loss.csv", loss), ("pr.csv", pr), ("mota.csv", bars)] {
        fs::write(out.join(name), body).map_err(Error::from)?;
    }
    println!("plot data written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = load_config(&cli)?;
    let out = cli.out_dir.as_path();
    fs::create_dir_all(out).map_err(Error::from)?;
    match &cli.command {
        Command::Simulate => simulate(&cfg, out),
        Command::Train { scenarios } => {
            let variant = cli.variant.unwrap_or(ModelVariant::SyncAsync);
            train(&cfg, variant, scenarios, out)
        }
        Command::Infer { model, scenario } => infer_cmd(&cfg, model, scenario, out),
        Command::Filter { detections, events } => filter_cmd(&cfg, detections, events, out),
        Command::Track { detections } => track_cmd(&cfg, detections, out),
        Command::Eval {
            gt,
            pred,
            intensities,
            events,
        } => {
            let ap = intensities.as_deref().zip(events.as_deref());
            eval_cmd(gt, pred, ap, out)
        }
        Command::Pipeline => pipeline_cmd(&mut cfg, cli.variant, out),
        Command::PlotData { report } => {
            let path = report.clone().unwrap_or_else(|| out.join(REPORT_FILE));
            plot_data(&path, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
