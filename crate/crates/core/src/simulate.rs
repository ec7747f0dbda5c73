//! Synthetic multi-agent scenarios with labeled detection noise.
//!
//! Agents move with constant velocity between two in-grid points. Frames
//! are grayscale rasters of filled agent boxes plus one static clutter blob
//! per noise source; clutter has the same brightness range as agents, so a
//! single frame cannot tell it from a person. Each source emits a noisy
//! detection per frame with probability `noise_rate`, centered within
//! `noise_radius` of the source. Agents whose paths cross are given
//! near-identical appearance with probability `confusion_rate`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{cosine, BBox, Detection, Label};
use crate::error::{Error, Result};
use crate::io::{format_detections, format_tracked, read_detections, read_text, read_tracked};
use crate::metrics::TrackedBox;
use crate::model::Sequence;
use crate::pointprocess::EventGrid;
use crate::tensor::Tensor;
use crate::tracker::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub agents: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Per-frame emission probability of each noise source.
    pub noise_rate: f64,
    /// Probability that a crossing pair shares appearance.
    pub confusion_rate: f64,
    /// Standard deviation of the box corner jitter, in pixels.
    pub jitter: f64,
    pub noise_sources: usize,
    /// Maximum distance of a noisy box center from its source.
    pub noise_radius: f64,
    pub min_box: usize,
    pub max_box: usize,
    pub appearance_dim: usize,
    /// Standard deviation of the per-detection feature noise.
    pub feature_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            agents: 6,
            frames: 60,
            height: 32,
            width: 32,
            noise_rate: 0.15,
            confusion_rate: 0.1,
            jitter: 0.5,
            noise_sources: 3,
            noise_radius: 3.0,
            min_box: 5,
            max_box: 8,
            appearance_dim: 16,
            feature_noise: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if self.min_box == 0 || self.min_box > self.max_box {
            return bad(format!(
                "box sizes must satisfy 0 < min <= max, got {}..{}",
                self.min_box, self.max_box
            ));
        }
        if self.max_box + 2 > self.height.min(self.width) {
            return bad(format!(
                "boxes up to {} pixels do not fit a {}x{} grid",
                self.max_box, self.height, self.width
            ));
        }
        // Agents must be able to occupy disjoint spots at any instant.
        let spots = (self.height / self.max_box) * (self.width / self.max_box);
        if self.agents + self.noise_sources > spots {
            return bad(format!(
                "{} agents and {} noise sources do not fit a {}x{} grid",
                self.agents, self.noise_sources, self.height, self.width
            ));
        }
        for (name, p) in [("noise rate", self.noise_rate), ("confusion rate", self.confusion_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("noise radius", self.noise_radius),
            ("feature noise", self.feature_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.appearance_dim < 2 {
            return bad("appearance dimension must be at least 2".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    /// Top-left corner at `start`.
    pub position: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub size: (f64, f64),
    /// Unit norm.
    pub appearance: Vec<f64>,
    /// Alive on frames `start..=end`.
    pub start: usize,
    pub end: usize,
}

impl Agent {
    pub fn alive(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    /// Box at `frame`, clamped to the grid.
    pub fn bbox(&self, frame: usize, height: usize, width: usize) -> BBox {
        let dt = frame as f64 - self.start as f64;
        let left = (self.position.0 + self.velocity.0 * dt).clamp(0.0, width as f64 - self.size.0);
        let top = (self.position.1 + self.velocity.1 * dt).clamp(0.0, height as f64 - self.size.1);
        BBox::new(left, top, self.size.0, self.size.1)
    }

    /// Raster brightness in `[0.3, 1]`, a function of the appearance.
    pub fn brightness(&self) -> f64 {
        0.3 + 0.7 / (1.0 + (-4.0 * self.appearance[0]).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub center: (f64, f64),
    /// The rendered clutter blob.
    pub blob: BBox,
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub seed: u64,
    pub agents: Vec<Agent>,
    pub sources: Vec<NoiseSource>,
    /// `[1, H, W]` per frame.
    pub frames: Vec<Tensor>,
    /// Ordered by frame; good and confusing detections carry their agent id.
    pub detections: Vec<Detection>,
}

impl Scenario {
    pub fn gt_boxes(&self) -> Vec<TrackedBox> {
        let (h, w) = (self.config.height, self.config.width);
        let mut out = Vec::new();
        for f in 0..self.config.frames {
            for a in self.agents.iter().filter(|a| a.alive(f)) {
                out.push(TrackedBox {
                    frame: f,
                    id: a.id,
                    bbox: a.bbox(f, h, w),
                    confidence: 1.0,
                });
            }
        }
        out
    }

    /// Detections with labels and ids removed, as a detector would emit them.
    pub fn raw_detections(&self) -> Vec<Detection> {
        self.detections
            .iter()
            .map(|d| Detection {
                id: None,
                label: None,
                ..d.clone()
            })
            .collect()
    }

    /// Model input: frames with the detection masks of `dets`.
    pub fn sequence(&self, dets: &[Detection]) -> Result<Sequence> {
        let masks = detection_masks(dets, self.config.frames, self.config.height, self.config.width)
            .iter()
            .map(EventGrid::to_tensor)
            .collect();
        Sequence::new(self.frames.clone(), masks)
    }
}

/// Per-frame union of the pixels inside the given boxes.
pub fn detection_masks(dets: &[Detection], frames: usize, height: usize, width: usize) -> Vec<EventGrid> {
    let mut grids: Vec<EventGrid> = (0..frames).map(|f| EventGrid::empty(f, height, width)).collect();
    for d in dets {
        if let Some(g) = grids.get_mut(d.frame) {
            paint(g, &d.bbox);
        }
    }
    grids
}

fn paint(grid: &mut EventGrid, bbox: &BBox) {
    let (rows, cols) = bbox.pixel_ranges(grid.height(), grid.width());
    for r in rows {
        for c in cols.clone() {
            grid.set(r, c, true);
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn sample_agent(cfg: &SimConfig, id: u64, rng: &mut ChaCha8Rng) -> Agent {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let bw = rng.random_range(cfg.min_box..=cfg.max_box) as f64;
    let bh = rng.random_range(cfg.min_box..=cfg.max_box) as f64;
    let span = cfg.frames - 1;
    let min_len = (span / 2).max(1);
    let len = rng.random_range(min_len..=span);
    let start = rng.random_range(0..=span - len);
    // Endpoints at least a third of the grid apart so that agents move.
    let min_dist = h.min(w) / 3.0;
    let (from, to) = loop {
        let a = (rng.random_range(0.0..=w - bw), rng.random_range(0.0..=h - bh));
        let b = (rng.random_range(0.0..=w - bw), rng.random_range(0.0..=h - bh));
        if ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= min_dist {
            break (a, b);
        }
    };
    Agent {
        id,
        position: from,
        velocity: ((to.0 - from.0) / len as f64, (to.1 - from.1) / len as f64),
        size: (bw, bh),
        appearance: unit_vector(rng, cfg.appearance_dim),
        start,
        end: start + len,
    }
}

/// Whether two agents overlap at some frame both are alive.
pub fn paths_cross(a: &Agent, b: &Agent, height: usize, width: usize) -> bool {
    let (s, e) = (a.start.max(b.start), a.end.min(b.end));
    s <= e && (s..=e).any(|f| a.bbox(f, height, width).intersection(&b.bbox(f, height, width)) > 0.0)
}

fn jittered(bbox: &BBox, sigma: f64, rng: &mut ChaCha8Rng, height: usize, width: usize) -> BBox {
    if sigma == 0.0 {
        return *bbox;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for _ in 0..16 {
        let l = bbox.left + normal.sample(rng);
        let t = bbox.top + normal.sample(rng);
        let r = bbox.right() + normal.sample(rng);
        let b = bbox.bottom() + normal.sample(rng);
        let l = l.max(0.0);
        let t = t.max(0.0);
        let r = r.min(width as f64);
        let b = b.min(height as f64);
        let out = BBox::new(l, t, r - l, b - t);
        if out.width >= 1.0 && out.height >= 1.0 && out.iou(bbox) >= 0.5 {
            return out;
        }
    }
    *bbox
}

/// Generates a scenario. Labels are `Good` or `Noisy`; confusing labels
/// need a tracker and come from [`label_confusing`].
pub fn generate_scenario(cfg: &SimConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    let mut agents: Vec<Agent> = (0..cfg.agents)
        .map(|i| sample_agent(cfg, i as u64 + 1, &mut rng))
        .collect();

    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            if paths_cross(&agents[i], &agents[j], h, w) && rng.random_bool(cfg.confusion_rate) {
                // A copy of i's appearance with small noise, cosine >= 0.98.
                let base = agents[i].appearance.clone();
                let normal = Normal::new(0.0, 0.02).expect("finite sigma");
                loop {
                    let v = normalized(base.iter().map(|x| x + normal.sample(&mut rng)).collect());
                    if cosine(&v, &base) >= 0.98 {
                        agents[j].appearance = v;
                        break;
                    }
                }
            }
        }
    }

    let blob = cfg.min_box as f64;
    let sources: Vec<NoiseSource> = (0..cfg.noise_sources)
        .map(|_| {
            let x = rng.random_range(blob / 2.0..=w as f64 - blob / 2.0);
            let y = rng.random_range(blob / 2.0..=h as f64 - blob / 2.0);
            NoiseSource {
                center: (x, y),
                blob: BBox::new(x - blob / 2.0, y - blob / 2.0, blob, blob),
                brightness: 0.3 + 0.7 * rng.random::<f64>(),
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut detections = Vec::new();
    let feature = Normal::new(0.0, cfg.feature_noise).map_err(|e| Error::config(e.to_string()))?;
    for f in 0..cfg.frames {
        let mut pixels = vec![0.0; h * w];
        let mut draw = |bbox: &BBox, v: f64| {
            let (rows, cols) = bbox.pixel_ranges(h, w);
            for r in rows {
                for c in cols.clone() {
                    pixels[r * w + c] = f64::max(pixels[r * w + c], v);
                }
            }
        };
        for s in &sources {
            draw(&s.blob, s.brightness);
        }
        let mut gt = Vec::new();
        for a in agents.iter().filter(|a| a.alive(f)) {
            let bbox = a.bbox(f, h, w);
            draw(&bbox, a.brightness());
            gt.push(bbox);
            let mut det = Detection::new(
                f,
                jittered(&bbox, cfg.jitter, &mut rng, h, w),
                rng.random_range(0.6..=1.0),
                a.appearance.iter().map(|x| x + feature.sample(&mut rng)).collect(),
            );
            det.id = Some(a.id);
            det.label = Some(Label::Good);
            detections.push(det);
        }
        frames.push(Tensor::new(vec![1, h, w], pixels)?);

        for s in &sources {
            if !rng.random_bool(cfg.noise_rate) {
                continue;
            }
            for _ in 0..32 {
                let r = cfg.noise_radius * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let bw = rng.random_range(cfg.min_box..=cfg.max_box) as f64;
                let bh = rng.random_range(cfg.min_box..=cfg.max_box) as f64;
                let cx = s.center.0 + r * phi.cos();
                let cy = s.center.1 + r * phi.sin();
                let bbox = BBox::new(cx - bw / 2.0, cy - bh / 2.0, bw, bh);
                let inside =
                    bbox.left >= 0.0 && bbox.top >= 0.0 && bbox.right() <= w as f64 && bbox.bottom() <= h as f64;
                if inside && gt.iter().all(|g| g.iou(&bbox) < 0.5) {
                    let mut det = Detection::new(
                        f,
                        bbox,
                        rng.random_range(0.3..=0.9),
                        unit_vector(&mut rng, cfg.appearance_dim),
                    );
                    det.label = Some(Label::Noisy);
                    detections.push(det);
                    break;
                }
            }
        }
    }
    Ok(Scenario {
        config: *cfg,
        seed,
        agents,
        sources,
        frames,
        detections,
    })
}

/// Labels detections the baseline tracker assigned to the wrong identity.
/// Each detection belongs to the agent whose box overlaps it most (IoU at
/// least 0.5). A trajectory's identity is the agent most of its detections
/// belong to, ties to the smaller id. Detections in a trajectory that belong
/// to another agent are confusing. Trajectory boxes are matched to detections
/// by frame and exact box. Noisy detections keep their label.
pub fn label_confusing(scenario: &mut Scenario, trajectories: &[Trajectory]) {
    let (h, w) = (scenario.config.height, scenario.config.width);
    let agent_of = |d: &Detection| -> Option<u64> {
        let mut best: Option<(f64, u64)> = None;
        for a in scenario.agents.iter().filter(|a| a.alive(d.frame)) {
            let iou = a.bbox(d.frame, h, w).iou(&d.bbox);
            if iou >= 0.5 && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, a.id));
            }
        }
        best.map(|b| b.1)
    };
    let owners: Vec<Option<u64>> = scenario.detections.iter().map(agent_of).collect();
    let mut confusing = vec![false; scenario.detections.len()];
    for t in trajectories {
        let members: Vec<usize> = t
            .boxes
            .iter()
            .filter(|b| !b.interpolated)
            .filter_map(|b| {
                scenario
                    .detections
                    .iter()
                    .position(|d| d.frame == b.frame && d.bbox == b.bbox)
            })
            .collect();
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for &m in &members {
            if let Some(a) = owners[m] {
                *counts.entry(a).or_default() += 1;
            }
        }
        // max_by_key keeps the last maximum; iterate ids in reverse so the smallest wins.
        let Some((&identity, _)) = counts.iter().rev().max_by_key(|(_, &c)| c) else {
            continue;
        };
        for &m in &members {
            if owners[m].is_some_and(|a| a != identity) {
                confusing[m] = true;
            }
        }
    }
    for (d, c) in scenario.detections.iter_mut().zip(confusing) {
        if c && d.label != Some(Label::Noisy) {
            d.label = Some(Label::Confusing);
        }
    }
}

/// Per-frame union of the pixels inside noisy and confusing boxes.
pub fn events_from_labels(scenario: &Scenario) -> Vec<EventGrid> {
    let bad: Vec<Detection> = scenario
        .detections
        .iter()
        .filter(|d| d.label.is_some_and(Label::is_bad))
        .cloned()
        .collect();
    detection_masks(
        &bad,
        scenario.config.frames,
        scenario.config.height,
        scenario.config.width,
    )
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: SimConfig,
    seed: u64,
    agents: Vec<Agent>,
    sources: Vec<NoiseSource>,
}

pub const DETECTIONS_FILE: &str = "detections.txt";
pub const GT_FILE: &str = "gt.txt";
pub const FRAMES_FILE: &str = "frames.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes detections, ground truth, frames and a manifest into `dir`.
pub fn save_scenario(scenario: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(DETECTIONS_FILE), format_detections(&scenario.detections))?;
    fs::write(dir.join(GT_FILE), format_tracked(&scenario.gt_boxes()))?;
    let (h, w) = (scenario.config.height, scenario.config.width);
    let data: Vec<f64> = scenario.frames.iter().flat_map(|f| f.data().iter().copied()).collect();
    let stacked = Tensor::new(vec![scenario.frames.len(), h, w], data)?;
    let mut buf = Vec::new();
    stacked.write_to(&mut buf)?;
    fs::write(dir.join(FRAMES_FILE), buf)?;
    let manifest = Manifest {
        config: scenario.config,
        seed: scenario.seed,
        agents: scenario.agents.clone(),
        sources: scenario.sources.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let manifest: Manifest = serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let frames_path = dir.join(FRAMES_FILE);
    if !frames_path.exists() {
        return Err(Error::MissingArtifact(frames_path));
    }
    let stacked = Tensor::read_from(&mut fs::read(&frames_path)?.as_slice())?;
    let cfg = manifest.config;
    if stacked.shape() != [cfg.frames, cfg.height, cfg.width] {
        return Err(Error::input(format!(
            "{}: frames of shape {:?} do not match the manifest",
            frames_path.display(),
            stacked.shape()
        )));
    }
    let plane = cfg.height * cfg.width;
    let frames = stacked
        .data()
        .chunks(plane)
        .map(|c| Tensor::new(vec![1, cfg.height, cfg.width], c.to_vec()))
        .collect::<Result<_>>()?;
    let detections = read_detections(&dir.join(DETECTIONS_FILE))?;
    // Ground truth is derived from the agents; reading it checks that it exists and parses.
    read_tracked(&dir.join(GT_FILE))?;
    Ok(Scenario {
        config: cfg,
        seed: manifest.seed,
        agents: manifest.agents,
        sources: manifest.sources,
        frames,
        detections,
    })
}
