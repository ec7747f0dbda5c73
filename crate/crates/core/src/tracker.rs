//! Offline tracker: strict frame-to-frame linking into tracklets,
//! density-peak clustering of tracklets, and interpolation of each cluster
//! into a trajectory.
//!
//! Tracklet similarity is the mean, over the `k` detection pairs closest in
//! time (with every pair tied with the `k`-th included), of
//! `max(cos(f_a, f_b), 0) * IoU(a', b')`, where `a'` and `b'` are the two
//! boxes moved to the midpoint frame of the pair using each tracklet's mean
//! velocity. Pairs are ordered by `(|t_a - t_b|, t_a + t_b)`, which does not
//! depend on argument order, so the similarity is symmetric.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detection::{cosine, BBox, Detection};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Minimum appearance cosine for frame-to-frame links.
    pub appearance_threshold: f64,
    /// Minimum box IoU for frame-to-frame links.
    pub motion_threshold: f64,
    /// Detection pairs averaged by the tracklet similarity.
    pub pairs: usize,
    /// Similarity threshold of the density-peak clustering.
    pub center_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            appearance_threshold: 0.8,
            motion_threshold: 0.3,
            pairs: 3,
            center_threshold: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.appearance_threshold) {
            return Err(Error::config("appearance threshold must be in [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&self.motion_threshold) {
            return Err(Error::config("motion threshold must be in [0, 1]"));
        }
        if self.pairs == 0 {
            return Err(Error::config("tracklet similarity needs at least one pair"));
        }
        if !(self.center_threshold > 0.0 && self.center_threshold < 1.0) {
            return Err(Error::config("center threshold must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Detections on consecutive frames believed to be one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    detections: Vec<Detection>,
}

impl Tracklet {
    pub fn new(detections: Vec<Detection>) -> Result<Self> {
        if detections.is_empty() {
            return Err(Error::input("a tracklet needs at least one detection"));
        }
        if let Some(w) = detections.windows(2).find(|w| w[1].frame != w[0].frame + 1) {
            return Err(Error::input(format!(
                "tracklet frames must be consecutive: {} then {}",
                w[0].frame, w[1].frame
            )));
        }
        Ok(Tracklet { detections })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn start(&self) -> usize {
        self.detections[0].frame
    }

    pub fn end(&self) -> usize {
        self.detections[self.detections.len() - 1].frame
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn overlaps(&self, other: &Tracklet) -> bool {
        self.start() <= other.end() && other.start() <= self.end()
    }

    /// Mean per-frame displacement of the box origin; zero for one detection.
    pub fn velocity(&self) -> (f64, f64) {
        if self.len() < 2 {
            return (0.0, 0.0);
        }
        let (a, b) = (&self.detections[0].bbox, &self.detections[self.len() - 1].bbox);
        let n = (self.len() - 1) as f64;
        ((b.left - a.left) / n, (b.top - a.top) / n)
    }
}

/// Links detections frame to frame. A detection at `t + 1` extends a
/// tracklet ending at `t` when cosine >= `appearance_threshold` and
/// IoU >= `motion_threshold`; candidates are taken greedily by descending
/// `cosine * IoU`, ties by tracklet then detection index. Unlinked
/// detections start new tracklets. Tracklets are returned in creation order.
pub fn build_tracklets(dets: &[Detection], cfg: &TrackerConfig) -> Vec<Tracklet> {
    let mut by_frame: BTreeMap<usize, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        by_frame.entry(d.frame).or_default().push(d);
    }
    let mut chains: Vec<Vec<Detection>> = Vec::new();
    // Chains that end on the previous frame.
    let mut open: Vec<usize> = Vec::new();
    let mut prev_frame: Option<usize> = None;
    for (&frame, frame_dets) in &by_frame {
        if prev_frame.map(|p| p + 1) != Some(frame) {
            open.clear();
        }
        let mut candidates = Vec::new();
        for (oi, &chain) in open.iter().enumerate() {
            let last = chains[chain].last().expect("nonempty chain");
            for (di, d) in frame_dets.iter().enumerate() {
                let app = cosine(&last.features, &d.features);
                let iou = last.bbox.iou(&d.bbox);
                if app >= cfg.appearance_threshold && iou >= cfg.motion_threshold {
                    candidates.push((app * iou, oi, di));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut chain_used = vec![false; open.len()];
        let mut target: Vec<Option<usize>> = vec![None; frame_dets.len()];
        for (_, oi, di) in candidates {
            if !chain_used[oi] && target[di].is_none() {
                chain_used[oi] = true;
                target[di] = Some(open[oi]);
            }
        }
        let mut next_open = Vec::with_capacity(frame_dets.len());
        for (di, d) in frame_dets.iter().enumerate() {
            let chain = match target[di] {
                Some(c) => c,
                None => {
                    chains.push(Vec::new());
                    chains.len() - 1
                }
            };
            chains[chain].push((*d).clone());
            next_open.push(chain);
        }
        open = next_open;
        prev_frame = Some(frame);
    }
    chains
        .into_iter()
        .map(|c| Tracklet::new(c).expect("chains are consecutive"))
        .collect()
}

/// Similarity of two tracklets in `[0, 1]`; see the module documentation.
pub fn tracklet_similarity(a: &Tracklet, b: &Tracklet, k: usize) -> f64 {
    let mut pairs: Vec<((usize, usize), usize, usize)> = Vec::with_capacity(a.len() * b.len());
    for (i, da) in a.detections.iter().enumerate() {
        for (j, db) in b.detections.iter().enumerate() {
            pairs.push(((da.frame.abs_diff(db.frame), da.frame + db.frame), i, j));
        }
    }
    pairs.sort_by_key(|p| p.0);
    let k = k.max(1).min(pairs.len());
    let cutoff = pairs[k - 1].0;
    let (va, vb) = (a.velocity(), b.velocity());
    let mut terms = Vec::new();
    for &(key, i, j) in pairs.iter().take_while(|p| p.0 <= cutoff) {
        let (da, db) = (&a.detections[i], &b.detections[j]);
        let mid = key.1 as f64 / 2.0;
        let ba = da
            .bbox
            .translated(va.0 * (mid - da.frame as f64), va.1 * (mid - da.frame as f64));
        let bb = db
            .bbox
            .translated(vb.0 * (mid - db.frame as f64), vb.1 * (mid - db.frame as f64));
        terms.push(cosine(&da.features, &db.features).max(0.0) * ba.iou(&bb));
    }
    // Summing in sorted order keeps the result independent of argument order.
    terms.sort_by(f64::total_cmp);
    (terms.iter().sum::<f64>() / terms.len() as f64).clamp(0.0, 1.0)
}

/// Symmetric tracklet similarities with the temporal-overlap mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    overlap: Vec<bool>,
}

impl SimilarityMatrix {
    /// Validates symmetry, range and the unit diagonal.
    pub fn new(n: usize, values: Vec<f64>, overlap: Vec<bool>) -> Result<Self> {
        if values.len() != n * n || overlap.len() != n * n {
            return Err(Error::input(format!(
                "similarity matrix of {n} tracklets needs {} entries",
                n * n
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 1.0 || !overlap[i * n + i] {
                return Err(Error::input(format!(
                    "tracklet {i} must have unit self-similarity and overlap itself"
                )));
            }
            for j in 0..n {
                let s = values[i * n + j];
                if !(0.0..=1.0).contains(&s) || s != values[j * n + i] || overlap[i * n + j] != overlap[j * n + i] {
                    return Err(Error::input(format!("entry ({i}, {j}) breaks symmetry or range")));
                }
            }
        }
        Ok(SimilarityMatrix { n, values, overlap })
    }

    pub fn from_tracklets(tracklets: &[Tracklet], k: usize) -> Self {
        let n = tracklets.len();
        let mut values = vec![0.0; n * n];
        let mut overlap = vec![false; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            overlap[i * n + i] = true;
            for j in i + 1..n {
                let s = tracklet_similarity(&tracklets[i], &tracklets[j], k);
                let o = tracklets[i].overlaps(&tracklets[j]);
                values[i * n + j] = s;
                values[j * n + i] = s;
                overlap[i * n + j] = o;
                overlap[j * n + i] = o;
            }
        }
        SimilarityMatrix { n, values, overlap }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn overlaps(&self, i: usize, j: usize) -> bool {
        self.overlap[i * self.n + j]
    }
}

/// Number of non-overlapping tracklets whose similarity to `i` strictly
/// exceeds `s_c`.
pub fn local_density(s: &SimilarityMatrix, i: usize, s_c: f64) -> usize {
    (0..s.n).filter(|&j| !s.overlaps(i, j) && s.get(i, j) > s_c).count()
}

pub fn densities(s: &SimilarityMatrix, s_c: f64) -> Vec<usize> {
    (0..s.n).map(|i| local_density(s, i, s_c)).collect()
}

/// Whether `j` ranks above `i`: higher density, or equal density and a
/// lower index. Without the tie-break, equally dense fragments of one object
/// would all become centers and never merge.
pub fn denser(rho: &[usize], j: usize, i: usize) -> bool {
    rho[j] > rho[i] || (rho[j] == rho[i] && j < i)
}

/// Largest similarity from `i` to a denser non-overlapping tracklet, or 0
/// when there is none.
pub fn max_similarity(s: &SimilarityMatrix, rho: &[usize], i: usize) -> f64 {
    (0..s.n)
        .filter(|&j| denser(rho, j, i) && !s.overlaps(i, j))
        .map(|j| s.get(i, j))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster of each tracklet; clusters are numbered by ascending center index.
    pub labels: Vec<usize>,
    /// Center tracklet of each cluster.
    pub centers: Vec<usize>,
}

impl Clustering {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centers.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Density-peak clustering. Tracklets with `delta < s_c` are centers; the
/// rest, by descending density then ascending index, join the cluster of
/// their most similar denser non-overlapping tracklet (lowest index on
/// ties), where "denser" is the order of [`denser`].
pub fn cluster_tracklets(s: &SimilarityMatrix, s_c: f64) -> Clustering {
    let n = s.n;
    let rho = densities(s, s_c);
    let delta: Vec<f64> = (0..n).map(|i| max_similarity(s, &rho, i)).collect();
    let centers: Vec<usize> = (0..n).filter(|&i| delta[i] < s_c).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for (c, &i) in centers.iter().enumerate() {
        labels[i] = Some(c);
    }
    let mut order: Vec<usize> = (0..n).filter(|i| labels[*i].is_none()).collect();
    order.sort_by(|&a, &b| rho[b].cmp(&rho[a]).then(a.cmp(&b)));
    for i in order {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if denser(&rho, j, i) && !s.overlaps(i, j) && best.is_none_or(|b| s.get(i, j) > s.get(i, b)) {
                best = Some(j);
            }
        }
        let parent = best.expect("non-centers have a denser neighbour");
        labels[i] = Some(labels[parent].expect("denser tracklets are assigned first"));
    }
    Clustering {
        labels: labels.into_iter().map(|l| l.expect("assigned")).collect(),
        centers,
    }
}

/// Splits `members` into groups without temporal overlap: by start frame,
/// each tracklet joins the first group it does not overlap.
pub fn split_overlapping(tracklets: &[Tracklet], members: &[usize]) -> Vec<Vec<usize>> {
    let mut sorted = members.to_vec();
    sorted.sort_by_key(|&i| (tracklets[i].start(), i));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in sorted {
        let slot = groups
            .iter()
            .position(|g| tracklets[*g.last().expect("nonempty")].end() < tracklets[i].start());
        match slot {
            Some(k) => groups[k].push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackBox {
    pub frame: usize,
    pub bbox: BBox,
    pub confidence: f64,
    /// Whether the box was filled in between tracklets.
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub boxes: Vec<TrackBox>,
}

impl Trajectory {
    pub fn start(&self) -> usize {
        self.boxes[0].frame
    }

    pub fn end(&self) -> usize {
        self.boxes[self.boxes.len() - 1].frame
    }
}

/// Concatenates tracklets by time and fills gaps by linear interpolation of
/// the box coordinates and confidence. The id is set to 0.
pub fn interpolate(cluster: &[&Tracklet]) -> Result<Trajectory> {
    let mut parts: Vec<&Tracklet> = cluster.to_vec();
    if parts.is_empty() {
        return Err(Error::input("cannot interpolate an empty cluster"));
    }
    parts.sort_by_key(|t| t.start());
    let mut boxes: Vec<TrackBox> = Vec::new();
    for t in parts {
        if let Some(last) = boxes.last() {
            if t.start() <= last.frame {
                return Err(Error::input(format!(
                    "tracklets overlap in time: frame {} reached twice",
                    t.start()
                )));
            }
            let (from, to) = (last.clone(), &t.detections[0]);
            let span = (to.frame - from.frame) as f64;
            for f in from.frame + 1..to.frame {
                let a = (f - from.frame) as f64 / span;
                boxes.push(TrackBox {
                    frame: f,
                    bbox: from.bbox.lerp(&to.bbox, a),
                    confidence: from.confidence + (to.confidence - from.confidence) * a,
                    interpolated: true,
                });
            }
        }
        boxes.extend(t.detections.iter().map(|d| TrackBox {
            frame: d.frame,
            bbox: d.bbox,
            confidence: d.confidence,
            interpolated: false,
        }));
    }
    Ok(Trajectory { id: 0, boxes })
}

/// Full tracker: tracklets, clustering, overlap splitting, interpolation.
/// Trajectories are ordered by first frame, then by their first tracklet,
/// and numbered from 1.
pub fn track(dets: &[Detection], cfg: &TrackerConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    for d in dets {
        d.validate()?;
    }
    let tracklets = build_tracklets(dets, cfg);
    let s = SimilarityMatrix::from_tracklets(&tracklets, cfg.pairs);
    let clusters = cluster_tracklets(&s, cfg.center_threshold);
    let mut groups: Vec<Vec<usize>> = clusters
        .members()
        .iter()
        .flat_map(|m| split_overlapping(&tracklets, m))
        .collect();
    groups.sort_by_key(|g| (tracklets[g[0]].start(), g[0]));
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let parts: Vec<&Tracklet> = g.iter().map(|&i| &tracklets[i]).collect();
            let mut traj = interpolate(&parts)?;
            traj.id = k as u64 + 1;
            Ok(traj)
        })
        .collect()
}

/// MOTChallenge lines `frame,id,left,top,width,height,conf,-1,-1,-1` with
/// 1-based frames, ordered by frame then id.
pub fn format_trajectories(trajectories: &[Trajectory]) -> String {
    let mut rows: Vec<(usize, u64, &TrackBox)> = trajectories
        .iter()
        .flat_map(|t| t.boxes.iter().map(move |b| (b.frame, t.id, b)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::new();
    for (frame, id, b) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            frame + 1,
            id,
            b.bbox.left,
            b.bbox.top,
            b.bbox.width,
            b.bbox.height,
            b.confidence
        );
    }
    out
}
