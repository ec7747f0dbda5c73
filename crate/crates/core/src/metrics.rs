//! CLEAR-MOT tracking metrics and average precision of event prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::pointprocess::{EventGrid, IntensityMap};

/// Minimum IoU for a ground-truth/prediction match.
pub const MATCH_IOU: f64 = 0.5;

/// A box with an identity on one frame (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedBox {
    pub frame: usize,
    pub id: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatching {
    /// `(gt id, pred id, IoU)`, ordered by gt id.
    pub matches: Vec<(u64, u64, f64)>,
    pub unmatched_gt: Vec<u64>,
    pub unmatched_pred: Vec<u64>,
}

/// Minimum-cost assignment of every row to a distinct column for a
/// `rows x cols` matrix with `rows <= cols` (shortest augmenting paths with
/// potentials). Returns the column of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian: more rows than columns");
    // 1-based arrays; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Maximum-total-IoU matching among pairs with IoU >= 0.5. Returns
/// `(row, col, iou)` triples.
fn optimal_pairs(iou: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let rows = iou.len();
    let cols = iou.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    // Pairs below the threshold cost the same as leaving both unmatched.
    let cost = |r: usize, c: usize| if iou[r][c] >= MATCH_IOU { -iou[r][c] } else { 0.0 };
    let mut out = Vec::new();
    if rows <= cols {
        let m: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| cost(r, c)).collect()).collect();
        for (r, c) in hungarian(&m).into_iter().enumerate() {
            out.push((r, c, iou[r][c]));
        }
    } else {
        let m: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost(r, c)).collect()).collect();
        for (c, r) in hungarian(&m).into_iter().enumerate() {
            out.push((r, c, iou[r][c]));
        }
    }
    out.retain(|p| p.2 >= MATCH_IOU);
    out.sort_by_key(|p| p.0);
    out
}

/// Matches one frame. Correspondences in `previous` (gt id to pred id) are
/// kept first when both boxes are present with IoU >= 0.5; the remaining
/// boxes are matched to maximize total IoU.
pub fn match_frame(gt: &[(u64, BBox)], pred: &[(u64, BBox)], previous: &BTreeMap<u64, u64>) -> FrameMatching {
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut matches = Vec::new();
    for (gi, (gid, gbox)) in gt.iter().enumerate() {
        let Some(pid) = previous.get(gid) else { continue };
        let Some(pi) = pred.iter().position(|(id, _)| id == pid) else {
            continue;
        };
        let iou = gbox.iou(&pred[pi].1);
        if !pred_used[pi] && iou >= MATCH_IOU {
            gt_used[gi] = true;
            pred_used[pi] = true;
            matches.push((*gid, *pid, iou));
        }
    }
    let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let free_pred: Vec<usize> = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    let iou: Vec<Vec<f64>> = free_gt
        .iter()
        .map(|&g| free_pred.iter().map(|&p| gt[g].1.iou(&pred[p].1)).collect())
        .collect();
    for (r, c, v) in optimal_pairs(&iou) {
        gt_used[free_gt[r]] = true;
        pred_used[free_pred[c]] = true;
        matches.push((gt[free_gt[r]].0, pred[free_pred[c]].0, v));
    }
    matches.sort_by_key(|m| m.0);
    FrameMatching {
        matches,
        unmatched_gt: (0..gt.len()).filter(|&i| !gt_used[i]).map(|i| gt[i].0).collect(),
        unmatched_pred: (0..pred.len()).filter(|&i| !pred_used[i]).map(|i| pred[i].0).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    /// Mean IoU of matched pairs, times 100.
    pub motp: f64,
    /// Fraction of ground-truth tracks matched in at least 80% of their frames.
    pub mt: f64,
    /// Fraction of ground-truth tracks matched in at most 20% of their frames.
    pub ml: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub num_gt: usize,
    pub num_matches: usize,
    pub num_gt_tracks: usize,
}

impl MotReport {
    pub const CSV_HEADER: &'static str = "run,mota,motp,mt,ml,fp,fn,ids,num_gt";

    pub fn csv_row(&self, run: &str) -> String {
        format!(
            "{run},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.mota, self.motp, self.mt, self.ml, self.fp, self.fn_, self.ids, self.num_gt
        )
    }

    /// Appends a row to a CSV ledger, writing the header for a new file.
    pub fn append_csv(&self, path: &Path, run: &str) -> Result<()> {
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{}", Self::CSV_HEADER)?;
        }
        writeln!(f, "{}", self.csv_row(run))?;
        Ok(())
    }
}

fn by_frame(boxes: &[TrackedBox]) -> BTreeMap<usize, Vec<(u64, BBox)>> {
    let mut out: BTreeMap<usize, Vec<(u64, BBox)>> = BTreeMap::new();
    for b in boxes {
        out.entry(b.frame).or_default().push((b.id, b.bbox));
    }
    for v in out.values_mut() {
        v.sort_by_key(|x| x.0);
    }
    out
}

/// A ground-truth track matched to a prediction other than the one it was
/// last matched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentitySwitch {
    pub frame: usize,
    pub gt_id: u64,
    pub pred_id: u64,
}

struct Walk {
    fp: usize,
    fn_: usize,
    num_matches: usize,
    iou_sum: f64,
    switches: Vec<IdentitySwitch>,
    present: BTreeMap<u64, usize>,
    matched: BTreeMap<u64, usize>,
}

fn walk(gt: &[TrackedBox], pred: &[TrackedBox]) -> Walk {
    let gt_frames = by_frame(gt);
    let pred_frames = by_frame(pred);
    let frames: BTreeSet<usize> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut w = Walk {
        fp: 0,
        fn_: 0,
        num_matches: 0,
        iou_sum: 0.0,
        switches: Vec::new(),
        present: BTreeMap::new(),
        matched: BTreeMap::new(),
    };
    let empty = Vec::new();
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        for (id, _) in g {
            *w.present.entry(*id).or_default() += 1;
        }
        let m = match_frame(g, p, &last);
        w.fp += m.unmatched_pred.len();
        w.fn_ += m.unmatched_gt.len();
        for &(gid, pid, iou) in &m.matches {
            if last.get(&gid).is_some_and(|&prev| prev != pid) {
                w.switches.push(IdentitySwitch {
                    frame: f,
                    gt_id: gid,
                    pred_id: pid,
                });
            }
            last.insert(gid, pid);
            *w.matched.entry(gid).or_default() += 1;
            w.num_matches += 1;
            w.iou_sum += iou;
        }
    }
    w
}

/// Every identity switch of `pred` against `gt`, in frame order.
pub fn identity_switches(gt: &[TrackedBox], pred: &[TrackedBox]) -> Vec<IdentitySwitch> {
    walk(gt, pred).switches
}

/// CLEAR-MOT evaluation. An identity switch is counted whenever a
/// ground-truth track is matched to a prediction other than the one it was
/// last matched to.
pub fn clear_mot(gt: &[TrackedBox], pred: &[TrackedBox]) -> Result<MotReport> {
    if gt.is_empty() {
        return Err(Error::input("no ground-truth boxes to evaluate against"));
    }
    let Walk {
        fp,
        fn_,
        num_matches,
        iou_sum,
        switches,
        present,
        matched,
    } = walk(gt, pred);
    let ids = switches.len();
    let tracks = present.len();
    let ratio = |id: &u64| *matched.get(id).unwrap_or(&0) as f64 / present[id] as f64;
    let mt = present.keys().filter(|id| ratio(id) >= 0.8).count();
    let ml = present.keys().filter(|id| ratio(id) <= 0.2).count();
    Ok(MotReport {
        mota: 1.0 - (fn_ + fp + ids) as f64 / gt.len() as f64,
        motp: if num_matches == 0 {
            0.0
        } else {
            100.0 * iou_sum / num_matches as f64
        },
        mt: mt as f64 / tracks as f64,
        ml: ml as f64 / tracks as f64,
        fp,
        fn_,
        ids,
        num_gt: gt.len(),
        num_matches,
        num_gt_tracks: tracks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Lowest intensity included at this point.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall points over all cells ranked by intensity. Cells with
/// equal intensity enter together as one point; the ranking otherwise
/// follows (frame, row, col).
pub fn pr_curve(maps: &[IntensityMap], grids: &[EventGrid]) -> Result<Vec<PrPoint>> {
    if maps.len() != grids.len() {
        return Err(Error::input(format!(
            "{} intensity maps for {} event grids",
            maps.len(),
            grids.len()
        )));
    }
    let mut cells: Vec<(f64, bool)> = Vec::new();
    for (m, g) in maps.iter().zip(grids) {
        if m.height() != g.height() || m.width() != g.width() {
            return Err(Error::input(format!(
                "frame {}: intensity and event grid sizes differ",
                m.frame()
            )));
        }
        cells.extend(m.values().iter().copied().zip(g.cells().iter().copied()));
    }
    let positives = cells.iter().filter(|c| c.1).count();
    if positives == 0 {
        return Err(Error::input("no positive cells: average precision is undefined"));
    }
    // Stable sort keeps the (frame, row, col) order among equal scores.
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < cells.len() {
        let score = cells[i].0;
        while i < cells.len() && cells[i].0 == score {
            tp += cells[i].1 as usize;
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: score,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / seen as f64,
        });
    }
    Ok(points)
}

/// Area under the precision-recall curve with all-point interpolation
/// (precision at each recall level replaced by the best precision at any
/// higher recall).
pub fn event_ap(maps: &[IntensityMap], grids: &[EventGrid]) -> Result<f64> {
    let points = pr_curve(maps, grids)?;
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, e) in points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * e;
        prev_recall = p.recall;
    }
    Ok(ap)
}

/// Fraction of positive cells; the AP of a constant intensity.
pub fn positive_rate(grids: &[EventGrid]) -> f64 {
    let cells: usize = grids.iter().map(|g| g.cells().len()).sum();
    let pos: usize = grids.iter().map(EventGrid::count).sum();
    if cells == 0 {
        0.0
    } else {
        pos as f64 / cells as f64
    }
}
