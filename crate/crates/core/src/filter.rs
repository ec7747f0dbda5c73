//! Removes detections that are dense in predicted events.
//!
//! A pixel belongs to a box when its center lies in the half-open box
//! `[left, left + width) x [top, top + height)`. The ratio of a box is the
//! number of event pixels inside it over the number of grid pixels inside
//! it, so an event shared by overlapping boxes counts for each of them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::detection::{BBox, Detection};
use crate::error::{Error, Result};
use crate::pointprocess::EventGrid;

/// Default ratio above which a detection is removed.
pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.5;

/// Fraction of the box's pixels that hold events.
pub fn event_ratio(bbox: &BBox, grid: &EventGrid) -> Result<f64> {
    let (rows, cols) = bbox.pixel_ranges(grid.height(), grid.width());
    let area = rows.len() * cols.len();
    if area == 0 {
        return Err(Error::input(format!(
            "box {bbox:?} covers no pixel of the {}x{} grid",
            grid.height(),
            grid.width()
        )));
    }
    let mut hits = 0usize;
    for r in rows {
        for c in cols.clone() {
            hits += grid.get(r, c) as usize;
        }
    }
    Ok(hits as f64 / area as f64)
}

/// [`event_ratio`] for a detection, checking that the frames agree.
pub fn detection_ratio(det: &Detection, grid: &EventGrid) -> Result<f64> {
    if det.frame != grid.frame() {
        return Err(Error::input(format!(
            "detection at frame {} checked against grid of frame {}",
            det.frame,
            grid.frame()
        )));
    }
    event_ratio(&det.bbox, grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterEntry {
    pub frame: usize,
    pub bbox: BBox,
    pub ratio: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub threshold: f64,
    pub entries: Vec<FilterEntry>,
}

impl FilterReport {
    pub fn removed(&self) -> usize {
        self.entries.iter().filter(|e| !e.kept).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# threshold={}\nframe,left,top,width,height,ratio,kept\n",
            self.threshold
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{}",
                e.frame + 1,
                e.bbox.left,
                e.bbox.top,
                e.bbox.width,
                e.bbox.height,
                e.ratio,
                e.kept as u8
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Keeps detections whose ratio is at most `threshold`, in input order.
/// Every detection's frame must have a grid.
pub fn filter_detections(
    dets: &[Detection],
    grids: &[EventGrid],
    threshold: f64,
) -> Result<(Vec<Detection>, FilterReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!(
            "ratio threshold must be in [0, 1], got {threshold}"
        )));
    }
    let by_frame: HashMap<usize, &EventGrid> = grids.iter().map(|g| (g.frame(), g)).collect();
    let mut kept = Vec::new();
    let mut entries = Vec::with_capacity(dets.len());
    for det in dets {
        let grid = by_frame
            .get(&det.frame)
            .ok_or_else(|| Error::input(format!("no event grid for frame {}", det.frame)))?;
        let ratio = detection_ratio(det, grid)?;
        let keep = ratio <= threshold;
        if keep {
            kept.push(det.clone());
        }
        entries.push(FilterEntry {
            frame: det.frame,
            bbox: det.bbox,
            ratio,
            kept: keep,
        });
    }
    Ok((kept, FilterReport { threshold, entries }))
}
