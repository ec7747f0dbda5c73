//! Events, intensity maps and the discretized point-process likelihood.
//!
//! An event is one pixel `(t, x, y)` inside a "bad" detection. Per frame the
//! events form a binary [`EventGrid`]; at most one event exists per cell, so
//! grids are sets rather than counts.

mod format;

pub use format::{format_event_grids, parse_event_grids, read_event_grids, write_event_grids};

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default intensity threshold for event prediction.
pub const DEFAULT_EVENT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    /// Frame index, 0-based.
    pub t: usize,
    /// Column.
    pub x: usize,
    /// Row.
    pub y: usize,
}

/// Number of events with frame `<= t`, column `<= x` and row `<= y`.
pub fn counting_function<'a, I>(events: I, t: usize, x: usize, y: usize) -> usize
where
    I: IntoIterator<Item = &'a Event>,
{
    events.into_iter().filter(|e| e.t <= t && e.x <= x && e.y <= y).count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventGrid {
    frame: usize,
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl EventGrid {
    pub fn empty(frame: usize, height: usize, width: usize) -> Self {
        EventGrid {
            frame,
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn from_cells(frame: usize, height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width || height == 0 || width == 0 {
            return Err(Error::input(format!(
                "event grid {height}x{width} cannot hold {} cells",
                cells.len()
            )));
        }
        Ok(EventGrid {
            frame,
            height,
            width,
            cells,
        })
    }

    /// Builds a grid from events, ignoring those on other frames.
    pub fn from_events<'a, I>(frame: usize, height: usize, width: usize, events: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Event>,
    {
        let mut grid = Self::empty(frame, height, width);
        for e in events {
            if e.t != frame {
                continue;
            }
            if e.x >= width || e.y >= height {
                return Err(Error::input(format!("event {e:?} outside {height}x{width} grid")));
            }
            grid.set(e.y, e.x, true);
        }
        Ok(grid)
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.contains(&true)
    }

    pub fn events(&self) -> Vec<Event> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| Event {
                t: self.frame,
                x: i % self.width,
                y: i / self.width,
            })
            .collect()
    }

    /// The grid as a `[1, H, W]` 0/1 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("grid shape")
    }

    pub fn union_with(&mut self, other: &EventGrid) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }
}

/// All events of a sequence, unique per cell.
pub fn collect_events(grids: &[EventGrid]) -> BTreeSet<Event> {
    grids.iter().flat_map(EventGrid::events).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    frame: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl IntensityMap {
    pub fn new(frame: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::input(format!(
                "intensity map {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::numeric(
                "intensity",
                format!("frame {frame} cell {i} has intensity {}", values[i]),
            ));
        }
        Ok(IntensityMap {
            frame,
            height,
            width,
            values,
        })
    }

    pub fn constant(frame: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(frame, height, width, vec![value; height * width])
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.values.clone()).expect("map shape")
    }
}

/// Discretized log-likelihood at unit spatio-temporal resolution:
/// the sum of `log(lambda)` over event cells minus the sum of `lambda` over
/// every other cell, across all frames.
pub fn log_likelihood(intensities: &[IntensityMap], events: &[EventGrid]) -> Result<f64> {
    if intensities.len() != events.len() {
        return Err(Error::input(format!(
            "{} intensity maps for {} event grids",
            intensities.len(),
            events.len()
        )));
    }
    let mut total = 0.0;
    for (lam, grid) in intensities.iter().zip(events) {
        if lam.height != grid.height || lam.width != grid.width {
            return Err(Error::input(format!(
                "frame {}: intensity {}x{} vs events {}x{}",
                lam.frame, lam.height, lam.width, grid.height, grid.width
            )));
        }
        for (i, (&l, &e)) in lam.values.iter().zip(&grid.cells).enumerate() {
            if e {
                if l <= 0.0 {
                    return Err(Error::numeric(
                        "log_likelihood",
                        format!(
                            "log of non-positive intensity {l} at frame {} row {} col {}",
                            lam.frame,
                            i / lam.width,
                            i % lam.width
                        ),
                    ));
                }
                total += l.ln();
            } else {
                total -= l;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Prediction {
    /// A cell holds an event iff `lambda >= threshold`.
    Threshold { threshold: f64 },
    /// Independent per-cell draws with probability `min(lambda, 1)`.
    Bernoulli { seed: u64 },
}

impl Default for Prediction {
    fn default() -> Self {
        Prediction::Threshold {
            threshold: DEFAULT_EVENT_THRESHOLD,
        }
    }
}

pub fn predict_events(map: &IntensityMap, mode: Prediction) -> Result<EventGrid> {
    let cells = match mode {
        Prediction::Threshold { threshold } => {
            if !(threshold >= 0.0) {
                return Err(Error::config(format!(
                    "event threshold must be non-negative, got {threshold}"
                )));
            }
            map.values.iter().map(|&l| l > 0.0 && l >= threshold).collect()
        }
        Prediction::Bernoulli { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (map.frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            map.values
                .iter()
                .map(|&l| {
                    let p = l.min(1.0);
                    // Always draw so the stream position does not depend on lambda.
                    let u: f64 = rng.random();
                    p > 0.0 && u < p
                })
                .collect()
        }
    };
    EventGrid::from_cells(map.frame, map.height, map.width, cells)
}

/// Frames that contain at least one event, with their grids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventHistory {
    entries: Vec<EventGrid>,
}

impl EventHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps only nonempty grids; frames must be strictly increasing.
    pub fn from_grids(grids: &[EventGrid]) -> Result<Self> {
        let mut h = Self::new();
        for g in grids.iter().filter(|g| !g.is_empty()) {
            h.push(g.clone())?;
        }
        Ok(h)
    }

    pub fn push(&mut self, grid: EventGrid) -> Result<()> {
        if grid.is_empty() {
            return Err(Error::input(format!("frame {} holds no events", grid.frame)));
        }
        if let Some(last) = self.entries.last() {
            if grid.frame <= last.frame {
                return Err(Error::input(format!(
                    "event frames must increase: {} after {}",
                    grid.frame, last.frame
                )));
            }
        }
        self.entries.push(grid);
        Ok(())
    }

    pub fn entries(&self) -> &[EventGrid] {
        &self.entries
    }

    pub fn frames(&self) -> Vec<usize> {
        self.entries.iter().map(|g| g.frame).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Inter-event durations. The first is measured from a virtual event at
    /// frame -1, so every gap is at least 1.
    pub fn gaps(&self) -> Vec<usize> {
        let mut prev: isize = -1;
        self.entries
            .iter()
            .map(|g| {
                let gap = g.frame as isize - prev;
                prev = g.frame as isize;
                gap as usize
            })
            .collect()
    }

    /// Grid recorded for `frame`, if that frame held events.
    pub fn at(&self, frame: usize) -> Option<&EventGrid> {
        self.entries
            .binary_search_by_key(&frame, |g| g.frame)
            .ok()
            .map(|i| &self.entries[i])
    }
}
