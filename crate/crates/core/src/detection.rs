//! Boxes, detections and their labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixels: `[left, left + width) x [top, top + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        BBox {
            left,
            top,
            width,
            height,
        }
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.left + dx, self.top + dy, self.width, self.height)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.left.max(other.left);
        let h = self.bottom().min(other.bottom()) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union; 0 when both boxes are degenerate.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// Whether the pixel with top-left corner `(col, row)` has its center inside.
    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
        x >= self.left && x < self.right() && y >= self.top && y < self.bottom()
    }

    /// Row and column ranges of pixels whose centers lie inside, clipped to
    /// an `height x width` grid.
    pub fn pixel_ranges(&self, height: usize, width: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        // Pixel c is inside iff left <= c + 0.5 < right.
        let span = |lo: f64, hi: f64, n: usize| {
            let start = (lo - 0.5).ceil().max(0.0);
            let end = (hi - 0.5).ceil().max(0.0);
            let start = (start as usize).min(n);
            let end = (end as usize).min(n);
            start..end.max(start)
        };
        (
            span(self.top, self.bottom(), height),
            span(self.left, self.right(), width),
        )
    }

    /// Linear interpolation between `self` (at 0) and `other` (at 1).
    pub fn lerp(&self, other: &BBox, t: f64) -> BBox {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        BBox::new(
            mix(self.left, other.left),
            mix(self.top, other.top),
            mix(self.width, other.width),
            mix(self.height, other.height),
        )
    }
}

/// Cosine similarity; 0 when either vector is zero or lengths differ.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.is_empty() {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Ground-truth category of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Good,
    /// A false positive: IoU below 0.5 with every ground-truth box.
    Noisy,
    /// Assigned to the wrong identity by a baseline tracker.
    Confusing,
}

impl Label {
    pub fn is_bad(self) -> bool {
        self != Label::Good
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Noisy => "noisy",
            Label::Confusing => "confusing",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(Label::Good),
            "noisy" => Ok(Label::Noisy),
            "confusing" => Ok(Label::Confusing),
            _ => Err(Error::input(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Frame index, 0-based.
    pub frame: usize,
    pub bbox: BBox,
    pub confidence: f64,
    pub id: Option<u64>,
    pub label: Option<Label>,
    /// Appearance feature.
    pub features: Vec<f64>,
}

impl Detection {
    pub fn new(frame: usize, bbox: BBox, confidence: f64, features: Vec<f64>) -> Self {
        Detection {
            frame,
            bbox,
            confidence,
            id: None,
            label: None,
            features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bbox.width > 0.0 && self.bbox.height > 0.0) {
            return Err(Error::input(format!(
                "detection at frame {} has non-positive size {}x{}",
                self.frame, self.bbox.width, self.bbox.height
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::input(format!(
                "detection at frame {} has confidence {} outside [0, 1]",
                self.frame, self.confidence
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert!((a.iou(&BBox::new(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.iou(&BBox::new(10.0, 0.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn pixel_ranges_match_center_rule() {
        let boxes = [
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(1.5, 2.49, 3.2, 0.2),
            BBox::new(-3.0, 4.6, 5.0, 30.0),
            BBox::new(2.5, 2.5, 1.0, 1.0),
        ];
        for b in boxes {
            let (rows, cols) = b.pixel_ranges(12, 12);
            for r in 0..12 {
                for c in 0..12 {
                    assert_eq!(
                        rows.contains(&r) && cols.contains(&c),
                        b.contains_pixel(r, c),
                        "{b:?} {r} {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
