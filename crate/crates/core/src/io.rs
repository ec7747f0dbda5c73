//! MOTChallenge text files.
//!
//! Each non-empty line is `frame,id,left,top,width,height,conf,x,y,z` with
//! 1-based frames; `id = -1` marks an unassigned detection. Fields after
//! the seventh are optional. Detection files written here append a label
//! and the appearance feature after the standard ten fields. Lines starting
//! with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::detection::{BBox, Detection};
use crate::error::{Error, Result};
use crate::metrics::TrackedBox;
use crate::pointprocess::IntensityMap;
use crate::tensor::Tensor;
use crate::tracker::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct MotRecord {
    /// 0-based frame.
    pub frame: usize,
    pub id: Option<u64>,
    pub bbox: BBox,
    pub confidence: f64,
    /// Fields after the seventh, verbatim.
    pub extra: Vec<String>,
}

/// Reads `path`, reporting a missing file as a missing artifact.
pub fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

pub fn parse_mot(text: &str, src: &str) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let trimmed = line.trim_end();
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = Vec::new();
        let mut column = 1;
        for f in trimmed.split(',') {
            fields.push((f.trim(), column));
            column += f.chars().count() + 1;
        }
        if fields.len() < 7 {
            return Err(Error::parse(
                src,
                line_no,
                column - 1,
                format!("expected at least 7 fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let (s, col) = fields[k];
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(src, line_no, col, format!("invalid number {s:?}"))),
            }
        };
        let frame = {
            let (s, col) = fields[0];
            match s.parse::<usize>() {
                Ok(f) if f >= 1 => f - 1,
                _ => {
                    return Err(Error::parse(
                        src,
                        line_no,
                        col,
                        format!("frame must be an integer >= 1, got {s:?}"),
                    ))
                }
            }
        };
        let id = {
            let (s, col) = fields[1];
            match s.parse::<i64>() {
                Ok(-1) => None,
                Ok(i) if i >= 0 => Some(i as u64),
                _ => {
                    return Err(Error::parse(
                        src,
                        line_no,
                        col,
                        format!("id must be -1 or a non-negative integer, got {s:?}"),
                    ))
                }
            }
        };
        let (left, top, width, height, confidence) = (num(2)?, num(3)?, num(4)?, num(5)?, num(6)?);
        for (k, v) in [(4, width), (5, height)] {
            if v < 0.0 {
                return Err(Error::parse(
                    src,
                    line_no,
                    fields[k].1,
                    format!("negative box size {v}"),
                ));
            }
        }
        out.push(MotRecord {
            frame,
            id,
            bbox: BBox::new(left, top, width, height),
            confidence,
            extra: fields[7..].iter().map(|(s, _)| s.to_string()).collect(),
        });
    }
    Ok(out)
}

pub fn read_mot(path: &Path) -> Result<Vec<MotRecord>> {
    parse_mot(&read_text(path)?, &path.display().to_string())
}

/// Detections from records. A tenth-plus field holds the label and the
/// fields after it the appearance feature.
pub fn records_to_detections(records: &[MotRecord]) -> Result<Vec<Detection>> {
    records
        .iter()
        .map(|r| {
            let mut d = Detection::new(r.frame, r.bbox, r.confidence, Vec::new());
            d.id = r.id;
            if let Some(label) = r.extra.get(3).filter(|s| !s.is_empty()) {
                d.label = Some(label.parse()?);
            }
            if r.extra.len() > 4 {
                d.features = r.extra[4..]
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| Error::input(format!("frame {}: invalid feature {s:?}", r.frame + 1)))
                    })
                    .collect::<Result<_>>()?;
            }
            Ok(d)
        })
        .collect()
}

/// Boxes with identities; every record must carry an id.
pub fn records_to_tracked(records: &[MotRecord]) -> Result<Vec<TrackedBox>> {
    records
        .iter()
        .map(|r| {
            let id =
                r.id.ok_or_else(|| Error::input(format!("frame {}: trajectory box without id", r.frame + 1)))?;
            Ok(TrackedBox {
                frame: r.frame,
                id,
                bbox: r.bbox,
                confidence: r.confidence,
            })
        })
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    records_to_detections(&read_mot(path)?).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_tracked(path: &Path) -> Result<Vec<TrackedBox>> {
    records_to_tracked(&read_mot(path)?).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// One line per detection in input order. Labels and features are written
/// when present so that parsing restores them exactly.
pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let id = d.id.map_or("-1".to_string(), |i| i.to_string());
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            d.frame + 1,
            id,
            d.bbox.left,
            d.bbox.top,
            d.bbox.width,
            d.bbox.height,
            d.confidence
        );
        if d.label.is_some() || !d.features.is_empty() {
            let _ = write!(out, ",{}", d.label.map_or("", |l| l.name()));
            for f in &d.features {
                let _ = write!(out, ",{f}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    fs::write(path, format_detections(dets))?;
    Ok(())
}

pub fn format_tracked(boxes: &[TrackedBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            b.frame + 1,
            b.id,
            b.bbox.left,
            b.bbox.top,
            b.bbox.width,
            b.bbox.height,
            b.confidence
        );
    }
    out
}

/// Trajectory boxes as tracked boxes, ordered by frame then id.
pub fn trajectories_to_tracked(trajectories: &[Trajectory]) -> Vec<TrackedBox> {
    let mut out: Vec<TrackedBox> = trajectories
        .iter()
        .flat_map(|t| {
            t.boxes.iter().map(move |b| TrackedBox {
                frame: b.frame,
                id: t.id,
                bbox: b.bbox,
                confidence: b.confidence,
            })
        })
        .collect();
    out.sort_by_key(|b| (b.frame, b.id));
    out
}

/// Stores intensity maps as one `[T, H, W]` tensor.
pub fn write_intensities(path: &Path, maps: &[IntensityMap]) -> Result<()> {
    let Some(first) = maps.first() else {
        return Err(Error::input("no intensity maps to write"));
    };
    let (h, w) = (first.height(), first.width());
    if maps
        .iter()
        .enumerate()
        .any(|(t, m)| m.frame() != t || m.height() != h || m.width() != w)
    {
        return Err(Error::input("intensity maps must be frames 0.. of one size"));
    }
    let data = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    let mut buf = Vec::new();
    Tensor::new(vec![maps.len(), h, w], data)?.write_to(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_intensities(path: &Path) -> Result<Vec<IntensityMap>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let t = Tensor::read_from(&mut fs::read(path)?.as_slice())?;
    let &[n, h, w] = t.shape() else {
        return Err(Error::input(format!("{}: expected a [T, H, W] tensor", path.display())));
    };
    (0..n)
        .map(|k| IntensityMap::new(k, h, w, t.data()[k * h * w..(k + 1) * h * w].to_vec()))
        .collect()
}
