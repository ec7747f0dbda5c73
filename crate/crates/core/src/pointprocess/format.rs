//! Plain-text event grid files.
//!
//! A file is a sequence of blocks, one per frame:
//!
//! ```text
//! EVENTGRID frame=<t> h=<H> w=<W>
//! <row 0>
//! ...
//! <row H-1>
//! ```
//!
//! Each row is a run-length encoding: decimal run lengths separated by a
//! single space, alternating zeros and ones and always starting with a run of
//! zeros (which may be `0`). Every run after the first is positive and the
//! runs sum to `W`. So `0 0 1 1 0` is `2 2 1`, `1 1 0` is `0 2 1`, an empty
//! row of width 32 is `32` and a full one is `0 32`. Lines end with `\n`.

use std::fs;
use std::path::Path;

use super::EventGrid;
use crate::error::{Error, Result};

fn encode_row(row: &[bool], out: &mut String) {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &c in row {
        if c == current {
            len += 1;
        } else {
            runs.push(len);
            current = c;
            len = 1;
        }
    }
    runs.push(len);
    let text: Vec<String> = runs.iter().map(usize::to_string).collect();
    out.push_str(&text.join(" "));
    out.push('\n');
}

pub fn format_event_grids(grids: &[EventGrid]) -> String {
    let mut out = String::new();
    for g in grids {
        out.push_str(&format!(
            "EVENTGRID frame={} h={} w={}\n",
            g.frame(),
            g.height(),
            g.width()
        ));
        for row in g.cells().chunks(g.width()) {
            encode_row(row, &mut out);
        }
    }
    out
}

pub fn write_event_grids(path: &Path, grids: &[EventGrid]) -> Result<()> {
    fs::write(path, format_event_grids(grids))?;
    Ok(())
}

pub fn read_event_grids(path: &Path) -> Result<Vec<EventGrid>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    parse_event_grids(&text, &path.display().to_string())
}

fn header_field(token: Option<(usize, &str)>, key: &str, src: &str, line: usize) -> Result<usize> {
    let (col, tok) = token.ok_or_else(|| Error::parse(src, line, 1, format!("missing {key}=")))?;
    tok.strip_prefix(key)
        .and_then(|v| v.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(src, line, col, format!("expected {key}=<integer>, found {tok:?}")))
}

/// Tokens of a line with their 1-based starting columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut pos = 0;
    line.split(' ').map(move |t| {
        let col = pos + 1;
        pos += t.len() + 1;
        (col, t)
    })
}

pub fn parse_event_grids(text: &str, src: &str) -> Result<Vec<EventGrid>> {
    let mut grids = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() && lines.peek().is_none() {
            break;
        }
        let mut toks = tokens(line);
        match toks.next() {
            Some((_, "EVENTGRID")) => {}
            _ => return Err(Error::parse(src, ln, 1, "expected EVENTGRID header")),
        }
        let frame = header_field(toks.next(), "frame", src, ln)?;
        let h = header_field(toks.next(), "h", src, ln)?;
        let w = header_field(toks.next(), "w", src, ln)?;
        if let Some((col, _)) = toks.next() {
            return Err(Error::parse(src, ln, col, "trailing header fields"));
        }
        if h == 0 || w == 0 {
            return Err(Error::parse(src, ln, 1, "grid extents must be positive"));
        }
        let mut cells = Vec::with_capacity(h * w);
        for _ in 0..h {
            let (rl, row) = lines
                .next()
                .ok_or_else(|| Error::parse(src, ln, 1, format!("frame {frame}: expected {h} rows")))?;
            let mut filled = 0usize;
            let mut value = false;
            for (k, (col, tok)) in tokens(row).enumerate() {
                let run: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(src, rl, col, format!("invalid run length {tok:?}")))?;
                if k > 0 && run == 0 {
                    return Err(Error::parse(src, rl, col, "only the first run may be empty"));
                }
                if filled + run > w {
                    return Err(Error::parse(src, rl, col, format!("runs exceed width {w}")));
                }
                cells.extend(std::iter::repeat_n(value, run));
                filled += run;
                value = !value;
            }
            if filled != w {
                return Err(Error::parse(
                    src,
                    rl,
                    row.len() + 1,
                    format!("runs sum to {filled}, expected {w}"),
                ));
            }
        }
        grids.push(EventGrid::from_cells(frame, h, w, cells)?);
    }
    Ok(grids)
}
