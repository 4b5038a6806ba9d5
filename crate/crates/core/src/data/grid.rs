//! Headered text format shared by saliency maps, confidence maps and
//! feature grids.
//!
//! ```text
//! PEDGRID 1
//! kind confidence
//! rows 5
//! cols 3
//! channels 1
//! stride 32
//! origin 16 16
//! scale 0.6 0.6
//! data
//! <one line per row: cols * channels values>
//! end
//! ```
//!
//! Values are written in shortest round-trip decimal form, so a reload is
//! bit-identical. A file missing any row or the `end` trailer is rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::MapFrame;
use crate::heatmap::{ConfidenceMap, FeatureGrid};
use crate::saliency::SaliencyMap;

const MAGIC: &str = "PEDGRID 1";

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Saliency(SaliencyMap),
    Confidence(ConfidenceMap),
    Features(FeatureGrid),
}

impl Grid {
    fn kind(&self) -> &'static str {
        match self {
            Grid::Saliency(_) => "saliency",
            Grid::Confidence(_) => "confidence",
            Grid::Features(_) => "features",
        }
    }

    pub fn into_saliency(self) -> Result<SaliencyMap> {
        match self {
            Grid::Saliency(m) => Ok(m),
            other => Err(Error::invalid(format!("expected a saliency grid, found {}", other.kind()))),
        }
    }

    pub fn into_confidence(self) -> Result<ConfidenceMap> {
        match self {
            Grid::Confidence(m) => Ok(m),
            other => Err(Error::invalid(format!("expected a confidence grid, found {}", other.kind()))),
        }
    }

    pub fn into_features(self) -> Result<FeatureGrid> {
        match self {
            Grid::Features(m) => Ok(m),
            other => Err(Error::invalid(format!("expected a feature grid, found {}", other.kind()))),
        }
    }
}

impl From<SaliencyMap> for Grid {
    fn from(m: SaliencyMap) -> Self {
        Grid::Saliency(m)
    }
}

impl From<ConfidenceMap> for Grid {
    fn from(m: ConfidenceMap) -> Self {
        Grid::Confidence(m)
    }
}

impl From<FeatureGrid> for Grid {
    fn from(m: FeatureGrid) -> Self {
        Grid::Features(m)
    }
}

/// Serialize a grid to text.
pub fn format_grid(grid: &Grid) -> String {
    let (rows, cols, channels, frame, values) = match grid {
        Grid::Saliency(m) => (m.height(), m.width(), 1, MapFrame::pixel_grid(), m.values()),
        Grid::Confidence(m) => (m.rows(), m.cols(), 1, *m.frame(), m.values()),
        Grid::Features(m) => (m.rows(), m.cols(), m.channels(), *m.frame(), m.values()),
    };
    let (ox, oy) = frame.origin();
    let (sx, sy) = frame.scale();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind {}", grid.kind());
    let _ = writeln!(out, "rows {rows}");
    let _ = writeln!(out, "cols {cols}");
    let _ = writeln!(out, "channels {channels}");
    let _ = writeln!(out, "stride {}", frame.stride());
    let _ = writeln!(out, "origin {ox} {oy}");
    let _ = writeln!(out, "scale {sx} {sy}");
    out.push_str("data\n");
    for row in values.chunks(cols * channels) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    name: &'a str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.name.to_string(),
            line: self.last,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l.trim())
            }
            None => {
                self.last += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    fn field(&mut self, key: &str, count: usize) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`, found `{line}`")));
        }
        let rest: Vec<&str> = parts.collect();
        if rest.len() != count {
            return Err(self.err(format!("`{key}` takes {count} value(s), found {}", rest.len())));
        }
        Ok(rest)
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key, 1)?[0];
        self.parse(v)
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse `{s}`")))
    }
}

/// Parse grid text; `name` labels error messages.
pub fn parse_grid(text: &str, name: &str) -> Result<Grid> {
    let mut lines = Lines {
        name,
        iter: text.lines().enumerate(),
        last: 0,
    };
    let magic = lines.next_line()?;
    if magic != MAGIC {
        return Err(lines.err(format!("bad magic `{magic}`")));
    }
    let kind = lines.field("kind", 1)?[0];
    let rows: usize = lines.scalar("rows")?;
    let cols: usize = lines.scalar("cols")?;
    let channels: usize = lines.scalar("channels")?;
    let stride: f64 = lines.scalar("stride")?;
    let origin = lines.field("origin", 2)?;
    let (ox, oy): (f64, f64) = (lines.parse(origin[0])?, lines.parse(origin[1])?);
    let scale = lines.field("scale", 2)?;
    let (sx, sy): (f64, f64) = (lines.parse(scale[0])?, lines.parse(scale[1])?);
    if lines.next_line()? != "data" {
        return Err(lines.err("expected `data`"));
    }
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(lines.err(format!("empty grid shape {rows}x{cols}x{channels}")));
    }

    let per_row = cols * channels;
    let mut values = Vec::with_capacity(rows * per_row);
    for _ in 0..rows {
        let line = lines.next_line()?;
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(lines.parse::<f64>(tok)?);
        }
        if values.len() - before != per_row {
            return Err(lines.err(format!(
                "row has {} values, header says {per_row}",
                values.len() - before
            )));
        }
    }
    if lines.next_line()? != "end" {
        return Err(lines.err("expected `end` after the last row"));
    }

    let frame = MapFrame::new(ox, oy, stride, sx, sy).map_err(|e| lines.err(e.to_string()))?;
    let shape_err = |e: Error| Error::Parse {
        path: name.to_string(),
        line: 0,
        message: e.to_string(),
    };
    match kind {
        "saliency" => {
            if channels != 1 {
                return Err(lines.err("saliency grids have one channel"));
            }
            SaliencyMap::new(cols, rows, values).map(Grid::Saliency).map_err(shape_err)
        }
        "confidence" => {
            if channels != 1 {
                return Err(lines.err("confidence grids have one channel"));
            }
            ConfidenceMap::new(rows, cols, values, frame).map(Grid::Confidence).map_err(shape_err)
        }
        "features" => FeatureGrid::new(rows, cols, channels, values, frame)
            .map(Grid::Features)
            .map_err(shape_err),
        other => Err(lines.err(format!("unknown grid kind `{other}`"))),
    }
}

pub fn save_grid(path: &Path, grid: &Grid) -> Result<()> {
    super::write_atomic(path, format_grid(grid).as_bytes())
}

pub fn load_grid(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text, &path.display().to_string())
}
