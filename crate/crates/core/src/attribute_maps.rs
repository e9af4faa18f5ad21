//! Attribute activation maps (one channel of the local attribute maps) and
//! class activation maps (their attribute-weighted sum), exported as 8-bit
//! binary PGM files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::semantic_head::ForwardTrace;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    Attribute(usize),
    Class(usize),
}

impl MapSource {
    pub fn kind(&self) -> &'static str {
        match self {
            MapSource::Attribute(_) => "aam",
            MapSource::Class(_) => "cam",
        }
    }

    pub fn index(&self) -> usize {
        match *self {
            MapSource::Attribute(i) | MapSource::Class(i) => i,
        }
    }
}

/// Square grid with values in `[0, 1]`, min-max normalized from raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub side: usize,
    /// Row-major, `side * side` entries.
    pub values: Vec<f32>,
    pub source: MapSource,
    pub raw_min: f32,
    pub raw_max: f32,
}

impl Heatmap {
    /// Min-max normalizes `raw`; a constant map becomes all zeros.
    pub fn from_raw(side: usize, raw: &[f32], source: MapSource) -> Result<Self> {
        if side == 0 || raw.len() != side * side {
            return Err(Error::Shape(format!(
                "{} values for a {side}x{side} heatmap",
                raw.len()
            )));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("heatmap".into()));
        }
        let raw_min = raw.iter().copied().fold(f32::INFINITY, f32::min);
        let raw_max = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let range = raw_max as f64 - raw_min as f64;
        let values = if range > 0.0 {
            raw.iter()
                .map(|&x| (((x as f64 - raw_min as f64) / range) as f32).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Self {
            side,
            values,
            source,
            raw_min,
            raw_max,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.side + col]
    }

    /// Flat index of the largest value (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Channel `attribute` of the trace's local attribute maps.
pub fn extract_aam(trace: &ForwardTrace, attribute: usize) -> Result<Heatmap> {
    let local = trace
        .local_semantic
        .as_ref()
        .ok_or_else(|| Error::invalid("trace", "local attribute maps were not retained"))?;
    if attribute >= local.depth() {
        return Err(Error::OutOfRange {
            index: attribute,
            len: local.depth(),
        });
    }
    Heatmap::from_raw(
        local.side(),
        &local.channel(attribute),
        MapSource::Attribute(attribute),
    )
}

/// `Σ_i row[i] · local[.., i]` at every location, before normalization.
pub fn raw_cam(local: &FeatureMap<f32>, class_row: &[f32]) -> Result<Vec<f32>> {
    if class_row.len() != local.depth() {
        return Err(Error::Shape(format!(
            "class row has {} entries, maps have {} channels",
            class_row.len(),
            local.depth()
        )));
    }
    Ok((0..local.locations())
        .map(|loc| {
            local
                .at(loc)
                .iter()
                .zip(class_row)
                .map(|(&a, &w)| a as f64 * w as f64)
                .sum::<f64>() as f32
        })
        .collect())
}

/// Class activation map for the class described by `class_row`.
pub fn compute_cam(local: &FeatureMap<f32>, class_row: &[f32], class: usize) -> Result<Heatmap> {
    Heatmap::from_raw(
        local.side(),
        &raw_cam(local, class_row)?,
        MapSource::Class(class),
    )
}

/// Indices of the `k` largest entries, descending, lower index first on ties.
pub fn top_attributes(class_row: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > class_row.len() {
        return Err(Error::invalid(
            "k",
            format!("must lie in 1..={}, got {k}", class_row.len()),
        ));
    }
    let mut idx: Vec<usize> = (0..class_row.len()).collect();
    idx.sort_by(|&a, &b| class_row[b].total_cmp(&class_row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Bilinear resampling to `r × r` with corners aligned.
pub fn upsample_bilinear(h: &Heatmap, r: usize) -> Result<Heatmap> {
    if r < h.side {
        return Err(Error::invalid(
            "R",
            format!("target size {r} is smaller than map size {}", h.side),
        ));
    }
    let m = h.side;
    let scale = if r > 1 {
        (m - 1) as f64 / (r - 1) as f64
    } else {
        0.0
    };
    let mut values = Vec::with_capacity(r * r);
    for i in 0..r {
        let y = i as f64 * scale;
        let y0 = (y.floor() as usize).min(m - 1);
        let y1 = (y0 + 1).min(m - 1);
        let fy = y - y0 as f64;
        for j in 0..r {
            let x = j as f64 * scale;
            let x0 = (x.floor() as usize).min(m - 1);
            let x1 = (x0 + 1).min(m - 1);
            let fx = x - x0 as f64;
            let at = |a: usize, b: usize| h.get(a, b) as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            values.push(((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0));
        }
    }
    Ok(Heatmap {
        side: r,
        values,
        source: h.source,
        raw_min: h.raw_min,
        raw_max: h.raw_max,
    })
}

/// `value · 255`, rounded half up.
pub fn quantize(value: f32) -> u8 {
    (value.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

pub const INDEX_FILE: &str = "index.tsv";

/// Writes one PGM (P5) per map plus `index.tsv` with
/// `filename<TAB>kind<TAB>index<TAB>name` lines. Returns the PGM paths.
pub fn export_heatmap_grid(
    maps: &[Heatmap],
    labels: &[String],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if maps.is_empty() {
        return Err(Error::invalid("maps", "nothing to export"));
    }
    if labels.len() != maps.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} maps",
            labels.len(),
            maps.len()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut index = String::new();
    let mut paths = Vec::with_capacity(maps.len());
    for (i, (map, label)) in maps.iter().zip(labels).enumerate() {
        let name = format!("{i:02}_{}_{}.pgm", map.source.kind(), map.source.index());
        let path = out.join(&name);
        let mut bytes = format!("P5\n{} {}\n255\n", map.side, map.side).into_bytes();
        bytes.extend(map.values.iter().map(|&v| quantize(v)));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        writeln!(
            index,
            "{name}\t{}\t{}\t{label}",
            map.source.kind(),
            map.source.index()
        )
        .unwrap();
        paths.push(path);
    }
    let index_path = out.join(INDEX_FILE);
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    Ok(paths)
}

/// Reads an 8-bit P5 file as `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        what: path.display().to_string(),
        message: m.to_string(),
    };
    // Header: four whitespace-separated tokens, then a single whitespace byte.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("not a binary graymap"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit graymaps are supported"));
    }
    let pixels = bytes.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != w * h {
        return Err(bad("pixel count does not match header"));
    }
    Ok((w, h, pixels))
}
