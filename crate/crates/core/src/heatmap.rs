//! Per-gene heatmap export: a TSV of truth and prediction per spot and a PNG
//! with the two fields side by side.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::StSample;
use crate::metrics::pearson;

/// Pixels per spot edge in the PNG.
const CELL: usize = 8;
/// Blank columns between the truth and prediction panels.
const GAP: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapRow {
    pub grid_row: i64,
    pub grid_col: i64,
    pub truth: f64,
    pub pred: f64,
}

#[derive(Debug, Clone)]
pub struct HeatmapFiles {
    pub tsv: PathBuf,
    pub png: PathBuf,
    /// `None` when truth or prediction is constant.
    pub pcc: Option<f64>,
}

/// Appends `.ext` without touching dots already in the file name.
fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.tsv` and `<stem>.png` for `gene`.
pub fn heatmap_export(
    sample: &StSample,
    gene: &str,
    pred: &Array2<f64>,
    truth: &Array2<f64>,
    stem: &Path,
) -> Result<HeatmapFiles> {
    let g = sample.gene_index(gene)?;
    let n = sample.n_spots();
    for (what, m) in [("prediction", pred), ("truth", truth)] {
        if m.dim() != (n, sample.n_genes()) {
            return Err(Error::Dimension(format!(
                "{what} matrix {:?} for {n} spots x {} genes",
                m.dim(),
                sample.n_genes()
            )));
        }
    }
    let rows: Vec<HeatmapRow> = sample
        .spots()
        .iter()
        .enumerate()
        .map(|(i, s)| HeatmapRow {
            grid_row: s.grid_row,
            grid_col: s.grid_col,
            truth: truth[[i, g]],
            pred: pred[[i, g]],
        })
        .collect();
    let pcc = pearson(pred.column(g), truth.column(g));

    let tsv = with_suffix(stem, "tsv");
    write_heatmap_tsv(&tsv, &rows)?;
    let png = with_suffix(stem, "png");
    let caption = match pcc {
        Some(r) => format!("gene={gene} pcc={r}"),
        None => format!("gene={gene} pcc=undefined"),
    };
    write_png(&png, &rows, &caption)?;
    Ok(HeatmapFiles { tsv, png, pcc })
}

pub fn write_heatmap_tsv(path: &Path, rows: &[HeatmapRow]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "grid_row\tgrid_col\ttruth\tpred").map_err(io)?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.grid_row, r.grid_col, r.truth, r.pred).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_heatmap_tsv(path: &Path) -> Result<Vec<HeatmapRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "grid_row\tgrid_col\ttruth\tpred")) => {}
        _ => return Err(Error::parse(path, 1, "expected heatmap header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(path, i + 1, format!("{} fields, expected 4", f.len())));
            }
            let bad = |what: &str| Error::parse(path, i + 1, format!("cannot parse {what}"));
            Ok(HeatmapRow {
                grid_row: f[0].parse().map_err(|_| bad("grid_row"))?,
                grid_col: f[1].parse().map_err(|_| bad("grid_col"))?,
                truth: f[2].parse().map_err(|_| bad("truth"))?,
                pred: f[3].parse().map_err(|_| bad("pred"))?,
            })
        })
        .collect()
}

/// Blue to yellow ramp through teal.
fn color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, u: f64| (a + (b - a) * u).round() as u8;
    if t < 0.5 {
        let u = t * 2.0;
        [lerp(48.0, 33.0, u), lerp(18.0, 145.0, u), lerp(120.0, 140.0, u)]
    } else {
        let u = (t - 0.5) * 2.0;
        [lerp(33.0, 253.0, u), lerp(145.0, 231.0, u), lerp(140.0, 37.0, u)]
    }
}

fn write_png(path: &Path, rows: &[HeatmapRow], caption: &str) -> Result<()> {
    let max_r = rows.iter().map(|r| r.grid_row).max().unwrap_or(0).max(0) as usize;
    let max_c = rows.iter().map(|r| r.grid_col).max().unwrap_or(0).max(0) as usize;
    let (grid_h, grid_w) = (max_r + 1, max_c + 1);
    let width = (2 * grid_w + GAP) * CELL;
    let height = grid_h * CELL;

    let (lo, hi) = rows
        .iter()
        .flat_map(|r| [r.truth, r.pred])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let scale = |v: f64| if span > 0.0 { (v - lo) / span } else { 0.5 };

    let mut pixels = vec![255u8; width * height * 3];
    let mut paint = |gr: usize, gc: usize, panel: usize, rgb: [u8; 3]| {
        let x0 = (panel * (grid_w + GAP) + gc) * CELL;
        let y0 = gr * CELL;
        for y in y0..y0 + CELL {
            for x in x0..x0 + CELL {
                let k = (y * width + x) * 3;
                pixels[k..k + 3].copy_from_slice(&rgb);
            }
        }
    };
    for r in rows {
        let (gr, gc) = (r.grid_row as usize, r.grid_col as usize);
        paint(gr, gc, 0, color(scale(r.truth)));
        paint(gr, gc, 1, color(scale(r.pred)));
    }

    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let enc_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    enc.add_text_chunk("Title".into(), "truth (left) vs prediction (right)".into())
        .map_err(enc_err)?;
    enc.add_text_chunk("Comment".into(), caption.into())
        .map_err(enc_err)?;
    let mut writer = enc.write_header().map_err(enc_err)?;
    writer.write_image_data(&pixels).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}

/// Reads the `Comment` text chunk of a PNG written by [`heatmap_export`].
pub fn read_png_caption(path: &Path) -> Result<Option<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let reader = decoder
        .read_info()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == "Comment")
        .map(|c| c.text.clone()))
}
