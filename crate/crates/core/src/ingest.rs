//! Spot tables, expression matrices and patch embeddings.
//!
//! All three inputs are tab-separated with a single header row:
//!
//! * spots: `spot_id, grid_row, grid_col, pixel_x, pixel_y`
//! * expression: `spot_id` followed by one column per gene
//! * embeddings: `spot_id` followed by `d` numeric columns
//!
//! Rows of the expression and embedding files are matched to spots by
//! `spot_id`; file order is irrelevant.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A single tissue spot on the square acquisition grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotRecord {
    pub spot_id: String,
    pub grid_row: i64,
    pub grid_col: i64,
    pub pixel_x: f64,
    pub pixel_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridKind {
    #[default]
    Square,
}

/// One slide: spots, gene panel and the spot x gene expression matrix.
///
/// Immutable once constructed; every constructor path validates the grid and
/// the matrix.
#[derive(Debug, Clone)]
pub struct StSample {
    sample_id: String,
    spots: Vec<SpotRecord>,
    genes: Vec<String>,
    expr_raw: Array2<f64>,
    expr_smoothed: Option<Array2<f64>>,
    grid_kind: GridKind,
    by_coord: HashMap<(i64, i64), usize>,
}

impl StSample {
    pub fn new(
        sample_id: impl Into<String>,
        spots: Vec<SpotRecord>,
        genes: Vec<String>,
        expr_raw: Array2<f64>,
    ) -> Result<Self> {
        let mut by_coord: HashMap<(i64, i64), usize> = HashMap::with_capacity(spots.len());
        let mut ids = HashMap::with_capacity(spots.len());
        for (i, s) in spots.iter().enumerate() {
            if s.grid_row < 0 || s.grid_col < 0 {
                return Err(Error::InvalidParameter(format!(
                    "spot {} has negative grid coordinate ({}, {})",
                    s.spot_id, s.grid_row, s.grid_col
                )));
            }
            if let Some(&j) = by_coord.get(&(s.grid_row, s.grid_col)) {
                return Err(Error::DuplicateGridCoordinate {
                    row: s.grid_row,
                    col: s.grid_col,
                    first: spots[j].spot_id.clone(),
                    second: s.spot_id.clone(),
                });
            }
            if ids.insert(s.spot_id.as_str(), i).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate spot id {}",
                    s.spot_id
                )));
            }
            by_coord.insert((s.grid_row, s.grid_col), i);
        }
        if expr_raw.nrows() != spots.len() {
            return Err(Error::RowCountMismatch {
                what: "expression matrix".into(),
                expected: spots.len(),
                found: expr_raw.nrows(),
            });
        }
        if expr_raw.ncols() != genes.len() {
            return Err(Error::Dimension(format!(
                "expression matrix has {} columns for {} genes",
                expr_raw.ncols(),
                genes.len()
            )));
        }
        for ((i, j), &v) in expr_raw.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "expression value {v} at spot {} gene {} must be finite and non-negative",
                    spots[i].spot_id, genes[j]
                )));
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            spots,
            genes,
            expr_raw,
            expr_smoothed: None,
            grid_kind: GridKind::Square,
            by_coord,
        })
    }

    pub fn with_smoothed(mut self, smoothed: Array2<f64>) -> Result<Self> {
        if smoothed.dim() != self.expr_raw.dim() {
            return Err(Error::Dimension(format!(
                "smoothed matrix {:?} does not match raw {:?}",
                smoothed.dim(),
                self.expr_raw.dim()
            )));
        }
        self.expr_smoothed = Some(smoothed);
        Ok(self)
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn spots(&self) -> &[SpotRecord] {
        &self.spots
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn expr_raw(&self) -> &Array2<f64> {
        &self.expr_raw
    }

    pub fn expr_smoothed(&self) -> Option<&Array2<f64>> {
        self.expr_smoothed.as_ref()
    }

    pub fn grid_kind(&self) -> GridKind {
        self.grid_kind
    }

    pub fn n_spots(&self) -> usize {
        self.spots.len()
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn spot_at(&self, row: i64, col: i64) -> Option<usize> {
        self.by_coord.get(&(row, col)).copied()
    }

    pub fn gene_index(&self, gene: &str) -> Result<usize> {
        self.genes
            .iter()
            .position(|g| g == gene)
            .ok_or_else(|| Error::UnknownGene {
                gene: gene.to_string(),
                available: self.genes.clone(),
            })
    }

    /// Manhattan distance between two spots in grid units.
    pub fn manhattan(&self, i: usize, j: usize) -> u64 {
        let (a, b) = (&self.spots[i], &self.spots[j]);
        a.grid_row.abs_diff(b.grid_row) + a.grid_col.abs_diff(b.grid_col)
    }

    /// Existing spots within Chebyshev distance 1 of `spot`, excluding itself,
    /// in ascending index order.
    pub fn eight_neighbors(&self, spot: usize) -> Vec<usize> {
        let s = &self.spots[spot];
        let mut out = Vec::with_capacity(8);
        for dr in -1..=1 {
            for dc in -1..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                if let Some(j) = self.spot_at(s.grid_row + dr, s.grid_col + dc) {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn spot_ids(&self) -> Vec<&str> {
        self.spots.iter().map(|s| s.spot_id.as_str()).collect()
    }

    fn index_by_id(&self) -> HashMap<&str, usize> {
        self.spots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.spot_id.as_str(), i))
            .collect()
    }
}

/// Patch embeddings, one row per spot in the order of the owning sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub sample_id: String,
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(sample_id: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::Dimension("embedding dimension must be > 0".into()));
        }
        if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite embedding value {v} at row {i}, column {j}"
            )));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Derives a sample id from a file name such as `s01.spots.tsv`.
pub fn sample_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in [".spots.tsv", ".expr.tsv", ".emb.tsv", ".labels.tsv", ".tsv"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_string();
        }
    }
    name
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    /// (1-based line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("spot_id") {
        return Err(Error::parse(path, 1, "first header column must be spot_id"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok(Table {
        path: path.to_path_buf(),
        header,
        rows,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    }
}

impl Table {
    fn field_f64(&self, line: usize, row: &[String], col: usize) -> Result<f64> {
        let raw = &row[col];
        raw.parse::<f64>().map_err(|_| {
            Error::parse(
                &self.path,
                line,
                format!(
                    "row {}, column {}: cannot parse {raw:?} as a number",
                    row[0], self.header[col]
                ),
            )
        })
    }

    fn field_i64(&self, line: usize, row: &[String], col: usize) -> Result<i64> {
        let raw = &row[col];
        raw.parse::<i64>().map_err(|_| {
            Error::parse(
                &self.path,
                line,
                format!(
                    "row {}, column {}: cannot parse {raw:?} as an integer",
                    row[0], self.header[col]
                ),
            )
        })
    }

    fn check_width(&self, line: usize, row: &[String]) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::parse(
                &self.path,
                line,
                format!(
                    "row {} has {} fields, header has {}",
                    row[0],
                    row.len(),
                    self.header.len()
                ),
            ));
        }
        Ok(())
    }

    /// Parses a numeric matrix keyed by spot id and reorders it to `order`.
    fn aligned_matrix(
        &self,
        order: &HashMap<&str, usize>,
        require_finite_nonneg: bool,
    ) -> Result<Array2<f64>> {
        let ncols = self.header.len() - 1;
        let mut out = Array2::<f64>::zeros((order.len(), ncols));
        let mut seen = vec![false; order.len()];
        for (line, row) in &self.rows {
            self.check_width(*line, row)?;
            let Some(&i) = order.get(row[0].as_str()) else {
                return Err(Error::parse(
                    &self.path,
                    *line,
                    format!("unknown spot id {}", row[0]),
                ));
            };
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::parse(
                    &self.path,
                    *line,
                    format!("duplicate spot id {}", row[0]),
                ));
            }
            for c in 0..ncols {
                let v = self.field_f64(*line, row, c + 1)?;
                if !v.is_finite() || (require_finite_nonneg && v < 0.0) {
                    return Err(Error::parse(
                        &self.path,
                        *line,
                        format!(
                            "row {}, column {}: value {v} must be finite{}",
                            row[0],
                            self.header[c + 1],
                            if require_finite_nonneg {
                                " and non-negative"
                            } else {
                                ""
                            }
                        ),
                    ));
                }
                out[[i, c]] = v;
            }
        }
        Ok(out)
    }
}

fn missing_ids(table: &Table, ids: &[&str]) -> Vec<String> {
    let present: std::collections::HashSet<&str> =
        table.rows.iter().map(|(_, r)| r[0].as_str()).collect();
    ids.iter()
        .filter(|id| !present.contains(*id))
        .map(|s| s.to_string())
        .collect()
}

pub fn load_spots(path: &Path) -> Result<Vec<SpotRecord>> {
    let table = read_table(path)?;
    let expected = ["spot_id", "grid_row", "grid_col", "pixel_x", "pixel_y"];
    if table.header != expected {
        return Err(Error::parse(
            path,
            1,
            format!("spot header must be {}", expected.join("\t")),
        ));
    }
    table
        .rows
        .iter()
        .map(|(line, row)| {
            table.check_width(*line, row)?;
            Ok(SpotRecord {
                spot_id: row[0].clone(),
                grid_row: table.field_i64(*line, row, 1)?,
                grid_col: table.field_i64(*line, row, 2)?,
                pixel_x: table.field_f64(*line, row, 3)?,
                pixel_y: table.field_f64(*line, row, 4)?,
            })
        })
        .collect()
}

/// Loads and validates one sample from its spot table and expression matrix.
pub fn load_sample(spots_path: &Path, expr_path: &Path) -> Result<StSample> {
    let spots = load_spots(spots_path)?;
    let table = read_table(expr_path)?;
    if table.rows.len() != spots.len() {
        return Err(Error::RowCountMismatch {
            what: expr_path.display().to_string(),
            expected: spots.len(),
            found: table.rows.len(),
        });
    }
    let genes = table.header[1..].to_vec();
    let ids: Vec<&str> = spots.iter().map(|s| s.spot_id.as_str()).collect();
    let missing = missing_ids(&table, &ids);
    if !missing.is_empty() {
        return Err(Error::MissingSpots(missing));
    }
    let order: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let expr = table.aligned_matrix(&order, true)?;
    StSample::new(sample_id_from_path(spots_path), spots, genes, expr)
}

/// Loads embeddings and reorders rows to the sample's spot order.
pub fn load_embeddings(path: &Path, sample: &StSample) -> Result<EmbeddingMatrix> {
    let table = read_table(path)?;
    let missing = missing_ids(&table, &sample.spot_ids());
    if !missing.is_empty() {
        return Err(Error::MissingSpots(missing));
    }
    if table.rows.len() != sample.n_spots() {
        return Err(Error::RowCountMismatch {
            what: path.display().to_string(),
            expected: sample.n_spots(),
            found: table.rows.len(),
        });
    }
    for (line, row) in &table.rows {
        if row.len() != table.header.len() {
            return Err(Error::parse(
                path,
                *line,
                format!(
                    "dimension inconsistency: row {} has {} values, header declares {}",
                    row[0],
                    row.len() - 1,
                    table.header.len() - 1
                ),
            ));
        }
    }
    let data = table.aligned_matrix(&sample.index_by_id(), false)?;
    EmbeddingMatrix::new(sample.sample_id(), data)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes a spot-keyed matrix. Values use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_matrix_tsv<S: AsRef<str>>(
    path: &Path,
    row_ids: &[&str],
    columns: &[S],
    matrix: &Array2<f64>,
) -> Result<()> {
    if matrix.nrows() != row_ids.len() || matrix.ncols() != columns.len() {
        return Err(Error::Dimension(format!(
            "matrix {:?} vs {} rows x {} columns",
            matrix.dim(),
            row_ids.len(),
            columns.len()
        )));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(w, "spot_id").map_err(io)?;
    for c in columns {
        write!(w, "\t{}", c.as_ref()).map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (id, row) in row_ids.iter().zip(matrix.rows()) {
        write!(w, "{id}").map_err(io)?;
        for v in row {
            write!(w, "\t{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_spots(path: &Path, spots: &[SpotRecord]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "spot_id\tgrid_row\tgrid_col\tpixel_x\tpixel_y").map_err(io)?;
    for s in spots {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            s.spot_id, s.grid_row, s.grid_col, s.pixel_x, s.pixel_y
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_expression(path: &Path, sample: &StSample, matrix: &Array2<f64>) -> Result<()> {
    write_matrix_tsv(path, &sample.spot_ids(), sample.genes(), matrix)
}

pub fn write_embeddings(path: &Path, sample: &StSample, emb: &EmbeddingMatrix) -> Result<()> {
    let cols: Vec<String> = (0..emb.dim()).map(|k| format!("e{k}")).collect();
    write_matrix_tsv(path, &sample.spot_ids(), &cols, emb.data())
}

/// Standard on-disk file names for a sample stored in a data directory.
#[derive(Debug, Clone)]
pub struct SamplePaths {
    pub sample_id: String,
    pub spots: PathBuf,
    pub expr: PathBuf,
    pub embeddings: PathBuf,
}

impl SamplePaths {
    pub fn in_dir(dir: &Path, sample_id: &str) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            spots: dir.join(format!("{sample_id}.spots.tsv")),
            expr: dir.join(format!("{sample_id}.expr.tsv")),
            embeddings: dir.join(format!("{sample_id}.emb.tsv")),
        }
    }
}

/// Lists samples in `dir` by their `*.spots.tsv` files, sorted by id.
pub fn discover_samples(dir: &Path) -> Result<Vec<SamplePaths>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".spots.tsv") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids.iter().map(|id| SamplePaths::in_dir(dir, id)).collect())
}

/// Writes spots, raw expression and embeddings under the standard names.
pub fn save_sample(dir: &Path, sample: &StSample, emb: Option<&EmbeddingMatrix>) -> Result<SamplePaths> {
    let paths = SamplePaths::in_dir(dir, sample.sample_id());
    write_spots(&paths.spots, sample.spots())?;
    write_expression(&paths.expr, sample, sample.expr_raw())?;
    if let Some(emb) = emb {
        write_embeddings(&paths.embeddings, sample, emb)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid(rows: i64, cols: i64) -> Vec<SpotRecord> {
        let mut v = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                v.push(SpotRecord {
                    spot_id: format!("r{r}c{c}"),
                    grid_row: r,
                    grid_col: c,
                    pixel_x: c as f64 * 100.0,
                    pixel_y: r as f64 * 100.0,
                });
            }
        }
        v
    }

    fn sample(rows: i64, cols: i64) -> StSample {
        let spots = grid(rows, cols);
        let n = spots.len();
        StSample::new("t", spots, vec!["g".into()], Array2::zeros((n, 1))).unwrap()
    }

    #[test]
    fn center_of_full_grid_has_eight_neighbors() {
        let s = sample(3, 3);
        assert_eq!(s.eight_neighbors(4), vec![0, 1, 2, 3, 5, 6, 7, 8]);
    }

    #[test]
    fn corner_has_three_neighbors() {
        let s = sample(3, 3);
        assert_eq!(s.eight_neighbors(0), vec![1, 3, 4]);
    }

    #[test]
    fn isolated_spot_has_no_neighbors() {
        let mut spots = grid(2, 2);
        spots.push(SpotRecord {
            spot_id: "far".into(),
            grid_row: 10,
            grid_col: 10,
            pixel_x: 0.0,
            pixel_y: 0.0,
        });
        let s = StSample::new("t", spots, vec!["g".into()], Array2::zeros((5, 1))).unwrap();
        assert!(s.eight_neighbors(4).is_empty());
    }

    #[test]
    fn neighbors_are_symmetric_on_irregular_grid() {
        let spots: Vec<_> = grid(6, 7)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| i % 5 != 2)
            .map(|(_, s)| s)
            .collect();
        let n = spots.len();
        let s = StSample::new("t", spots, vec!["g".into()], Array2::zeros((n, 1))).unwrap();
        for i in 0..n {
            for j in s.eight_neighbors(i) {
                assert!(s.eight_neighbors(j).contains(&i));
            }
        }
    }

    #[test]
    fn duplicate_coordinates_rejected() {
        let mut spots = grid(1, 2);
        spots[1].grid_col = 0;
        let err = StSample::new("t", spots, vec!["g".into()], Array2::zeros((2, 1))).unwrap_err();
        assert!(matches!(err, Error::DuplicateGridCoordinate { .. }));
    }

    #[test]
    fn negative_expression_rejected() {
        let err = StSample::new("t", grid(1, 2), vec!["g".into()], array![[1.0], [-1.0]])
            .unwrap_err();
        assert!(err.to_string().contains("non-negative"));
    }

    #[test]
    fn sample_id_strips_known_suffixes() {
        assert_eq!(sample_id_from_path(Path::new("/x/s01.spots.tsv")), "s01");
        assert_eq!(sample_id_from_path(Path::new("a.tsv")), "a");
    }
}
