//! Synthetic samples with planted regions.
//!
//! The grid is split into territories by a seeded round-robin flood fill,
//! one or more per region. Region 0 is grown from two opposite corners that
//! must end up as islands that do not touch. Each region has a unit prototype
//! embedding (mutually orthogonal) and a block of `genes_per_region`
//! signature genes that are expressed only inside the region, with additive
//! Gaussian noise, before dropout zeroes entries at random.
//!
//! A cohort shares prototypes and signatures across samples; only the
//! layout and noise differ per sample.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EmbeddingMatrix, SpotRecord, StSample};

/// Mean expression of a signature gene inside its region. Signature genes
/// are not expressed elsewhere.
pub const EXPRESSED_LEVEL: f64 = 2.0;
const MAX_LAYOUT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub n_regions: usize,
    pub genes_per_region: usize,
    pub embedding_dim: usize,
    /// Standard deviation of the additive expression noise.
    pub noise_sigma: f64,
    pub dropout_rate: f64,
    /// Per-coordinate standard deviation of the noise added to prototype
    /// embeddings; 0 gives noiseless embeddings.
    #[serde(default)]
    pub embedding_noise: f64,
    /// Territories grown per region. With 1, only region 0 is split (into
    /// the two corner islands); larger values fragment every region.
    #[serde(default = "one")]
    pub islands_per_region: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            grid_rows: 20,
            grid_cols: 20,
            n_regions: 4,
            genes_per_region: 5,
            embedding_dim: 16,
            noise_sigma: 0.3,
            dropout_rate: 0.0,
            embedding_noise: 0.0,
            islands_per_region: 1,
            seed: crate::train::DEFAULT_SEED,
        }
    }
}

impl SynthSpec {
    pub fn n_spots(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn n_genes(&self) -> usize {
        self.n_regions * self.genes_per_region
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::InfeasibleSpec("grid dimensions must be >= 1".into()));
        }
        if self.n_regions == 0 {
            return Err(Error::InfeasibleSpec("n_regions must be >= 1".into()));
        }
        let territories = if self.n_regions > 1 {
            territory_regions(self.n_regions, self.islands_per_region).len()
        } else {
            1
        };
        if territories > self.n_spots() {
            return Err(Error::InfeasibleSpec(format!(
                "{} regions need {territories} territories but the grid has {} spots",
                self.n_regions,
                self.n_spots()
            )));
        }
        if self.genes_per_region == 0 {
            return Err(Error::InfeasibleSpec("genes_per_region must be >= 1".into()));
        }
        if self.embedding_dim < self.n_regions {
            return Err(Error::InfeasibleSpec(format!(
                "embedding_dim {} cannot hold {} orthogonal prototypes",
                self.embedding_dim, self.n_regions
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InfeasibleSpec(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.embedding_noise >= 0.0) {
            return Err(Error::InfeasibleSpec("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub sample: StSample,
    pub embeddings: EmbeddingMatrix,
    /// Region label per spot.
    pub labels: Vec<usize>,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Orthonormal prototypes by Gram-Schmidt on Gaussian draws.
fn prototypes(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((k, dim));
    let mut r = 0;
    while r < k {
        let mut v: Array1<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for q in 0..r {
            let proj = v.dot(&out.row(q));
            v.scaled_add(-proj, &out.row(q));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            out.row_mut(r).assign(&(v / norm));
            r += 1;
        }
    }
    out
}

/// Grows territories from `seeds` one cell per territory per turn; returns
/// the territory of every cell in row-major order.
fn flood_fill(rows: usize, cols: usize, seeds: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut owner = vec![usize::MAX; rows * cols];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new(); seeds.len()];
    let push_neighbors = |cell: usize, f: &mut Vec<usize>, owner: &[usize]| {
        let (r, c) = (cell / cols, cell % cols);
        let mut cand = Vec::with_capacity(4);
        if r > 0 {
            cand.push(cell - cols);
        }
        if r + 1 < rows {
            cand.push(cell + cols);
        }
        if c > 0 {
            cand.push(cell - 1);
        }
        if c + 1 < cols {
            cand.push(cell + 1);
        }
        f.extend(cand.into_iter().filter(|&x| owner[x] == usize::MAX));
    };
    for (t, &s) in seeds.iter().enumerate() {
        owner[s] = t;
    }
    for (t, &s) in seeds.iter().enumerate() {
        push_neighbors(s, &mut frontier[t], &owner);
    }
    let mut remaining = owner.iter().filter(|&&o| o == usize::MAX).count();
    while remaining > 0 {
        let mut progressed = false;
        for t in 0..seeds.len() {
            frontier[t].retain(|&x| owner[x] == usize::MAX);
            if frontier[t].is_empty() {
                continue;
            }
            let pick = rng.random_range(0..frontier[t].len());
            let cell = frontier[t].swap_remove(pick);
            owner[cell] = t;
            remaining -= 1;
            progressed = true;
            let mut f = std::mem::take(&mut frontier[t]);
            push_neighbors(cell, &mut f, &owner);
            frontier[t] = f;
        }
        debug_assert!(progressed, "flood fill stalled");
        if !progressed {
            break;
        }
    }
    owner
}

/// True if no cell of territory `a` is 8-adjacent to a cell of territory `b`.
fn territories_apart(owner: &[usize], rows: usize, cols: usize, a: usize, b: usize) -> bool {
    for r in 0..rows {
        for c in 0..cols {
            if owner[r * cols + c] != a {
                continue;
            }
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0
                        && cc >= 0
                        && (rr as usize) < rows
                        && (cc as usize) < cols
                        && owner[rr as usize * cols + cc as usize] == b
                    {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Territory-to-region map: territories 0 and 1 (the corners) belong to
/// region 0, then each region gets further territories until it has
/// `islands_per_region` of them (region 0 always has at least two).
fn territory_regions(n_regions: usize, islands: usize) -> Vec<usize> {
    let mut map = vec![0, 0];
    map.extend(std::iter::repeat_n(0, islands.saturating_sub(2)));
    for r in 1..n_regions {
        map.extend(std::iter::repeat_n(r, islands.max(1)));
    }
    map
}

fn region_layout(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let (rows, cols) = (spec.grid_rows, spec.grid_cols);
    let n = rows * cols;
    if spec.n_regions == 1 {
        return Ok(vec![0; n]);
    }
    let corner_a = 0;
    let corner_b = n - 1;
    if corner_a == corner_b {
        return Err(Error::InfeasibleSpec("a single spot cannot hold two islands".into()));
    }
    let regions = territory_regions(spec.n_regions, spec.islands_per_region);
    let cells: Vec<usize> = (1..n - 1).collect();
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let others: Vec<usize> = cells
            .choose_multiple(rng, regions.len() - 2)
            .copied()
            .collect();
        let mut seeds = vec![corner_a, corner_b];
        seeds.extend(others);
        let owner = flood_fill(rows, cols, &seeds, rng);
        if territories_apart(&owner, rows, cols, 0, 1) {
            return Ok(owner.into_iter().map(|t| regions[t]).collect());
        }
    }
    Err(Error::InfeasibleSpec(format!(
        "could not separate the split region on a {rows}x{cols} grid with {} regions",
        spec.n_regions
    )))
}

struct Shared {
    prototypes: Array2<f64>,
}

fn shared(spec: &SynthSpec) -> Shared {
    let mut rng = stream(spec.seed, 0);
    Shared {
        prototypes: prototypes(spec.n_regions, spec.embedding_dim, &mut rng),
    }
}

fn generate_one(spec: &SynthSpec, shared: &Shared, index: usize, sample_id: &str) -> Result<SynthSample> {
    let mut rng = stream(spec.seed, index as u64 + 1);
    let labels = region_layout(spec, &mut rng)?;
    let (rows, cols) = (spec.grid_rows, spec.grid_cols);
    let n = rows * cols;
    let m = spec.n_genes();

    let spots: Vec<SpotRecord> = (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            SpotRecord {
                spot_id: format!("r{r}c{c}"),
                grid_row: r as i64,
                grid_col: c as i64,
                pixel_x: c as f64 * 100.0 + 50.0,
                pixel_y: r as f64 * 100.0 + 50.0,
            }
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let mut expr = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for g in 0..m {
            let signature = g / spec.genes_per_region == labels[i];
            let jitter = noise.sample(&mut rng);
            let mut v = if signature {
                (EXPRESSED_LEVEL + jitter).max(0.0)
            } else {
                0.0
            };
            if spec.dropout_rate > 0.0 && rng.random::<f64>() < spec.dropout_rate {
                v = 0.0;
            }
            expr[[i, g]] = v;
        }
    }

    let emb_noise = Normal::new(0.0, spec.embedding_noise)
        .map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let mut emb = Array2::<f64>::zeros((n, spec.embedding_dim));
    for i in 0..n {
        for k in 0..spec.embedding_dim {
            emb[[i, k]] = shared.prototypes[[labels[i], k]] + emb_noise.sample(&mut rng);
        }
    }

    let genes: Vec<String> = (0..m)
        .map(|g| format!("R{}G{}", g / spec.genes_per_region, g % spec.genes_per_region))
        .collect();
    let sample = StSample::new(sample_id, spots, genes, expr)?;
    let embeddings = EmbeddingMatrix::new(sample_id, emb)?;
    Ok(SynthSample {
        sample,
        embeddings,
        labels,
    })
}

/// One sample with id `synth`.
pub fn generate(spec: &SynthSpec) -> Result<SynthSample> {
    spec.validate()?;
    generate_one(spec, &shared(spec), 0, "synth")
}

/// `count` samples (`synth00`, `synth01`, ...) sharing prototypes and gene
/// signatures but with independent layouts and noise. The first sample equals
/// [`generate`] apart from its id.
pub fn generate_cohort(spec: &SynthSpec, count: usize) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let shared = shared(spec);
    (0..count)
        .map(|i| generate_one(spec, &shared, i, &format!("synth{i:02}")))
        .collect()
}

/// Writes `spot_id\tregion` rows.
pub fn write_labels(path: &Path, sample: &StSample, labels: &[usize]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "spot_id\tregion").map_err(io)?;
    for (s, l) in sample.spots().iter().zip(labels) {
        writeln!(w, "{}\t{l}", s.spot_id).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Spots reachable from `start` through same-label 8-neighbours.
pub fn label_component(sample: &StSample, labels: &[usize], start: usize) -> Vec<usize> {
    let mut seen = vec![false; labels.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut out = Vec::new();
    while let Some(i) = queue.pop_front() {
        out.push(i);
        for j in sample.eight_neighbors(i) {
            if !seen[j] && labels[j] == labels[start] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    out.sort_unstable();
    out
}
