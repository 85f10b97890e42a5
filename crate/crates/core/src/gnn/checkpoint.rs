//! Plain-text model checkpoints.
//!
//! ```text
//! stgraph-gat-checkpoint 1
//! config <in_dim> <out_dim> <heads> <head_dim> <n_layers> <edge_dropout>
//! layer <index> <heads> <head_dim> <final 0|1>
//! tensor <name> <rows> <cols>
//! <cols values>            (repeated rows times)
//! ...
//! ```
//!
//! Values are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::layer::GatLayerParams;
use super::model::{GatConfig, GatModel};
use crate::error::{Error, Result};

const MAGIC: &str = "stgraph-gat-checkpoint";
const VERSION: u32 = 1;

fn push_tensor(out: &mut String, name: &str, rows: usize, cols: usize, values: &[f64]) {
    let _ = writeln!(out, "tensor {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn write_checkpoint(model: &GatModel) -> String {
    let c = &model.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(
        out,
        "config {} {} {} {} {} {}",
        c.in_dim, c.out_dim, c.heads, c.head_dim, c.n_layers, c.edge_dropout
    );
    for (i, l) in model.layers.iter().enumerate() {
        let _ = writeln!(
            out,
            "layer {i} {} {} {}",
            l.heads,
            l.head_dim,
            u8::from(l.final_layer)
        );
        let std = |a: &Array2<f64>| a.as_slice().expect("standard layout").to_vec();
        push_tensor(&mut out, "weight", l.weight.nrows(), l.weight.ncols(), &std(&l.weight));
        push_tensor(&mut out, "attn_src", l.heads, l.head_dim, &std(&l.attn_src));
        push_tensor(&mut out, "attn_dst", l.heads, l.head_dim, &std(&l.attn_dst));
        push_tensor(&mut out, "bias", 1, l.bias.len(), &l.bias.to_vec());
        if let (Some(g), Some(b)) = (&l.ln_scale, &l.ln_shift) {
            push_tensor(&mut out, "ln_scale", 1, g.len(), &g.to_vec());
            push_tensor(&mut out, "ln_shift", 1, b.len(), &b.to_vec());
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Ok((i + 1, t.split_whitespace().collect()));
            }
        }
        Err(Error::Checkpoint("unexpected end of file".into()))
    }

    fn expect(&mut self, keyword: &str, arity: usize) -> Result<(usize, Vec<&'a str>)> {
        let (line, parts) = self.next()?;
        if parts.first() != Some(&keyword) || parts.len() != arity + 1 {
            return Err(Error::Checkpoint(format!(
                "line {line}: expected `{keyword}` with {arity} fields"
            )));
        }
        Ok((line, parts))
    }

    fn tensor(&mut self, name: &str) -> Result<(usize, usize, Vec<f64>)> {
        let (line, parts) = self.expect("tensor", 3)?;
        if parts[1] != name {
            return Err(Error::Checkpoint(format!(
                "line {line}: expected tensor {name}, found {}",
                parts[1]
            )));
        }
        let rows: usize = num(line, parts[2])?;
        let cols: usize = num(line, parts[3])?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, parts) = self.next()?;
            if parts.len() != cols {
                return Err(Error::Checkpoint(format!(
                    "line {line}: {} values, expected {cols}",
                    parts.len()
                )));
            }
            for p in parts {
                values.push(num(line, p)?);
            }
        }
        Ok((rows, cols, values))
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("line {line}: cannot parse {s:?}")))
}

fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint(text: &str) -> Result<GatModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (line, header) = lines.next()?;
    if header.len() != 2 || header[0] != MAGIC {
        return Err(Error::Checkpoint(format!("line {line}: not a checkpoint")));
    }
    let version: u32 = num(line, header[1])?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let (line, c) = lines.expect("config", 6)?;
    let config = GatConfig {
        in_dim: num(line, c[1])?,
        out_dim: num(line, c[2])?,
        heads: num(line, c[3])?,
        head_dim: num(line, c[4])?,
        n_layers: num(line, c[5])?,
        edge_dropout: num(line, c[6])?,
    };
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let (line, l) = lines.expect("layer", 4)?;
        if num::<usize>(line, l[1])? != i {
            return Err(Error::Checkpoint(format!("line {line}: layers out of order")));
        }
        let heads: usize = num(line, l[2])?;
        let head_dim: usize = num(line, l[3])?;
        let final_layer = num::<u8>(line, l[4])? == 1;
        let (r, c, v) = lines.tensor("weight")?;
        let weight = matrix(r, c, v)?;
        let (r, c, v) = lines.tensor("attn_src")?;
        let attn_src = matrix(r, c, v)?;
        let (r, c, v) = lines.tensor("attn_dst")?;
        let attn_dst = matrix(r, c, v)?;
        let bias = Array1::from(lines.tensor("bias")?.2);
        let (ln_scale, ln_shift) = if final_layer {
            (None, None)
        } else {
            (
                Some(Array1::from(lines.tensor("ln_scale")?.2)),
                Some(Array1::from(lines.tensor("ln_shift")?.2)),
            )
        };
        layers.push(GatLayerParams {
            heads,
            head_dim,
            final_layer,
            weight,
            attn_src,
            attn_dst,
            bias,
            ln_scale,
            ln_shift,
        });
    }
    let model = GatModel { config, layers };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &GatModel) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<GatModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = GatConfig {
            in_dim: 5,
            out_dim: 3,
            heads: 2,
            head_dim: 4,
            n_layers: 4,
            edge_dropout: 0.2,
        };
        let model = GatModel::new(cfg, 17).unwrap();
        let back = read_checkpoint(&write_checkpoint(&model)).unwrap();
        assert_eq!(back, model);
        for (a, b) in model.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = GatConfig {
            in_dim: 2,
            out_dim: 2,
            heads: 1,
            head_dim: 2,
            n_layers: 2,
            edge_dropout: 0.0,
        };
        let text = write_checkpoint(&GatModel::new(cfg, 1).unwrap());
        let cut = &text[..text.len() / 2];
        assert!(read_checkpoint(cut).is_err());
        assert!(read_checkpoint("hello 1").is_err());
    }
}
