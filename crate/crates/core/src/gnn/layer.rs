use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{Adjacency, LAYER_NORM_EPS, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// Parameters of one attention layer.
///
/// Hidden layers concatenate their heads and apply ELU then layer
/// normalisation; the final layer averages its heads and is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub heads: usize,
    pub head_dim: usize,
    pub final_layer: bool,
    /// in_dim x (heads * head_dim)
    pub weight: Array2<f64>,
    /// heads x head_dim
    pub attn_src: Array2<f64>,
    /// heads x head_dim
    pub attn_dst: Array2<f64>,
    /// Added after head aggregation; length `out_dim()`.
    pub bias: Array1<f64>,
    pub ln_scale: Option<Array1<f64>>,
    pub ln_shift: Option<Array1<f64>>,
}

impl GatLayerParams {
    /// Glorot-uniform weights and attention vectors, zero bias, identity
    /// layer norm.
    pub fn init(
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        final_layer: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let width = heads * head_dim;
        let glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Uniform::new_inclusive(-limit, limit).expect("finite limit")
        };
        let w = glorot(in_dim, width);
        let weight = Array2::from_shape_fn((in_dim, width), |_| w.sample(rng));
        let a = glorot(heads, head_dim);
        let attn_src = Array2::from_shape_fn((heads, head_dim), |_| a.sample(rng));
        let attn_dst = Array2::from_shape_fn((heads, head_dim), |_| a.sample(rng));
        let out_dim = if final_layer { head_dim } else { width };
        let (ln_scale, ln_shift) = if final_layer {
            (None, None)
        } else {
            (Some(Array1::ones(out_dim)), Some(Array1::zeros(out_dim)))
        };
        Self {
            heads,
            head_dim,
            final_layer,
            weight,
            attn_src,
            attn_dst,
            bias: Array1::zeros(out_dim),
            ln_scale,
            ln_shift,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        if self.final_layer {
            self.head_dim
        } else {
            self.heads * self.head_dim
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors as flat slices, in a fixed order shared with
    /// [`LayerGrads::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.weight.as_slice().expect("standard layout"),
            self.attn_src.as_slice().expect("standard layout"),
            self.attn_dst.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&self.ln_scale, &self.ln_shift) {
            v.push(g.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.attn_src.as_slice_mut().expect("standard layout"),
            self.attn_dst.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&mut self.ln_scale, &mut self.ln_shift) {
            v.push(g.as_slice_mut().expect("standard layout"));
            v.push(b.as_slice_mut().expect("standard layout"));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.heads * self.head_dim;
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Dimension("layer needs heads and head_dim > 0".into()));
        }
        if self.weight.ncols() != width
            || self.attn_src.dim() != (self.heads, self.head_dim)
            || self.attn_dst.dim() != (self.heads, self.head_dim)
            || self.bias.len() != self.out_dim()
        {
            return Err(Error::Dimension("layer tensor shapes are inconsistent".into()));
        }
        match (&self.ln_scale, &self.ln_shift, self.final_layer) {
            (None, None, true) => {}
            (Some(g), Some(b), false) if g.len() == width && b.len() == width => {}
            _ => {
                return Err(Error::Dimension(
                    "layer norm must be present (with matching width) exactly on hidden layers"
                        .into(),
                ))
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite layer parameter".into()));
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`GatLayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub attn_src: Array2<f64>,
    pub attn_dst: Array2<f64>,
    pub bias: Array1<f64>,
    pub ln_scale: Option<Array1<f64>>,
    pub ln_shift: Option<Array1<f64>>,
}

impl LayerGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.weight.as_slice().expect("standard layout"),
            self.attn_src.as_slice().expect("standard layout"),
            self.attn_dst.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&self.ln_scale, &self.ln_shift) {
            v.push(g.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        v
    }
}

/// Intermediate values kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Array2<f64>,
    /// n x (heads * head_dim) projected features.
    pub z: Array2<f64>,
    /// Attention logits before LeakyReLU, indexed `[message, head]` in CSR order.
    pub pre: Array2<f64>,
    /// Attention coefficients, indexed `[message, head]` in CSR order.
    pub alpha: Array2<f64>,
    /// Aggregated heads plus bias, before any activation.
    pub agg: Array2<f64>,
    /// Normalised activations (hidden layers only).
    pub xhat: Option<Array2<f64>>,
    pub inv_std: Option<Array1<f64>>,
    pub output: Array2<f64>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Forward pass of one attention layer.
///
/// For head `h`, node `i` and in-neighbour `j` (self included):
/// `e = LeakyReLU(attn_src[h] . z_j + attn_dst[h] . z_i)`, `alpha = softmax_j(e)`,
/// `out_i = sum_j alpha * z_j` where `z = x W` restricted to the head's slice.
pub fn gat_layer_forward(
    x: &Array2<f64>,
    adj: &Adjacency,
    params: &GatLayerParams,
) -> Result<LayerCache> {
    let n = x.nrows();
    if x.ncols() != params.in_dim() {
        return Err(Error::Dimension(format!(
            "layer expects {} input features, got {}",
            params.in_dim(),
            x.ncols()
        )));
    }
    if adj.n_nodes() != n {
        return Err(Error::Dimension(format!(
            "adjacency has {} nodes, features have {n} rows",
            adj.n_nodes()
        )));
    }
    let (heads, dim) = (params.heads, params.head_dim);
    let z = x.dot(&params.weight);

    // Per-node attention halves: [node, head].
    let mut s_src = Array2::<f64>::zeros((n, heads));
    let mut s_dst = Array2::<f64>::zeros((n, heads));
    for h in 0..heads {
        let zh = z.slice(s![.., h * dim..(h + 1) * dim]);
        s_src.column_mut(h).assign(&zh.dot(&params.attn_src.row(h)));
        s_dst.column_mut(h).assign(&zh.dot(&params.attn_dst.row(h)));
    }

    let m = adj.n_messages();
    let mut pre = Array2::<f64>::zeros((m, heads));
    let mut alpha = Array2::<f64>::zeros((m, heads));
    let out_dim = params.out_dim();
    let mut agg = Array2::<f64>::zeros((n, out_dim));
    let head_scale = if params.final_layer {
        1.0 / heads as f64
    } else {
        1.0
    };

    for i in 0..n {
        let range = adj.range(i);
        let srcs = adj.sources(i);
        for h in 0..heads {
            let mut max = f64::NEG_INFINITY;
            for (e, &j) in range.clone().zip(srcs) {
                let p = s_src[[j, h]] + s_dst[[i, h]];
                pre[[e, h]] = p;
                max = max.max(leaky(p));
            }
            let mut total = 0.0;
            for e in range.clone() {
                let w = (leaky(pre[[e, h]]) - max).exp();
                alpha[[e, h]] = w;
                total += w;
            }
            let col0 = if params.final_layer { 0 } else { h * dim };
            for (e, &j) in range.clone().zip(srcs) {
                let a = alpha[[e, h]] / total;
                alpha[[e, h]] = a;
                let coef = a * head_scale;
                for d in 0..dim {
                    agg[[i, col0 + d]] += coef * z[[j, h * dim + d]];
                }
            }
        }
    }
    agg += &params.bias;

    let (output, xhat, inv_std) = match (&params.ln_scale, &params.ln_shift) {
        (Some(scale), Some(shift)) if !params.final_layer => {
            let act = agg.mapv(elu);
            let width = out_dim as f64;
            let mut xhat = Array2::<f64>::zeros(act.dim());
            let mut inv_std = Array1::<f64>::zeros(n);
            for (i, row) in act.axis_iter(Axis(0)).enumerate() {
                let mean = row.sum() / width;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[i] = inv;
                for (d, v) in row.iter().enumerate() {
                    xhat[[i, d]] = (v - mean) * inv;
                }
            }
            let out = &xhat * scale + shift;
            (out, Some(xhat), Some(inv_std))
        }
        _ => (agg.clone(), None, None),
    };

    Ok(LayerCache {
        input: x.clone(),
        z,
        pre,
        alpha,
        agg,
        xhat,
        inv_std,
        output,
    })
}

/// Reverse pass of one layer. Returns parameter gradients and, when
/// `need_input_grad`, the gradient with respect to the layer input.
pub(crate) fn gat_layer_backward(
    cache: &LayerCache,
    adj: &Adjacency,
    params: &GatLayerParams,
    d_out: &Array2<f64>,
    need_input_grad: bool,
) -> (LayerGrads, Option<Array2<f64>>) {
    let n = cache.input.nrows();
    let (heads, dim) = (params.heads, params.head_dim);
    let out_dim = params.out_dim();

    let (d_agg, ln_scale_grad, ln_shift_grad) = match (
        &params.ln_scale,
        &cache.xhat,
        &cache.inv_std,
    ) {
        (Some(scale), Some(xhat), Some(inv_std)) => {
            let d_scale = (d_out * xhat).sum_axis(Axis(0));
            let d_shift = d_out.sum_axis(Axis(0));
            let width = out_dim as f64;
            let mut d_agg = Array2::<f64>::zeros((n, out_dim));
            for i in 0..n {
                let mut mean_dx = 0.0;
                let mut mean_dx_x = 0.0;
                for d in 0..out_dim {
                    let dx = d_out[[i, d]] * scale[d];
                    mean_dx += dx;
                    mean_dx_x += dx * xhat[[i, d]];
                }
                mean_dx /= width;
                mean_dx_x /= width;
                for d in 0..out_dim {
                    let dx = d_out[[i, d]] * scale[d];
                    let d_act = inv_std[i] * (dx - mean_dx - xhat[[i, d]] * mean_dx_x);
                    d_agg[[i, d]] = d_act * elu_grad(cache.agg[[i, d]]);
                }
            }
            (d_agg, Some(d_scale), Some(d_shift))
        }
        _ => (d_out.clone(), None, None),
    };

    let d_bias = d_agg.sum_axis(Axis(0));
    let head_scale = if params.final_layer {
        1.0 / heads as f64
    } else {
        1.0
    };

    let z = &cache.z;
    let mut d_z = Array2::<f64>::zeros(z.dim());
    let mut d_s_src = Array2::<f64>::zeros((n, heads));
    let mut d_s_dst = Array2::<f64>::zeros((n, heads));
    let mut d_alpha = Vec::new();
    for i in 0..n {
        let range = adj.range(i);
        let srcs = adj.sources(i);
        for h in 0..heads {
            let col0 = if params.final_layer { 0 } else { h * dim };
            d_alpha.clear();
            let mut weighted = 0.0;
            for (e, &j) in range.clone().zip(srcs) {
                let a = cache.alpha[[e, h]];
                let mut da = 0.0;
                for d in 0..dim {
                    let g = d_agg[[i, col0 + d]] * head_scale;
                    da += g * z[[j, h * dim + d]];
                    d_z[[j, h * dim + d]] += a * g;
                }
                d_alpha.push(da);
                weighted += a * da;
            }
            for ((e, &j), &da) in range.clone().zip(srcs).zip(&d_alpha) {
                let a = cache.alpha[[e, h]];
                let de = a * (da - weighted);
                let dp = if cache.pre[[e, h]] > 0.0 {
                    de
                } else {
                    LEAKY_SLOPE * de
                };
                d_s_src[[j, h]] += dp;
                d_s_dst[[i, h]] += dp;
            }
        }
    }

    let mut d_attn_src = Array2::<f64>::zeros((heads, dim));
    let mut d_attn_dst = Array2::<f64>::zeros((heads, dim));
    for h in 0..heads {
        let cols = s![.., h * dim..(h + 1) * dim];
        let zh = z.slice(cols);
        d_attn_src.row_mut(h).assign(&zh.t().dot(&d_s_src.column(h)));
        d_attn_dst.row_mut(h).assign(&zh.t().dot(&d_s_dst.column(h)));
        let mut dzh = d_z.slice_mut(cols);
        for i in 0..n {
            let (gs, gd) = (d_s_src[[i, h]], d_s_dst[[i, h]]);
            for d in 0..dim {
                dzh[[i, d]] += gs * params.attn_src[[h, d]] + gd * params.attn_dst[[h, d]];
            }
        }
    }

    let d_weight = cache.input.t().dot(&d_z);
    let d_input = need_input_grad.then(|| d_z.dot(&params.weight.t()));
    (
        LayerGrads {
            weight: d_weight,
            attn_src: d_attn_src,
            attn_dst: d_attn_dst,
            bias: d_bias,
            ln_scale: ln_scale_grad,
            ln_shift: ln_shift_grad,
        },
        d_input,
    )
}
