//! Reductions, softmax and layer normalization.

use std::sync::Arc;

use super::elementwise::broadcast_index_map;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check_axis(t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Splits a shape around `axis` into (outer, dim, inner) extents.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum_all",
            Vec::new(),
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        let total: f64 = self.data().iter().sum();
        let len = self.numel();
        Tensor::from_op(
            "mean_all",
            Vec::new(),
            vec![total / n],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0] / n; len])]),
        )
    }

    /// Sum over `axes`. With `keepdim` the reduced axes stay as size 1.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        self.reduce_axes("sum_axes", axes, keepdim, 1.0)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        self.reduce_axes("mean_axes", axes, keepdim, 1.0 / count as f64)
    }

    fn reduce_axes(&self, name: &'static str, axes: &[usize], keepdim: bool, scale: f64) -> Result<Tensor> {
        for &a in axes {
            check_axis(self, a)?;
        }
        let kept: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .map(|(d, &s)| if axes.contains(&d) { 1 } else { s })
            .collect();
        let map = Arc::new(broadcast_index_map(&kept, self.shape()));
        let out_len: usize = kept.iter().product();
        let mut data = vec![0.0; out_len];
        for (&x, &o) in self.data().iter().zip(map.iter()) {
            data[o] += x;
        }
        data.iter_mut().for_each(|v| *v *= scale);
        let shape = if keepdim {
            kept
        } else {
            self.shape()
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &s)| s)
                .collect()
        };
        Ok(Tensor::from_op(
            name,
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(map.iter().map(|&o| g[o] * scale).collect())]),
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        let (outer, dim, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * dim + k) * inner + i;
                let max = (0..dim).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..dim {
                    let e = (x[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    sum += e;
                }
                for k in 0..dim {
                    out[idx(k)] /= sum;
                }
            }
        }
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * dim + k) * inner + i;
                        let dot: f64 = (0..dim).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..dim {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalizes each row of the last axis to zero mean and unit (biased)
    /// variance. Affine scale and shift are applied separately by callers.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::Shape("layer_norm needs rank >= 1".into()));
        }
        let d = *self.shape().last().expect("rank >= 1");
        let rows = self.numel() / d;
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for k in 0..d {
                        gx[r * d + k] = inv_std[r] * (gr[k] - mean_g - yr[k] * mean_gy);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
