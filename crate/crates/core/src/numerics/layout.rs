//! Shape manipulation: reshape, permute, narrow, concat.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Scatter-style backward for ops whose output element `i` is a copy of input
/// element `map[i]`.
fn gather_backward(map: Arc<Vec<usize>>, in_len: usize) -> super::tensor::BackwardFn {
    Box::new(move |g, _| {
        let mut gx = vec![0.0; in_len];
        for (gi, &src) in g.iter().zip(map.iter()) {
            gx[src] += gi;
        }
        vec![Some(gx)]
    })
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!(
                "invalid permutation {axes:?} for shape {:?}",
                self.shape()
            )));
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let total = self.numel();
        let mut map = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        let mut pos = 0usize;
        for _ in 0..total {
            map.push(pos);
            for d in (0..rank).rev() {
                counter[d] += 1;
                pos += strides[d];
                if counter[d] < out_shape[d] {
                    break;
                }
                pos -= strides[d] * counter[d];
                counter[d] = 0;
            }
        }
        let data = map.iter().map(|&i| self.data()[i]).collect();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            gather_backward(Arc::new(map), total),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::Shape(format!(
                "transpose needs rank >= 2, got {:?}",
                self.shape()
            )));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::Shape(format!(
                "narrow(axis {axis}, {start}..{}) out of range for {:?}",
                start + len,
                self.shape()
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let dim = self.shape()[axis];
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            map.extend(base..base + len * inner);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let data = map.iter().map(|&i| self.data()[i]).collect();
        Ok(Tensor::from_op(
            "narrow",
            shape,
            data,
            vec![self.clone()],
            gather_backward(Arc::new(map), self.numel()),
        ))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Shape("concat of an empty list".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Shape(format!(
                "concat axis {axis} out of range for {:?}",
                first.shape()
            )));
        }
        for t in tensors {
            let compatible = t.rank() == rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!(
                    "cannot concat {:?} with {:?} along axis {axis}",
                    first.shape(),
                    t.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let chunks: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let total_axis: usize = tensors.iter().map(|t| t.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (t, &c) in tensors.iter().zip(&chunks) {
                data.extend_from_slice(&t.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_axis;
        let sizes: Vec<usize> = tensors.iter().map(Tensor::numel).collect();
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            tensors.to_vec(),
            Box::new(move |g, _| {
                let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
                let row: usize = chunks.iter().sum();
                for o in 0..outer {
                    let mut off = o * row;
                    for (gt, &c) in grads.iter_mut().zip(&chunks) {
                        gt.extend_from_slice(&g[off..off + c]);
                        off += c;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_manual_transpose() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let t = a.transpose_last().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_rejects_duplicates() {
        let a = Tensor::zeros(&[2, 3, 4]);
        assert!(a.permute(&[0, 0, 1]).is_err());
        assert!(a.permute(&[0, 1]).is_err());
    }

    #[test]
    fn narrow_and_concat_invert() {
        let a = Tensor::from_fn(&[2, 5, 3], |i| i as f64);
        let left = a.narrow(1, 0, 2).unwrap();
        let right = a.narrow(1, 2, 3).unwrap();
        let back = Tensor::concat(&[left, right], 1).unwrap();
        assert_eq!(back.data(), a.data());
    }

    #[test]
    fn concat_gradient_splits() {
        let a = Tensor::param(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::param(vec![3.0, 4.0, 5.0, 6.0], &[2, 2]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 0).unwrap();
        let w = Tensor::from_fn(&[3, 2], |i| i as f64);
        c.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 3.0, 4.0, 5.0]);
    }
}
