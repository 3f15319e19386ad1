//! Broadcasting binary arithmetic and pointwise unary functions.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Element-wise operation kinds. Binary kinds broadcast under trailing
/// dimension alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow(f64),
    Sqrt,
    Abs,
    Exp,
    Log,
    Clamp(f64, f64),
}

/// Operand for [`Tensor::elementwise`]: another tensor or a plain scalar.
#[derive(Debug, Clone)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

/// Shape obtained by aligning trailing dimensions; a size-1 dimension
/// stretches to match the other side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape(format!(
                    "shapes {a:?} and {b:?} are not broadcast-compatible"
                )))
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index of the element of
/// `in_shape` it reads under broadcasting. `in_shape` must broadcast to
/// `out_shape`.
pub(crate) fn broadcast_index_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            in_strides[i + offset] = stride;
        }
        stride *= in_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for d in (0..rank).rev() {
            counter[d] += 1;
            pos += in_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            pos -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// Sum `grad` (laid out in `out_shape`) back down to `in_shape`.
fn reduce_to(grad: Vec<f64>, map: Option<&[usize]>, in_len: usize) -> Vec<f64> {
    match map {
        None => grad,
        Some(map) => {
            let mut out = vec![0.0; in_len];
            for (g, &i) in grad.iter().zip(map) {
                out[i] += g;
            }
            out
        }
    }
}

type Binary = fn(f64, f64) -> f64;

fn binary(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: Binary,
    da: Binary,
    db: Binary,
) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let map_a = (a.shape() != shape.as_slice()).then(|| Arc::new(broadcast_index_map(a.shape(), &shape)));
    let map_b = (b.shape() != shape.as_slice()).then(|| Arc::new(broadcast_index_map(b.shape(), &shape)));
    let total: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = match (&map_a, &map_b) {
        (None, None) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        _ => (0..total)
            .map(|i| {
                let x = match &map_a {
                    Some(m) => ad[m[i]],
                    None => ad[i],
                };
                let y = match &map_b {
                    Some(m) => bd[m[i]],
                    None => bd[i],
                };
                f(x, y)
            })
            .collect(),
    };
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        name,
        shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out| {
            let (ad, bd) = (ac.data(), bc.data());
            let fetch = |i: usize| {
                let x = match &map_a {
                    Some(m) => ad[m[i]],
                    None => ad[i],
                };
                let y = match &map_b {
                    Some(m) => bd[m[i]],
                    None => bd[i],
                };
                (x, y)
            };
            let ga = ac.requires_grad().then(|| {
                let full: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let (x, y) = fetch(i);
                        gi * da(x, y)
                    })
                    .collect();
                reduce_to(full, map_a.as_deref().map(Vec::as_slice), ac.numel())
            });
            let gb = bc.requires_grad().then(|| {
                let full: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let (x, y) = fetch(i);
                        gi * db(x, y)
                    })
                    .collect();
                reduce_to(full, map_b.as_deref().map(Vec::as_slice), bc.numel())
            });
            vec![ga, gb]
        }),
    ))
}

/// Pointwise map with derivative expressed through input `x` and output `y`.
fn unary(
    name: &'static str,
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    let ac = a.clone();
    Tensor::from_op(
        name,
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |g, out| {
            let gx = g
                .iter()
                .zip(ac.data())
                .zip(out)
                .map(|((&gi, &x), &y)| gi * df(x, y))
                .collect();
            vec![Some(gx)]
        }),
    )
}

fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

impl Tensor {
    /// Dispatches an [`ElementwiseOp`]. Unary kinds ignore `rhs`; binary kinds
    /// require it.
    pub fn elementwise<'a>(&self, op: ElementwiseOp, rhs: Option<Operand<'a>>) -> Result<Tensor> {
        use ElementwiseOp::*;
        let need_rhs = || {
            rhs.clone()
                .ok_or_else(|| Error::Contract(format!("{op:?} needs a right-hand operand")))
        };
        let as_tensor = |o: Operand<'_>| match o {
            Operand::Tensor(t) => t.clone(),
            Operand::Scalar(v) => Tensor::scalar(v),
        };
        match op {
            Add => self.add(&as_tensor(need_rhs()?)),
            Sub => self.sub(&as_tensor(need_rhs()?)),
            Mul => self.mul(&as_tensor(need_rhs()?)),
            Div => self.div(&as_tensor(need_rhs()?)),
            Pow(p) => Ok(self.pow_scalar(p)),
            Sqrt => self.sqrt(),
            Abs => Ok(self.abs()),
            Exp => Ok(self.exp()),
            Log => self.log(),
            Clamp(lo, hi) => Ok(self.clamp(lo, hi)),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Division; an exact-zero denominator is a domain error.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain(format!(
                "division by exact zero in denominator of shape {:?}",
                other.shape()
            )));
        }
        binary("div", self, other, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        unary("add_scalar", self, |x| x + s, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        unary("mul_scalar", self, |x| x * s, move |_, _| s)
    }

    /// `s - self`
    pub fn rsub_scalar(&self, s: f64) -> Tensor {
        unary("rsub_scalar", self, |x| s - x, |_, _| -1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn pow_scalar(&self, p: f64) -> Tensor {
        unary("pow", self, |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn square(&self) -> Tensor {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {v}")));
        }
        Ok(unary("sqrt", self, f64::sqrt, |_, y| 0.5 / y))
    }

    pub fn abs(&self) -> Tensor {
        unary("abs", self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {v}")));
        }
        Ok(unary("log", self, f64::ln, |x, _| 1.0 / x))
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input lies inside
    /// the closed interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(
            "clamp",
            self,
            |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary("sigmoid", self, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        unary("relu", self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        unary("gelu", self, gelu_value, |x, _| gelu_derivative(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_broadcast_multiply() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let out = a.elementwise(ElementwiseOp::Mul, Some(2.0.into())).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn add_zeros_is_identity() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.7 - 1.0);
        let y = x.add(&Tensor::zeros_like(&x)).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn incompatible_shapes_name_both() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let a = Tensor::ones(&[2]);
        let b = Tensor::new(vec![1.0, 0.0], &[2]).unwrap();
        assert!(matches!(a.div(&b), Err(Error::Domain(_))));
        assert!(matches!(a.neg().log(), Err(Error::Domain(_))));
        assert!(matches!(a.neg().sqrt(), Err(Error::Domain(_))));
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let x = Tensor::param(vec![1.0; 6], &[2, 3]).unwrap();
        let b = Tensor::param(vec![0.0; 3], &[3]).unwrap();
        x.add(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let x = Tensor::param(vec![-0.5, 0.5, 1.5], &[3]).unwrap();
        x.clamp(0.0, 1.0).sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    /// Reference broadcast: explicit multi-index arithmetic.
    fn naive_broadcast_add(a: &Tensor, b: &Tensor, out_shape: &[usize]) -> Vec<f64> {
        let rank = out_shape.len();
        let total: usize = out_shape.iter().product();
        let index_into = |shape: &[usize], idx: &[usize]| -> usize {
            let off = rank - shape.len();
            let mut flat = 0;
            for (d, &size) in shape.iter().enumerate() {
                let i = if size == 1 { 0 } else { idx[d + off] };
                flat = flat * size + i;
            }
            flat
        };
        (0..total)
            .map(|mut f| {
                let mut idx = vec![0; rank];
                for d in (0..rank).rev() {
                    idx[d] = f % out_shape[d];
                    f /= out_shape[d];
                }
                a.data()[index_into(a.shape(), &idx)] + b.data()[index_into(b.shape(), &idx)]
            })
            .collect()
    }

    fn shape_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        prop::collection::vec(1usize..4, 1..4).prop_flat_map(|out| {
            let n = out.len();
            (
                Just(out.clone()),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
                0..=n,
            )
                .prop_map(|(out, ones_a, ones_b, drop)| {
                    let a: Vec<usize> = out
                        .iter()
                        .zip(&ones_a)
                        .map(|(&d, &one)| if one { 1 } else { d })
                        .collect();
                    let b: Vec<usize> = out
                        .iter()
                        .zip(&ones_b)
                        .map(|(&d, &one)| if one { 1 } else { d })
                        .skip(drop.min(out.len() - 1))
                        .collect();
                    (a, b)
                })
        })
    }

    proptest! {
        #[test]
        fn broadcast_matches_trailing_alignment((sa, sb) in shape_pair()) {
            let a = Tensor::from_fn(&sa, |i| i as f64 + 0.5);
            let b = Tensor::from_fn(&sb, |i| 100.0 * i as f64);
            let out_shape = broadcast_shape(&sa, &sb).unwrap();
            let got = a.add(&b).unwrap();
            prop_assert_eq!(got.shape(), out_shape.as_slice());
            prop_assert_eq!(got.to_vec(), naive_broadcast_add(&a, &b, &out_shape));
        }
    }
}
