//! Spatial operators on `[C, H, W]` feature maps.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const PAD: usize = usize::MAX;

/// Output element `i` copies `src[map[i]]`, or is zero where `map[i] == PAD`.
fn gather(name: &'static str, src: &Tensor, shape: Vec<usize>, map: Vec<usize>) -> Tensor {
    let data = map
        .iter()
        .map(|&i| if i == PAD { 0.0 } else { src.data()[i] })
        .collect();
    let map = Arc::new(map);
    let len = src.numel();
    Tensor::from_op(
        name,
        shape,
        data,
        vec![src.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; len];
            for (gi, &i) in g.iter().zip(map.iter()) {
                if i != PAD {
                    gx[i] += gi;
                }
            }
            vec![Some(gx)]
        }),
    )
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!(
            "{what} expects a [C, H, W] tensor, got {:?}",
            t.shape()
        ))),
    }
}

impl Tensor {
    /// Per-channel 2-D convolution with zero padding and unchanged spatial
    /// size. `kernel` is `[C, k, k]` with odd `k`; channel `c` of the output
    /// depends only on channel `c` of the input. This is a true convolution
    /// (flipped kernel), so an impulse reproduces the kernel around it.
    pub fn conv2d_depthwise(&self, kernel: &Tensor) -> Result<Tensor> {
        let (c, h, w) = chw(self, "conv2d_depthwise")?;
        let k = match *kernel.shape() {
            [kc, k1, k2] if kc == c && k1 == k2 => k1,
            _ => {
                return Err(Error::Shape(format!(
                    "depthwise kernel must be [{c}, k, k], got {:?}",
                    kernel.shape()
                )))
            }
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!("depthwise kernel size must be odd, got {k}")));
        }
        let r = k as isize / 2;
        let (hi, wi) = (h as isize, w as isize);
        let x = self.data();
        let kd = kernel.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let xs = &x[ch * h * w..(ch + 1) * h * w];
            let ks = &kd[ch * k * k..(ch + 1) * k * k];
            let os = &mut out[ch * h * w..(ch + 1) * h * w];
            for y in 0..hi {
                for xx in 0..wi {
                    let mut acc = 0.0;
                    for i in 0..k as isize {
                        let sy = y - i + r;
                        if sy < 0 || sy >= hi {
                            continue;
                        }
                        for j in 0..k as isize {
                            let sx = xx - j + r;
                            if sx < 0 || sx >= wi {
                                continue;
                            }
                            acc += ks[(i * k as isize + j) as usize] * xs[(sy * wi + sx) as usize];
                        }
                    }
                    os[(y * wi + xx) as usize] = acc;
                }
            }
        }
        let (xc, kc) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            "conv2d_depthwise",
            vec![c, h, w],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, _| {
                let x = xc.data();
                let kd = kc.data();
                let mut gx = xc.requires_grad().then(|| vec![0.0; x.len()]);
                let mut gk = kc.requires_grad().then(|| vec![0.0; kd.len()]);
                for ch in 0..c {
                    for y in 0..hi {
                        for xx in 0..wi {
                            let go = g[ch * h * w + (y * wi + xx) as usize];
                            if go == 0.0 {
                                continue;
                            }
                            for i in 0..k as isize {
                                let sy = y - i + r;
                                if sy < 0 || sy >= hi {
                                    continue;
                                }
                                for j in 0..k as isize {
                                    let sx = xx - j + r;
                                    if sx < 0 || sx >= wi {
                                        continue;
                                    }
                                    let xi = ch * h * w + (sy * wi + sx) as usize;
                                    let ki = ch * k * k + (i * k as isize + j) as usize;
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xi] += go * kd[ki];
                                    }
                                    if let Some(gk) = gk.as_mut() {
                                        gk[ki] += go * x[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![gx, gk]
            }),
        ))
    }

    /// Patch matrix for a `k×k` "same" cross-correlation:
    /// `[C·k·k, H·W]`, zero outside the image.
    pub fn im2col(&self, k: usize) -> Result<Tensor> {
        let (c, h, w) = chw(self, "im2col")?;
        if k % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {k}")));
        }
        let r = (k / 2) as isize;
        let mut map = Vec::with_capacity(c * k * k * h * w);
        for ch in 0..c {
            for i in 0..k as isize {
                for j in 0..k as isize {
                    for y in 0..h as isize {
                        let sy = y + i - r;
                        for x in 0..w as isize {
                            let sx = x + j - r;
                            if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                map.push(PAD);
                            } else {
                                map.push(ch * h * w + (sy as usize) * w + sx as usize);
                            }
                        }
                    }
                }
            }
        }
        Ok(gather("im2col", self, vec![c * k * k, h * w], map))
    }

    /// Dense "same" 2-D cross-correlation. `weight` is `[Cout, Cin, k, k]`,
    /// `bias` is `[Cout]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (cin, h, w) = chw(self, "conv2d")?;
        let (cout, k) = match *weight.shape() {
            [co, ci, k1, k2] if ci == cin && k1 == k2 => (co, k1),
            _ => {
                return Err(Error::Shape(format!(
                    "conv2d weight must be [Cout, {cin}, k, k], got {:?}",
                    weight.shape()
                )))
            }
        };
        let cols = if k == 1 {
            self.reshape(&[cin, h * w])?
        } else {
            self.im2col(k)?
        };
        let wm = weight.reshape(&[cout, cin * k * k])?;
        let mut out = wm.matmul(&cols)?.reshape(&[cout, h, w])?;
        if let Some(b) = bias {
            out = out.add(&b.reshape(&[cout, 1, 1])?)?;
        }
        Ok(out)
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        let (c, h, w) = chw(self, "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "avg_pool2 needs even spatial size, got {h}×{w}; pad to a multiple of 2"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out[ch * oh * ow + y * ow + xx] =
                        0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        Ok(Tensor::from_op(
            "avg_pool2",
            vec![c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let v = 0.25 * g[ch * oh * ow + y * ow + xx];
                            let base = ch * h * w + 2 * y * w + 2 * xx;
                            gx[base] += v;
                            gx[base + 1] += v;
                            gx[base + w] += v;
                            gx[base + w + 1] += v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2(&self) -> Result<Tensor> {
        let (c, h, w) = chw(self, "upsample_nearest2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut map = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    map.push(ch * h * w + (y / 2) * w + x / 2);
                }
            }
        }
        Ok(gather("upsample_nearest2", self, vec![c, oh, ow], map))
    }
}
