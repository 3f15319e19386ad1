use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{GuidanceMode, ModelConfig};
use super::hfam::{gaussian_kernel, Hfam, HfamTrace};
use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Image};
use crate::matte::{binarize_matte, MatteGenerator, ShadowMatte};
use crate::numerics::{no_grad, Tensor};
use crate::params::{Init, ParamStore};

const LN_EPS: f64 = 1e-5;

/// Stacks the RGB planes and, when guided, the `[1, H, W]` guidance plane.
pub fn assemble_input(shadow: &Tensor, guidance: Option<&Tensor>, mode: GuidanceMode) -> Result<Tensor> {
    let (h, w) = match *shadow.shape() {
        [3, h, w] => (h, w),
        _ => return Err(Error::Shape(format!("expected a [3, H, W] image, got {:?}", shadow.shape()))),
    };
    match (mode.is_guided(), guidance) {
        (false, _) => Ok(shadow.clone()),
        (true, None) => Err(Error::Config(format!("guidance mode {mode} requires a guidance map"))),
        (true, Some(g)) => {
            if g.shape() != [1, h, w] {
                return Err(Error::Shape(format!(
                    "guidance {:?} does not match image [1, {h}, {w}]",
                    g.shape()
                )));
            }
            Tensor::concat(&[shadow.clone(), g.clone()], 0)
        }
    }
}

/// `[C, H, W]` to `[N, C·p²]`, patches in raster order.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Shape(format!("patchify expects [C, H, W], got {:?}", x.shape()))),
    };
    if h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!(
            "image {h}×{w} is not divisible into {p}×{p} patches; resize to a multiple of {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    x.reshape(&[c, gh, p, gw, p])?
        .permute(&[1, 3, 0, 2, 4])?
        .reshape(&[gh * gw, c * p * p])
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, c: usize, p: usize, grid: (usize, usize)) -> Result<Tensor> {
    let (gh, gw) = grid;
    if tokens.shape() != [gh * gw, c * p * p] {
        return Err(Error::Shape(format!(
            "cannot unpatchify {:?} into {c} channels of {p}×{p} patches on a {gh}×{gw} grid",
            tokens.shape()
        )));
    }
    tokens
        .reshape(&[gh, gw, c, p, p])?
        .permute(&[2, 0, 3, 1, 4])?
        .reshape(&[c, gh * p, gw * p])
}

/// The restoration network: patch embedding, optional HFAM, pre-norm
/// transformer blocks and a linear unpatchify head with a global residual.
#[derive(Debug, Clone)]
pub struct MatteViT {
    config: ModelConfig,
    params: ParamStore,
}

/// Per-stage outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Tensor,
    pub hfam: Option<HfamTrace>,
    /// `[heads, N, N]` attention weights for each block.
    pub attention: Vec<Tensor>,
    pub output: Tensor,
}

impl MatteViT {
    pub fn new(config: ModelConfig, seed: u64) -> Result<MatteViT> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut ps = ParamStore::new();
        let d = config.embed_dim;
        let p2 = config.patch_size * config.patch_size;
        let mut linear = |ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| -> Result<()> {
            ps.insert(
                format!("{name}.weight"),
                init.xavier(fan_in * fan_out, fan_in, fan_out),
                &[fan_in, fan_out],
                true,
            )?;
            ps.insert(format!("{name}.bias"), vec![0.0; fan_out], &[fan_out], true)
        };
        linear(&mut ps, "patch", config.input_channels() * p2, d)?;
        ps.insert("pos_embed", vec![0.0; config.num_tokens() * d], &[config.num_tokens(), d], true)?;
        if config.hfam_enabled {
            let k = config.hfam_kernel;
            let g = gaussian_kernel(k, config.hfam_sigma);
            let kernel: Vec<f64> = (0..d).flat_map(|_| g.iter().copied()).collect();
            ps.insert("hfam.kernel", kernel, &[d, k, k], config.hfam_kernel_trainable)?;
            let h = config.hfam_hidden();
            linear(&mut ps, "hfam.fc1", d, h)?;
            ps.insert("hfam.fc2.weight", vec![0.0; h * 2 * d], &[h, 2 * d], true)?;
            ps.insert("hfam.fc2.bias", vec![0.0; 2 * d], &[2 * d], true)?;
        }
        let m = config.mlp_hidden();
        for b in 0..config.depth {
            for ln in ["ln1", "ln2"] {
                ps.insert(format!("block{b}.{ln}.weight"), vec![1.0; d], &[d], true)?;
                ps.insert(format!("block{b}.{ln}.bias"), vec![0.0; d], &[d], true)?;
            }
            linear(&mut ps, &format!("block{b}.qkv"), d, 3 * d)?;
            linear(&mut ps, &format!("block{b}.proj"), d, d)?;
            linear(&mut ps, &format!("block{b}.fc1"), d, m)?;
            linear(&mut ps, &format!("block{b}.fc2"), m, d)?;
        }
        ps.insert("head.weight", vec![0.0; d * 3 * p2], &[d, 3 * p2], true)?;
        ps.insert("head.bias", vec![0.0; 3 * p2], &[3 * p2], true)?;
        Ok(MatteViT { config, params: ps })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn hfam(&self) -> Option<Hfam<'_>> {
        self.config.hfam_enabled.then_some(Hfam { params: &self.params })
    }

    fn linear(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        x.matmul(self.params.get(&format!("{name}.weight"))?)?
            .add(self.params.get(&format!("{name}.bias"))?)
    }

    fn layer_norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        x.layer_norm(LN_EPS)?
            .mul(self.params.get(&format!("{name}.weight"))?)?
            .add(self.params.get(&format!("{name}.bias"))?)
    }

    /// `[Cin, H, W]` to `[N, D]` tokens (projection plus positional embedding).
    pub fn patch_embed(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = (x.shape().get(1).copied(), x.shape().get(2).copied());
        let s = self.config.image_size;
        if h.is_some_and(|h| h % self.config.patch_size == 0) && (h, w) != (Some(s), Some(s)) {
            return Err(Error::Shape(format!(
                "model expects {s}×{s} inputs, got {:?}; resize to the configured image_size",
                x.shape()
            )));
        }
        let patches = patchify(x, self.config.patch_size)?;
        self.linear(&patches, "patch")?.add(self.params.get("pos_embed")?)
    }

    /// Multi-head self-attention on `[N, D]`; also returns the `[heads, N, N]`
    /// weights.
    pub fn attention(&self, x: &Tensor, block: usize) -> Result<(Tensor, Tensor)> {
        let (n, d) = (x.shape()[0], self.config.embed_dim);
        let heads = self.config.num_heads;
        let dh = d / heads;
        let qkv = self
            .linear(x, &format!("block{block}.qkv"))?
            .reshape(&[n, 3, heads, dh])?
            .permute(&[1, 2, 0, 3])?;
        let q = qkv.narrow(0, 0, 1)?.reshape(&[heads, n, dh])?;
        let k = qkv.narrow(0, 1, 1)?.reshape(&[heads, n, dh])?;
        let v = qkv.narrow(0, 2, 1)?.reshape(&[heads, n, dh])?;
        let scores = q.matmul(&k.transpose_last()?)?.mul_scalar(1.0 / (dh as f64).sqrt());
        let weights = scores.softmax(2)?;
        let mixed = weights.matmul(&v)?.permute(&[1, 0, 2])?.reshape(&[n, d])?;
        Ok((self.linear(&mixed, &format!("block{block}.proj"))?, weights))
    }

    /// Pre-norm transformer block; returns new tokens and attention weights.
    pub fn transformer_block(&self, x: &Tensor, block: usize) -> Result<(Tensor, Tensor)> {
        let (attn, weights) = self.attention(&self.layer_norm(x, &format!("block{block}.ln1"))?, block)?;
        let x = x.add(&attn)?;
        let hidden = self
            .linear(&self.layer_norm(&x, &format!("block{block}.ln2"))?, &format!("block{block}.fc1"))?
            .gelu();
        let x = x.add(&self.linear(&hidden, &format!("block{block}.fc2"))?)?;
        Ok((x, weights))
    }

    /// Head projection, unpatchify, global residual to `rgb`, clamp to [0, 1].
    pub fn reconstruct(&self, tokens: &Tensor, rgb: &Tensor) -> Result<Tensor> {
        let p = self.config.patch_size;
        let out = self.linear(tokens, "head")?;
        let img = unpatchify(&out, 3, p, self.config.grid())?;
        Ok(img.add(rgb)?.clamp(0.0, 1.0))
    }

    pub fn forward_traced(&self, rgb: &Tensor, guidance: Option<&Tensor>) -> Result<ForwardTrace> {
        let x = assemble_input(rgb, guidance, self.config.guidance_mode)?;
        let mut tokens = self.patch_embed(&x)?;
        let embedded = tokens.clone();
        let hfam = match self.hfam() {
            Some(h) => {
                let trace = h.forward_traced(&tokens, self.config.grid())?;
                tokens = trace.output.clone();
                Some(trace)
            }
            None => None,
        };
        let mut attention = Vec::with_capacity(self.config.depth);
        for b in 0..self.config.depth {
            let (t, w) = self.transformer_block(&tokens, b)?;
            tokens = t;
            attention.push(w);
        }
        let output = self.reconstruct(&tokens, rgb)?;
        Ok(ForwardTrace {
            tokens: embedded,
            hfam,
            attention,
            output,
        })
    }

    /// `[3, H, W]` shadow image (plus guidance when the mode needs it) to the
    /// `[3, H, W]` restored image.
    pub fn forward(&self, rgb: &Tensor, guidance: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_traced(rgb, guidance)?.output)
    }

    /// Full inference on an sRGB image; the matte generator is only used when
    /// the configured mode is guided.
    pub fn predict(&self, shadow: &Image, generator: Option<&MatteGenerator>, threshold: f64) -> Result<Image> {
        if shadow.space() != ColorSpace::Srgb {
            return Err(Error::Format(format!("expected an sRGB image, got {:?}", shadow.space())));
        }
        let guidance = guidance_map(self.config.guidance_mode, shadow, generator, threshold)?;
        let out = no_grad(|| self.forward(shadow.pixels(), guidance.as_ref()))?;
        Image::new(ColorSpace::Srgb, out)
    }
}

/// Guidance plane for `mode`: the frozen generator's matte, its
/// thresholded mask, or nothing.
pub fn guidance_map(
    mode: GuidanceMode,
    shadow: &Image,
    generator: Option<&MatteGenerator>,
    threshold: f64,
) -> Result<Option<Tensor>> {
    if !mode.is_guided() {
        return Ok(None);
    }
    let gen = generator.ok_or_else(|| {
        Error::Config(format!("guidance mode {mode} needs a trained matte generator"))
    })?;
    let matte = gen.predict(shadow)?;
    Ok(Some(guidance_from_matte(mode, &matte, threshold)?))
}

pub fn guidance_from_matte(mode: GuidanceMode, matte: &ShadowMatte, threshold: f64) -> Result<Tensor> {
    match mode {
        GuidanceMode::Binary => Ok(binarize_matte(matte, threshold)?.values().clone()),
        _ => Ok(matte.values().clone()),
    }
}
