//! U-Net shadow-matte generator and its composite L1 + BCE objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::compute::ShadowMatte;
use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Image};
use crate::numerics::{no_grad, Tensor};
use crate::params::{Init, ParamStore};

/// Generator architecture and training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatteGenConfig {
    /// Number of down/up-sampling levels.
    pub depth: usize,
    pub base_channels: usize,
    pub w_l1: f64,
    pub w_bce: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for MatteGenConfig {
    fn default() -> Self {
        MatteGenConfig {
            depth: 4,
            base_channels: 16,
            w_l1: 0.7,
            w_bce: 0.3,
            lr: 5e-6,
            batch_size: 8,
            epochs: 200,
        }
    }
}

impl MatteGenConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.w_l1 + self.w_bce - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "matte loss weights must sum to 1, got {} + {}",
                self.w_l1, self.w_bce
            )));
        }
        if self.w_l1 < 0.0 || self.w_bce < 0.0 {
            return Err(Error::Config("matte loss weights must be non-negative".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.depth == 0 || self.base_channels == 0 || self.batch_size == 0 {
            return Err(Error::Config("depth, base_channels and batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Closed-form parameter count of the network this config builds.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let mut total = 0;
        let mut cin = 3;
        for level in 0..self.depth {
            let c = self.channels(level);
            total += conv(cin, c, 3) + conv(c, c, 3);
            cin = c;
        }
        let cb = self.channels(self.depth);
        total += conv(cin, cb, 3) + conv(cb, cb, 3);
        for level in 0..self.depth {
            let c = self.channels(level);
            total += conv(self.channels(level + 1), c, 3) + conv(2 * c, c, 3) + conv(c, c, 3);
        }
        total + conv(self.base_channels, 1, 1)
    }
}

/// Encoder–decoder with a skip connection at every level.
///
/// Each level is two 3×3 convolutions with ReLU; downsampling is 2×2
/// average pooling, upsampling is nearest-neighbour followed by a 3×3
/// convolution. A 1×1 convolution and sigmoid produce the matte.
#[derive(Debug, Clone)]
pub struct MatteGenerator {
    config: MatteGenConfig,
    params: ParamStore,
}

impl MatteGenerator {
    pub fn new(config: MatteGenConfig, seed: u64) -> Result<MatteGenerator> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut params = ParamStore::new();
        let mut conv = |params: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize| -> Result<()> {
            let fan_in = cin * k * k;
            params.insert(
                format!("{name}.weight"),
                init.he(cout * fan_in, fan_in),
                &[cout, cin, k, k],
                true,
            )?;
            params.insert(format!("{name}.bias"), vec![0.0; cout], &[cout], true)
        };
        let mut cin = 3;
        for level in 0..config.depth {
            let c = config.channels(level);
            conv(&mut params, &format!("enc{level}.conv1"), cin, c, 3)?;
            conv(&mut params, &format!("enc{level}.conv2"), c, c, 3)?;
            cin = c;
        }
        let cb = config.channels(config.depth);
        conv(&mut params, "bottleneck.conv1", cin, cb, 3)?;
        conv(&mut params, "bottleneck.conv2", cb, cb, 3)?;
        for level in (0..config.depth).rev() {
            let c = config.channels(level);
            conv(&mut params, &format!("dec{level}.up"), config.channels(level + 1), c, 3)?;
            conv(&mut params, &format!("dec{level}.conv1"), 2 * c, c, 3)?;
            conv(&mut params, &format!("dec{level}.conv2"), c, c, 3)?;
        }
        conv(&mut params, "head", config.base_channels, 1, 1)?;
        Ok(MatteGenerator { config, params })
    }

    pub fn config(&self) -> &MatteGenConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Same weights, none of them tracking gradients.
    pub fn frozen(&self) -> MatteGenerator {
        MatteGenerator {
            config: self.config.clone(),
            params: self.params.frozen(),
        }
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = 1usize << self.config.depth;
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "matte generator input {h}×{w} is not divisible by 2^{} = {m}; pad or resize to a multiple of {m}",
                self.config.depth
            )));
        }
        Ok(())
    }

    fn conv(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        x.conv2d(
            self.params.get(&format!("{name}.weight"))?,
            Some(self.params.get(&format!("{name}.bias"))?),
        )
    }

    /// `[3, H, W]` sRGB tensor to a `[1, H, W]` matte in (0, 1).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match *x.shape() {
            [3, h, w] => self.check_input(h, w)?,
            _ => {
                return Err(Error::Shape(format!(
                    "matte generator expects [3, H, W] input, got {:?}",
                    x.shape()
                )))
            }
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for level in 0..self.config.depth {
            h = self.conv(&h, &format!("enc{level}.conv1"))?.relu();
            h = self.conv(&h, &format!("enc{level}.conv2"))?.relu();
            skips.push(h.clone());
            h = h.avg_pool2()?;
        }
        h = self.conv(&h, "bottleneck.conv1")?.relu();
        h = self.conv(&h, "bottleneck.conv2")?.relu();
        for level in (0..self.config.depth).rev() {
            h = self.conv(&h.upsample_nearest2()?, &format!("dec{level}.up"))?.relu();
            h = Tensor::concat(&[h, skips[level].clone()], 0)?;
            h = self.conv(&h, &format!("dec{level}.conv1"))?.relu();
            h = self.conv(&h, &format!("dec{level}.conv2"))?.relu();
        }
        Ok(self.conv(&h, "head")?.sigmoid())
    }

    /// Inference on an sRGB image; no graph is recorded.
    pub fn predict(&self, shadow: &Image) -> Result<ShadowMatte> {
        if shadow.space() != ColorSpace::Srgb {
            return Err(Error::Format(format!("matte generator expects sRGB input, got {:?}", shadow.space())));
        }
        let out = no_grad(|| self.forward(shadow.pixels()))?;
        ShadowMatte::new(out, 0.0)
    }
}

/// Composite matte objective with its two terms.
#[derive(Debug, Clone)]
pub struct MatteLoss {
    pub total: Tensor,
    pub l1: f64,
    pub bce: f64,
}

const BCE_CLAMP: f64 = 1e-7;

/// `w_l1 · mean|pred − target| + w_bce · mean BCE(pred, target)`, with the
/// BCE input clamped to `[1e-7, 1 − 1e-7]`.
pub fn matte_loss(pred: &Tensor, target: &Tensor, config: &MatteGenConfig) -> Result<MatteLoss> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "matte loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let l1 = pred.sub(target)?.abs().mean_all();
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let pos = target.mul(&p.log()?)?;
    let neg = target.rsub_scalar(1.0).mul(&p.rsub_scalar(1.0).log()?)?;
    let bce = pos.add(&neg)?.mean_all().neg();
    let total = l1.mul_scalar(config.w_l1).add(&bce.mul_scalar(config.w_bce))?;
    Ok(MatteLoss {
        l1: l1.item()?,
        bce: bce.item()?,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradient_check, DEFAULT_STEP};
    use rand::Rng;

    fn small() -> MatteGenConfig {
        MatteGenConfig {
            depth: 2,
            base_channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_follow_recipe() {
        let c = MatteGenConfig::default();
        assert_eq!((c.w_l1, c.w_bce, c.lr, c.batch_size, c.epochs), (0.7, 0.3, 5e-6, 8, 200));
        c.validate().unwrap();
        let bad = MatteGenConfig { w_l1: 0.6, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = MatteGenConfig { lr: 0.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn output_shape_and_range() {
        let g = MatteGenerator::new(small(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(&[3, 8, 12], |_| rng.gen());
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 8, 12]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indivisible_input_suggests_padding() {
        let g = MatteGenerator::new(small(), 1).unwrap();
        let err = g.forward(&Tensor::zeros(&[3, 6, 8])).unwrap_err().to_string();
        assert!(err.contains("multiple of 4"), "{err}");
    }

    #[test]
    fn param_count_closed_form() {
        for (depth, base) in [(1, 2), (2, 4), (4, 16)] {
            let cfg = MatteGenConfig {
                depth,
                base_channels: base,
                ..Default::default()
            };
            let g = MatteGenerator::new(cfg.clone(), 0).unwrap();
            assert_eq!(g.params().trainable_count(), cfg.param_count());
        }
    }

    #[test]
    fn loss_closed_forms() {
        let cfg = MatteGenConfig::default();
        let half = Tensor::full(&[1, 2, 2], 0.5);
        let l = matte_loss(&half, &half, &cfg).unwrap();
        assert!((l.total.item().unwrap() - 0.3 * 2f64.ln()).abs() < 1e-12);
        assert!((l.total.item().unwrap() - 0.2079).abs() < 1e-4);

        let t = Tensor::new(vec![0.0, 1.0, 1.0, 0.0], &[1, 2, 2]).unwrap();
        let l = matte_loss(&t, &t, &cfg).unwrap();
        assert!(l.total.item().unwrap() < 1e-6);

        assert!(matches!(matte_loss(&half, &Tensor::zeros(&[1, 2, 3]), &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = MatteGenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = Tensor::from_fn(&[1, 4, 4], |_| rng.gen());
        // keep |pred − target| away from the L1 kink
        let pred = Tensor::from_fn(&[1, 4, 4], |i| {
            let t = target.data()[i];
            if t > 0.5 { t - 0.2 } else { t + 0.2 }
        });
        let err = gradient_check(|p| Ok(matte_loss(p, &target, &cfg)?.total), &pred, DEFAULT_STEP).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn generator_gradient_check() {
        let cfg = MatteGenConfig {
            depth: 1,
            base_channels: 2,
            ..Default::default()
        };
        let g = MatteGenerator::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(&[3, 4, 4], |_| rng.gen());
        let target = Tensor::from_fn(&[1, 4, 4], |_| rng.gen());
        let err = gradient_check(
            |input| Ok(matte_loss(&g.forward(input)?, &target, &cfg)?.total.mul_scalar(100.0)),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }
}
