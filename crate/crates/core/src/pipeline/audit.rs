use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::{ColorSpace, Image};
use crate::losses::{edge_weight_map, total_loss, LossWeights};
use crate::model::{GuidanceMode, MatteViT, ModelConfig};
use crate::numerics::{gradient_check_many, Tensor};

/// The configuration used by [`end_to_end_gradient_check`]: 8×8 input, one
/// block, matte guidance and HFAM enabled.
pub fn audit_model_config() -> ModelConfig {
    ModelConfig {
        patch_size: 4,
        embed_dim: 8,
        depth: 1,
        num_heads: 2,
        mlp_ratio: 2,
        guidance_mode: GuidanceMode::Matte,
        hfam_enabled: true,
        image_size: 8,
        ..Default::default()
    }
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of the total loss, taken over the input image, the guidance
/// plane and every trainable parameter of a small MatteViT.
///
/// Zero-initialized layers (head, HFAM output) are filled with small random
/// values first so that every path carries gradient.
pub fn end_to_end_gradient_check(seed: u64) -> Result<f64> {
    let cfg = audit_model_config();
    let mut model = MatteViT::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11d);
    for name in ["head.weight", "head.bias", "hfam.fc2.weight", "hfam.fc2.bias", "pos_embed"] {
        let n = model.params().get(name)?.numel();
        let v = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
        model.params_mut().set_data(name, v)?;
    }
    // inputs stay well inside the output clamp
    let rgb = Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(0.35..0.65));
    let guidance = Tensor::from_fn(&[1, 8, 8], |_| rng.gen_range(0.0..1.0));
    let gt = Image::new(ColorSpace::Srgb, Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(0.0..1.0)))?;
    let w = edge_weight_map(&gt, 1.0)?;
    let weights = LossWeights::default();

    let names: Vec<String> = model.params().iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    let mut inputs = vec![rgb, guidance];
    for n in &names {
        inputs.push(model.params().get(n)?.detach());
    }
    gradient_check_many(
        |xs| {
            let mut m = model.clone();
            for (n, t) in names.iter().zip(&xs[2..]) {
                m.params_mut().replace(n, t.clone())?;
            }
            let pred = m.forward(&xs[0], Some(&xs[1]))?;
            Ok(total_loss(&pred, gt.pixels(), &w, &weights)?.total)
        },
        &inputs,
        1e-6,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn end_to_end_gradients_agree() {
        let err = end_to_end_gradient_check(0).unwrap();
        assert!(err < 1e-2, "{err}");
    }
}
