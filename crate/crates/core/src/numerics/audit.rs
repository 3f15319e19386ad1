use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{gradient_check, DEFAULT_STEP};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of one finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: String,
    pub rel_err: f64,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(0.5..2.0))
}

/// Random projection so that every output element matters.
fn project(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(t.shape(), &mut rng);
    Ok(t.mul(&w)?.sum_all())
}

struct Audit {
    seed: u64,
    out: Vec<OpCheck>,
}

impl Audit {
    fn check(&mut self, name: &str, f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor) -> Result<()> {
        let seed = self.seed ^ 0x5eed;
        let rel_err = gradient_check(|t| project(&f(t)?, seed), x, DEFAULT_STEP)?;
        self.out.push(OpCheck { name: name.to_string(), rel_err });
        Ok(())
    }
}

/// Central-difference check of every differentiable tensor operation on
/// small random inputs drawn from `seed`.
pub fn gradient_audit(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Audit { seed, out: Vec::new() };

    let x = random(&[3, 4], &mut rng);
    let row = random(&[4], &mut rng);
    let den = positive(&[3, 1], &mut rng);
    a.check("add", |t| t.add(&row), &x)?;
    a.check("add (broadcast operand)", |t| x.add(t), &row)?;
    a.check("sub", |t| row.sub(t), &x)?;
    a.check("mul", |t| t.mul(&row), &x)?;
    a.check("div (numerator)", |t| t.div(&den), &x)?;
    a.check("div (denominator)", |t| x.div(t), &den)?;

    let x = random(&[2, 5], &mut rng);
    let p = positive(&[2, 5], &mut rng);
    // kinks at 0 and at the clamp bounds are avoided
    let off_zero =
        Tensor::from_fn(&[2, 5], |i| if i % 2 == 0 { 0.3 + i as f64 * 0.1 } else { -0.4 - i as f64 * 0.1 });
    a.check("exp", |t| Ok(t.exp()), &x)?;
    a.check("log", |t| t.log(), &p)?;
    a.check("sqrt", |t| t.sqrt(), &p)?;
    a.check("pow", |t| Ok(t.pow_scalar(1.7)), &p)?;
    a.check("square", |t| Ok(t.square()), &x)?;
    a.check("abs", |t| Ok(t.abs()), &off_zero)?;
    a.check("relu", |t| Ok(t.relu()), &off_zero)?;
    a.check("clamp", |t| Ok(t.clamp(-0.35, 0.35)), &off_zero)?;
    a.check("sigmoid", |t| Ok(t.sigmoid()), &x)?;
    a.check("gelu", |t| Ok(t.gelu()), &x)?;
    a.check("scalar affine", |t| Ok(t.mul_scalar(3.0).add_scalar(1.0).rsub_scalar(2.0).neg()), &x)?;

    let l = random(&[4, 5], &mut rng);
    let r = random(&[5, 6], &mut rng);
    a.check("matmul (lhs)", |t| t.matmul(&r), &l)?;
    a.check("matmul (rhs)", |t| l.matmul(t), &r)?;
    let bl = random(&[2, 3, 4], &mut rng);
    let br = random(&[2, 4, 3], &mut rng);
    let shared = random(&[4, 2], &mut rng);
    a.check("batched matmul (lhs)", |t| t.matmul(&br), &bl)?;
    a.check("batched matmul (rhs)", |t| bl.matmul(t), &br)?;
    a.check("batched matmul (shared rhs)", |t| bl.matmul(t), &shared)?;

    let x = random(&[2, 8], &mut rng);
    a.check("layer_norm", |t| t.layer_norm(1e-5), &x)?;
    a.check("softmax (last axis)", |t| t.softmax(1), &x)?;
    a.check("softmax (first axis)", |t| t.softmax(0), &x)?;
    a.check("sum_axes", |t| t.sum_axes(&[0], true), &x)?;
    a.check("mean_axes", |t| t.mean_axes(&[1], false), &x)?;
    a.check("mean_all", |t| Ok(t.mean_all()), &x)?;

    let x = random(&[2, 3, 4], &mut rng);
    let y = random(&[2, 1, 4], &mut rng);
    a.check("reshape", |t| t.reshape(&[6, 4]), &x)?;
    a.check("permute", |t| t.permute(&[2, 0, 1]), &x)?;
    a.check("transpose_last", |t| t.transpose_last(), &x)?;
    a.check("narrow", |t| t.narrow(1, 1, 2), &x)?;
    a.check("concat", |t| Tensor::concat(&[t.clone(), y.clone()], 1), &x)?;

    let x = random(&[2, 6, 6], &mut rng);
    let dk = random(&[2, 5, 5], &mut rng);
    a.check("depthwise conv (input)", |t| t.conv2d_depthwise(&dk), &x)?;
    a.check("depthwise conv (kernel)", |t| x.conv2d_depthwise(t), &dk)?;
    let w = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let w1 = random(&[1, 2, 1, 1], &mut rng);
    a.check("conv2d (input)", |t| t.conv2d(&w, Some(&b)), &x)?;
    a.check("conv2d (weight)", |t| x.conv2d(t, Some(&b)), &w)?;
    a.check("conv2d (bias)", |t| x.conv2d(&w, Some(t)), &b)?;
    a.check("conv2d 1x1", |t| t.conv2d(&w1, None), &x)?;
    a.check("avg_pool2", |t| t.avg_pool2(), &x)?;
    a.check("upsample_nearest2", |t| t.upsample_nearest2(), &x)?;

    let x = random(&[2, 4, 8], &mut rng);
    let odd = random(&[3, 5], &mut rng);
    a.check("spectral_magnitude", |t| t.spectral_magnitude(), &x)?;
    a.check("spectral_magnitude (odd size)", |t| t.spectral_magnitude(), &odd)?;
    Ok(a.out)
}
