//! Finite-difference checks for every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TOL: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn mul_backward_gives_other_operand() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[2, 3], &mut rng).with_requires_grad(true);
    let b = random(&[2, 3], &mut rng);
    a.mul(&b).unwrap().sum_all().backward().unwrap();
    assert_eq!(a.grad().unwrap(), b.to_vec());

    let err = gradient_check(|t| Ok(t.mul(&b)?.sum_all()), &a, 1e-4).unwrap();
    assert!(err < 1e-6);
}

#[test]
fn every_op_passes_the_audit() {
    for seed in [0, 1, 2] {
        let checks = gradient_audit(seed).unwrap();
        assert!(checks.len() > 40);
        for c in checks {
            assert!(c.rel_err < TOL, "seed {seed} {}: rel err {}", c.name, c.rel_err);
        }
    }
}
