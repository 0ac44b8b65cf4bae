//! Every differentiable op against central differences over 20 seeds.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snippetgraph_core::tensor::{grad_check, BinnedPlan, SparseColumns};
use snippetgraph_core::{Result, Tensor};

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    let n = shape.iter().product();
    // Offset away from zero so relu/clip kinks are never straddled.
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::param(shape, random(rng, shape)).unwrap()
}

fn constant(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape, random(rng, shape)).unwrap()
}

/// Reduces any tensor to a scalar with fixed random weights so every
/// output element receives a distinct upstream gradient.
fn project(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = Tensor::new(y.shape(), random(&mut rng, y.shape()))?;
    Ok(y.mul(&w)?.sum())
}

fn check_seeds(name: &str, mut case: impl FnMut(u64) -> f64) {
    for seed in 0..20 {
        let err = case(seed);
        assert!(err < TOL, "{name}: seed {seed} relative error {err:e}");
    }
}

#[test]
fn matmul_both_operands() {
    check_seeds("matmul", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = param(&mut rng, &[3, 4]);
        let b = param(&mut rng, &[4, 2]);
        let f = || project(&a.matmul(&b)?, seed);
        grad_check(f, &a, H)
            .unwrap()
            .max(grad_check(f, &b, H).unwrap())
    });
}

#[test]
fn sum_of_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = param(&mut rng, &[4, 3]);
    let b = constant(&mut rng, &[3, 5]);
    let err = grad_check(|| Ok(a.matmul(&b)?.sum()), &a, H).unwrap();
    assert!(err < TOL);
}

#[test]
fn elementwise_arithmetic() {
    check_seeds("add/sub/mul/scale", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = param(&mut rng, &[2, 3]);
        let b = param(&mut rng, &[2, 3]);
        let f = || {
            let y = a.add(&b)?.mul(&a.sub(&b)?)?.scale(1.7);
            project(&y, seed)
        };
        grad_check(f, &a, H)
            .unwrap()
            .max(grad_check(f, &b, H).unwrap())
    });
}

#[test]
fn bias_relu_sigmoid_square() {
    check_seeds("bias/relu/sigmoid/square", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = param(&mut rng, &[3, 4]);
        let b = param(&mut rng, &[4]);
        let f = || {
            let y = x.add_bias(&b)?;
            let z = Tensor::concat(&[y.relu(), y.sigmoid(), y.square()], 1)?;
            project(&z, seed)
        };
        // Keep relu inputs clear of zero.
        let pre = x.add_bias(&b).unwrap();
        if pre.data().iter().any(|v| v.abs() < 1e-3) {
            return 0.0;
        }
        grad_check(f, &x, H)
            .unwrap()
            .max(grad_check(f, &b, H).unwrap())
    });
}

#[test]
fn reductions_and_reshaping() {
    check_seeds("mean_axis/concat/slice/transpose/reshape", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = param(&mut rng, &[2, 3, 4]);
        let f = || {
            let m0 = x.mean_axis(0)?; // 3×4
            let m2 = x.mean_axis(2)?; // 2×3
            let s = x.slice(1, 1, 3)?.reshape(&[4, 4])?; // 2×2×4 → 4×4
            let t = m2.transpose()?; // 3×2
            let joined = Tensor::concat(&[m0, t], 1)?; // 3×6
            Ok(project(&joined, seed)?.add(&project(&s, seed + 1)?)?)
        };
        grad_check(f, &x, H).unwrap()
    });
}

#[test]
fn sparse_mix() {
    check_seeds("sparse_mix", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = param(&mut rng, &[3, 5]);
        let cols = (0..4)
            .map(|_| {
                (0..3)
                    .map(|_| (rng.random_range(0..5), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let mix = Rc::new(SparseColumns::new(5, cols).unwrap());
        grad_check(|| project(&x.sparse_mix(&mix)?, seed), &x, H).unwrap()
    });
}

#[test]
fn grouped_conv1d_input_and_weight() {
    check_seeds("grouped_conv1d", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = [1, 2, 4][seed as usize % 3];
        let x = param(&mut rng, &[4, 6]);
        let w = param(&mut rng, &[3, 4 / groups, 8]);
        let f = || project(&x.grouped_conv1d(&w, groups, 1)?, seed);
        grad_check(f, &x, H)
            .unwrap()
            .max(grad_check(f, &w, H).unwrap())
    });
}

#[test]
fn binned_linear_rows_and_weight() {
    check_seeds("binned_linear", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nodes, features, bins, hidden) = (6, 3, 2, 4);
        let rows = param(&mut rng, &[nodes, features]);
        let w = param(&mut rng, &[bins * features, hidden]);
        let plan_rows = (0..5)
            .map(|_| {
                (0..4)
                    .map(|_| {
                        (
                            rng.random_range(0..bins as u32),
                            rng.random_range(0..nodes as u32),
                            rng.random_range(0.0..1.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let plan = Rc::new(BinnedPlan::new(nodes, bins, plan_rows).unwrap());
        let f = || project(&rows.binned_linear(&w, &plan)?, seed);
        grad_check(f, &rows, H)
            .unwrap()
            .max(grad_check(f, &w, H).unwrap())
    });
}

#[test]
fn weighted_bce() {
    check_seeds("weighted_bce", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = param(&mut rng, &[6]);
        let targets: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        let weights: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..2.0)).collect();
        grad_check(
            || logits.sigmoid().weighted_bce(&targets, &weights, 1e-7),
            &logits,
            H,
        )
        .unwrap()
    });
}

#[test]
fn relu_far_from_zero_is_exact() {
    let theta = Tensor::param(&[4], vec![-2.0, -0.7, 0.9, 3.0]).unwrap();
    let err = grad_check(|| Ok(theta.relu().sum()), &theta, H).unwrap();
    assert!(err < 1e-6, "{err:e}");
    let err = grad_check(|| Ok(theta.sum()), &theta, H).unwrap();
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = constant(&mut rng, &[4, 8]);
    let w = constant(&mut rng, &[3, 2, 4]);
    let a = x.grouped_conv1d(&w, 2, 1).unwrap().to_vec();
    let b = x.grouped_conv1d(&w, 2, 1).unwrap().to_vec();
    assert_eq!(a, b);
}
