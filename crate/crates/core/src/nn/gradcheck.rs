//! Finite-difference gradient verification.
//!
//! Central differences with h = 1e-5 against the analytic backward passes,
//! on small randomized shapes. The model check perturbs every parameter of
//! a tiny stack under the full softmax cross-entropy loss with batch-norm in
//! train mode (running statistics frozen during the probe evaluations).

use ndarray::{Array2, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{softmax_cross_entropy, BatchNorm2d, Conv2d, Dense};
use super::model::{grad_slice, ArchDescriptor, CnnClassifier};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Maximum relative error over all checked entries.
    pub max_rel_err: f64,
    /// Number of scalar comparisons made.
    pub checks: usize,
}

impl GradCheckReport {
    fn update(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        self.max_rel_err = self.max_rel_err.max((analytic - numeric).abs() / denom);
        self.checks += 1;
    }
}

/// Scalar loss used by the layer-level checks: a fixed random projection of
/// the layer output, so every output element contributes.
fn projected_loss(y: &[f64], proj: &[f64]) -> f64 {
    y.iter().zip(proj).map(|(a, b)| a * b).sum()
}

/// Convolution layer: checks dW, db and dx on a random shape.
pub fn check_conv(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, ic, oc) = (2, rng.random_range(1..3usize), rng.random_range(1..4usize));
    let (h, w) = (rng.random_range(3..6usize), rng.random_range(3..7usize));
    let conv = Conv2d::new_seeded(oc, ic, 3, &mut rng);
    let x = Array4::from_shape_fn((n, ic, h, w), |_| rng.random_range(-1.0..1.0));
    let (y0, cache) = conv.forward(&x.view());
    let proj: Vec<f64> = (0..y0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Array4::from_shape_vec(y0.dim(), proj.clone()).unwrap();
    let (dx, dw, db) = conv.backward(&cache, &dy.view());

    let mut rep = GradCheckReport { max_rel_err: 0.0, checks: 0 };
    // dW
    let mut c2 = conv.clone();
    for k in 0..c2.weight.len() {
        let orig = c2.weight.as_slice().unwrap()[k];
        c2.weight.as_slice_mut().unwrap()[k] = orig + FD_STEP;
        let (yp, _) = c2.forward(&x.view());
        c2.weight.as_slice_mut().unwrap()[k] = orig - FD_STEP;
        let (ym, _) = c2.forward(&x.view());
        c2.weight.as_slice_mut().unwrap()[k] = orig;
        let num = (projected_loss(yp.as_slice().unwrap(), &proj)
            - projected_loss(ym.as_slice().unwrap(), &proj))
            / (2.0 * FD_STEP);
        rep.update(dw.as_slice().unwrap()[k], num);
    }
    // db
    for k in 0..c2.bias.len() {
        let orig = c2.bias[k];
        c2.bias[k] = orig + FD_STEP;
        let (yp, _) = c2.forward(&x.view());
        c2.bias[k] = orig - FD_STEP;
        let (ym, _) = c2.forward(&x.view());
        c2.bias[k] = orig;
        let num = (projected_loss(yp.as_slice().unwrap(), &proj)
            - projected_loss(ym.as_slice().unwrap(), &proj))
            / (2.0 * FD_STEP);
        rep.update(db[k], num);
    }
    // dx
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = xp.as_slice().unwrap()[k];
        xp.as_slice_mut().unwrap()[k] = orig + FD_STEP;
        let (yp, _) = conv.forward(&xp.view());
        xp.as_slice_mut().unwrap()[k] = orig - FD_STEP;
        let (ym, _) = conv.forward(&xp.view());
        xp.as_slice_mut().unwrap()[k] = orig;
        let num = (projected_loss(yp.as_slice().unwrap(), &proj)
            - projected_loss(ym.as_slice().unwrap(), &proj))
            / (2.0 * FD_STEP);
        rep.update(dx.as_slice().unwrap()[k], num);
    }
    rep
}

/// Batch-norm layer in train mode: checks dγ, dβ and dx.
pub fn check_batchnorm(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..4usize);
    let (n, h, w) = (3, rng.random_range(2..4usize), rng.random_range(2..5usize));
    let mut bn = BatchNorm2d::new(c);
    for k in 0..c {
        bn.gamma[k] = rng.random_range(0.5..1.5);
        bn.beta[k] = rng.random_range(-0.5..0.5);
    }
    let x = Array4::from_shape_fn((n, c, h, w), |_| rng.random_range(-1.0..1.0));
    let (y0, cache) = bn.forward_train(&x.view(), false);
    let proj: Vec<f64> = (0..y0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Array4::from_shape_vec(y0.dim(), proj.clone()).unwrap();
    let (dx, dgamma, dbeta) = bn.backward(&cache, &dy.view());

    let mut rep = GradCheckReport { max_rel_err: 0.0, checks: 0 };
    let eval = |bn: &mut BatchNorm2d, x: &Array4<f64>| -> f64 {
        let (y, _) = bn.forward_train(&x.view(), false);
        projected_loss(y.as_slice().unwrap(), &proj)
    };
    for k in 0..c {
        let orig = bn.gamma[k];
        bn.gamma[k] = orig + FD_STEP;
        let lp = eval(&mut bn, &x);
        bn.gamma[k] = orig - FD_STEP;
        let lm = eval(&mut bn, &x);
        bn.gamma[k] = orig;
        rep.update(dgamma[k], (lp - lm) / (2.0 * FD_STEP));

        let orig = bn.beta[k];
        bn.beta[k] = orig + FD_STEP;
        let lp = eval(&mut bn, &x);
        bn.beta[k] = orig - FD_STEP;
        let lm = eval(&mut bn, &x);
        bn.beta[k] = orig;
        rep.update(dbeta[k], (lp - lm) / (2.0 * FD_STEP));
    }
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = xp.as_slice().unwrap()[k];
        xp.as_slice_mut().unwrap()[k] = orig + FD_STEP;
        let lp = eval(&mut bn, &xp);
        xp.as_slice_mut().unwrap()[k] = orig - FD_STEP;
        let lm = eval(&mut bn, &xp);
        xp.as_slice_mut().unwrap()[k] = orig;
        rep.update(dx.as_slice().unwrap()[k], (lp - lm) / (2.0 * FD_STEP));
    }
    rep
}

/// Dense layer: checks dW, db, dx.
pub fn check_dense(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, fi, fo) = (3, rng.random_range(2..6usize), rng.random_range(1..4usize));
    let mut dense = Dense::new_zero(fi, fo);
    for v in dense.weight.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in dense.bias.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let x = Array2::from_shape_fn((n, fi), |_| rng.random_range(-1.0..1.0));
    let y0 = dense.forward(&x);
    let proj: Vec<f64> = (0..y0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Array2::from_shape_vec(y0.dim(), proj.clone()).unwrap();
    let (dx, dw, db) = dense.backward(&x, &dy);

    let mut rep = GradCheckReport { max_rel_err: 0.0, checks: 0 };
    for k in 0..dense.weight.len() {
        let orig = dense.weight.as_slice().unwrap()[k];
        dense.weight.as_slice_mut().unwrap()[k] = orig + FD_STEP;
        let lp = projected_loss(dense.forward(&x).as_slice().unwrap(), &proj);
        dense.weight.as_slice_mut().unwrap()[k] = orig - FD_STEP;
        let lm = projected_loss(dense.forward(&x).as_slice().unwrap(), &proj);
        dense.weight.as_slice_mut().unwrap()[k] = orig;
        rep.update(dw.as_slice().unwrap()[k], (lp - lm) / (2.0 * FD_STEP));
    }
    for k in 0..dense.bias.len() {
        let orig = dense.bias[k];
        dense.bias[k] = orig + FD_STEP;
        let lp = projected_loss(dense.forward(&x).as_slice().unwrap(), &proj);
        dense.bias[k] = orig - FD_STEP;
        let lm = projected_loss(dense.forward(&x).as_slice().unwrap(), &proj);
        dense.bias[k] = orig;
        rep.update(db[k], (lp - lm) / (2.0 * FD_STEP));
    }
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = xp.as_slice().unwrap()[k];
        xp.as_slice_mut().unwrap()[k] = orig + FD_STEP;
        let lp = projected_loss(dense.forward(&xp).as_slice().unwrap(), &proj);
        xp.as_slice_mut().unwrap()[k] = orig - FD_STEP;
        let lm = projected_loss(dense.forward(&xp).as_slice().unwrap(), &proj);
        xp.as_slice_mut().unwrap()[k] = orig;
        rep.update(dx.as_slice().unwrap()[k], (lp - lm) / (2.0 * FD_STEP));
    }
    rep
}

/// Full 4-block stack on a toy window under softmax cross-entropy, every
/// parameter perturbed.
pub fn check_model(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = ArchDescriptor {
        input_rows: 4,
        input_cols: 8,
        channels: [2, 3, 3, 2],
        kernel: 3,
        input_mean: 0.0,
        input_scale: 1.0,
    };
    let mut model = CnnClassifier::new_seeded(arch, seed ^ 0x5eed);
    // non-zero head so its gradient path is exercised beyond the zero init
    for v in model.fc.weight.iter_mut() {
        *v = rng.random_range(-0.3..0.3);
    }
    let n = 3;
    let x = Array4::from_shape_fn((n, 1, 4, 8), |_| rng.random_range(-1.5..1.5));
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();

    let (logits, cache) = model.forward_train_cached(&x.view(), false);
    let (_, _, dlogits) = softmax_cross_entropy(&logits, &y);
    let grads = model.backward_cached(&cache, &dlogits);

    let mut rep = GradCheckReport { max_rel_err: 0.0, checks: 0 };
    let n_tensors = grads.len();
    for ti in 0..n_tensors {
        let g = grad_slice(&grads[ti]).to_vec();
        if g.is_empty() {
            continue; // running statistics
        }
        for k in 0..g.len() {
            let (lp, lm);
            {
                let mut tensors = model.tensors_mut();
                let s = tensors[ti].as_mut_slice();
                s[k] += FD_STEP;
            }
            {
                let (logits, _) = model.forward_train_cached(&x.view(), false);
                lp = softmax_cross_entropy(&logits, &y).0;
            }
            {
                let mut tensors = model.tensors_mut();
                let s = tensors[ti].as_mut_slice();
                s[k] -= 2.0 * FD_STEP;
            }
            {
                let (logits, _) = model.forward_train_cached(&x.view(), false);
                lm = softmax_cross_entropy(&logits, &y).0;
            }
            {
                let mut tensors = model.tensors_mut();
                let s = tensors[ti].as_mut_slice();
                s[k] += FD_STEP;
            }
            rep.update(g[k], (lp - lm) / (2.0 * FD_STEP));
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_gradients_match() {
        for seed in 0..5 {
            let rep = check_conv(seed);
            assert!(rep.max_rel_err < 1e-4, "seed {seed}: {}", rep.max_rel_err);
        }
    }

    #[test]
    fn batchnorm_gradients_match() {
        for seed in 0..5 {
            let rep = check_batchnorm(seed);
            assert!(rep.max_rel_err < 1e-4, "seed {seed}: {}", rep.max_rel_err);
        }
    }

    #[test]
    fn dense_gradients_match() {
        for seed in 0..5 {
            let rep = check_dense(seed);
            assert!(rep.max_rel_err < 1e-4, "seed {seed}: {}", rep.max_rel_err);
        }
    }

    #[test]
    fn full_stack_gradients_match() {
        let rep = check_model(1);
        assert!(rep.max_rel_err < 1e-3, "{}", rep.max_rel_err);
        assert!(rep.checks > 100);
    }
}
