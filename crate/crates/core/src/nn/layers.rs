//! Layer primitives: 2-D convolution (im2col + gemm), batch normalization,
//! ReLU, 2×2 max pooling, dense, and fused softmax cross-entropy.
//!
//! All math is f64. Forward passes return caches with whatever the backward
//! pass needs; backward passes return parameter gradients alongside the
//! input gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Valid cross-correlation with zero padding, stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// (out_c, in_c, kh, kw)
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub pad: (usize, usize),
}

pub struct ConvCache {
    cols: Vec<Array2<f64>>, // per-sample im2col matrices
    in_shape: (usize, usize, usize, usize),
}

impl Conv2d {
    /// Fan-in-scaled uniform weights, zero bias.
    pub fn new_seeded(out_c: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Conv2d {
        let fan_in = (in_c * k * k) as f64;
        let a = (6.0 / fan_in).sqrt();
        let weight = Array4::from_shape_fn((out_c, in_c, k, k), |_| rng.random_range(-a..a));
        Conv2d { weight, bias: Array1::zeros(out_c), pad: (k / 2, k / 2) }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.dim();
        (h + 2 * self.pad.0 + 1 - kh, w + 2 * self.pad.1 + 1 - kw)
    }

    fn weight_2d(&self) -> Array2<f64> {
        let (oc, ic, kh, kw) = self.weight.dim();
        self.weight.view().into_shape_with_order((oc, ic * kh * kw)).unwrap().to_owned()
    }

    fn im2col(&self, x: ArrayView2<f64>, c: usize, h: usize, w: usize) -> Array2<f64> {
        // x is one sample flattened as (c, h*w) view; build (c*kh*kw, oh*ow)
        let (_, _, kh, kw) = self.weight.dim();
        let (ph, pw) = self.pad;
        let (oh, ow) = (h + 2 * ph + 1 - kh, w + 2 * pw + 1 - kw);
        let mut col = Array2::zeros((c * kh * kw, oh * ow));
        for ch in 0..c {
            for di in 0..kh {
                for dj in 0..kw {
                    let row = (ch * kh + di) * kw + dj;
                    for i in 0..oh {
                        let src_i = (i + di) as isize - ph as isize;
                        if src_i < 0 || src_i >= h as isize {
                            continue;
                        }
                        for j in 0..ow {
                            let src_j = (j + dj) as isize - pw as isize;
                            if src_j < 0 || src_j >= w as isize {
                                continue;
                            }
                            col[(row, i * ow + j)] = x[(ch, src_i as usize * w + src_j as usize)];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &ArrayView4<f64>) -> (Array4<f64>, ConvCache) {
        let (n, c, h, w) = x.dim();
        let (oc, _, _, _) = self.weight.dim();
        let (oh, ow) = self.out_spatial(h, w);
        let w2d = self.weight_2d();
        let mut y = Array4::zeros((n, oc, oh, ow));
        let mut cols = Vec::with_capacity(n);
        for s in 0..n {
            let xs = x
                .index_axis(Axis(0), s)
                .into_shape_with_order((c, h * w))
                .unwrap();
            let col = self.im2col(xs, c, h, w);
            let mut y2d = Array2::zeros((oc, oh * ow));
            general_mat_mul(1.0, &w2d, &col, 0.0, &mut y2d);
            for o in 0..oc {
                let b = self.bias[o];
                for p in 0..oh * ow {
                    y[(s, o, p / ow, p % ow)] = y2d[(o, p)] + b;
                }
            }
            cols.push(col);
        }
        (y, ConvCache { cols, in_shape: (n, c, h, w) })
    }

    /// Returns (dx, dw, db).
    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &ArrayView4<f64>,
    ) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
        let (n, c, h, w) = cache.in_shape;
        let (oc, ic, kh, kw) = self.weight.dim();
        let (_, _, oh, ow) = grad_out.dim();
        let (ph, pw) = self.pad;
        let w2d = self.weight_2d();
        let mut dw2d = Array2::zeros((oc, ic * kh * kw));
        let mut db = Array1::zeros(oc);
        let mut dx = Array4::zeros((n, c, h, w));
        for s in 0..n {
            let g2d = grad_out
                .index_axis(Axis(0), s)
                .into_shape_with_order((oc, oh * ow))
                .unwrap()
                .to_owned();
            for o in 0..oc {
                db[o] += g2d.row(o).sum();
            }
            general_mat_mul(1.0, &g2d, &cache.cols[s].t().to_owned(), 1.0, &mut dw2d);
            let mut dcol = Array2::zeros((ic * kh * kw, oh * ow));
            general_mat_mul(1.0, &w2d.t().to_owned(), &g2d, 0.0, &mut dcol);
            // col2im scatter-add
            for ch in 0..c {
                for di in 0..kh {
                    for dj in 0..kw {
                        let row = (ch * kh + di) * kw + dj;
                        for i in 0..oh {
                            let src_i = (i + di) as isize - ph as isize;
                            if src_i < 0 || src_i >= h as isize {
                                continue;
                            }
                            for j in 0..ow {
                                let src_j = (j + dj) as isize - pw as isize;
                                if src_j < 0 || src_j >= w as isize {
                                    continue;
                                }
                                dx[(s, ch, src_i as usize, src_j as usize)] +=
                                    dcol[(row, i * ow + j)];
                            }
                        }
                    }
                }
            }
        }
        let dw = dw2d.into_shape_with_order((oc, ic, kh, kw)).unwrap();
        (dx, dw, db)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache {
    x_hat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    /// Train-mode forward on batch statistics. Updates running statistics
    /// only when `update_running` is set (gradient checking evaluates the
    /// loss repeatedly and must not drift them).
    pub fn forward_train(&mut self, x: &ArrayView4<f64>, update_running: bool) -> (Array4<f64>, BnCache) {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f64;
        let mut y = Array4::zeros((n, c, h, w));
        let mut x_hat = Array4::zeros((n, c, h, w));
        let mut inv_std = Array1::zeros(c);
        for ch in 0..c {
            let mut mean = 0.0;
            for s in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        mean += x[(s, ch, i, j)];
                    }
                }
            }
            mean /= count;
            let mut var = 0.0;
            for s in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        let d = x[(s, ch, i, j)] - mean;
                        var += d * d;
                    }
                }
            }
            var /= count;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        let d = x[(s, ch, i, j)] - mean;
                        let xh = d * istd;
                        x_hat[(s, ch, i, j)] = xh;
                        y[(s, ch, i, j)] = self.gamma[ch] * xh + self.beta[ch];
                    }
                }
            }
            if update_running {
                self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean;
                self.running_var[ch] = self.momentum * self.running_var[ch] + (1.0 - self.momentum) * var;
            }
        }
        (y, BnCache { x_hat, inv_std })
    }

    /// Eval-mode forward on running statistics.
    pub fn forward_eval(&self, x: &ArrayView4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let mut y = Array4::zeros((n, c, h, w));
        for ch in 0..c {
            let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let mean = self.running_mean[ch];
            for s in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        y[(s, ch, i, j)] =
                            self.gamma[ch] * (x[(s, ch, i, j)] - mean) * istd + self.beta[ch];
                    }
                }
            }
        }
        y
    }

    /// Returns (dx, dgamma, dbeta) for train-mode normalization.
    pub fn backward(
        &self,
        cache: &BnCache,
        grad_out: &ArrayView4<f64>,
    ) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
        let (n, c, h, w) = grad_out.dim();
        let count = (n * h * w) as f64;
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        let mut dx = Array4::zeros((n, c, h, w));
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for s in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        let dy = grad_out[(s, ch, i, j)];
                        sum_dy += dy;
                        sum_dy_xhat += dy * cache.x_hat[(s, ch, i, j)];
                    }
                }
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            for s in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        let dy = grad_out[(s, ch, i, j)];
                        dx[(s, ch, i, j)] = scale
                            * (dy - sum_dy / count
                                - cache.x_hat[(s, ch, i, j)] * sum_dy_xhat / count);
                    }
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// ReLU with mask cache.
pub fn relu_forward(x: &Array4<f64>) -> (Array4<f64>, Array4<f64>) {
    let y = x.mapv(|v| v.max(0.0));
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    (y, mask)
}

pub fn relu_backward(mask: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
    mask * grad_out
}

/// 2×2 max pooling, floor semantics, dimensions of size 1 pass through.
pub fn pool_out_dim(d: usize) -> usize {
    (d / 2).max(1)
}

pub struct PoolCache {
    /// Flat argmax index into the input (per output element).
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

pub fn maxpool_forward(x: &Array4<f64>) -> (Array4<f64>, PoolCache) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (pool_out_dim(h), pool_out_dim(w));
    let (sh, sw) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let mut y = Array4::zeros((n, c, oh, ow));
    let mut argmax = vec![0usize; n * c * oh * ow];
    let strides = [c * h * w, h * w, w, 1];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..sh {
                        for dj in 0..sw {
                            let (ii, jj) = (i * sh + di, j * sw + dj);
                            if ii < h && jj < w {
                                let v = x[(s, ch, ii, jj)];
                                if v > best {
                                    best = v;
                                    best_idx =
                                        s * strides[0] + ch * strides[1] + ii * strides[2] + jj;
                                }
                            }
                        }
                    }
                    y[(s, ch, i, j)] = best;
                    argmax[((s * c + ch) * oh + i) * ow + j] = best_idx;
                }
            }
        }
    }
    (y, PoolCache { argmax, in_shape: (n, c, h, w) })
}

pub fn maxpool_backward(cache: &PoolCache, grad_out: &Array4<f64>) -> Array4<f64> {
    let mut dx = Array4::zeros(cache.in_shape);
    let flat = dx.as_slice_mut().unwrap();
    for (k, g) in grad_out.iter().enumerate() {
        flat[cache.argmax[k]] += g;
    }
    dx
}

/// Fully-connected layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    /// (in_features, out_features)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Zero-initialized head: an untrained classifier outputs exactly
    /// uniform probabilities.
    pub fn new_zero(in_features: usize, out_features: usize) -> Dense {
        Dense { weight: Array2::zeros((in_features, out_features)), bias: Array1::zeros(out_features) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.weight.ncols()));
        general_mat_mul(1.0, x, &self.weight, 0.0, &mut y);
        y + &self.bias
    }

    /// Returns (dx, dw, db).
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut dw = Array2::zeros(self.weight.dim());
        general_mat_mul(1.0, &x.t().to_owned(), grad_out, 0.0, &mut dw);
        let db = grad_out.sum_axis(Axis(0));
        let mut dx = Array2::zeros(x.dim());
        general_mat_mul(1.0, grad_out, &self.weight.t().to_owned(), 0.0, &mut dx);
        (dx, dw, db)
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    p
}

/// Mean softmax cross-entropy over the batch. Returns
/// `(loss, probabilities, dlogits)` with `dlogits = (p - onehot)/N` — the
/// closed-form combined gradient.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> (f64, Array2<f64>, Array2<f64>) {
    let n = logits.nrows();
    let p = softmax(logits);
    let mut loss = 0.0;
    let mut dlogits = p.clone();
    for (s, &lab) in labels.iter().enumerate() {
        let l = lab as usize;
        loss -= p[(s, l)].max(1e-300).ln();
        dlogits[(s, l)] -= 1.0;
    }
    (loss / n as f64, p, dlogits / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_kernel_preserves_input() {
        // 1×1 kernel, weight 1, bias 0
        let mut conv = Conv2d {
            weight: Array4::ones((1, 1, 1, 1)),
            bias: Array1::zeros(1),
            pad: (0, 0),
        };
        conv.weight[(0, 0, 0, 0)] = 1.0;
        let x = Array4::from_shape_fn((1, 1, 4, 5), |(_, _, i, j)| (i * 5 + j) as f64);
        let (y, _) = conv.forward(&x.view());
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        // all-ones 3×3 kernel on constant-c input: 9c per interior cell
        let conv = Conv2d { weight: Array4::ones((1, 1, 3, 3)), bias: Array1::zeros(1), pad: (1, 1) };
        let c = 2.5;
        let x = Array4::from_elem((1, 1, 6, 6), c);
        let (y, _) = conv.forward(&x.view());
        for i in 1..5 {
            for j in 1..5 {
                assert!((y[(0, 0, i, j)] - 9.0 * c).abs() < 1e-12);
            }
        }
        // corner touches 4 cells
        assert!((y[(0, 0, 0, 0)] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut r = rng(3);
        let conv = Conv2d::new_seeded(2, 1, 3, &mut r);
        let x = Array4::from_shape_fn((1, 1, 6, 6), |_| r.random_range(-1.0..1.0));
        let (y, _) = conv.forward(&x.view());
        // quadruple-loop oracle
        for o in 0..2 {
            for i in 0..6usize {
                for j in 0..6usize {
                    let mut acc = conv.bias[o];
                    for di in 0..3usize {
                        for dj in 0..3usize {
                            let si = i as isize + di as isize - 1;
                            let sj = j as isize + dj as isize - 1;
                            if si >= 0 && si < 6 && sj >= 0 && sj < 6 {
                                acc += conv.weight[(o, 0, di, dj)]
                                    * x[(0, 0, si as usize, sj as usize)];
                            }
                        }
                    }
                    assert!((y[(0, o, i, j)] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_identity_on_standardized_input() {
        let mut bn = BatchNorm2d::new(1);
        let mut r = rng(5);
        let mut x = Array4::from_shape_fn((8, 1, 4, 4), |_| r.random_range(-1.0..1.0));
        // standardize manually
        let mean = x.mean().unwrap();
        let var: f64 = x.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        x.mapv_inplace(|v| (v - mean) / var.sqrt());
        let (y, _) = bn.forward_train(&x.view(), true);
        let diff = (&y - &x).mapv(f64::abs);
        assert!(diff.iter().copied().fold(0.0, f64::max) < 1e-4);
    }

    #[test]
    fn batchnorm_constant_input_gives_beta() {
        let mut bn = BatchNorm2d::new(2);
        bn.beta[0] = 0.7;
        bn.beta[1] = -0.2;
        let x = Array4::from_elem((4, 2, 3, 3), 5.0);
        let (y, _) = bn.forward_train(&x.view(), true);
        for s in 0..4 {
            assert!((y[(s, 0, 1, 1)] - 0.7).abs() < 1e-9);
            assert!((y[(s, 1, 2, 0)] + 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn pooling_shapes_and_argmax() {
        let x = Array4::from_shape_fn((1, 1, 4, 6), |(_, _, i, j)| (i * 6 + j) as f64);
        let (y, cache) = maxpool_forward(&x);
        assert_eq!(y.dim(), (1, 1, 2, 3));
        assert_eq!(y[(0, 0, 0, 0)], 7.0); // max of {0,1,6,7}
        let g = Array4::ones((1, 1, 2, 3));
        let dx = maxpool_backward(&cache, &g);
        assert_eq!(dx[(0, 0, 1, 1)], 1.0);
        assert_eq!(dx[(0, 0, 0, 0)], 0.0);
        // odd width drops the trailing column; size-1 dims pass through
        let x = Array4::zeros((1, 1, 1, 5));
        let (y, _) = maxpool_forward(&x);
        assert_eq!(y.dim(), (1, 1, 1, 2));
    }

    #[test]
    fn softmax_closed_form_value() {
        let logits = Array2::from_shape_vec((1, 2), vec![(2.0f64).ln(), 0.0]).unwrap();
        let p = softmax(&logits);
        assert!((p[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[(0, 1)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_gradient_is_p_minus_onehot() {
        let mut r = rng(11);
        let logits = Array2::from_shape_fn((4, 2), |_| r.random_range(-2.0..2.0));
        let labels = [0u8, 1, 1, 0];
        let (_, p, d) = softmax_cross_entropy(&logits, &labels);
        for s in 0..4 {
            for k in 0..2 {
                let expect = (p[(s, k)] - if labels[s] as usize == k { 1.0 } else { 0.0 }) / 4.0;
                assert!((d[(s, k)] - expect).abs() < 1e-12);
            }
        }
    }
}
