//! The stability classifier: 4 × (conv → batch-norm → ReLU → 2×2 max-pool),
//! flatten, fully-connected softmax head.
//!
//! Inputs pass through a fixed transform first: `asinh` compression (the
//! feature distribution is heavy-tailed during voltage collapse) followed by
//! a scalar standardization whose constants are estimated from the training
//! split and stored with the model.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    maxpool_backward, maxpool_forward, pool_out_dim, relu_backward, relu_forward, softmax,
    BatchNorm2d, BnCache, Conv2d, ConvCache, Dense, PoolCache,
};
use super::NnError;

pub const CONV_BLOCKS: usize = 4;

/// Architecture and input-transform constants. Everything needed to rebuild
/// the layer stack deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArchDescriptor {
    pub input_rows: usize,
    pub input_cols: usize,
    pub channels: [usize; CONV_BLOCKS],
    pub kernel: usize,
    /// Input transform: `x' = (asinh(x) - input_mean) / input_scale`.
    pub input_mean: f64,
    pub input_scale: f64,
}

impl ArchDescriptor {
    pub fn new(input_rows: usize, input_cols: usize) -> ArchDescriptor {
        ArchDescriptor {
            input_rows,
            input_cols,
            channels: [16, 32, 64, 64],
            kernel: 3,
            input_mean: 0.0,
            input_scale: 1.0,
        }
    }

    /// Spatial size after each pooling stage.
    fn spatial_plan(&self) -> [(usize, usize); CONV_BLOCKS] {
        let mut dims = [(0usize, 0usize); CONV_BLOCKS];
        let (mut h, mut w) = (self.input_rows, self.input_cols);
        for d in dims.iter_mut() {
            h = pool_out_dim(h);
            w = pool_out_dim(w);
            *d = (h, w);
        }
        dims
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = self.spatial_plan()[CONV_BLOCKS - 1];
        h * w * self.channels[CONV_BLOCKS - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// CNN stability classifier. Exactly four convolution and four batch-norm
/// layers plus the fully-connected softmax output layer.
#[derive(Debug, Clone)]
pub struct CnnClassifier {
    pub arch: ArchDescriptor,
    pub(super) conv: Vec<Conv2d>,
    pub(super) bn: Vec<BatchNorm2d>,
    pub(super) fc: Dense,
    pub mode: Mode,
}

pub(super) struct ForwardCache {
    pub conv_caches: Vec<ConvCache>,
    pub bn_caches: Vec<BnCache>,
    pub relu_masks: Vec<Array4<f64>>,
    pub pool_caches: Vec<PoolCache>,
    pub flat: Array2<f64>,
}

impl CnnClassifier {
    /// Deterministic fan-in-scaled initialization; the softmax head starts
    /// at zero so an untrained model outputs exactly (0.5, 0.5).
    pub fn new_seeded(arch: ArchDescriptor, seed: u64) -> CnnClassifier {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::with_capacity(CONV_BLOCKS);
        let mut bn = Vec::with_capacity(CONV_BLOCKS);
        let mut in_c = 1;
        for b in 0..CONV_BLOCKS {
            conv.push(Conv2d::new_seeded(arch.channels[b], in_c, arch.kernel, &mut rng));
            bn.push(BatchNorm2d::new(arch.channels[b]));
            in_c = arch.channels[b];
        }
        let fc = Dense::new_zero(arch.flat_features(), 2);
        CnnClassifier { arch, conv, bn, fc, mode: Mode::Eval }
    }

    /// Apply the fixed input transform to a raw window batch.
    pub fn transform_input(&self, x: &ArrayView4<f64>) -> Array4<f64> {
        let scale = if self.arch.input_scale.abs() < 1e-300 { 1.0 } else { self.arch.input_scale };
        x.mapv(|v| (v.asinh() - self.arch.input_mean) / scale)
    }

    pub(super) fn forward_train_cached(
        &mut self,
        x_raw: &ArrayView4<f64>,
        update_running: bool,
    ) -> (Array2<f64>, ForwardCache) {
        let x0 = self.transform_input(x_raw);
        let mut cur = x0;
        let mut conv_caches = Vec::new();
        let mut bn_caches = Vec::new();
        let mut relu_masks = Vec::new();
        let mut pool_caches = Vec::new();
        for b in 0..CONV_BLOCKS {
            let (y, cc) = self.conv[b].forward(&cur.view());
            conv_caches.push(cc);
            let (y, bc) = self.bn[b].forward_train(&y.view(), update_running);
            bn_caches.push(bc);
            let (y, mask) = relu_forward(&y);
            relu_masks.push(mask);
            let (y, pc) = maxpool_forward(&y);
            pool_caches.push(pc);
            cur = y;
        }
        let n = cur.dim().0;
        let flat = cur.into_shape_with_order((n, self.arch.flat_features())).unwrap();
        let logits = self.fc.forward(&flat);
        (logits, ForwardCache { conv_caches, bn_caches, relu_masks, pool_caches, flat })
    }

    /// Backward pass through the whole stack. Returns parameter gradients in
    /// the canonical tensor order (see [`CnnClassifier::parameters`]).
    pub(super) fn backward_cached(
        &self,
        cache: &ForwardCache,
        dlogits: &Array2<f64>,
    ) -> Vec<Array4<f64>> {
        // gradients stored as Array4 uniformly; 1-D/2-D tensors are embedded
        let (dflat, dfc_w, dfc_b) = self.fc.backward(&cache.flat, dlogits);
        let last = self.arch.spatial_plan()[CONV_BLOCKS - 1];
        let n = dflat.nrows();
        let mut dcur = dflat
            .into_shape_with_order((n, self.arch.channels[CONV_BLOCKS - 1], last.0, last.1))
            .unwrap();
        let mut grads: Vec<Array4<f64>> = vec![Array4::zeros((0, 0, 0, 0)); 6 * CONV_BLOCKS + 2];
        for b in (0..CONV_BLOCKS).rev() {
            let dpool = maxpool_backward(&cache.pool_caches[b], &dcur);
            let drelu = relu_backward(&cache.relu_masks[b], &dpool);
            let (dbn, dgamma, dbeta) = self.bn[b].backward(&cache.bn_caches[b], &drelu.view());
            let (dx, dw, db) = self.conv[b].backward(&cache.conv_caches[b], &dbn.view());
            grads[6 * b] = dw;
            grads[6 * b + 1] = embed1(&db);
            grads[6 * b + 2] = embed1(&dgamma);
            grads[6 * b + 3] = embed1(&dbeta);
            // running stats carry no gradient
            grads[6 * b + 4] = Array4::zeros((0, 0, 0, 0));
            grads[6 * b + 5] = Array4::zeros((0, 0, 0, 0));
            dcur = dx;
        }
        grads[6 * CONV_BLOCKS] = embed2(&dfc_w);
        grads[6 * CONV_BLOCKS + 1] = embed1(&dfc_b);
        grads
    }

    /// Eval-mode class probabilities for a batch of raw windows.
    pub fn predict_proba(&self, x_raw: &ArrayView4<f64>) -> Array2<f64> {
        let x0 = self.transform_input(x_raw);
        let mut cur = x0;
        for b in 0..CONV_BLOCKS {
            let (y, _) = self.conv[b].forward(&cur.view());
            let y = self.bn[b].forward_eval(&y.view());
            let (y, _) = relu_forward(&y);
            let (y, _) = maxpool_forward(&y);
            cur = y;
        }
        let n = cur.dim().0;
        let flat = cur.into_shape_with_order((n, self.arch.flat_features())).unwrap();
        softmax(&self.fc.forward(&flat))
    }

    /// Probabilities for one m×n window.
    pub fn forward(&self, window: &ArrayView2<f64>) -> Result<[f64; 2], NnError> {
        let (m, n) = (window.nrows(), window.ncols());
        if m != self.arch.input_rows || n != self.arch.input_cols {
            return Err(NnError::ShapeMismatch {
                expected: (self.arch.input_rows, self.arch.input_cols),
                got: (m, n),
            });
        }
        let mut x = Array4::zeros((1, 1, m, n));
        x.index_axis_mut(Axis(0), 0).index_axis_mut(Axis(0), 0).assign(window);
        let p = self.predict_proba(&x.view());
        Ok([p[(0, 0)], p[(0, 1)]])
    }

    /// Predicted labels (0 = stable, 1 = unstable) for a raw window batch.
    /// Eval-mode inference is pure, so the batch is processed in fixed
    /// chunks that may run in parallel.
    pub fn predict_batch(&self, x_raw: &ArrayView4<f64>) -> Vec<u8> {
        let n = x_raw.dim().0;
        let chunk = crate::exec::CHUNK;
        let n_chunks = n.div_ceil(chunk);
        let parts = crate::exec::map_indexed(n_chunks, |c| {
            let lo = c * chunk;
            let hi = usize::min(lo + chunk, n);
            let slab = x_raw.slice(ndarray::s![lo..hi, .., .., ..]);
            let p = self.predict_proba(&slab);
            (0..hi - lo)
                .map(|r| if p[(r, 1)] >= p[(r, 0)] { 1u8 } else { 0u8 })
                .collect::<Vec<u8>>()
        });
        parts.concat()
    }

    /// All trainable+stateful tensors in canonical order: per block
    /// `[conv_w, conv_b, bn_gamma, bn_beta, bn_running_mean, bn_running_var]`,
    /// then `[fc_w, fc_b]`. Running stats are persisted but receive no
    /// gradient.
    pub(super) fn tensors_mut(&mut self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(6 * CONV_BLOCKS + 2);
        for (conv, bn) in self.conv.iter_mut().zip(self.bn.iter_mut()) {
            out.push(TensorRef::T4(&mut conv.weight));
            out.push(TensorRef::T1(&mut conv.bias));
            out.push(TensorRef::T1(&mut bn.gamma));
            out.push(TensorRef::T1(&mut bn.beta));
            out.push(TensorRef::T1(&mut bn.running_mean));
            out.push(TensorRef::T1(&mut bn.running_var));
        }
        out.push(TensorRef::T2(&mut self.fc.weight));
        out.push(TensorRef::T1(&mut self.fc.bias));
        out
    }

    /// Indices in the tensor order that receive gradient updates.
    pub(super) fn trainable_indices(freeze_conv: bool) -> Vec<usize> {
        let mut idx = Vec::new();
        if !freeze_conv {
            for b in 0..CONV_BLOCKS {
                idx.extend([6 * b, 6 * b + 1, 6 * b + 2, 6 * b + 3]);
            }
        }
        idx.extend([6 * CONV_BLOCKS, 6 * CONV_BLOCKS + 1]);
        idx
    }

    /// Round every stored tensor to f32 precision. Training ends with this
    /// snap so the f32 checkpoint round-trip reproduces eval outputs
    /// bit-exactly.
    pub fn snap_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.apply(|v| v as f32 as f64);
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        for b in 0..CONV_BLOCKS {
            n += self.conv[b].weight.len() + self.conv[b].bias.len();
            n += self.bn[b].gamma.len() + self.bn[b].beta.len();
        }
        n + self.fc.weight.len() + self.fc.bias.len()
    }
}

pub(super) enum TensorRef<'a> {
    T1(&'a mut Array1<f64>),
    T2(&'a mut Array2<f64>),
    T4(&'a mut Array4<f64>),
}

impl TensorRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::T1(a) => a.len(),
            TensorRef::T2(a) => a.len(),
            TensorRef::T4(a) => a.len(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            TensorRef::T1(a) => vec![a.len()],
            TensorRef::T2(a) => a.shape().to_vec(),
            TensorRef::T4(a) => a.shape().to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorRef::T1(a) => a.as_slice().unwrap(),
            TensorRef::T2(a) => a.as_slice().unwrap(),
            TensorRef::T4(a) => a.as_slice().unwrap(),
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            TensorRef::T1(a) => a.as_slice_mut().unwrap(),
            TensorRef::T2(a) => a.as_slice_mut().unwrap(),
            TensorRef::T4(a) => a.as_slice_mut().unwrap(),
        }
    }

    pub fn apply(mut self, f: impl Fn(f64) -> f64) {
        for v in self.as_mut_slice() {
            *v = f(*v);
        }
    }
}

fn embed1(a: &Array1<f64>) -> Array4<f64> {
    Array4::from_shape_vec((1, 1, 1, a.len()), a.to_vec()).unwrap()
}

fn embed2(a: &Array2<f64>) -> Array4<f64> {
    Array4::from_shape_vec((1, 1, a.nrows(), a.ncols()), a.iter().copied().collect()).unwrap()
}

/// Flatten a gradient produced by [`CnnClassifier::backward_cached`] to a
/// slice matching the tensor's element order.
pub(super) fn grad_slice(g: &Array4<f64>) -> &[f64] {
    g.as_slice().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_model_outputs_half_half() {
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(29, 80), 7);
        let w = Array2::from_elem((29, 80), 0.3);
        let p = model.forward(&w.view()).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn eval_mode_deterministic() {
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(8, 20), 9);
        let w = Array2::from_shape_fn((8, 20), |(i, j)| ((i * 20 + j) as f64).sin());
        let a = model.forward(&w.view()).unwrap();
        let b = model.forward(&w.view()).unwrap();
        assert_eq!(a, b);
        assert!((a[0] + a[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(29, 80), 7);
        let w = Array2::zeros((29, 40));
        assert!(matches!(
            model.forward(&w.view()),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn layer_counts_match_architecture() {
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(29, 80), 7);
        assert_eq!(model.conv.len(), 4);
        assert_eq!(model.bn.len(), 4);
    }

    #[test]
    fn short_windows_still_flow() {
        // every ablation window length down to n=10 must produce a valid stack
        for n in [10usize, 20, 40, 80] {
            let arch = ArchDescriptor::new(29, n);
            assert!(arch.flat_features() > 0, "n={n}");
            let model = CnnClassifier::new_seeded(arch, 1);
            let w = Array2::from_elem((29, n), 0.1);
            let p = model.forward(&w.view()).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn predict_batch_matches_single() {
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 10), 3);
        let x = Array4::from_shape_fn((5, 1, 6, 10), |(s, _, i, j)| {
            ((s * 60 + i * 10 + j) as f64 * 0.01).cos()
        });
        let batch = model.predict_batch(&x.view());
        for s in 0..5 {
            let w = x.index_axis(Axis(0), s).index_axis(Axis(0), 0).to_owned();
            let p = model.forward(&w.view()).unwrap();
            let single = u8::from(p[1] >= p[0]);
            assert_eq!(batch[s], single, "sample {s}");
        }
    }
}
