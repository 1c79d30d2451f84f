//! CNN layer primitives with explicit forward caches and hand-written
//! backward passes, plus the matmul/im2col kernels everything reduces to.
//!
//! Layers consume batched inputs: `[N, C, H, W]` for spatial layers and
//! `[N, D]` for dense. A forward call returns the output together with a
//! `LayerCache`; backward consumes the cache, accumulates into parameter
//! `grad` buffers, and returns the input gradient on request.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{derive_seed, Fnv64, Scalar};
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass context: mode, RNG seed for stochastic layers, and whether
/// batchnorm may fold the batch statistics into its running averages.
#[derive(Debug, Clone, Copy)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub seed: u64,
    pub update_stats: bool,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            seed: 0,
            update_stats: false,
        }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            seed,
            update_stats: true,
        }
    }
}

// ---------------------------------------------------------------------------
// matmul kernels (row-major). The ikj/pij orders keep the inner loop running
// over contiguous rows of both destination and source, which the compiler
// vectorizes well at opt-level 3.

/// C[m×n] += A[m×k] · B[k×n]
pub fn matmul_nn_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// C[m×n] += A[m×k] · Bᵀ where B is stored [n×k]
pub fn matmul_nt_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// C[m×n] += Aᵀ · B where A is stored [k×m], B is [k×n]
pub fn matmul_tn_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in arow.iter().enumerate() {
            if a_pi == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += a_pi * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// im2col / col2im

pub fn conv_out_extent(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (h + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

/// Unfold one `[C, H, W]` image into columns `[C·K·K, OH·OW]` with zero
/// padding.
pub fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [S],
) {
    let oh = conv_out_extent(h, k, stride, pad).unwrap();
    let ow = conv_out_extent(w, k, stride, pad).unwrap();
    debug_assert_eq!(out.len(), c * k * k * oh * ow);
    out.iter_mut().for_each(|v| *v = S::zero());
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * oh * ow;
                for oy in 0..oh {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            out[dst + ox] = plane[src + sx as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add columns back onto the image.
pub fn col2im<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [S],
) {
    let oh = conv_out_extent(h, k, stride, pad).unwrap();
    let ow = conv_out_extent(w, k, stride, pad).unwrap();
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    debug_assert_eq!(out.len(), c * h * w);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * oh * ow;
                for oy in 0..oh {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = ci * h * w + sy as usize * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let sx = (ox * stride + kx) as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            out[dst + sx as usize] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// layers

#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    /// `[c_out, c_in, k, k]`
    pub w: Tensor<S>,
    /// `[c_out]`
    pub b: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
    /// First layer of a network can skip the input gradient entirely.
    pub skip_input_grad: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct MaxPool {
    pub k: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    /// Distinguishes multiple dropout layers fed from one pass seed.
    pub salt: u64,
}

#[derive(Debug, Clone)]
pub struct Dense<S: Scalar> {
    /// `[d_out, d_in]`
    pub w: Tensor<S>,
    /// `[d_out]`
    pub b: Tensor<S>,
}

#[derive(Debug, Clone)]
pub enum Layer<S: Scalar> {
    Conv2d(Conv2d<S>),
    BatchNorm(BatchNorm<S>),
    Relu,
    MaxPool(MaxPool),
    Dropout(Dropout),
    Dense(Dense<S>),
}

/// Everything a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<S: Scalar> {
    Conv {
        /// im2col matrices, one per batch sample.
        cols: Vec<Vec<S>>,
        in_shape: [usize; 3],
        out_hw: [usize; 2],
    },
    BatchNorm {
        /// Normalized activations (pre-affine).
        x_hat: Vec<S>,
        inv_std: Vec<S>,
        centered: Vec<S>,
        batch_mode: bool,
        channels: usize,
        per_channel: usize,
    },
    Relu {
        /// Post-activation positivity mask.
        mask: Vec<bool>,
    },
    MaxPool {
        argmax: Vec<u32>,
        in_shape: [usize; 3],
        batch: usize,
        out_hw: [usize; 2],
    },
    Dropout {
        /// Scale applied per element (0 or 1/keep); empty means identity.
        scale: Vec<S>,
    },
    Dense {
        input: Vec<S>,
        batch: usize,
    },
}

impl<S: Scalar> LayerCache<S> {
    /// Fold the discrete decisions of this pass (relu signs, pool argmaxes)
    /// into an active-set signature.
    pub fn fold_pattern(&self, h: &mut Fnv64) {
        match self {
            LayerCache::Relu { mask } => {
                for &m in mask {
                    h.write_bool(m);
                }
            }
            LayerCache::MaxPool { argmax, .. } => {
                for &a in argmax {
                    h.write_u64(a as u64);
                }
            }
            _ => {}
        }
    }
}

fn shape_err(layer: &str, detail: String) -> ShapeError {
    ShapeError::new(format!("{}: {}", layer, detail))
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: Tensor::zeros(&[c_out, c_in, k, k]).with_grad(),
            b: Tensor::zeros(&[c_out]).with_grad(),
            stride,
            pad,
            skip_input_grad: false,
        }
    }

    fn kernel(&self) -> usize {
        self.w.shape[2]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, LayerCache<S>), ShapeError> {
        let (c_out, c_in, k) = (self.w.shape[0], self.w.shape[1], self.kernel());
        if x.shape.len() != 4 || x.shape[1] != c_in {
            return Err(shape_err(
                "conv2d",
                format!("input {:?} vs {} in-channels", x.shape, c_in),
            ));
        }
        let (n, h, w) = (x.shape[0], x.shape[2], x.shape[3]);
        let oh = conv_out_extent(h, k, self.stride, self.pad)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {} exceeds input {}", k, h)))?;
        let ow = conv_out_extent(w, k, self.stride, self.pad)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {} exceeds input {}", k, w)))?;
        let ckk = c_in * k * k;
        let mut y = Tensor::zeros(&[n, c_out, oh, ow]);
        let mut cols = Vec::with_capacity(n);
        for s in 0..n {
            let mut col = vec![S::zero(); ckk * oh * ow];
            im2col(
                &x.data[s * c_in * h * w..(s + 1) * c_in * h * w],
                c_in,
                h,
                w,
                k,
                self.stride,
                self.pad,
                &mut col,
            );
            let out = &mut y.data[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
            matmul_nn_acc(out, &self.w.data, &col, c_out, ckk, oh * ow);
            for co in 0..c_out {
                let bias = self.b.data[co];
                for v in &mut out[co * oh * ow..(co + 1) * oh * ow] {
                    *v += bias;
                }
            }
            cols.push(col);
        }
        Ok((
            y,
            LayerCache::Conv {
                cols,
                in_shape: [c_in, h, w],
                out_hw: [oh, ow],
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &LayerCache<S>,
        dy: &Tensor<S>,
        need_dx: bool,
    ) -> Result<Option<Tensor<S>>, ShapeError> {
        let LayerCache::Conv {
            cols,
            in_shape,
            out_hw,
        } = cache
        else {
            return Err(shape_err("conv2d", "wrong cache kind".into()));
        };
        let (c_out, k) = (self.w.shape[0], self.kernel());
        let [c_in, h, w] = *in_shape;
        let [oh, ow] = *out_hw;
        let ckk = c_in * k * k;
        let n = cols.len();
        let want_dx = need_dx && !self.skip_input_grad;
        let mut dx = want_dx.then(|| Tensor::zeros(&[n, c_in, h, w]));
        let mut dcol = vec![S::zero(); ckk * oh * ow];
        for s in 0..n {
            let dys = &dy.data[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
            // dW += dy · colᵀ
            matmul_nt_acc(self.w.grad_mut(), dys, &cols[s], c_out, oh * ow, ckk);
            for co in 0..c_out {
                let mut acc = S::zero();
                for &v in &dys[co * oh * ow..(co + 1) * oh * ow] {
                    acc += v;
                }
                self.b.grad_mut()[co] += acc;
            }
            if let Some(dx) = &mut dx {
                dcol.iter_mut().for_each(|v| *v = S::zero());
                // dcol = Wᵀ · dy
                matmul_tn_acc(&mut dcol, &self.w.data, dys, ckk, c_out, oh * ow);
                col2im(
                    &dcol,
                    c_in,
                    h,
                    w,
                    k,
                    self.stride,
                    self.pad,
                    &mut dx.data[s * c_in * h * w..(s + 1) * c_in * h * w],
                );
            }
        }
        Ok(dx)
    }
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]).with_grad();
        gamma.data.iter_mut().for_each(|v| *v = S::one());
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.data.iter_mut().for_each(|v| *v = S::one());
        BatchNorm {
            gamma,
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.shape[0]
    }

    /// Input `[N, C, H, W]` (or `[N, C]`); statistics per channel over
    /// everything else.
    pub fn forward(
        &mut self,
        x: &Tensor<S>,
        ctx: &ForwardCtx,
    ) -> Result<(Tensor<S>, LayerCache<S>), ShapeError> {
        let c = self.channels();
        if x.shape.len() < 2 || x.shape[1] != c {
            return Err(shape_err(
                "batchnorm",
                format!("input {:?} vs {} channels", x.shape, c),
            ));
        }
        let n = x.shape[0];
        let spatial: usize = x.shape[2..].iter().product();
        let per_channel = n * spatial;
        let batch_mode = ctx.mode == Mode::Train;

        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        if batch_mode {
            for s in 0..n {
                for ci in 0..c {
                    let base = (s * c + ci) * spatial;
                    let mut acc = S::zero();
                    for &v in &x.data[base..base + spatial] {
                        acc += v;
                    }
                    mean[ci] += acc;
                }
            }
            let inv_m = S::one() / S::from_usize(per_channel);
            mean.iter_mut().for_each(|v| *v *= inv_m);
            for s in 0..n {
                for ci in 0..c {
                    let base = (s * c + ci) * spatial;
                    let mut acc = S::zero();
                    for &v in &x.data[base..base + spatial] {
                        let d = v - mean[ci];
                        acc += d * d;
                    }
                    var[ci] += acc;
                }
            }
            var.iter_mut().for_each(|v| *v *= inv_m);
            if ctx.update_stats {
                let m = S::from_f64(self.momentum);
                let keep = S::one() - m;
                for ci in 0..c {
                    self.running_mean.data[ci] = keep * self.running_mean.data[ci] + m * mean[ci];
                    self.running_var.data[ci] = keep * self.running_var.data[ci] + m * var[ci];
                }
            }
        } else {
            mean.copy_from_slice(&self.running_mean.data);
            var.copy_from_slice(&self.running_var.data);
        }

        let eps = S::from_f64(self.eps);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mut y = Tensor::zeros(&x.shape);
        let mut x_hat = vec![S::zero(); x.data.len()];
        let mut centered = vec![S::zero(); x.data.len()];
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * spatial;
                let (g, b) = (self.gamma.data[ci], self.beta.data[ci]);
                for i in base..base + spatial {
                    let cvi = x.data[i] - mean[ci];
                    let xh = cvi * inv_std[ci];
                    centered[i] = cvi;
                    x_hat[i] = xh;
                    y.data[i] = g * xh + b;
                }
            }
        }
        Ok((
            y,
            LayerCache::BatchNorm {
                x_hat,
                inv_std,
                centered,
                batch_mode,
                channels: c,
                per_channel,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &LayerCache<S>,
        dy: &Tensor<S>,
        need_dx: bool,
    ) -> Result<Option<Tensor<S>>, ShapeError> {
        let LayerCache::BatchNorm {
            x_hat,
            inv_std,
            centered,
            batch_mode,
            channels,
            per_channel,
        } = cache
        else {
            return Err(shape_err("batchnorm", "wrong cache kind".into()));
        };
        let c = *channels;
        let n = dy.shape[0];
        let spatial: usize = dy.shape[2..].iter().product();

        // Parameter gradients.
        let mut dgamma = vec![S::zero(); c];
        let mut dbeta = vec![S::zero(); c];
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * spatial;
                for i in base..base + spatial {
                    dgamma[ci] += dy.data[i] * x_hat[i];
                    dbeta[ci] += dy.data[i];
                }
            }
        }
        for ci in 0..c {
            self.gamma.grad_mut()[ci] += dgamma[ci];
            self.beta.grad_mut()[ci] += dbeta[ci];
        }
        if !need_dx {
            return Ok(None);
        }

        let mut dx = Tensor::zeros(&dy.shape);
        if !*batch_mode {
            // Running statistics are constants in eval mode.
            for s in 0..n {
                for ci in 0..c {
                    let base = (s * c + ci) * spatial;
                    let k = self.gamma.data[ci] * inv_std[ci];
                    for i in base..base + spatial {
                        dx.data[i] = dy.data[i] * k;
                    }
                }
            }
            return Ok(Some(dx));
        }

        // Batch-statistics backward:
        // dx = (γ·inv_std/m) · (m·dy − Σdy − x_hat·Σ(dy·x_hat))
        let m = S::from_usize(*per_channel);
        for ci in 0..c {
            let sum_dy = dbeta[ci];
            let sum_dy_xhat = dgamma[ci];
            let k = self.gamma.data[ci] * inv_std[ci] / m;
            for s in 0..n {
                let base = (s * c + ci) * spatial;
                for i in base..base + spatial {
                    dx.data[i] = k * (m * dy.data[i] - sum_dy - x_hat[i] * sum_dy_xhat);
                }
            }
        }
        let _ = centered;
        Ok(Some(dx))
    }
}

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, LayerCache<S>) {
    let mut y = Tensor::zeros(&x.shape);
    let mut mask = vec![false; x.data.len()];
    for i in 0..x.data.len() {
        if x.data[i] > S::zero() {
            y.data[i] = x.data[i];
            mask[i] = true;
        }
    }
    (y, LayerCache::Relu { mask })
}

pub fn relu_backward<S: Scalar>(cache: &LayerCache<S>, dy: &Tensor<S>) -> Tensor<S> {
    let LayerCache::Relu { mask } = cache else {
        panic!("relu: wrong cache kind");
    };
    let mut dx = Tensor::zeros(&dy.shape);
    for i in 0..dy.data.len() {
        if mask[i] {
            dx.data[i] = dy.data[i];
        }
    }
    dx
}

impl MaxPool {
    pub fn forward<S: Scalar>(
        &self,
        x: &Tensor<S>,
    ) -> Result<(Tensor<S>, LayerCache<S>), ShapeError> {
        if x.shape.len() != 4 {
            return Err(shape_err("maxpool", format!("input {:?} not 4-d", x.shape)));
        }
        let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let oh = conv_out_extent(h, self.k, self.stride, 0)
            .ok_or_else(|| shape_err("maxpool", format!("window {} exceeds input {}", self.k, h)))?;
        let ow = conv_out_extent(w, self.k, self.stride, 0)
            .ok_or_else(|| shape_err("maxpool", format!("window {} exceeds input {}", self.k, w)))?;
        let mut y = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0u32; n * c * oh * ow];
        for s in 0..n {
            for ci in 0..c {
                let plane = &x.data[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
                let out_base = (s * c + ci) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = S::neg_infinity();
                        let mut best_i = 0usize;
                        for ky in 0..self.k {
                            let sy = oy * self.stride + ky;
                            for kx in 0..self.k {
                                let sx = ox * self.stride + kx;
                                let v = plane[sy * w + sx];
                                if v > best {
                                    best = v;
                                    best_i = sy * w + sx;
                                }
                            }
                        }
                        y.data[out_base + oy * ow + ox] = best;
                        argmax[out_base + oy * ow + ox] = best_i as u32;
                    }
                }
            }
        }
        Ok((
            y,
            LayerCache::MaxPool {
                argmax,
                in_shape: [c, h, w],
                batch: n,
                out_hw: [oh, ow],
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        cache: &LayerCache<S>,
        dy: &Tensor<S>,
    ) -> Result<Tensor<S>, ShapeError> {
        let LayerCache::MaxPool {
            argmax,
            in_shape,
            batch,
            out_hw,
        } = cache
        else {
            return Err(shape_err("maxpool", "wrong cache kind".into()));
        };
        let [c, h, w] = *in_shape;
        let [oh, ow] = *out_hw;
        let mut dx = Tensor::zeros(&[*batch, c, h, w]);
        for s in 0..*batch {
            for ci in 0..c {
                let out_base = (s * c + ci) * oh * ow;
                let in_base = (s * c + ci) * h * w;
                for o in 0..oh * ow {
                    dx.data[in_base + argmax[out_base + o] as usize] += dy.data[out_base + o];
                }
            }
        }
        Ok(dx)
    }
}

impl Dropout {
    pub fn forward<S: Scalar>(&self, x: &Tensor<S>, ctx: &ForwardCtx) -> (Tensor<S>, LayerCache<S>) {
        if ctx.mode == Mode::Eval || self.rate == 0.0 {
            return (x.clone(), LayerCache::Dropout { scale: Vec::new() });
        }
        let keep = 1.0 - self.rate;
        let inv_keep = S::from_f64(1.0 / keep);
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(
            ctx.seed,
            &[0xD0, self.salt],
        ));
        let mut y = Tensor::zeros(&x.shape);
        let mut scale = vec![S::zero(); x.data.len()];
        for i in 0..x.data.len() {
            if rng.random::<f64>() < keep {
                scale[i] = inv_keep;
                y.data[i] = x.data[i] * inv_keep;
            }
        }
        (y, LayerCache::Dropout { scale })
    }

    pub fn backward<S: Scalar>(&self, cache: &LayerCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let LayerCache::Dropout { scale } = cache else {
            panic!("dropout: wrong cache kind");
        };
        if scale.is_empty() {
            return dy.clone();
        }
        let mut dx = Tensor::zeros(&dy.shape);
        for i in 0..dy.data.len() {
            dx.data[i] = dy.data[i] * scale[i];
        }
        dx
    }
}

impl<S: Scalar> Dense<S> {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[d_out, d_in]).with_grad(),
            b: Tensor::zeros(&[d_out]).with_grad(),
        }
    }

    /// Input `[N, d_in]` -> `[N, d_out]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, LayerCache<S>), ShapeError> {
        let (d_out, d_in) = (self.w.shape[0], self.w.shape[1]);
        if x.shape.len() != 2 || x.shape[1] != d_in {
            return Err(shape_err(
                "dense",
                format!("input {:?} vs weight [{}x{}]", x.shape, d_out, d_in),
            ));
        }
        let n = x.shape[0];
        let mut y = Tensor::zeros(&[n, d_out]);
        matmul_nt_acc(&mut y.data, &x.data, &self.w.data, n, d_in, d_out);
        for s in 0..n {
            for o in 0..d_out {
                y.data[s * d_out + o] += self.b.data[o];
            }
        }
        Ok((
            y,
            LayerCache::Dense {
                input: x.data.clone(),
                batch: n,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &LayerCache<S>,
        dy: &Tensor<S>,
        need_dx: bool,
    ) -> Result<Option<Tensor<S>>, ShapeError> {
        let LayerCache::Dense { input, batch } = cache else {
            return Err(shape_err("dense", "wrong cache kind".into()));
        };
        let (d_out, d_in) = (self.w.shape[0], self.w.shape[1]);
        let n = *batch;
        // dW += dyᵀ · x
        matmul_tn_acc(self.w.grad_mut(), &dy.data, input, d_out, n, d_in);
        for s in 0..n {
            for o in 0..d_out {
                self.b.grad_mut()[o] += dy.data[s * d_out + o];
            }
        }
        if !need_dx {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(&[n, d_in]);
        matmul_nn_acc(&mut dx.data, &dy.data, &self.w.data, n, d_out, d_in);
        Ok(Some(dx))
    }
}
