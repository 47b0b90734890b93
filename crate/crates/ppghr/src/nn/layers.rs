//! Layers with explicit forward/backward passes.
//!
//! Conv tensors are `(batch, channels, length)`; attention and layer norm
//! operate on `(batch, seq, features)`; dense layers on `(batch, features)`.
//! Convolutions are stride-1 with symmetric zero padding (length-preserving);
//! transposed convolutions use stride 2 / kernel 4 / padding 1 so they double
//! the length exactly. Each `forward` returns the output plus a cache that
//! `backward` consumes; parameter gradients accumulate into the store.

use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

use super::param::{Init, ParamId, ParamStore};

/// Flatten (B, S, C) to (B*S, C).
fn seq_to_2d(x: &Array3<f64>) -> Array2<f64> {
    let (b, s, c) = x.dim();
    x.to_shape((b * s, c)).unwrap().to_owned()
}

/// Inflate (B*S, C) back to (B, S, C).
fn seq_to_3d(x: Array2<f64>, b: usize, s: usize) -> Array3<f64> {
    let c = x.ncols();
    x.into_shape_with_order((b, s, c)).unwrap()
}

/// (B, C, L) -> (B, L, C), contiguous.
pub fn channels_to_seq(x: &Array3<f64>) -> Array3<f64> {
    x.view().permuted_axes([0, 2, 1]).as_standard_layout().to_owned()
}

/// (B, L, C) -> (B, C, L), contiguous.
pub fn seq_to_channels(x: &Array3<f64>) -> Array3<f64> {
    x.view().permuted_axes([0, 2, 1]).as_standard_layout().to_owned()
}

fn param2(ps: &ParamStore, id: ParamId) -> Array2<f64> {
    ps.value(id).view().into_dimensionality::<Ix2>().unwrap().to_owned()
}

fn param1(ps: &ParamStore, id: ParamId) -> Array1<f64> {
    ps.value(id).view().into_dimensionality::<Ix1>().unwrap().to_owned()
}

// ---------------------------------------------------------------------------
// im2col-style gather/scatter shared by Conv1d and ConvTranspose1d
// ---------------------------------------------------------------------------

/// Valid kernel-tap range for an anchor: `j` such that
/// `0 <= a*stride - pad + j*dilation < l`.
#[inline]
fn tap_range(a: usize, stride: usize, k: usize, dilation: usize, pad: usize, l: usize) -> (usize, usize, isize) {
    let base = (a * stride) as isize - pad as isize;
    let d = dilation as isize;
    let j_lo = if base >= 0 { 0 } else { ((-base + d - 1) / d) as usize };
    let j_hi = {
        let room = l as isize - base; // need j*d < room
        if room <= 0 {
            0
        } else {
            (((room - 1) / d) as usize + 1).min(k)
        }
    };
    (j_lo, j_hi.max(j_lo), base)
}

/// For every batch element and anchor position `a`, collect the `C*k` samples
/// `x[b, c, a*stride + j*dilation - pad]` (zero outside bounds) into one row.
fn gather_cols(
    x: &Array3<f64>,
    anchors: usize,
    stride: usize,
    k: usize,
    dilation: usize,
    pad: usize,
) -> Array2<f64> {
    let (b, c, l) = x.dim();
    let mut cols = Array2::<f64>::zeros((b * anchors, c * k));
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    let row_w = c * k;
    for bi in 0..b {
        for a in 0..anchors {
            let (j_lo, j_hi, base) = tap_range(a, stride, k, dilation, pad, l);
            let row_off = (bi * anchors + a) * row_w;
            for ci in 0..c {
                let x_off = (bi * c + ci) * l;
                let c_off = row_off + ci * k;
                for j in j_lo..j_hi {
                    let t = (base + (j * dilation) as isize) as usize;
                    cs[c_off + j] = xs[x_off + t];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`gather_cols`]: scatter-add rows back into a (B, C, L) tensor.
fn scatter_cols(
    z: &Array2<f64>,
    b: usize,
    c: usize,
    l: usize,
    anchors: usize,
    stride: usize,
    k: usize,
    dilation: usize,
    pad: usize,
) -> Array3<f64> {
    let mut out = Array3::<f64>::zeros((b, c, l));
    let zs = z.as_slice().expect("standard layout");
    let os = out.as_slice_mut().unwrap();
    let row_w = c * k;
    for bi in 0..b {
        for a in 0..anchors {
            let (j_lo, j_hi, base) = tap_range(a, stride, k, dilation, pad, l);
            let row_off = (bi * anchors + a) * row_w;
            for ci in 0..c {
                let o_off = (bi * c + ci) * l;
                let z_off = row_off + ci * k;
                for j in j_lo..j_hi {
                    let t = (base + (j * dilation) as isize) as usize;
                    os[o_off + t] += zs[z_off + j];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

/// Length-preserving 1-D convolution (stride 1, symmetric zero padding).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub dilation: usize,
    pub pad: usize,
}

pub struct Conv1dCache {
    x: Array3<f64>,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(k % 2 == 1, "same-padding conv needs an odd kernel");
        let pad = (k - 1) * dilation / 2;
        let w = ps.alloc(
            format!("{name}.w"),
            &[c_out, c_in, k],
            Init::FanInUniform { fan_in: c_in * k, rng },
        );
        let b = ps.alloc(format!("{name}.b"), &[c_out], Init::Zeros);
        Conv1d { w, b, c_in, c_out, k, dilation, pad }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, Conv1dCache) {
        let (b, c, l) = x.dim();
        assert_eq!(c, self.c_in, "conv {}: want {} input channels, got {c}", ps.name(self.w), self.c_in);
        let cols = gather_cols(x, l, 1, self.k, self.dilation, self.pad);
        let w2 = param2_from3(ps, self.w, self.c_out, self.c_in * self.k);
        let bias = param1(ps, self.b);
        let mut y2 = cols.dot(&w2.t()); // (B*L, C_out)
        y2 += &bias;
        let y = seq_to_channels(&seq_to_3d(y2, b, l));
        (y, Conv1dCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &Conv1dCache,
        dy: &Array3<f64>,
    ) -> Array3<f64> {
        let (b, _, l) = cache.x.dim();
        let dy2 = seq_to_2d(&channels_to_seq(dy)); // (B*L, C_out)
        let cols = gather_cols(&cache.x, l, 1, self.k, self.dilation, self.pad);

        let dw2 = dy2.t().dot(&cols); // (C_out, C_in*k)
        let db = dy2.sum_axis(Axis(0));
        ps.add_grad(self.w, &dw2.into_shape_with_order((self.c_out, self.c_in, self.k)).unwrap().into_dyn());
        ps.add_grad(self.b, &db.into_dyn());

        let w2 = param2_from3(ps, self.w, self.c_out, self.c_in * self.k);
        let dcols = dy2.dot(&w2); // (B*L, C_in*k)
        scatter_cols(&dcols, b, self.c_in, l, l, 1, self.k, self.dilation, self.pad)
    }
}

/// View a (C_out, C_in, k) parameter as a (C_out, C_in*k) matrix.
fn param2_from3(ps: &ParamStore, id: ParamId, rows: usize, cols: usize) -> Array2<f64> {
    ps.value(id).view().to_shape((rows, cols)).unwrap().to_owned()
}

// ---------------------------------------------------------------------------
// ConvTranspose1d
// ---------------------------------------------------------------------------

/// Length-doubling transposed convolution (stride 2, kernel 4, padding 1).
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvTranspose1dCache {
    x: Array3<f64>,
}

impl ConvTranspose1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (k, stride, pad) = (4, 2, 1);
        let w = ps.alloc(
            format!("{name}.w"),
            &[c_in, c_out, k],
            Init::FanInUniform { fan_in: c_in * k / stride, rng },
        );
        let b = ps.alloc(format!("{name}.b"), &[c_out], Init::Zeros);
        ConvTranspose1d { w, b, c_in, c_out, k, stride, pad }
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, ConvTranspose1dCache) {
        let (b, c, l) = x.dim();
        assert_eq!(c, self.c_in);
        let l_out = self.out_len(l);
        let x2 = seq_to_2d(&channels_to_seq(x)); // (B*L, C_in)
        let wt2 = param2_from3(ps, self.w, self.c_in, self.c_out * self.k);
        let z = x2.dot(&wt2); // (B*L, C_out*k)
        let mut y = scatter_cols(&z, b, self.c_out, l_out, l, self.stride, self.k, 1, self.pad);
        let bias = param1(ps, self.b);
        for bi in 0..b {
            for o in 0..self.c_out {
                y.slice_mut(s![bi, o, ..]).mapv_inplace(|v| v + bias[o]);
            }
        }
        (y, ConvTranspose1dCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &ConvTranspose1dCache,
        dy: &Array3<f64>,
    ) -> Array3<f64> {
        let (b, _, l) = cache.x.dim();
        let dz = gather_cols(dy, l, self.stride, self.k, 1, self.pad); // (B*L, C_out*k)
        let x2 = seq_to_2d(&channels_to_seq(&cache.x));

        let dwt2 = x2.t().dot(&dz); // (C_in, C_out*k)
        let db = dy.sum_axis(Axis(2)).sum_axis(Axis(0));
        ps.add_grad(self.w, &dwt2.into_shape_with_order((self.c_in, self.c_out, self.k)).unwrap().into_dyn());
        ps.add_grad(self.b, &db.into_dyn());

        let wt2 = param2_from3(ps, self.w, self.c_in, self.c_out * self.k);
        let dx2 = dz.dot(&wt2.t()); // (B*L, C_in)
        seq_to_channels(&seq_to_3d(dx2, b, l))
    }
}

// ---------------------------------------------------------------------------
// Average pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct AvgPool1d {
    pub factor: usize,
}

impl AvgPool1d {
    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (b, c, l) = x.dim();
        assert!(l % self.factor == 0, "pool factor {} does not divide length {l}", self.factor);
        let lo = l / self.factor;
        let mut y = Array3::<f64>::zeros((b, c, lo));
        let inv = 1.0 / self.factor as f64;
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..lo {
                    let mut acc = 0.0;
                    for j in 0..self.factor {
                        acc += x[[bi, ci, t * self.factor + j]];
                    }
                    y[[bi, ci, t]] = acc * inv;
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &Array3<f64>) -> Array3<f64> {
        let (b, c, lo) = dy.dim();
        let mut dx = Array3::<f64>::zeros((b, c, lo * self.factor));
        let inv = 1.0 / self.factor as f64;
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..lo {
                    let g = dy[[bi, ci, t]] * inv;
                    for j in 0..self.factor {
                        dx[[bi, ci, t * self.factor + j]] = g;
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub struct ReluCache {
    mask: ArrayD<f64>,
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> (ndarray::Array<f64, D>, ReluCache) {
    let y = x.mapv(|v| v.max(0.0));
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }).into_dyn();
    (y, ReluCache { mask })
}

pub fn relu_backward<D: ndarray::Dimension>(
    cache: &ReluCache,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mask = cache.mask.view().into_dimensionality::<D>().unwrap();
    dy * &mask
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.alloc(
            format!("{name}.w"),
            &[c_out, c_in],
            Init::FanInUniform { fan_in: c_in, rng },
        );
        let b = ps.alloc(format!("{name}.b"), &[c_out], Init::Zeros);
        Linear { w, b, c_in, c_out }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        assert_eq!(x.ncols(), self.c_in);
        let w = param2(ps, self.w);
        let bias = param1(ps, self.b);
        let mut y = x.dot(&w.t());
        y += &bias;
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&self, ps: &mut ParamStore, cache: &LinearCache, dy: &Array2<f64>) -> Array2<f64> {
        let dw = dy.t().dot(&cache.x);
        let db = dy.sum_axis(Axis(0));
        ps.add_grad(self.w, &dw.into_dyn());
        ps.add_grad(self.b, &db.into_dyn());
        let w = param2(ps, self.w);
        dy.dot(&w)
    }
}

// ---------------------------------------------------------------------------
// LayerNorm (over the feature axis of (B, S, C))
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

pub struct LayerNormCache {
    xhat: Array3<f64>,
    inv_std: Array2<f64>,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = ps.alloc(format!("{name}.gamma"), &[dim], Init::Ones);
        let beta = ps.alloc(format!("{name}.beta"), &[dim], Init::Zeros);
        LayerNorm { gamma, beta, dim, eps: 1e-5 }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, LayerNormCache) {
        let (b, s, c) = x.dim();
        assert_eq!(c, self.dim);
        let gamma = param1(ps, self.gamma);
        let beta = param1(ps, self.beta);
        let mut xhat = Array3::<f64>::zeros((b, s, c));
        let mut inv_std = Array2::<f64>::zeros((b, s));
        let mut y = Array3::<f64>::zeros((b, s, c));
        for bi in 0..b {
            for si in 0..s {
                let row = x.slice(s![bi, si, ..]);
                let mean = row.mean().unwrap();
                let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[[bi, si]] = istd;
                for ci in 0..c {
                    let h = (x[[bi, si, ci]] - mean) * istd;
                    xhat[[bi, si, ci]] = h;
                    y[[bi, si, ci]] = gamma[ci] * h + beta[ci];
                }
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &LayerNormCache,
        dy: &Array3<f64>,
    ) -> Array3<f64> {
        let (b, s, c) = dy.dim();
        let gamma = param1(ps, self.gamma);
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        let mut dx = Array3::<f64>::zeros((b, s, c));
        let n = c as f64;
        for bi in 0..b {
            for si in 0..s {
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for ci in 0..c {
                    let g = dy[[bi, si, ci]];
                    let h = cache.xhat[[bi, si, ci]];
                    dgamma[ci] += g * h;
                    dbeta[ci] += g;
                    let dxh = g * gamma[ci];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * h;
                }
                let istd = cache.inv_std[[bi, si]];
                for ci in 0..c {
                    let dxh = dy[[bi, si, ci]] * gamma[ci];
                    let h = cache.xhat[[bi, si, ci]];
                    dx[[bi, si, ci]] =
                        istd / n * (n * dxh - sum_dxhat - h * sum_dxhat_xhat);
                }
            }
        }
        ps.add_grad(self.gamma, &dgamma.into_dyn());
        ps.add_grad(self.beta, &dbeta.into_dyn());
        dx
    }
}

// ---------------------------------------------------------------------------
// Multi-head attention (cross or self)
// ---------------------------------------------------------------------------

/// Multi-head scaled-dot-product attention with learned Q/K/V/O projections.
/// Queries may come from a different stream than keys/values (cross-attention)
/// or the same one (self-attention).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache {
    q_in: Array3<f64>,
    kv_in: Array3<f64>,
    q: Array3<f64>,
    k: Array3<f64>,
    v: Array3<f64>,
    /// Softmax weights, (B, H, Sq, Sk).
    attn: ndarray::Array4<f64>,
    ctx: Array3<f64>,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim % heads == 0, "feature dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            wq: Linear::new(ps, &format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(ps, &format!("{name}.wo"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// `q_in`: (B, Sq, C) query stream; `kv_in`: (B, Sk, C) key/value stream.
    pub fn forward(
        &self,
        ps: &ParamStore,
        q_in: &Array3<f64>,
        kv_in: &Array3<f64>,
    ) -> (Array3<f64>, AttentionCache) {
        let (b, sq, c) = q_in.dim();
        let (_, sk, _) = kv_in.dim();
        let h = self.heads;
        let d = c / h;
        let scale = 1.0 / (d as f64).sqrt();

        let (q2, _) = self.wq.forward(ps, &seq_to_2d(q_in));
        let (k2, _) = self.wk.forward(ps, &seq_to_2d(kv_in));
        let (v2, _) = self.wv.forward(ps, &seq_to_2d(kv_in));
        let q = seq_to_3d(q2, b, sq);
        let k = seq_to_3d(k2, b, sk);
        let v = seq_to_3d(v2, b, sk);

        let mut attn = ndarray::Array4::<f64>::zeros((b, h, sq, sk));
        let mut ctx = Array3::<f64>::zeros((b, sq, c));
        for bi in 0..b {
            for hi in 0..h {
                let qh = q.slice(s![bi, .., hi * d..(hi + 1) * d]);
                let kh = k.slice(s![bi, .., hi * d..(hi + 1) * d]);
                let vh = v.slice(s![bi, .., hi * d..(hi + 1) * d]);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                // row-wise softmax
                for mut row in scores.rows_mut() {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|x| (x - max).exp());
                    let z = row.sum();
                    row.mapv_inplace(|x| x / z);
                }
                let ctx_h = scores.dot(&vh);
                attn.slice_mut(s![bi, hi, .., ..]).assign(&scores);
                ctx.slice_mut(s![bi, .., hi * d..(hi + 1) * d]).assign(&ctx_h);
            }
        }
        let (out2, _) = self.wo.forward(ps, &seq_to_2d(&ctx));
        let out = seq_to_3d(out2, b, sq);
        (
            out,
            AttentionCache { q_in: q_in.clone(), kv_in: kv_in.clone(), q, k, v, attn, ctx },
        )
    }

    /// Returns `(d_q_in, d_kv_in)`. For self-attention add them up.
    pub fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &AttentionCache,
        dout: &Array3<f64>,
    ) -> (Array3<f64>, Array3<f64>) {
        let (b, sq, c) = cache.q_in.dim();
        let sk = cache.kv_in.dim().1;
        let h = self.heads;
        let d = c / h;
        let scale = 1.0 / (d as f64).sqrt();

        // Output projection
        let wo_cache = LinearCache { x: seq_to_2d(&cache.ctx) };
        let dctx2 = self.wo.backward(ps, &wo_cache, &seq_to_2d(dout));
        let dctx = seq_to_3d(dctx2, b, sq);

        let mut dq = Array3::<f64>::zeros((b, sq, c));
        let mut dk = Array3::<f64>::zeros((b, sk, c));
        let mut dv = Array3::<f64>::zeros((b, sk, c));
        for bi in 0..b {
            for hi in 0..h {
                let cols = hi * d..(hi + 1) * d;
                let a = cache.attn.slice(s![bi, hi, .., ..]);
                let qh = cache.q.slice(s![bi, .., cols.clone()]);
                let kh = cache.k.slice(s![bi, .., cols.clone()]);
                let vh = cache.v.slice(s![bi, .., cols.clone()]);
                let dctx_h = dctx.slice(s![bi, .., cols.clone()]);

                let da = dctx_h.dot(&vh.t()); // (Sq, Sk)
                let dvh = a.t().dot(&dctx_h); // (Sk, d)

                // softmax backward, row-wise
                let mut ds = Array2::<f64>::zeros((sq, sk));
                for i in 0..sq {
                    let dot: f64 = (0..sk).map(|j| da[[i, j]] * a[[i, j]]).sum();
                    for j in 0..sk {
                        ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
                    }
                }
                ds *= scale;

                let dqh = ds.dot(&kh); // (Sq, d)
                let dkh = ds.t().dot(&qh); // (Sk, d)

                dq.slice_mut(s![bi, .., cols.clone()]).assign(&dqh);
                dk.slice_mut(s![bi, .., cols.clone()]).assign(&dkh);
                dv.slice_mut(s![bi, .., cols]).assign(&dvh);
            }
        }

        let wq_cache = LinearCache { x: seq_to_2d(&cache.q_in) };
        let wk_cache = LinearCache { x: seq_to_2d(&cache.kv_in) };
        let wv_cache = LinearCache { x: seq_to_2d(&cache.kv_in) };
        let dq_in2 = self.wq.backward(ps, &wq_cache, &seq_to_2d(&dq));
        let dk_in2 = self.wk.backward(ps, &wk_cache, &seq_to_2d(&dk));
        let dv_in2 = self.wv.backward(ps, &wv_cache, &seq_to_2d(&dv));

        let dq_in = seq_to_3d(dq_in2, b, sq);
        let dkv_in = seq_to_3d(dk_in2 + dv_in2, b, sk);
        (dq_in, dkv_in)
    }
}

// ---------------------------------------------------------------------------
// Channel concat (skip connections)
// ---------------------------------------------------------------------------

/// Concatenate along the channel axis of (B, C, L) tensors.
pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).unwrap()
}

/// Split a channel-axis gradient back into the two concat inputs.
pub fn split_channels(d: &Array3<f64>, first: usize) -> (Array3<f64>, Array3<f64>) {
    let a = d.slice(s![.., ..first, ..]).to_owned();
    let b = d.slice(s![.., first.., ..]).to_owned();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;

    #[test]
    fn conv_shapes_and_identity_kernel() {
        let mut ps = ParamStore::new();
        let mut rng = rng_for(0, "t");
        let conv = Conv1d::new(&mut ps, "c", 2, 3, 3, 1, &mut rng);
        let x = Array3::<f64>::from_shape_fn((2, 2, 8), |(b, c, t)| (b + c + t) as f64);
        let (y, _) = conv.forward(&ps, &x);
        assert_eq!(y.dim(), (2, 3, 8));

        // center-tap identity: w[0,0,1]=1, rest 0 -> output ch0 == input ch0
        ps.value_mut(conv.w).fill(0.0);
        ps.value_mut(conv.w)[[0, 0, 1]] = 1.0;
        let (y, _) = conv.forward(&ps, &x);
        for b in 0..2 {
            for t in 0..8 {
                assert_eq!(y[[b, 0, t]], x[[b, 0, t]]);
            }
        }
    }

    #[test]
    fn dilated_conv_uses_wider_support() {
        let mut ps = ParamStore::new();
        let mut rng = rng_for(0, "t");
        let conv = Conv1d::new(&mut ps, "c", 1, 1, 5, 2, &mut rng);
        assert_eq!(conv.pad, 4);
        // receptive field (k-1)*dil = 8, same as kernel 9 dilation 1
        let x = Array3::<f64>::zeros((1, 1, 16));
        let (y, _) = conv.forward(&ps, &x);
        assert_eq!(y.dim(), (1, 1, 16));
    }

    #[test]
    fn conv_transpose_doubles_length() {
        let mut ps = ParamStore::new();
        let mut rng = rng_for(0, "t");
        let ct = ConvTranspose1d::new(&mut ps, "u", 3, 2, &mut rng);
        let x = Array3::<f64>::from_shape_fn((2, 3, 5), |(b, c, t)| (b * 100 + c * 10 + t) as f64);
        let (y, _) = ct.forward(&ps, &x);
        assert_eq!(y.dim(), (2, 2, 10));
    }

    #[test]
    fn avg_pool_round_trip_shapes() {
        let pool = AvgPool1d { factor: 2 };
        let x = Array3::<f64>::from_shape_fn((1, 2, 6), |(_, c, t)| (c * 6 + t) as f64);
        let y = pool.forward(&x);
        assert_eq!(y.dim(), (1, 2, 3));
        assert_eq!(y[[0, 0, 0]], 0.5);
        let dx = pool.backward(&y);
        assert_eq!(dx.dim(), (1, 2, 6));
        assert_eq!(dx[[0, 0, 0]], 0.25);
    }

    #[test]
    fn attention_output_shape() {
        let mut ps = ParamStore::new();
        let mut rng = rng_for(1, "t");
        let mha = MultiHeadAttention::new(&mut ps, "a", 8, 2, &mut rng);
        let q = Array3::<f64>::from_shape_fn((2, 5, 8), |(b, s, c)| (b + s + c) as f64 * 0.1);
        let kv = Array3::<f64>::from_shape_fn((2, 7, 8), |(b, s, c)| (b + s + c) as f64 * 0.05);
        let (y, cache) = mha.forward(&ps, &q, &kv);
        assert_eq!(y.dim(), (2, 5, 8));
        // attention rows sum to 1
        let a = cache.attn.slice(s![0, 0, 0, ..]);
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_normalizes_features() {
        let mut ps = ParamStore::new();
        let ln = LayerNorm::new(&mut ps, "ln", 6);
        let x = Array3::<f64>::from_shape_fn((1, 2, 6), |(_, s, c)| (s * 6 + c) as f64);
        let (y, _) = ln.forward(&ps, &x);
        let row = y.slice(s![0, 0, ..]);
        assert!(row.mean().unwrap().abs() < 1e-9);
        let var = row.mapv(|v| v * v).mean().unwrap();
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::nn::ParamStore;
    use crate::util::rng_for;
    use ndarray::Array3;
    use rand::Rng;

    /// Quadratic-loss finite-difference check of attention + layer norm,
    /// every parameter, no nonlinearity kinks in the path.
    #[test]
    fn attention_layernorm_gradients_exact() {
        let mut ps = ParamStore::new();
        let mut rng = rng_for(5, "grad");
        let mha = MultiHeadAttention::new(&mut ps, "a", 8, 2, &mut rng);
        let ln = LayerNorm::new(&mut ps, "ln", 8);
        let mut gen = rng_for(6, "data");
        // randomize the norm parameters so gamma-dependent terms are exercised
        ps.value_mut(ln.gamma).mapv_inplace(|_| gen.gen_range(0.5..1.5));
        ps.value_mut(ln.beta).mapv_inplace(|_| gen.gen_range(-0.5..0.5));
        let q = Array3::<f64>::from_shape_fn((2, 3, 8), |_| gen.gen_range(-1.0..1.0));
        let kv = Array3::<f64>::from_shape_fn((2, 4, 8), |_| gen.gen_range(-1.0..1.0));

        let eval = |ps: &ParamStore| -> f64 {
            let (y, _) = mha.forward(ps, &q, &kv);
            let (z, _) = ln.forward(ps, &y);
            0.5 * z.iter().map(|v| v * v).sum::<f64>()
        };

        ps.zero_grads();
        let (y, mha_cache) = mha.forward(&ps, &q, &kv);
        let (z, ln_cache) = ln.forward(&ps, &y);
        let dz = z.clone();
        let dy = ln.backward(&mut ps, &ln_cache, &dz);
        let (_dq, _dkv) = mha.backward(&mut ps, &mha_cache, &dy);

        let h = 1e-5;
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            let len = ps.value(id).len();
            for idx in (0..len).step_by(len.div_ceil(5).max(1)) {
                let analytic = ps.grad(id).as_slice().unwrap()[idx];
                let orig = ps.value(id).as_slice().unwrap()[idx];
                ps.value_mut(id).as_slice_mut().unwrap()[idx] = orig + h;
                let up = eval(&ps);
                ps.value_mut(id).as_slice_mut().unwrap()[idx] = orig - h;
                let down = eval(&ps);
                ps.value_mut(id).as_slice_mut().unwrap()[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-10);
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 1e-5 || (analytic - numeric).abs() < 1e-8,
                    "{}[{idx}]: analytic {analytic:.6e}, numeric {numeric:.6e}, rel {rel:.2e}",
                    ps.name(id)
                );
            }
        }
    }

    /// Same treatment for conv, transposed conv and pooling.
    #[test]
    fn conv_stack_gradients_exact() {
        let mut ps = ParamStore::new();
        let mut rng = rng_for(7, "grad");
        let conv = Conv1d::new(&mut ps, "c", 2, 3, 5, 2, &mut rng);
        let ct = ConvTranspose1d::new(&mut ps, "u", 3, 2, &mut rng);
        let pool = AvgPool1d { factor: 2 };
        let mut gen = rng_for(8, "data");
        let x = Array3::<f64>::from_shape_fn((2, 2, 12), |_| gen.gen_range(-1.0..1.0));

        let eval = |ps: &ParamStore| -> f64 {
            let (a, _) = conv.forward(ps, &x);
            let p = pool.forward(&a);
            let (y, _) = ct.forward(ps, &p);
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };

        ps.zero_grads();
        let (a, c_cache) = conv.forward(&ps, &x);
        let p = pool.forward(&a);
        let (y, u_cache) = ct.forward(&ps, &p);
        let dy = y.clone();
        let dp = ct.backward(&mut ps, &u_cache, &dy);
        let da = pool.backward(&dp);
        let _dx = conv.backward(&mut ps, &c_cache, &da);

        let h = 1e-5;
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            let len = ps.value(id).len();
            for idx in (0..len).step_by(len.div_ceil(7).max(1)) {
                let analytic = ps.grad(id).as_slice().unwrap()[idx];
                let orig = ps.value(id).as_slice().unwrap()[idx];
                ps.value_mut(id).as_slice_mut().unwrap()[idx] = orig + h;
                let up = eval(&ps);
                ps.value_mut(id).as_slice_mut().unwrap()[idx] = orig - h;
                let down = eval(&ps);
                ps.value_mut(id).as_slice_mut().unwrap()[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-10);
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 1e-5 || (analytic - numeric).abs() < 1e-8,
                    "{}[{idx}]: analytic {analytic:.6e}, numeric {numeric:.6e}, rel {rel:.2e}",
                    ps.name(id)
                );
            }
        }
    }
}
