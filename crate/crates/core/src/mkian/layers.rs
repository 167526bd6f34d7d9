//! Forward and backward passes of the individual MKIAN layers. Sentence
//! matrices are `n x D` with one row per chain position; weights act on rows.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};

use super::config::{sigmoid, Activation, LocalMask};
use super::params::RgcnLayerParams;

pub const LN_EPS: f64 = 1e-5;

fn activate(z: &Array2<f64>, act: Activation) -> Array2<f64> {
    z.mapv(|v| act.apply(v))
}

/// `upstream * act'(z)`
fn through_activation(upstream: &Array2<f64>, z: &Array2<f64>, act: Activation) -> Array2<f64> {
    let mut out = upstream.clone();
    Zip::from(&mut out).and(z).for_each(|g, &zv| *g *= act.derivative(zv));
    out
}

fn mask_rows(a: &mut Array2<f64>, mask: &[f64]) {
    for (mut row, &m) in a.rows_mut().into_iter().zip(mask) {
        if m == 0.0 {
            row.fill(0.0);
        }
    }
}

// ---- local knowledge layer ----

/// Rows (0-based) of the receptive-field window of the last row:
/// `max(0, n-1-2(γ-1)) ..= n-1`.
pub fn local_window(n: usize, kernel_size: usize) -> Range<usize> {
    let reach = 2 * (kernel_size - 1);
    (n - 1).saturating_sub(reach)..n
}

/// (input, hidden, output) row masks.
pub fn local_masks(n: usize, kernel_size: usize, mode: LocalMask) -> [Vec<f64>; 3] {
    let window = local_window(n, kernel_size);
    let win: Vec<f64> = (0..n).map(|i| if window.contains(&i) { 1.0 } else { 0.0 }).collect();
    match mode {
        LocalMask::Window => [win.clone(), win.clone(), win],
        LocalMask::Literal => {
            let last: Vec<f64> = (0..n).map(|i| if i == n - 1 { 1.0 } else { 0.0 }).collect();
            [vec![1.0; n], vec![1.0; n], last]
        }
    }
}

/// Zero-padded 1-D convolution along the row axis. `kernel` is
/// `(γ, D_in, D_out)`; tap `k` reads row `i + k - γ/2`.
pub fn conv1d(x: &Array2<f64>, kernel: &Array3<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let n = x.nrows();
    let g = kernel.shape()[0];
    let pad = g / 2;
    let mut y = Array2::zeros((n, kernel.shape()[2]));
    y += bias;
    for k in 0..g {
        let (lo, hi) = tap_rows(n, k, pad);
        if lo >= hi {
            continue;
        }
        let src = x.slice(s![lo + k - pad..hi + k - pad, ..]);
        let w = kernel.index_axis(Axis(0), k);
        let mut dst = y.slice_mut(s![lo..hi, ..]);
        dst += &src.dot(&w);
    }
    y
}

/// Output rows `lo..hi` whose tap `k` lands inside the input.
fn tap_rows(n: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (n + pad).saturating_sub(k).min(n);
    (lo, hi)
}

/// Returns `(dx, dkernel, dbias)`.
pub fn conv1d_backward(
    x: &Array2<f64>,
    kernel: &Array3<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array3<f64>, Array1<f64>) {
    let n = x.nrows();
    let g = kernel.shape()[0];
    let pad = g / 2;
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dk = Array3::zeros(kernel.raw_dim());
    for k in 0..g {
        let (lo, hi) = tap_rows(n, k, pad);
        if lo >= hi {
            continue;
        }
        let dy_rows = dy.slice(s![lo..hi, ..]);
        let src = x.slice(s![lo + k - pad..hi + k - pad, ..]);
        let w = kernel.index_axis(Axis(0), k);
        let mut dxs = dx.slice_mut(s![lo + k - pad..hi + k - pad, ..]);
        dxs += &dy_rows.dot(&w.t());
        let mut dks = dk.index_axis_mut(Axis(0), k);
        dks += &src.t().dot(&dy_rows);
    }
    (dx, dk, dy.sum_axis(Axis(0)))
}

pub struct LocalParamsRef<'a> {
    pub k1: &'a Array3<f64>,
    pub b1: &'a Array1<f64>,
    pub k2: &'a Array3<f64>,
    pub b2: &'a Array1<f64>,
}

pub struct LocalCache {
    x0: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    masks: [Vec<f64>; 3],
}

pub struct LocalGrads {
    pub k1: Array3<f64>,
    pub b1: Array1<f64>,
    pub k2: Array3<f64>,
    pub b2: Array1<f64>,
}

/// Two width-γ convolutions with row masks; see [`local_masks`].
pub fn local_forward(
    h: &Array2<f64>,
    p: &LocalParamsRef<'_>,
    kernel_size: usize,
    mode: LocalMask,
    act: Activation,
) -> (Array2<f64>, LocalCache) {
    let masks = local_masks(h.nrows(), kernel_size, mode);
    let mut x0 = h.clone();
    mask_rows(&mut x0, &masks[0]);
    let z1 = conv1d(&x0, p.k1, p.b1);
    let mut a1 = activate(&z1, act);
    mask_rows(&mut a1, &masks[1]);
    let z2 = conv1d(&a1, p.k2, p.b2);
    let mut out = activate(&z2, act);
    mask_rows(&mut out, &masks[2]);
    (out, LocalCache { x0, z1, a1, z2, masks })
}

pub fn local_backward(
    cache: &LocalCache,
    dout: &Array2<f64>,
    p: &LocalParamsRef<'_>,
    act: Activation,
) -> (Array2<f64>, LocalGrads) {
    let mut dz2 = through_activation(dout, &cache.z2, act);
    mask_rows(&mut dz2, &cache.masks[2]);
    let (mut da1, k2, b2) = conv1d_backward(&cache.a1, p.k2, &dz2);
    mask_rows(&mut da1, &cache.masks[1]);
    let dz1 = through_activation(&da1, &cache.z1, act);
    let (mut dx0, k1, b1) = conv1d_backward(&cache.x0, p.k1, &dz1);
    mask_rows(&mut dx0, &cache.masks[0]);
    (dx0, LocalGrads { k1, b1, k2, b2 })
}

// ---- contextual layer (two-round GCN) ----

pub struct ContextCache {
    ah: Array2<f64>,
    z1: Array2<f64>,
    aa1: Array2<f64>,
    z2: Array2<f64>,
}

/// `σ(Ã σ(Ã H W0) W1)`
pub fn contextual_forward(
    h: &Array2<f64>,
    adj: &Array2<f64>,
    w0: &Array2<f64>,
    w1: &Array2<f64>,
    act: Activation,
) -> (Array2<f64>, ContextCache) {
    let ah = adj.dot(h);
    let z1 = ah.dot(w0);
    let a1 = activate(&z1, act);
    let aa1 = adj.dot(&a1);
    let z2 = aa1.dot(w1);
    let out = activate(&z2, act);
    (out, ContextCache { ah, z1, aa1, z2 })
}

/// Returns `(dH, dW0, dW1)`.
pub fn contextual_backward(
    cache: &ContextCache,
    adj: &Array2<f64>,
    w0: &Array2<f64>,
    w1: &Array2<f64>,
    act: Activation,
    dout: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dz2 = through_activation(dout, &cache.z2, act);
    let dw1 = cache.aa1.t().dot(&dz2);
    let da1 = adj.t().dot(&dz2.dot(&w1.t()));
    let dz1 = through_activation(&da1, &cache.z1, act);
    let dw0 = cache.ah.t().dot(&dz1);
    let dh = adj.t().dot(&dz1.dot(&w0.t()));
    (dh, dw0, dw1)
}

// ---- relational layers ----

/// Mean-aggregation matrix of one relation type that has at least one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub rel: usize,
    pub matrix: Array2<f64>,
}

pub struct RgcnCache {
    x: Array2<f64>,
    ax: Vec<Array2<f64>>,
    z: Array2<f64>,
}

/// One round: `σ(Σ_rel A_rel X W_rel + X W_self)`.
pub fn rgcn_layer_forward(
    x: &Array2<f64>,
    aggs: &[Aggregation],
    layer: &RgcnLayerParams,
    act: Activation,
) -> (Array2<f64>, RgcnCache) {
    let mut z = x.dot(&layer.self_loop);
    let mut ax = Vec::with_capacity(aggs.len());
    for agg in aggs {
        let m = agg.matrix.dot(x);
        z += &m.dot(&layer.relation[agg.rel]);
        ax.push(m);
    }
    let out = activate(&z, act);
    (out, RgcnCache { x: x.clone(), ax, z })
}

/// Accumulates weight gradients into `grads`; returns `dX`.
pub fn rgcn_layer_backward(
    cache: &RgcnCache,
    aggs: &[Aggregation],
    layer: &RgcnLayerParams,
    act: Activation,
    dout: &Array2<f64>,
    grads: &mut RgcnLayerParams,
) -> Array2<f64> {
    let dz = through_activation(dout, &cache.z, act);
    grads.self_loop += &cache.x.t().dot(&dz);
    let mut dx = dz.dot(&layer.self_loop.t());
    for (agg, ax) in aggs.iter().zip(&cache.ax) {
        grads.relation[agg.rel] += &ax.t().dot(&dz);
        dx += &agg.matrix.t().dot(&dz.dot(&layer.relation[agg.rel].t()));
    }
    dx
}

pub fn relational_forward(
    h: &Array2<f64>,
    aggs: &[Aggregation],
    layers: &[RgcnLayerParams],
    act: Activation,
) -> (Array2<f64>, Vec<RgcnCache>) {
    let mut x = h.clone();
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (out, c) = rgcn_layer_forward(&x, aggs, layer, act);
        caches.push(c);
        x = out;
    }
    (x, caches)
}

pub fn relational_backward(
    caches: &[RgcnCache],
    aggs: &[Aggregation],
    layers: &[RgcnLayerParams],
    act: Activation,
    dout: &Array2<f64>,
    grads: &mut [RgcnLayerParams],
) -> Array2<f64> {
    let mut d = dout.clone();
    for l in (0..layers.len()).rev() {
        d = rgcn_layer_backward(&caches[l], aggs, &layers[l], act, &d, &mut grads[l]);
    }
    d
}

// ---- multi-hop attention ----

pub struct HopCache {
    x: Array2<f64>,
    c: Array1<f64>,
    s: Array2<f64>,
    shat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer normalization without affine terms; returns the
/// normalized matrix and each row's `1 / sqrt(var + eps)`.
pub fn layer_norm_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv[i] = is;
    }
    (out, inv)
}

/// `p` hops of `H <- λ·LN(sigmoid(c ⊙ H)) + H` with `c = H h_n^T`, where
/// `h_n` is the current last row. `gains`/`biases` are `(p, D)`.
pub fn multihop_forward(
    h: &Array2<f64>,
    gains: &Array2<f64>,
    biases: &Array2<f64>,
    lambda: f64,
) -> (Array2<f64>, Vec<HopCache>) {
    let n = h.nrows();
    let hops = gains.nrows();
    let mut x = h.clone();
    let mut caches = Vec::with_capacity(hops);
    for m in 0..hops {
        let q = x.row(n - 1).to_owned();
        let c = x.dot(&q);
        let mut r = x.clone();
        for (mut row, &ci) in r.rows_mut().into_iter().zip(c.iter()) {
            row *= ci;
        }
        let s_ = r.mapv(sigmoid);
        let (shat, inv_std) = layer_norm_rows(&s_);
        let ln = &shat * &gains.row(m) + &biases.row(m);
        let next = ln * lambda + &x;
        caches.push(HopCache {
            x,
            c,
            s: s_,
            shat,
            inv_std,
        });
        x = next;
    }
    (x, caches)
}

/// Returns `(dH, dgains, dbiases)` given the gradient w.r.t. the final matrix.
pub fn multihop_backward(
    caches: &[HopCache],
    gains: &Array2<f64>,
    lambda: f64,
    d_final: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut dgain = Array2::zeros(gains.raw_dim());
    let mut dbias = Array2::zeros(gains.raw_dim());
    let mut dx_next = d_final.clone();
    for (m, hc) in caches.iter().enumerate().rev() {
        let n = hc.x.nrows();
        let d = hc.x.ncols() as f64;
        let mut dx = dx_next.clone();
        let dln = &dx_next * lambda;
        dgain.row_mut(m).assign(&(&dln * &hc.shat).sum_axis(Axis(0)));
        dbias.row_mut(m).assign(&dln.sum_axis(Axis(0)));
        let dshat = &dln * &gains.row(m);
        // layer-norm backward, row by row
        let mut ds = Array2::zeros(dshat.raw_dim());
        for i in 0..n {
            let g = dshat.row(i);
            let xh = hc.shat.row(i);
            let mean_g = g.sum() / d;
            let mean_gx = g.dot(&xh) / d;
            let mut out = ds.row_mut(i);
            Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gv, &xv| {
                *o = hc.inv_std[i] * (gv - mean_g - xv * mean_gx);
            });
        }
        let dr = &ds * &hc.s.mapv(|v| v * (1.0 - v));
        // R = diag(c) X
        let q = hc.x.row(n - 1).to_owned();
        let mut dq = Array1::<f64>::zeros(q.len());
        for i in 0..n {
            let dri = dr.row(i);
            let dc = dri.dot(&hc.x.row(i));
            let mut dxi = dx.row_mut(i);
            dxi.scaled_add(hc.c[i], &dri);
            dxi.scaled_add(dc, &q);
            dq.scaled_add(dc, &hc.x.row(i));
        }
        let mut last = dx.row_mut(n - 1);
        last += &dq;
        dx_next = dx;
    }
    (dx_next, dgain, dbias)
}

// ---- classifier ----

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// `log Σ exp(logits) - logits[gold]`, computed stably.
pub fn cross_entropy_from_logits(logits: &Array1<f64>, gold: usize) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.mapv(|v| (v - max).exp()).sum().ln();
    lse - logits[gold]
}

pub fn logits(x: &Array1<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array1<f64> {
    weight.dot(x) + bias
}
