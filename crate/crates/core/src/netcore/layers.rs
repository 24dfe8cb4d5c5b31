//! Layer arithmetic: same-padded 3x3 cross-correlation, 2x2 max pooling,
//! dense affine maps, ReLU. Convolutions lower to GEMM through an im2col
//! buffer; the GEMM itself is `matrixmultiply`. Batch loops run samples
//! sequentially so callers control parallelism and reduction order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Safe shim over `matrixmultiply::sgemm`: C = alpha * A(m,k) * B(k,n) + beta * C.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(required_len(m, k, rsa, csa) <= a.len());
    debug_assert!(required_len(k, n, rsb, csb) <= b.len());
    debug_assert!(required_len(m, n, rsc, csc) <= c.len());
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn required_len(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize + 1
}

/// Lower one (C,H,W) sample into a (C*9, H*W) patch matrix with zero
/// padding. Row k = ci*9 + (dr+1)*3 + (dc+1) holds input pixel
/// (r+dr, c+dc) at column r*W+c.
pub(crate) fn im2col3x3(x: &[f32], channels: usize, h: usize, w: usize, col: &mut [f32]) {
    let p = h * w;
    debug_assert_eq!(x.len(), channels * p);
    debug_assert_eq!(col.len(), channels * 9 * p);
    for ci in 0..channels {
        let plane = &x[ci * p..(ci + 1) * p];
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let k = ci * 9 + ((dr + 1) * 3 + (dc + 1)) as usize;
                let row = &mut col[k * p..(k + 1) * p];
                for r in 0..h {
                    let src_r = r as i64 + dr;
                    let dst = &mut row[r * w..(r + 1) * w];
                    if src_r < 0 || src_r >= h as i64 {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[src_r as usize * w..(src_r as usize + 1) * w];
                    match dc {
                        0 => dst.copy_from_slice(src),
                        -1 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        _ => {
                            dst[w - 1] = 0.0;
                            dst[..w - 1].copy_from_slice(&src[1..]);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the transpose of im2col: x[ci, r+dr, c+dc] += col[k, r, c].
pub(crate) fn col2im3x3_add(col: &[f32], channels: usize, h: usize, w: usize, x: &mut [f32]) {
    let p = h * w;
    debug_assert_eq!(x.len(), channels * p);
    debug_assert_eq!(col.len(), channels * 9 * p);
    for ci in 0..channels {
        let plane = &mut x[ci * p..(ci + 1) * p];
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let k = ci * 9 + ((dr + 1) * 3 + (dc + 1)) as usize;
                let row = &col[k * p..(k + 1) * p];
                for r in 0..h {
                    let dst_r = r as i64 + dr;
                    if dst_r < 0 || dst_r >= h as i64 {
                        continue;
                    }
                    let src = &row[r * w..(r + 1) * w];
                    let dst =
                        &mut plane[dst_r as usize * w..(dst_r as usize + 1) * w];
                    match dc {
                        0 => {
                            for i in 0..w {
                                dst[i] += src[i];
                            }
                        }
                        -1 => {
                            for i in 1..w {
                                dst[i - 1] += src[i];
                            }
                        }
                        _ => {
                            for i in 0..w - 1 {
                                dst[i + 1] += src[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scratch buffer sized for the largest conv layer of a model.
pub(crate) struct ConvScratch {
    pub col: Vec<f32>,
}

impl ConvScratch {
    pub fn with_capacity(len: usize) -> ConvScratch {
        ConvScratch { col: vec![0.0; len] }
    }

    fn ensure(&mut self, len: usize) -> &mut [f32] {
        if self.col.len() < len {
            self.col.resize(len, 0.0);
        }
        &mut self.col[..len]
    }
}

/// Batched same-padded 3x3 cross-correlation: (N,C,H,W) -> (N,O,H,W).
pub(crate) fn conv3x3_forward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x, "conv input")?;
    let [o, ci, kh, kw] = dims4(weights, "conv weights")?;
    if ci != c || kh != 3 || kw != 3 {
        return Err(Error::Shape(format!(
            "conv weights {:?} do not accept input {:?}",
            weights.dims(),
            x.dims()
        )));
    }
    let p = h * w;
    let k = c * 9;
    let mut out = Tensor::zeros(&[n, o, h, w]);
    for s in 0..n {
        let col = scratch.ensure(k * p);
        im2col3x3(&x.data()[s * c * p..(s + 1) * c * p], c, h, w, col);
        let dst = &mut out.data_mut()[s * o * p..(s + 1) * o * p];
        sgemm(o, k, p, 1.0, weights.data(), k as isize, 1, col, p as isize, 1, 0.0, dst, p as isize, 1);
        for oc in 0..o {
            let b = bias.data()[oc];
            if b != 0.0 {
                for v in &mut dst[oc * p..(oc + 1) * p] {
                    *v += b;
                }
            }
        }
    }
    Ok(out)
}

/// Data gradient of the conv layer for arbitrary kernels: given the
/// upstream signal on the outputs, pull it back through `weights`.
/// Shared by training backward and every saliency rule.
pub(crate) fn conv3x3_backward_data(
    grad_out: &Tensor,
    weights: &Tensor,
    input_dims: &[usize],
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    let [n, o, h, w] = dims4(grad_out, "conv grad")?;
    let [ow, c, _, _] = dims4(weights, "conv weights")?;
    if ow != o {
        return Err(Error::Shape("conv grad channels do not match weights".into()));
    }
    let p = h * w;
    let k = c * 9;
    let mut dx = Tensor::zeros(input_dims);
    for s in 0..n {
        let g = &grad_out.data()[s * o * p..(s + 1) * o * p];
        let col = scratch.ensure(k * p);
        // dcol = W^T (K x O) * g (O x P)
        sgemm(k, o, p, 1.0, weights.data(), 1, k as isize, g, p as isize, 1, 0.0, col, p as isize, 1);
        col2im3x3_add(col, c, h, w, &mut dx.data_mut()[s * c * p..(s + 1) * c * p]);
    }
    Ok(dx)
}

/// Parameter gradients for one batch, accumulated into (dw, db).
pub(crate) fn conv3x3_backward_params(
    x: &Tensor,
    grad_out: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
    scratch: &mut ConvScratch,
) -> Result<()> {
    let [n, c, h, w] = dims4(x, "conv input")?;
    let [nn, o, _, _] = dims4(grad_out, "conv grad")?;
    debug_assert_eq!(n, nn);
    let p = h * w;
    let k = c * 9;
    for s in 0..n {
        let col = scratch.ensure(k * p);
        im2col3x3(&x.data()[s * c * p..(s + 1) * c * p], c, h, w, col);
        let g = &grad_out.data()[s * o * p..(s + 1) * o * p];
        // dW (O x K) += g (O x P) * col^T (P x K)
        sgemm(o, p, k, 1.0, g, p as isize, 1, col, 1, p as isize, 1.0, dw.data_mut(), k as isize, 1);
        for oc in 0..o {
            let mut sum = 0.0f32;
            for &v in &g[oc * p..(oc + 1) * p] {
                sum += v;
            }
            db.data_mut()[oc] += sum;
        }
    }
    Ok(())
}

pub(crate) fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient masked by the forward input sign.
pub(crate) fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// 2x2 max pooling, stride 2, floor semantics (a trailing odd row/column
/// is dropped). Returns per-window argmax as flat indices into the input
/// channel plane; ties keep the first candidate in row-major order.
pub(crate) fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let [n, c, h, w] = dims4(x, "pool input")?;
    let (h2, w2) = (h / 2, w / 2);
    if h2 == 0 || w2 == 0 {
        return Err(Error::Shape(format!("cannot pool {h}x{w}")));
    }
    let p = h * w;
    let p2 = h2 * w2;
    let mut out = Tensor::zeros(&[n, c, h2, w2]);
    let mut argmax = vec![0u32; n * c * p2];
    for s in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(s * c + ci) * p..(s * c + ci + 1) * p];
            let dst = &mut out.data_mut()[(s * c + ci) * p2..(s * c + ci + 1) * p2];
            let am = &mut argmax[(s * c + ci) * p2..(s * c + ci + 1) * p2];
            for r in 0..h2 {
                for cc in 0..w2 {
                    let base = 2 * r * w + 2 * cc;
                    let candidates = [base, base + 1, base + w, base + w + 1];
                    let mut best = candidates[0];
                    let mut best_v = plane[best];
                    for &cand in &candidates[1..] {
                        if plane[cand] > best_v {
                            best_v = plane[cand];
                            best = cand;
                        }
                    }
                    dst[r * w2 + cc] = best_v;
                    am[r * w2 + cc] = best as u32;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each upstream value to its stored argmax.
pub(crate) fn maxpool2x2_backward(
    grad_out: &Tensor,
    argmax: &[u32],
    input_dims: &[usize],
) -> Result<Tensor> {
    let [n, c, h2, w2] = dims4(grad_out, "pool grad")?;
    let p = input_dims[2] * input_dims[3];
    let p2 = h2 * w2;
    let mut dx = Tensor::zeros(input_dims);
    for s in 0..n {
        for ci in 0..c {
            let g = &grad_out.data()[(s * c + ci) * p2..(s * c + ci + 1) * p2];
            let am = &argmax[(s * c + ci) * p2..(s * c + ci + 1) * p2];
            let dst = &mut dx.data_mut()[(s * c + ci) * p..(s * c + ci + 1) * p];
            for i in 0..p2 {
                dst[am[i] as usize] += g[i];
            }
        }
    }
    Ok(dx)
}

/// y (N,O) = x (N,F) W^T + b.
pub(crate) fn dense_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, f] = dims2(x, "dense input")?;
    let [o, fw] = dims2(weights, "dense weights")?;
    if fw != f {
        return Err(Error::Shape(format!(
            "dense weights {:?} do not accept input {:?}",
            weights.dims(),
            x.dims()
        )));
    }
    let mut out = Tensor::zeros(&[n, o]);
    sgemm(n, f, o, 1.0, x.data(), f as isize, 1, weights.data(), 1, f as isize, 0.0, out.data_mut(), o as isize, 1);
    for s in 0..n {
        for (v, &b) in out.data_mut()[s * o..(s + 1) * o].iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

/// Data gradient dx (N,F) = g (N,O) W (O,F), for arbitrary kernels.
pub(crate) fn dense_backward_data(
    grad_out: &Tensor,
    weights: &Tensor,
    input_dims: &[usize],
) -> Result<Tensor> {
    let [n, o] = dims2(grad_out, "dense grad")?;
    let [ow, f] = dims2(weights, "dense weights")?;
    if ow != o {
        return Err(Error::Shape("dense grad does not match weights".into()));
    }
    let mut dx = Tensor::zeros(&[n, f]);
    sgemm(n, o, f, 1.0, grad_out.data(), o as isize, 1, weights.data(), f as isize, 1, 0.0, dx.data_mut(), f as isize, 1);
    dx.reshaped(input_dims)
}

pub(crate) fn dense_backward_params(
    x: &Tensor,
    grad_out: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Result<()> {
    let [n, f] = dims2(x, "dense input")?;
    let [_, o] = dims2(grad_out, "dense grad")?;
    // dW (O,F) += g^T (O,N) x (N,F)
    sgemm(o, n, f, 1.0, grad_out.data(), 1, o as isize, x.data(), f as isize, 1, 1.0, dw.data_mut(), f as isize, 1);
    for s in 0..n {
        for (dbv, &g) in db.data_mut().iter_mut().zip(&grad_out.data()[s * o..(s + 1) * o]) {
            *dbv += g;
        }
    }
    Ok(())
}

pub(crate) fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.dims() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => Err(Error::Shape(format!("{what} must be rank 4, got {other:?}"))),
    }
}

pub(crate) fn dims2(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match t.dims() {
        &[a, b] => Ok([a, b]),
        other => Err(Error::Shape(format!("{what} must be rank 2, got {other:?}"))),
    }
}
