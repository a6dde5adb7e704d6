//! Dense compute kernels behind the graph ops: matmul and the conv2d
//! forward/backward triangle. Accumulation order is fixed, so results are
//! bit-reproducible run to run.

use crate::error::{GraphError, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, GraphError> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        s => {
            return Err(GraphError::InvalidShape {
                op: "matmul",
                shape: s.to_vec(),
                reason: "lhs must be rank 2".into(),
            })
        }
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        s => {
            return Err(GraphError::InvalidShape {
                op: "matmul",
                shape: s.to_vec(),
                reason: "rhs must be rank 2".into(),
            })
        }
    };
    if k != k2 {
        return Err(GraphError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for l in 0..k {
            let ail = ad[i * k + l];
            if ail == F::zero() {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
    Ok(out)
}

pub fn transpose2d<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>, GraphError> {
    let (m, n) = match a.shape() {
        [m, n] => (*m, *n),
        s => {
            return Err(GraphError::InvalidShape {
                op: "transpose",
                shape: s.to_vec(),
                reason: "must be rank 2".into(),
            })
        }
    };
    let ad = a.data();
    let mut out = Tensor::zeros(&[n, m]);
    let od = out.data_mut();
    for i in 0..m {
        for j in 0..n {
            od[j * m + i] = ad[i * n + j];
        }
    }
    Ok(out)
}

/// Output spatial extent of a conv with zero padding.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn conv2d_out_shape(
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Vec<usize>, GraphError> {
    let (n, ci, h, w) = match xs {
        [n, c, h, w] => (*n, *c, *h, *w),
        _ => {
            return Err(GraphError::InvalidShape {
                op: "conv2d",
                shape: xs.to_vec(),
                reason: "input must be [N,C,H,W]".into(),
            })
        }
    };
    let (co, ci2, kh, kw) = match ws {
        [co, ci2, kh, kw] => (*co, *ci2, *kh, *kw),
        _ => {
            return Err(GraphError::InvalidShape {
                op: "conv2d",
                shape: ws.to_vec(),
                reason: "weight must be [Co,Ci,kh,kw]".into(),
            })
        }
    };
    if ci != ci2 {
        return Err(GraphError::ShapeMismatch {
            op: "conv2d",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(w, kw, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(vec![n, co, oh, ow]),
        _ => Err(GraphError::InvalidShape {
            op: "conv2d",
            shape: xs.to_vec(),
            reason: format!("kernel {kh}x{kw} stride {stride} pad {pad} does not fit"),
        }),
    }
}

/// Valid output range along one axis for a fixed kernel offset: all `o` with
/// `0 <= o*stride + k - pad < input`.
fn valid_range(out_extent: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    if input + pad <= k {
        return (0, 0);
    }
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi_incl = (input + pad - k - 1) / stride;
    let hi = (hi_incl + 1).min(out_extent);
    (lo.min(hi), hi)
}

pub fn conv2d<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>, GraphError> {
    let os = conv2d_out_shape(x.shape(), w.shape(), stride, pad)?;
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (oh, ow) = (os[2], os[3]);
    let mut y = Tensor::zeros(&os);
    let xd = x.data();
    let wdat = w.data();
    let yd = y.data_mut();
    for in_ in 0..n {
        for c_out in 0..co {
            let ybase = (in_ * co + c_out) * oh * ow;
            for c_in in 0..ci {
                let xbase = (in_ * ci + c_in) * h * wd;
                let wbase = (c_out * ci + c_in) * kh * kw;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let wv = wdat[wbase + ky * kw + kx];
                        if wv == F::zero() {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(ow, wd, kx, stride, pad);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let xrow = xbase + iy * wd;
                            let yrow = ybase + oy * ow;
                            for ox in ox0..ox1 {
                                let ix = ox * stride + kx - pad;
                                yd[yrow + ox] += wv * xd[xrow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradient of conv2d w.r.t. its input: scatter `dy` back through the kernel.
pub fn conv2d_bwd_input<F: Scalar>(
    dy: &Tensor<F>,
    w: &Tensor<F>,
    stride: usize,
    pad: usize,
    in_hw: (usize, usize),
) -> Result<Tensor<F>, GraphError> {
    let (n, co, oh, ow) = match dy.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => {
            return Err(GraphError::InvalidShape {
                op: "conv2d_bwd_input",
                shape: s.to_vec(),
                reason: "dy must be [N,Co,H',W']".into(),
            })
        }
    };
    let (co2, ci, kh, kw) = match w.shape() {
        [a, b, c, d] => (*a, *b, *c, *d),
        s => {
            return Err(GraphError::InvalidShape {
                op: "conv2d_bwd_input",
                shape: s.to_vec(),
                reason: "weight must be [Co,Ci,kh,kw]".into(),
            })
        }
    };
    if co != co2 {
        return Err(GraphError::ShapeMismatch {
            op: "conv2d_bwd_input",
            lhs: dy.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (h, wd) = in_hw;
    let mut dx = Tensor::zeros(&[n, ci, h, wd]);
    let dyd = dy.data();
    let wdat = w.data();
    let dxd = dx.data_mut();
    for in_ in 0..n {
        for c_out in 0..co {
            let dybase = (in_ * co + c_out) * oh * ow;
            for c_in in 0..ci {
                let dxbase = (in_ * ci + c_in) * h * wd;
                let wbase = (c_out * ci + c_in) * kh * kw;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let wv = wdat[wbase + ky * kw + kx];
                        if wv == F::zero() {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(ow, wd, kx, stride, pad);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let dxrow = dxbase + iy * wd;
                            let dyrow = dybase + oy * ow;
                            for ox in ox0..ox1 {
                                let ix = ox * stride + kx - pad;
                                dxd[dxrow + ix] += wv * dyd[dyrow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Gradient of conv2d w.r.t. its weights. Kernel extents are passed
/// explicitly: with stride > 1 they are not recoverable from the shapes
/// (the floor in the output extent is lossy).
pub fn conv2d_bwd_weight<F: Scalar>(
    x: &Tensor<F>,
    dy: &Tensor<F>,
    stride: usize,
    pad: usize,
    k_hw: (usize, usize),
) -> Result<Tensor<F>, GraphError> {
    let (n, ci, h, wd) = match x.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => {
            return Err(GraphError::InvalidShape {
                op: "conv2d_bwd_weight",
                shape: s.to_vec(),
                reason: "x must be [N,Ci,H,W]".into(),
            })
        }
    };
    let (n2, co, oh, ow) = match dy.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => {
            return Err(GraphError::InvalidShape {
                op: "conv2d_bwd_weight",
                shape: s.to_vec(),
                reason: "dy must be [N,Co,H',W']".into(),
            })
        }
    };
    if n != n2 {
        return Err(GraphError::ShapeMismatch {
            op: "conv2d_bwd_weight",
            lhs: x.shape().to_vec(),
            rhs: dy.shape().to_vec(),
        });
    }
    let (kh, kw) = k_hw;
    if conv_out_extent(h, kh, stride, pad) != Some(oh)
        || conv_out_extent(wd, kw, stride, pad) != Some(ow)
    {
        return Err(GraphError::ShapeMismatch {
            op: "conv2d_bwd_weight",
            lhs: x.shape().to_vec(),
            rhs: dy.shape().to_vec(),
        });
    }
    let mut dw = Tensor::zeros(&[co, ci, kh, kw]);
    let xd = x.data();
    let dyd = dy.data();
    let dwd = dw.data_mut();
    for in_ in 0..n {
        for c_out in 0..co {
            let dybase = (in_ * co + c_out) * oh * ow;
            for c_in in 0..ci {
                let xbase = (in_ * ci + c_in) * h * wd;
                let wbase = (c_out * ci + c_in) * kh * kw;
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let (ox0, ox1) = valid_range(ow, wd, kx, stride, pad);
                        let mut acc = F::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let xrow = xbase + iy * wd;
                            let dyrow = dybase + oy * ow;
                            for ox in ox0..ox1 {
                                let ix = ox * stride + kx - pad;
                                acc += xd[xrow + ix] * dyd[dyrow + ox];
                            }
                        }
                        dwd[wbase + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(dw)
}

/// Broadcast compatibility: same rank with each source extent equal to the
/// target or 1, or a scalar source.
pub fn broadcast_compatible(src: &[usize], target: &[usize]) -> bool {
    if src.is_empty() {
        return true;
    }
    src.len() == target.len()
        && src
            .iter()
            .zip(target)
            .all(|(&s, &t)| s == t || s == 1)
}

pub fn broadcast_to<F: Scalar>(
    src: &Tensor<F>,
    target: &[usize],
) -> Result<Tensor<F>, GraphError> {
    if !broadcast_compatible(src.shape(), target) {
        return Err(GraphError::ShapeMismatch {
            op: "broadcast",
            lhs: src.shape().to_vec(),
            rhs: target.to_vec(),
        });
    }
    if src.shape() == target {
        return Ok(src.clone());
    }
    let sd = src.data();
    if src.is_scalar() && src.shape().is_empty() {
        return Ok(Tensor::full(target, sd[0]));
    }
    // Per-axis source strides, zero along broadcast axes.
    let rank = target.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        strides[ax] = if src.shape()[ax] == 1 { 0 } else { acc };
        acc *= src.shape()[ax];
    }
    let mut out = Tensor::zeros(target);
    let od = out.data_mut();
    let mut idx = vec![0usize; rank];
    let mut src_off = 0usize;
    for o in od.iter_mut() {
        *o = sd[src_off];
        // Increment the multi-index, updating the source offset in step.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src_off += strides[ax];
            if idx[ax] < target[ax] {
                break;
            }
            src_off -= strides[ax] * target[ax];
            idx[ax] = 0;
        }
    }
    Ok(out)
}

/// Sum along one axis, keeping it as extent 1.
pub fn sum_axis_keepdim<F: Scalar>(
    src: &Tensor<F>,
    axis: usize,
) -> Result<Tensor<F>, GraphError> {
    let shape = src.shape();
    if axis >= shape.len() {
        return Err(GraphError::InvalidShape {
            op: "sum_axis",
            shape: shape.to_vec(),
            reason: format!("axis {axis} out of range"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    let mut out = Tensor::zeros(&out_shape);
    let sd = src.data();
    let od = out.data_mut();
    for o in 0..outer {
        for m in 0..mid {
            let base = (o * mid + m) * inner;
            let obase = o * inner;
            for i in 0..inner {
                od[obase + i] += sd[base + i];
            }
        }
    }
    Ok(out)
}

/// log(sum(exp(x))) along one axis (keepdim), computed with max subtraction.
pub fn logsumexp_axis_keepdim<F: Scalar>(
    src: &Tensor<F>,
    axis: usize,
) -> Result<Tensor<F>, GraphError> {
    let shape = src.shape();
    if axis >= shape.len() {
        return Err(GraphError::InvalidShape {
            op: "logsumexp",
            shape: shape.to_vec(),
            reason: format!("axis {axis} out of range"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    let mut out = Tensor::zeros(&out_shape);
    let sd = src.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let mut m = F::neg_infinity();
            for mi in 0..mid {
                let v = sd[(o * mid + mi) * inner + i];
                if v > m {
                    m = v;
                }
            }
            let mut acc = F::zero();
            for mi in 0..mid {
                acc += (sd[(o * mid + mi) * inner + i] - m).exp();
            }
            od[o * inner + i] = m + acc.ln();
        }
    }
    Ok(out)
}
