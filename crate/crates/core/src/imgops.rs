//! Plain image operations on [C,H,W] tensors in [0,1]: bilinear warps,
//! separable Gaussian blur, resampling. These run outside the expression
//! graph; only their outputs enter differentiable computations.

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

/// 2x3 affine matrix mapping *output* pixel coordinates to *source*
/// coordinates: (sx, sy) = (m[0][0]·x + m[0][1]·y + m[0][2], …).
pub type AffineMap = [[f64; 3]; 2];

pub fn identity_map() -> AffineMap {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
}

/// Compose two output→source maps: applying `outer` after `inner` as image
/// transforms means sampling through `inner ∘ outer`.
pub fn compose(a: &AffineMap, b: &AffineMap) -> AffineMap {
    let mut out = [[0.0; 3]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        row[0] = a[i][0] * b[0][0] + a[i][1] * b[1][0];
        row[1] = a[i][0] * b[0][1] + a[i][1] * b[1][1];
        row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
    }
    out
}

/// Output→source map for a rotation by `theta` radians about the image
/// center, with shear and scale folded in:
/// source = center + R(-theta)·S⁻¹·(out - center) - translation.
pub fn inverse_rigid_map(
    (h, w): (usize, usize),
    theta: f64,
    scale: f64,
    shear_x: f64,
    shear_y: f64,
    (tx, ty): (f64, f64),
) -> AffineMap {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    // Forward transform F = T(t) · C · R(theta) · Shear · Scale · C⁻¹; we
    // build its inverse analytically.
    let (s, c) = (theta.sin(), theta.cos());
    // Forward linear part L = R · Sh · S (shear applied as x += shx·y, y += shy·x).
    let l = [
        [
            (c - s * shear_y) * scale,
            (c * shear_x - s) * scale,
        ],
        [
            (s + c * shear_y) * scale,
            (s * shear_x + c) * scale,
        ],
    ];
    let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
    let det = if det.abs() < 1e-12 { 1e-12 } else { det };
    let inv = [
        [l[1][1] / det, -l[0][1] / det],
        [-l[1][0] / det, l[0][0] / det],
    ];
    // source = inv·(out - center - t) + center
    [
        [
            inv[0][0],
            inv[0][1],
            -inv[0][0] * (cx + tx) - inv[0][1] * (cy + ty) + cx,
        ],
        [
            inv[1][0],
            inv[1][1],
            -inv[1][0] * (cx + tx) - inv[1][1] * (cy + ty) + cy,
        ],
    ]
}

fn sample_clamped<F: Scalar>(data: &[F], h: usize, w: usize, y: isize, x: isize) -> F {
    let yy = y.clamp(0, h as isize - 1) as usize;
    let xx = x.clamp(0, w as isize - 1) as usize;
    data[yy * w + xx]
}

/// Bilinear sample at fractional coordinates with edge padding.
pub fn bilinear<F: Scalar>(plane: &[F], h: usize, w: usize, fy: f64, fx: f64) -> F {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let dx = F::of(fx - x0);
    let dy = F::of(fy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let one = F::one();
    let v00 = sample_clamped(plane, h, w, y0, x0);
    let v01 = sample_clamped(plane, h, w, y0, x0 + 1);
    let v10 = sample_clamped(plane, h, w, y0 + 1, x0);
    let v11 = sample_clamped(plane, h, w, y0 + 1, x0 + 1);
    let top = v00 * (one - dx) + v01 * dx;
    let bot = v10 * (one - dx) + v11 * dx;
    top * (one - dy) + bot * dy
}

/// Warp a [C,H,W] image through an output→source affine map.
pub fn affine_warp<F: Scalar>(img: &Tensor<F>, map: &AffineMap) -> Tensor<F> {
    let (c, h, w) = chw(img);
    let mut out = Tensor::zeros(img.shape());
    let src = img.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let sx = map[0][0] * x as f64 + map[0][1] * y as f64 + map[0][2];
                let sy = map[1][0] * x as f64 + map[1][1] * y as f64 + map[1][2];
                dst[(ch * h + y) * w + x] = bilinear(plane, h, w, sy, sx);
            }
        }
    }
    out
}

pub fn chw<F: Scalar>(img: &Tensor<F>) -> (usize, usize, usize) {
    match img.shape() {
        [c, h, w] => (*c, *h, *w),
        s => panic!("expected [C,H,W] image, got {s:?}"),
    }
}

/// Separable Gaussian blur with edge padding; kernel radius ceil(3σ).
pub fn gaussian_blur<F: Scalar>(img: &Tensor<F>, sigma: f64) -> Tensor<F> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut norm = 0.0;
    for i in -radius..=radius {
        let v = (-0.5 * (i as f64 / sigma).powi(2)).exp();
        kernel.push(v);
        norm += v;
    }
    for v in &mut kernel {
        *v /= norm;
    }
    let (c, h, w) = chw(img);
    let mut tmp = img.clone();
    // Horizontal pass.
    {
        let src = img.data();
        let dst = tmp.data_mut();
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * h + y) * w;
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1);
                        acc += kv * src[row + sx as usize].as_f64();
                    }
                    dst[row + x] = F::of(acc);
                }
            }
        }
    }
    // Vertical pass.
    let mut out = Tensor::zeros(img.shape());
    {
        let src = tmp.data();
        let dst = out.data_mut();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ki, kv) in kernel.iter().enumerate() {
                        let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1);
                        acc += kv * src[(ch * h + sy as usize) * w + x].as_f64();
                    }
                    dst[(ch * h + y) * w + x] = F::of(acc);
                }
            }
        }
    }
    out
}

/// Bilinear resize to (out_h, out_w).
pub fn resize_bilinear<F: Scalar>(img: &Tensor<F>, out_h: usize, out_w: usize) -> Tensor<F> {
    let (c, h, w) = chw(img);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    let src = img.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..out_h {
            for x in 0..out_w {
                dst[(ch * out_h + y) * out_w + x] =
                    bilinear(plane, h, w, y as f64 * sy, x as f64 * sx);
            }
        }
    }
    out
}

/// Nearest-neighbour resize to (out_h, out_w).
pub fn resize_nearest<F: Scalar>(img: &Tensor<F>, out_h: usize, out_w: usize) -> Tensor<F> {
    let (c, h, w) = chw(img);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let src = img.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..out_h {
            let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64) as usize;
            let sy = sy.min(h - 1);
            for x in 0..out_w {
                let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64) as usize;
                let sx = sx.min(w - 1);
                dst[(ch * out_h + y) * out_w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}

pub fn clamp01<F: Scalar>(img: &mut Tensor<F>) {
    for v in img.data_mut() {
        if *v < F::zero() {
            *v = F::zero();
        } else if *v > F::one() {
            *v = F::one();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_warp_is_exact() {
        let img = Tensor::<f64>::from_fn(&[1, 5, 5], |i| (i as f64) / 25.0);
        let out = affine_warp(&img, &identity_map());
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn zero_rotation_rigid_map_is_identity() {
        let m = inverse_rigid_map((7, 7), 0.0, 1.0, 0.0, 0.0, (0.0, 0.0));
        let img = Tensor::<f64>::from_fn(&[1, 7, 7], |i| (i % 5) as f64 * 0.2);
        let out = affine_warp(&img, &m);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Tensor::<f64>::full(&[1, 6, 6], 0.7);
        let out = gaussian_blur(&img, 1.3);
        for &v in out.data() {
            assert!((v - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn integer_translation_shifts_pixels() {
        let mut img = Tensor::<f64>::zeros(&[1, 5, 5]);
        img.data_mut()[2 * 5 + 2] = 1.0;
        // Translate +1 in x: output(x) samples source(x-1).
        let m = inverse_rigid_map((5, 5), 0.0, 1.0, 0.0, 0.0, (1.0, 0.0));
        let out = affine_warp(&img, &m);
        assert!((out.data()[2 * 5 + 3] - 1.0).abs() < 1e-12);
    }
}
