//! Pure 2-D convolution kernels (im2col / col2im) used by the tape ops.
//!
//! Layout is channels-first: images `[C, H, W]`, weights `[Cout, Cin, kh, kw]`.
//! The forward path lowers convolution to a single matrix multiply; backward
//! recomputes the column matrix instead of caching it to keep tape memory flat.

use ndarray::{Array2, Array3, ArrayView3, ArrayView4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn out_dim(&self, input: usize, k: usize) -> usize {
        let eff = self.dilation * (k - 1) + 1;
        (input + 2 * self.pad - eff) / self.stride + 1
    }
}

/// Lowers `x` to a `[Cin*kh*kw, oh*ow]` column matrix.
pub fn im2col(x: &ArrayView3<f64>, kh: usize, kw: usize, spec: ConvSpec) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let oh = spec.out_dim(h, kh);
    let ow = spec.out_dim(w, kw);
    let mut cols = Array2::<f64>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let mut out_row = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix =
                            (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out_row[oy * ow + ox] = x[(ci, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im(
    dcols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
) -> Array3<f64> {
    let oh = spec.out_dim(h, kh);
    let ow = spec.out_dim(w, kw);
    let mut dx = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = dcols.row(row);
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix =
                            (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(ci, iy as usize, ix as usize)] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
    dx
}

/// y[co, oy, ox] = sum_{ci,ky,kx} w[co,ci,ky,kx] * x[ci, ...] + b[co]
pub fn conv2d_forward(
    x: &ArrayView3<f64>,
    w: &ArrayView4<f64>,
    b: Option<&[f64]>,
    spec: ConvSpec,
) -> Array3<f64> {
    let (cin, h, width) = x.dim();
    let (cout, cin_w, kh, kw) = w.dim();
    assert_eq!(cin, cin_w, "conv2d channel mismatch");
    let oh = spec.out_dim(h, kh);
    let ow = spec.out_dim(width, kw);
    let cols = im2col(x, kh, kw, spec);
    let wmat = w.to_shape((cout, cin * kh * kw)).unwrap();
    let mut y = wmat.dot(&cols); // [cout, oh*ow]
    if let Some(bias) = b {
        for (mut row, &bv) in y.rows_mut().into_iter().zip(bias.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    y.into_shape_with_order((cout, oh, ow)).unwrap()
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(x: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<f64>::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                let v = x[(ci, iy, ix)];
                y[(ci, 2 * iy, 2 * ix)] = v;
                y[(ci, 2 * iy, 2 * ix + 1)] = v;
                y[(ci, 2 * iy + 1, 2 * ix)] = v;
                y[(ci, 2 * iy + 1, 2 * ix + 1)] = v;
            }
        }
    }
    y
}

/// Adjoint of 2x nearest upsampling: sums each 2x2 block.
pub fn upsample2_backward(dy: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                dx[(ci, iy, ix)] = dy[(ci, 2 * iy, 2 * ix)]
                    + dy[(ci, 2 * iy, 2 * ix + 1)]
                    + dy[(ci, 2 * iy + 1, 2 * ix)]
                    + dy[(ci, 2 * iy + 1, 2 * ix + 1)];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn naive_conv(
        x: &Array3<f64>,
        w: &Array4<f64>,
        b: &[f64],
        spec: ConvSpec,
    ) -> Array3<f64> {
        let (cin, h, width) = x.dim();
        let (cout, _, kh, kw) = w.dim();
        let oh = spec.out_dim(h, kh);
        let ow = spec.out_dim(width, kw);
        let mut y = Array3::<f64>::zeros((cout, oh, ow));
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride + ky * spec.dilation) as isize
                                    - spec.pad as isize;
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize
                                    - spec.pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < width as isize {
                                    acc += w[(co, ci, ky, kx)] * x[(ci, iy as usize, ix as usize)];
                                }
                            }
                        }
                    }
                    y[(co, oy, ox)] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_reference() {
        use rand::Rng;
        let mut rng = crate::rng::master_rng(11);
        for &(stride, pad, dilation) in &[(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 0, 1)] {
            let spec = ConvSpec { stride, pad, dilation };
            let x = Array3::from_shape_fn((3, 7, 6), |_| rng.gen_range(-1.0..1.0));
            let w = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.gen_range(-1.0..1.0));
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&x.view(), &w.view(), Some(&b), spec);
            let slow = naive_conv(&x, &w, &b, spec);
            let diff = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "spec {spec:?} diff {diff}");
        }
    }

    #[test]
    fn upsample_roundtrip_shapes() {
        let x = Array3::from_shape_fn((2, 3, 4), |(c, y, xx)| (c * 100 + y * 10 + xx) as f64);
        let y = upsample2_forward(&x.view());
        assert_eq!(y.dim(), (2, 6, 8));
        assert_eq!(y[(1, 5, 7)], x[(1, 2, 3)]);
        let dx = upsample2_backward(&y.view());
        assert_eq!(dx[(0, 0, 0)], 4.0 * x[(0, 0, 0)]);
    }
}
