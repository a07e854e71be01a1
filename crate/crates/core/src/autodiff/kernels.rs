//! Forward and backward kernels over raw NHWC buffers.

use super::scalar::Scalar;

/// Output extent `ceil(input / stride)` and leading pad `(kernel - 1) / 2`.
///
/// Windows are centred on input pixel `o * stride`; any remainder falls off the trailing edge.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    (input.div_ceil(stride), (kernel - 1) / 2)
}

/// Geometry of a strided, same-padded 2-D window over an NHWC tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pt: usize,
    pub pl: usize,
}

impl ConvGeom {
    pub fn new(n: usize, h: usize, w: usize, c: usize, kh: usize, kw: usize, stride: usize) -> Self {
        let (oh, pt) = same_padding(h, kh, stride);
        let (ow, pl) = same_padding(w, kw, stride);
        ConvGeom {
            n,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            oh,
            ow,
            pt,
            pl,
        }
    }

    fn src(&self, o: usize, k: usize, pad: usize, lim: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < lim).then_some(p as usize)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

/// Patch matrix of shape `[n*oh*ow, kh*kw*c]`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.kh * g.kw * g.c;
    let mut cols = vec![T::zero(); g.n * g.oh * g.ow * patch];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * patch;
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let s = ((n * g.h + iy) * g.w + ix) * g.c;
                        let d = row + (ky * g.kw + kx) * g.c;
                        cols[d..d + g.c].copy_from_slice(&x[s..s + g.c]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a patch matrix back onto the input grid.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let patch = g.kh * g.kw * g.c;
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * patch;
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let s = ((n * g.h + iy) * g.w + ix) * g.c;
                        let d = row + (ky * g.kw + kx) * g.c;
                        for (o, &v) in dx[s..s + g.c].iter_mut().zip(&cols[d..d + g.c]) {
                            *o = *o + v;
                        }
                    }
                }
            }
        }
    }
}

/// Standard convolution; `w` has shape `[kh, kw, c, cout]`.
pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom, cout: usize) -> Vec<T> {
    let rows = g.n * g.oh * g.ow;
    let patch = g.kh * g.kw * g.c;
    let mut y = vec![T::zero(); rows * cout];
    if g.is_pointwise() {
        T::gemm(rows, patch, cout, x, (patch as isize, 1), w, (cout as isize, 1), T::zero(), &mut y, (cout as isize, 1));
    } else {
        let cols = im2col(x, g);
        T::gemm(rows, patch, cout, &cols, (patch as isize, 1), w, (cout as isize, 1), T::zero(), &mut y, (cout as isize, 1));
    }
    y
}

/// Gradients of a convolution: `(dx, dw)`, `dx` only when requested.
pub fn conv2d_backward<T: Scalar>(x: &[T], w: &[T], dy: &[T], g: &ConvGeom, cout: usize, want_dx: bool) -> (Option<Vec<T>>, Vec<T>) {
    let rows = g.n * g.oh * g.ow;
    let patch = g.kh * g.kw * g.c;
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    let mut dw = vec![T::zero(); patch * cout];
    // dW = colsᵀ · dY
    T::gemm(patch, rows, cout, cols, (1, patch as isize), dy, (cout as isize, 1), T::zero(), &mut dw, (cout as isize, 1));
    let dx = want_dx.then(|| {
        let mut dcols = vec![T::zero(); rows * patch];
        // dcols = dY · Wᵀ
        T::gemm(rows, cout, patch, dy, (cout as isize, 1), w, (1, cout as isize), T::zero(), &mut dcols, (patch as isize, 1));
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.n * g.h * g.w * g.c];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    (dx, dw)
}

/// Depthwise convolution; `w` has shape `[kh, kw, c]`.
pub fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let c = g.c;
    let mut y = vec![T::zero(); g.n * g.oh * g.ow * c];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = ((n * g.oh + oy) * g.ow + ox) * c;
                let out = &mut y[d..d + c];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let s = ((n * g.h + iy) * g.w + ix) * c;
                        let k = (ky * g.kw + kx) * c;
                        for ((o, &xv), &wv) in out.iter_mut().zip(&x[s..s + c]).zip(&w[k..k + c]) {
                            *o = *o + xv * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn depthwise_backward<T: Scalar>(x: &[T], w: &[T], dy: &[T], g: &ConvGeom, want_dx: bool) -> (Option<Vec<T>>, Vec<T>) {
    let c = g.c;
    let mut dw = vec![T::zero(); g.kh * g.kw * c];
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = ((n * g.oh + oy) * g.ow + ox) * c;
                let gy = &dy[d..d + c];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let s = ((n * g.h + iy) * g.w + ix) * c;
                        let k = (ky * g.kw + kx) * c;
                        for ((dwv, &gv), &xv) in dw[k..k + c].iter_mut().zip(gy).zip(&x[s..s + c]) {
                            *dwv = *dwv + gv * xv;
                        }
                        if let Some(dx) = dx.as_mut() {
                            for ((dxv, &gv), &wv) in dx[s..s + c].iter_mut().zip(gy).zip(&w[k..k + c]) {
                                *dxv = *dxv + gv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Parameter counts of a depthwise-separable layer and the standard convolution it replaces.
pub fn separable_param_counts(k: usize, cin: usize, cout: usize) -> (usize, usize) {
    (k * k * cin + cin * cout, k * k * cin * cout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_extents() {
        assert_eq!(same_padding(224, 3, 2), (112, 1));
        assert_eq!(same_padding(64, 1, 2), (32, 0));
        assert_eq!(same_padding(7, 3, 1), (7, 1));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(1, 3, 1), (1, 1));
    }

    #[test]
    fn separable_counts() {
        assert_eq!(separable_param_counts(3, 32, 64), (2336, 18432));
    }

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom, cout: usize) -> Vec<f64> {
        let mut y = vec![0.0; g.n * g.oh * g.ow * cout];
        for n in 0..g.n {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pt as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pl as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                for ci in 0..g.c {
                                    acc += x[((n * g.h + iy as usize) * g.w + ix as usize) * g.c + ci]
                                        * w[((ky * g.kw + kx) * g.c + ci) * cout + co];
                                }
                            }
                        }
                        y[((n * g.oh + oy) * g.ow + ox) * cout + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut r = super::super::rng::Rng::new(3);
        for &(h, w, c, k, s, co) in &[(5, 5, 2, 3, 1, 3), (6, 7, 3, 3, 2, 2), (4, 4, 1, 1, 1, 4), (5, 6, 2, 5, 2, 1)] {
            let g = ConvGeom::new(2, h, w, c, k, k, s);
            let x: Vec<f64> = (0..2 * h * w * c).map(|_| r.range(-1.0, 1.0)).collect();
            let wt: Vec<f64> = (0..k * k * c * co).map(|_| r.range(-1.0, 1.0)).collect();
            let a = conv2d_forward(&x, &wt, &g, co);
            let b = naive_conv(&x, &wt, &g, co);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
