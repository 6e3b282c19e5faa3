//! Forward and backward kernels for the parametric layers. Activations are
//! NCHW (or NF for dense layers); weights follow the layouts documented on
//! each function.

use crate::scalar::Scalar;

/// Geometry of a strided, zero-padded 2D sliding window from an `h x w`
/// grid to an `oh x ow` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Grid {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output length of a convolution along one axis, `None` if the kernel does
/// not fit.
pub fn conv_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution: `(in-1)*stride + kernel - 2*pad + output_pad`.
pub fn tconv_out(input: usize, kernel: usize, stride: usize, pad: usize, output_pad: usize) -> Option<usize> {
    ((input - 1) * stride + kernel + output_pad).checked_sub(2 * pad).filter(|&n| n > 0)
}

/// Unfolds `src` (`channels x h x w`) into `cols` (`rows x cols`).
pub fn im2col<T: Scalar>(src: &[T], g: &Grid, cols: &mut [T]) {
    let ncol = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let y = (oy * g.sh + ki) as isize - g.ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.sw + kj) as isize - g.pw as isize;
                        *v = if x < 0 || x >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` into `dst` (`channels x h x w`).
pub fn col2im<T: Scalar>(cols: &[T], g: &Grid, dst: &mut [T]) {
    let ncol = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let y = (oy * g.sh + ki) as isize - g.ph as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let x = (ox * g.sw + kj) as isize - g.pw as isize;
                        if x >= 0 && x < g.w as isize {
                            dst_row[x as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution. `weight` is `out x in x kh x kw`, `g` maps the input grid to
/// the output grid. Writes `y` (`n x out x oh x ow`).
pub fn conv2d_forward<T: Scalar>(x: &[T], n: usize, g: &Grid, out: usize, weight: &[T], bias: &[T], y: &mut [T]) {
    let (rows, ncol) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncol];
    let in_len = g.channels * g.h * g.w;
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let ys = &mut y[s * out * ncol..(s + 1) * out * ncol];
        for (o, b) in bias.iter().enumerate() {
            ys[o * ncol..(o + 1) * ncol].iter_mut().for_each(|v| *v = *b);
        }
        T::gemm(out, rows, ncol, T::one(), weight, false, &cols, false, T::one(), ys);
    }
}

/// Gradients of [`conv2d_forward`]. Accumulates into `dw`, `db` and, when
/// given, writes `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &Grid,
    out: usize,
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let (rows, ncol) = (g.rows(), g.cols());
    let in_len = g.channels * g.h * g.w;
    let mut cols = vec![T::zero(); rows * ncol];
    let mut dcols = vec![T::zero(); rows * ncol];
    if let Some(dx) = dx.as_deref_mut() {
        dx.iter_mut().for_each(|v| *v = T::zero());
    }
    for s in 0..n {
        let dys = &dy[s * out * ncol..(s + 1) * out * ncol];
        for (o, b) in db.iter_mut().enumerate() {
            *b += dys[o * ncol..(o + 1) * ncol].iter().fold(T::zero(), |a, &v| a + v);
        }
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        // dw (out x rows) += dy (out x ncol) * cols^T
        T::gemm(out, ncol, rows, T::one(), dys, false, &cols, true, T::one(), dw);
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (rows x ncol) = w^T * dy
            T::gemm(rows, out, ncol, T::one(), weight, true, dys, false, T::zero(), &mut dcols);
            col2im(&dcols, g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
}

/// Transposed convolution. `weight` is `in x out x kh x kw`; `g` is the grid
/// of the matching forward convolution, from the output grid (`g.h x g.w`,
/// `g.channels = out`) to the input grid (`g.oh x g.ow`).
pub fn tconv2d_forward<T: Scalar>(x: &[T], n: usize, inp: usize, g: &Grid, weight: &[T], bias: &[T], y: &mut [T]) {
    let (rows, ncol) = (g.rows(), g.cols());
    let out_len = g.channels * g.h * g.w;
    let plane = g.h * g.w;
    let mut cols = vec![T::zero(); rows * ncol];
    for s in 0..n {
        let xs = &x[s * inp * ncol..(s + 1) * inp * ncol];
        // cols (rows x ncol) = w^T (rows x in) * x (in x ncol)
        T::gemm(rows, inp, ncol, T::one(), weight, true, xs, false, T::zero(), &mut cols);
        let ys = &mut y[s * out_len..(s + 1) * out_len];
        for (o, b) in bias.iter().enumerate() {
            ys[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = *b);
        }
        col2im(&cols, g, ys);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tconv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    inp: usize,
    g: &Grid,
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let (rows, ncol) = (g.rows(), g.cols());
    let out_len = g.channels * g.h * g.w;
    let plane = g.h * g.w;
    let mut dcols = vec![T::zero(); rows * ncol];
    for s in 0..n {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        for (o, b) in db.iter_mut().enumerate() {
            *b += dys[o * plane..(o + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
        }
        im2col(dys, g, &mut dcols);
        let xs = &x[s * inp * ncol..(s + 1) * inp * ncol];
        // dw (in x rows) += x (in x ncol) * dcols^T
        T::gemm(inp, ncol, rows, T::one(), xs, false, &dcols, true, T::one(), dw);
        if let Some(dx) = dx.as_deref_mut() {
            // dx (in x ncol) = w (in x rows) * dcols
            T::gemm(
                inp,
                rows,
                ncol,
                T::one(),
                weight,
                false,
                &dcols,
                false,
                T::zero(),
                &mut dx[s * inp * ncol..(s + 1) * inp * ncol],
            );
        }
    }
}

/// 1x1 locally connected layer: an independent `out x in` affine map at each
/// of `positions` spatial positions. `weight` is `positions x out x in`,
/// `bias` is `positions x out`.
#[allow(clippy::too_many_arguments)]
pub fn local1x1_forward<T: Scalar>(
    x: &[T],
    n: usize,
    inp: usize,
    out: usize,
    positions: usize,
    weight: &[T],
    bias: &[T],
    y: &mut [T],
) {
    let mut xp = vec![T::zero(); n * inp];
    let mut yp = vec![T::zero(); n * out];
    for p in 0..positions {
        for s in 0..n {
            for i in 0..inp {
                xp[s * inp + i] = x[(s * inp + i) * positions + p];
            }
            yp[s * out..(s + 1) * out].copy_from_slice(&bias[p * out..(p + 1) * out]);
        }
        let wp = &weight[p * out * inp..(p + 1) * out * inp];
        T::gemm(n, inp, out, T::one(), &xp, false, wp, true, T::one(), &mut yp);
        for s in 0..n {
            for o in 0..out {
                y[(s * out + o) * positions + p] = yp[s * out + o];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn local1x1_backward<T: Scalar>(
    x: &[T],
    n: usize,
    inp: usize,
    out: usize,
    positions: usize,
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let mut xp = vec![T::zero(); n * inp];
    let mut dyp = vec![T::zero(); n * out];
    let mut dxp = vec![T::zero(); n * inp];
    for p in 0..positions {
        for s in 0..n {
            for i in 0..inp {
                xp[s * inp + i] = x[(s * inp + i) * positions + p];
            }
            for o in 0..out {
                let v = dy[(s * out + o) * positions + p];
                dyp[s * out + o] = v;
                db[p * out + o] += v;
            }
        }
        let wp = &weight[p * out * inp..(p + 1) * out * inp];
        // dw_p (out x in) += dy_p^T (out x n) * x_p (n x in)
        T::gemm(out, n, inp, T::one(), &dyp, true, &xp, false, T::one(), &mut dw[p * out * inp..(p + 1) * out * inp]);
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(n, out, inp, T::one(), &dyp, false, wp, false, T::zero(), &mut dxp);
            for s in 0..n {
                for i in 0..inp {
                    dx[(s * inp + i) * positions + p] = dxp[s * inp + i];
                }
            }
        }
    }
}

/// Fully connected layer, `weight` is `out x in`.
pub fn dense_forward<T: Scalar>(x: &[T], n: usize, inp: usize, out: usize, weight: &[T], bias: &[T], y: &mut [T]) {
    for s in 0..n {
        y[s * out..(s + 1) * out].copy_from_slice(bias);
    }
    T::gemm(n, inp, out, T::one(), x, false, weight, true, T::one(), y);
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Scalar>(
    x: &[T],
    n: usize,
    inp: usize,
    out: usize,
    weight: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    for s in 0..n {
        for (b, v) in db.iter_mut().zip(&dy[s * out..(s + 1) * out]) {
            *b += *v;
        }
    }
    T::gemm(out, n, inp, T::one(), dy, true, x, false, T::one(), dw);
    if let Some(dx) = dx {
        T::gemm(n, out, inp, T::one(), dy, false, weight, false, T::zero(), dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], out: usize, k: usize, s: usize, p: usize) -> (Vec<f64>, usize, usize) {
        let oh = conv_out(h, k, s, p).unwrap();
        let ow = conv_out(w, k, s, p).unwrap();
        let mut y = vec![0.0; out * oh * ow];
        for o in 0..out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let yy = (oy * s + ki) as isize - p as isize;
                                let xx = (ox * s + kj) as isize - p as isize;
                                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                    acc += wt[((o * c + ci) * k + ki) * k + kj] * x[(ci * h + yy as usize) * w + xx as usize];
                                }
                            }
                        }
                    }
                    y[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        (y, oh, ow)
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (c, h, w, out, k) = (2, 5, 4, 3, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let wt: Vec<f64> = (0..out * c * k * k).map(|i| (i as f64 * 0.3).cos()).collect();
        for (s, p) in [(1, 1), (2, 0), (3, 0), (2, 1)] {
            let (want, oh, ow) = naive_conv(&x, c, h, w, &wt, out, k, s, p);
            let g = Grid { channels: c, h, w, kh: k, kw: k, sh: s, sw: s, ph: p, pw: p, oh, ow };
            let mut y = vec![0.0; out * oh * ow];
            conv2d_forward(&x, 1, &g, out, &wt, &[0.0; 3], &mut y);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Grid { channels: 2, h: 5, w: 6, kh: 3, kw: 3, sh: 1, sw: 2, ph: 1, pw: 1, oh: 5, ow: 3 };
        let x: Vec<f64> = (0..g.channels * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut ax = vec![0.0; c.len()];
        im2col(&x, &g, &mut ax);
        let mut atc = vec![0.0; x.len()];
        col2im(&c, &g, &mut atc);
        let lhs: f64 = ax.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atc).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_size_formula() {
        assert_eq!(tconv_out(20, 3, 1, 1, 0), Some(20));
        assert_eq!(tconv_out(12, 3, 2, 1, 1), Some(24));
        assert_eq!(tconv_out(1, 1, 1, 1, 0), None);
        assert_eq!(conv_out(20, 3, 3, 0), Some(6));
        assert_eq!(conv_out(3, 3, 3, 0), Some(1));
        assert_eq!(conv_out(2, 3, 3, 0), None);
    }
}
