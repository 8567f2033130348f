//! Raw numeric kernels over slices. Shapes are validated by the callers.

use crate::scalar::Scalar;

/// Row-major matrix view description: `rows x cols`, optionally transposed.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl Mat {
    pub fn new(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical shape after the optional transpose.
    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b` (`accumulate == false`) or `c += a * b`.
pub(crate) fn gemm<T: Scalar>(a: &[T], am: Mat, b: &[T], bm: Mat, c: &mut [T], accumulate: bool) {
    let (m, k) = am.logical();
    let (k2, n) = bm.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert!(a.len() >= am.rows * am.cols && b.len() >= bm.rows * bm.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = am.strides();
    let (rsb, csb) = bm.strides();
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: bounds asserted above; `c` is a distinct mutable slice.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel, unpadded 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize) -> Option<Self> {
        if k == 0 || stride == 0 || h < k || w < k {
            return None;
        }
        Some(ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            h_out: (h - k) / stride + 1,
            w_out: (w - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds one `C x H x W` image into a `(C*k*k) x (H'*W')` column matrix.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let np = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * np..(row + 1) * np];
                for oy in 0..g.h_out {
                    let iy = oy * g.stride + ky;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    for ox in 0..g.w_out {
                        dst[oy * g.w_out + ox] = src[ox * g.stride + kx];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back into an image.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let np = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * np..(row + 1) * np];
                for oy in 0..g.h_out {
                    let iy = oy * g.stride + ky;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in 0..g.w_out {
                        dst[ox * g.stride + kx] += src[oy * g.w_out + ox];
                    }
                }
            }
        }
    }
}

/// Batched `[B x m x k] * [B x k x n]` with plain loops.
///
/// Each output element is an in-order sum over `k`, so its value does not
/// depend on the other rows or columns in the batch.
pub(crate) fn bmm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], batch: usize, m: usize, k: usize, n: usize) {
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let cb = &mut c[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += ab[i * k + p] * bb[p * n + j];
                }
                cb[i * n + j] = acc;
            }
        }
    }
}

/// Transposes the last two axes of a `[B x r x c]` buffer.
pub(crate) fn transpose_last2<T: Scalar>(x: &[T], batch: usize, r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..batch {
        let src = &x[bi * r * c..(bi + 1) * r * c];
        let dst = &mut out[bi * r * c..(bi + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_transposes_agree_with_naive_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(&a, Mat::new(2, 3), &b, Mat::new(3, 4), &mut c, false);
        let expect = naive(&a, &b, 2, 3, 4);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }

        // aT stored as 3x2, used transposed.
        let at = transpose_last2(&a, 1, 2, 3);
        let mut c2 = vec![0.0; 8];
        gemm(&at, Mat::new(3, 2).t(), &b, Mat::new(3, 4), &mut c2, false);
        assert_eq!(c, c2);

        // accumulate doubles the result
        gemm(&a, Mat::new(2, 3), &b, Mat::new(3, 4), &mut c2, true);
        for (x, y) in c2.iter().zip(&expect) {
            assert!((x - 2.0 * y).abs() < 1e-13);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom::new(2, 5, 6, 3, 2).unwrap();
        assert_eq!((g.h_out, g.w_out), (2, 2));
        let img: Vec<f64> = (0..60).map(|v| (v as f64 * 0.37).cos()).collect();
        let mut cols = vec![0.0; g.patch_len() * g.out_pixels()];
        im2col(&img, &g, &mut cols);
        let y: Vec<f64> = (0..cols.len()).map(|v| (v as f64 * 0.11).sin()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; img.len()];
        col2im_add(&y, &g, &mut back);
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_geometry_rejects_oversized_kernel() {
        assert!(ConvGeom::new(1, 2, 2, 3, 1).is_none());
        assert!(ConvGeom::new(1, 4, 4, 2, 0).is_none());
        let g = ConvGeom::new(2, 64, 64, 3, 2).unwrap();
        assert_eq!(g.h_out, 31);
    }
}
