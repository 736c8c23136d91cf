//! im2col/col2im based 2-D convolution and its transpose.
//!
//! Batch samples are processed in order and weight gradients are accumulated
//! sample by sample, so results do not depend on scheduling.

use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(kernel > 0 && stride > 0, "kernel and stride must be positive");
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent of a forward convolution.
    pub fn conv_out(&self, size: usize) -> usize {
        let padded = size + 2 * self.padding;
        assert!(
            padded >= self.kernel,
            "input extent {} smaller than kernel {}",
            size,
            self.kernel
        );
        (padded - self.kernel) / self.stride + 1
    }

    /// Output extent of a transposed convolution.
    pub fn transpose_out(&self, size: usize, output_padding: usize) -> usize {
        assert!(size >= 1);
        assert!(
            output_padding < self.stride,
            "output_padding must be smaller than stride"
        );
        let full = (size - 1) * self.stride + self.kernel + output_padding;
        assert!(full > 2 * self.padding, "transposed output would be empty");
        full - 2 * self.padding
    }
}

/// Unfold one C×H×W image into a (C·k·k)×(Ho·Wo) column matrix.
pub(crate) fn im2col<T: Real>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let p = g.padding as isize;
    let hw_out = ho * wo;
    debug_assert_eq!(cols.len(), c * k * k * hw_out);
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - p;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - p;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back onto a C×H×W image, accumulating overlaps.
pub(crate) fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let k = g.kernel;
    let p = g.padding as isize;
    let hw_out = ho * wo;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, transpose: bool) {
    assert_eq!(x.shape().len(), 4, "conv input must be N×C×H×W");
    assert_eq!(w.shape().len(), 4, "conv weight must be 4-D");
    let cin = x.shape()[1];
    let (w_in, w_out) = if transpose {
        (w.shape()[0], w.shape()[1])
    } else {
        (w.shape()[1], w.shape()[0])
    };
    assert_eq!(w_in, cin, "conv weight input channels {} vs input {}", w_in, cin);
    assert_eq!(w.shape()[2], w.shape()[3], "square kernels only");
    assert_eq!(b.shape(), &[w_out], "conv bias must have one entry per output channel");
}

/// Cross-correlation. `w` is C_out×C_in×k×k.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    check_conv_shapes(x, w, b, false);
    assert_eq!(w.shape()[2], g.kernel, "kernel size mismatch");
    let (n, cin, h, wd) = x.dims4();
    let cout = w.shape()[0];
    let (ho, wo) = (g.conv_out(h), g.conv_out(wd));
    let kdim = cin * g.kernel * g.kernel;
    let hw = ho * wo;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = vec![T::zero(); kdim * hw];
    for s in 0..n {
        im2col(x.sample(s), cin, h, wd, g, ho, wo, &mut cols);
        let dst = &mut out.data_mut()[s * cout * hw..(s + 1) * cout * hw];
        for (ch, plane) in dst.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = b.data()[ch]);
        }
        gemm(false, false, cout, hw, kdim, T::one(), w.data(), &cols, T::one(), dst);
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to (x, w, b).
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, cin, h, wd) = x.dims4();
    let (_, cout, ho, wo) = dout.dims4();
    let kdim = cin * g.kernel * g.kernel;
    let hw = ho * wo;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); kdim * hw];
    for s in 0..n {
        let dy = dout.sample(s);
        for (ch, plane) in dy.chunks(hw).enumerate() {
            db.data_mut()[ch] = db.data()[ch] + plane.iter().fold(T::zero(), |a, &v| a + v);
        }
        im2col(x.sample(s), cin, h, wd, g, ho, wo, &mut cols);
        gemm(false, true, cout, kdim, hw, T::one(), dy, &cols, T::one(), dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            gemm(true, false, kdim, hw, cout, T::one(), w.data(), dy, T::zero(), &mut cols);
            let per = cin * h * wd;
            col2im(&cols, cin, h, wd, g, ho, wo, &mut dx.data_mut()[s * per..(s + 1) * per]);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution (adjoint of [`conv2d_forward`]). `w` is C_in×C_out×k×k.
pub fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    g: ConvGeom,
    output_padding: usize,
) -> Tensor<T> {
    check_conv_shapes(x, w, b, true);
    assert_eq!(w.shape()[2], g.kernel, "kernel size mismatch");
    let (n, cin, h, wd) = x.dims4();
    let cout = w.shape()[1];
    let (ho, wo) = (g.transpose_out(h, output_padding), g.transpose_out(wd, output_padding));
    let kdim = cout * g.kernel * g.kernel;
    let hw = h * wd;
    let per_out = cout * ho * wo;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = vec![T::zero(); kdim * hw];
    for s in 0..n {
        gemm(true, false, kdim, hw, cin, T::one(), w.data(), x.sample(s), T::zero(), &mut cols);
        let dst = &mut out.data_mut()[s * per_out..(s + 1) * per_out];
        for (ch, plane) in dst.chunks_mut(ho * wo).enumerate() {
            plane.iter_mut().for_each(|v| *v = b.data()[ch]);
        }
        col2im(&cols, cout, ho, wo, g, h, wd, dst);
    }
    out
}

/// Gradients of [`conv_transpose2d_forward`] with respect to (x, w, b).
pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, cin, h, wd) = x.dims4();
    let (_, cout, ho, wo) = dout.dims4();
    let kdim = cout * g.kernel * g.kernel;
    let hw = h * wd;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); kdim * hw];
    for s in 0..n {
        let dy = dout.sample(s);
        for (ch, plane) in dy.chunks(ho * wo).enumerate() {
            db.data_mut()[ch] = db.data()[ch] + plane.iter().fold(T::zero(), |a, &v| a + v);
        }
        im2col(dy, cout, ho, wo, g, h, wd, &mut cols);
        gemm(false, true, cin, kdim, hw, T::one(), x.sample(s), &cols, T::one(), dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let per = cin * hw;
            gemm(
                false,
                false,
                cin,
                hw,
                kdim,
                T::one(),
                w.data(),
                &cols,
                T::zero(),
                &mut dx.data_mut()[s * per..(s + 1) * per],
            );
        }
    }
    (dx, dw, db)
}
