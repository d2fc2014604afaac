//! 2-D convolution and transposed convolution over NCHW tensors, lowered to
//! GEMM with im2col / col2im. Kernels are square.

use super::gemm::{gemm, Mat};
use super::graph::{Graph, Op, Var};
use super::Tensor;
use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// `floor((in + 2·padding − kernel)/stride) + 1`.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(invalid!("stride must be at least 1"));
    }
    if input + 2 * padding < kernel {
        return Err(shape_err!(
            "kernel {kernel} larger than padded input {}",
            input + 2 * padding
        ));
    }
    Ok((input + 2 * padding - kernel) / stride + 1)
}

/// `(in − 1)·stride − 2·padding + kernel`.
pub fn conv_transpose_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(invalid!("stride must be at least 1"));
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(shape_err!(
            "transposed conv output would be empty (input {input}, kernel {kernel}, padding {padding})"
        ));
    }
    Ok(full - 2 * padding)
}

/// Spatial sizes of one lowering: image `h×w` ↔ patches on an `oh×ow` grid.
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.channels * self.geom.kernel * self.geom.kernel
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel for output coordinate `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// `cols[(c,ky,kx), (oy,ox)] = img[c, oy·s+ky−p, ox·s+kx−p]` (0 outside).
    fn im2col(&self, img: &[f32], cols: &mut [f32]) {
        let k = self.geom.kernel;
        let p = self.cols();
        cols.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        let dst_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                *d = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Lowering::im2col`]: scatters-adds patches into `img`.
    fn col2im(&self, cols: &[f32], img: &mut [f32]) {
        let k = self.geom.kernel;
        let p = self.cols();
        for c in 0..self.channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            continue;
                        };
                        let src_row = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, s) in src_row.iter().enumerate() {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst_row[ix] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_nchw(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err!("{what} must be 4-D NCHW, got {shape:?}")),
    }
}

fn check_weight(w: &[usize], b: &[usize], in_axis: usize, in_ch: usize, what: &str) -> Result<(usize, usize)> {
    let (d0, d1, kh, kw) = check_nchw(w, &format!("{what} weight"))?;
    if kh != kw {
        return Err(shape_err!("{what}: only square kernels are supported, got {kh}x{kw}"));
    }
    let (wi, wo) = if in_axis == 1 { (d1, d0) } else { (d0, d1) };
    if wi != in_ch {
        return Err(shape_err!(
            "{what}: input channels {in_ch} do not match weight input channels {wi}"
        ));
    }
    if b != [wo] {
        return Err(shape_err!("{what}: bias shape {b:?} should be [{wo}]"));
    }
    Ok((wo, kh))
}

pub(super) fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<(Tensor, ConvGeometry)> {
    let (n, c, h, wd) = check_nchw(x.shape(), "conv2d input")?;
    let (oc, k) = check_weight(w.shape(), b.shape(), 1, c, "conv2d")?;
    let geom = ConvGeometry {
        kernel: k,
        stride,
        padding,
    };
    let oh = conv_output_size(h, k, stride, padding)
        .map_err(|e| shape_err!("conv2d height: {e}"))?;
    let ow = conv_output_size(wd, k, stride, padding)
        .map_err(|e| shape_err!("conv2d width: {e}"))?;
    let low = Lowering {
        channels: c,
        h,
        w: wd,
        oh,
        ow,
        geom,
    };
    let (kk, p) = (low.rows(), low.cols());
    let mut cols = vec![0.0; kk * p];
    let mut y = vec![0.0; n * oc * p];
    for i in 0..n {
        low.im2col(&x.data()[i * c * h * wd..(i + 1) * c * h * wd], &mut cols);
        let yi = &mut y[i * oc * p..(i + 1) * oc * p];
        for (o, row) in yi.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        gemm(Mat::new(w.data(), oc, kk), Mat::new(&cols, kk, p), 1.0, yi);
    }
    Ok((Tensor::new(&[n, oc, oh, ow], y)?, geom))
}

type Grads3 = (Option<Tensor>, Option<Tensor>, Option<Tensor>);

pub(super) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    geom: ConvGeometry,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> Grads3 {
    let (n, c, h, wd) = check_nchw(x.shape(), "x").expect("recorded shape");
    let (_, oc, oh, ow) = check_nchw(gy.shape(), "gy").expect("recorded shape");
    let low = Lowering {
        channels: c,
        h,
        w: wd,
        oh,
        ow,
        geom,
    };
    let (kk, p) = (low.rows(), low.cols());
    let img = c * h * wd;
    let mut cols = vec![0.0; kk * p];
    let mut dx = need_x.then(|| vec![0.0; x.len()]);
    let mut dw = need_w.then(|| vec![0.0; w.len()]);
    for i in 0..n {
        let gyi = &gy.data()[i * oc * p..(i + 1) * oc * p];
        if let Some(dw) = dw.as_mut() {
            low.im2col(&x.data()[i * img..(i + 1) * img], &mut cols);
            gemm(Mat::new(gyi, oc, p), Mat::t(&cols, kk, p), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(Mat::t(w.data(), oc, kk), Mat::new(gyi, oc, p), 0.0, &mut cols);
            low.col2im(&cols, &mut dx[i * img..(i + 1) * img]);
        }
    }
    let db = need_b.then(|| bias_grad(gy, n, oc, p));
    (
        dx.map(|d| Tensor::new(x.shape(), d).expect("dx")),
        dw.map(|d| Tensor::new(w.shape(), d).expect("dw")),
        db,
    )
}

fn bias_grad(gy: &Tensor, n: usize, oc: usize, p: usize) -> Tensor {
    let mut db = vec![0.0f64; oc];
    for i in 0..n {
        for (o, acc) in db.iter_mut().enumerate() {
            let s = (i * oc + o) * p;
            *acc += gy.data()[s..s + p].iter().map(|&v| f64::from(v)).sum::<f64>();
        }
    }
    Tensor::new(&[oc], db.into_iter().map(|v| v as f32).collect()).expect("db")
}

pub(super) fn conv_transpose2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, ConvGeometry)> {
    let (n, ic, ih, iw) = check_nchw(x.shape(), "conv2d_transpose input")?;
    let (oc, k) = check_weight(w.shape(), b.shape(), 0, ic, "conv2d_transpose")?;
    let geom = ConvGeometry {
        kernel: k,
        stride,
        padding,
    };
    let oh = conv_transpose_output_size(ih, k, stride, padding)
        .map_err(|e| shape_err!("conv2d_transpose height: {e}"))?;
    let ow = conv_transpose_output_size(iw, k, stride, padding)
        .map_err(|e| shape_err!("conv2d_transpose width: {e}"))?;
    let low = Lowering {
        channels: oc,
        h: oh,
        w: ow,
        oh: ih,
        ow: iw,
        geom,
    };
    let (kk, q) = (low.rows(), low.cols());
    let mut cols = vec![0.0; kk * q];
    let out_img = oc * oh * ow;
    let mut y = vec![0.0; n * out_img];
    for i in 0..n {
        let xi = &x.data()[i * ic * q..(i + 1) * ic * q];
        gemm(Mat::t(w.data(), ic, kk), Mat::new(xi, ic, q), 0.0, &mut cols);
        let yi = &mut y[i * out_img..(i + 1) * out_img];
        low.col2im(&cols, yi);
        for (o, plane) in yi.chunks_mut(oh * ow).enumerate() {
            let bo = b.data()[o];
            plane.iter_mut().for_each(|v| *v += bo);
        }
    }
    Ok((Tensor::new(&[n, oc, oh, ow], y)?, geom))
}

pub(super) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    geom: ConvGeometry,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> Grads3 {
    let (n, ic, ih, iw) = check_nchw(x.shape(), "x").expect("recorded shape");
    let (_, oc, oh, ow) = check_nchw(gy.shape(), "gy").expect("recorded shape");
    let low = Lowering {
        channels: oc,
        h: oh,
        w: ow,
        oh: ih,
        ow: iw,
        geom,
    };
    let (kk, q) = (low.rows(), low.cols());
    let out_img = oc * oh * ow;
    let mut cols = vec![0.0; kk * q];
    let mut dx = need_x.then(|| vec![0.0; x.len()]);
    let mut dw = need_w.then(|| vec![0.0; w.len()]);
    if need_x || need_w {
        for i in 0..n {
            low.im2col(&gy.data()[i * out_img..(i + 1) * out_img], &mut cols);
            if let Some(dx) = dx.as_mut() {
                gemm(
                    Mat::new(w.data(), ic, kk),
                    Mat::new(&cols, kk, q),
                    0.0,
                    &mut dx[i * ic * q..(i + 1) * ic * q],
                );
            }
            if let Some(dw) = dw.as_mut() {
                let xi = &x.data()[i * ic * q..(i + 1) * ic * q];
                gemm(Mat::new(xi, ic, q), Mat::t(&cols, kk, q), 1.0, dw);
            }
        }
    }
    let db = need_b.then(|| bias_grad(gy, n, oc, oh * ow));
    (
        dx.map(|d| Tensor::new(x.shape(), d).expect("dx")),
        dw.map(|d| Tensor::new(w.shape(), d).expect("dw")),
        db,
    )
}

impl Graph {
    /// Cross-correlation of `x: (N, C, H, W)` with `w: (OC, C, k, k)` plus
    /// per-channel bias `b: (OC)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (y, geom) = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, padding)?;
        self.push("conv2d", y, Op::Conv2d { x, w, b, geom })
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] in `x`) with
    /// `w: (C, OC, k, k)` and bias `b: (OC)`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (y, geom) =
            conv_transpose2d_forward(self.value(x), self.value(w), self.value(b), stride, padding)?;
        self.push("conv2d_transpose", y, Op::ConvTranspose2d { x, w, b, geom })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    /// Direct seven-loop convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
        let (n, c, h, wd) = check_nchw(x.shape(), "").unwrap();
        let (oc, _, k, _) = check_nchw(w.shape(), "").unwrap();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut y = Tensor::zeros(&[n, oc, oh, ow]);
        for i in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[o] as f64;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((i * c + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((o * c + ci) * k + ky) * k + kx];
                                    acc += (xv * wv) as f64;
                                }
                            }
                        }
                        y.data_mut()[((i * oc + o) * oh + oy) * ow + ox] = acc as f32;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_loops_over_geometry_grid() {
        let mut rng = RngStream::new(3);
        for &(h, k, s, p) in &[(5, 3, 1, 0), (6, 3, 2, 1), (7, 5, 2, 2), (8, 4, 2, 1), (5, 1, 1, 0), (9, 3, 3, 1)] {
            let x = Tensor::randn(&[2, 3, h, h + 1], 1.0, &mut rng);
            let w = Tensor::randn(&[4, 3, k, k], 1.0, &mut rng);
            let b = Tensor::randn(&[4], 1.0, &mut rng);
            let (y, _) = conv2d_forward(&x, &w, &b, s, p).unwrap();
            let want = naive_conv(&x, &w, &b, s, p);
            assert_eq!(y.shape(), want.shape());
            assert_eq!(y.shape()[2], conv_output_size(h, k, s, p).unwrap());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f32);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let (y, _) = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
        let (yt, _) = conv_transpose2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(yt, x);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 5, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let err = conv2d_forward(&x, &w, &b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("input channels 2"), "{err}");
    }

    #[test]
    fn transpose_output_size_formula() {
        assert_eq!(conv_transpose_output_size(6, 4, 2, 1).unwrap(), 12);
        assert_eq!(conv_transpose_output_size(48, 4, 2, 1).unwrap(), 96);
        assert_eq!(conv_output_size(96, 5, 2, 2).unwrap(), 48);
        assert_eq!(conv_output_size(24, 3, 2, 1).unwrap(), 12);
    }
}
