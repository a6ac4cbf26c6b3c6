//! Valid-padding strided 2-D convolution via im2col.

use crate::tensor::{matmul, Mat, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2D<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
}

/// Output side length of a valid convolution.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

impl<T: Scalar> Conv2D<T> {
    fn geometry(&self, input_shape: &[usize]) -> Geometry {
        let (c, h, w) = (input_shape[1], input_shape[2], input_shape[3]);
        assert_eq!(c, self.in_channels, "conv input channels");
        let oh = conv_out_len(h, self.kernel_size, self.stride).expect("conv input too small");
        let ow = conv_out_len(w, self.kernel_size, self.stride).expect("conv input too small");
        Geometry { c, h, w, oh, ow, k: self.kernel_size, s: self.stride }
    }

    pub fn output_shape(&self, chw: &[usize]) -> Option<Vec<usize>> {
        if chw.len() != 3 || chw[0] != self.in_channels {
            return None;
        }
        Some(vec![
            self.out_channels,
            conv_out_len(chw[1], self.kernel_size, self.stride)?,
            conv_out_len(chw[2], self.kernel_size, self.stride)?,
        ])
    }

    /// Batched im2col: `[patch, batch * positions]`.
    fn im2col(g: &Geometry, input: &[T], batch: usize) -> Vec<T> {
        let (p, cols) = (g.positions(), batch * g.positions());
        let mut col = vec![T::zero(); g.patch() * cols];
        for b in 0..batch {
            let img = &input[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
            for c in 0..g.c {
                for ki in 0..g.k {
                    for kj in 0..g.k {
                        let r = (c * g.k + ki) * g.k + kj;
                        let dst = &mut col[r * cols + b * p..r * cols + (b + 1) * p];
                        for oy in 0..g.oh {
                            let src_row = c * g.h * g.w + (oy * g.s + ki) * g.w + kj;
                            for ox in 0..g.ow {
                                dst[oy * g.ow + ox] = img[src_row + ox * g.s];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(g: &Geometry, col: &[T], batch: usize) -> Vec<T> {
        let (p, cols) = (g.positions(), batch * g.positions());
        let mut out = vec![T::zero(); batch * g.c * g.h * g.w];
        for b in 0..batch {
            let img = &mut out[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
            for c in 0..g.c {
                for ki in 0..g.k {
                    for kj in 0..g.k {
                        let r = (c * g.k + ki) * g.k + kj;
                        let src = &col[r * cols + b * p..r * cols + (b + 1) * p];
                        for oy in 0..g.oh {
                            let dst_row = c * g.h * g.w + (oy * g.s + ki) * g.w + kj;
                            for ox in 0..g.ow {
                                img[dst_row + ox * g.s] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `[B, C, H, W] -> [B, O, OH, OW]`; `with_bias = false` gives the bare
    /// linear map used by relevance rules.
    pub fn forward(&self, input: &Tensor<T>, with_bias: bool) -> Tensor<T> {
        self.forward_with(&self.weight, input, with_bias)
    }

    pub fn forward_with(&self, weight: &Tensor<T>, input: &Tensor<T>, with_bias: bool) -> Tensor<T> {
        let batch = input.shape()[0];
        let g = self.geometry(input.shape());
        let (p, o) = (g.positions(), self.out_channels);
        let col = Self::im2col(&g, input.data(), batch);
        let mut flat = vec![T::zero(); o * batch * p];
        matmul(
            Mat::new(weight.data(), o, g.patch()),
            Mat::new(&col, g.patch(), batch * p),
            &mut flat,
            false,
        );
        let mut out = vec![T::zero(); batch * o * p];
        let bias = self.bias.data();
        for b in 0..batch {
            for oc in 0..o {
                let src = &flat[oc * batch * p + b * p..oc * batch * p + (b + 1) * p];
                let dst = &mut out[(b * o + oc) * p..(b * o + oc + 1) * p];
                let shift = if with_bias { bias[oc] } else { T::zero() };
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + shift;
                }
            }
        }
        Tensor::from_vec(&[batch, o, g.oh, g.ow], out).expect("conv output shape")
    }

    /// Gradient w.r.t. the input, and optionally accumulated into
    /// `(weight_grad, bias_grad)`.
    pub fn backward(
        &self,
        weight: &Tensor<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
    ) -> Tensor<T> {
        let batch = input.shape()[0];
        let g = self.geometry(input.shape());
        let (p, o) = (g.positions(), self.out_channels);
        // [B, O, P] -> [O, B*P]
        let mut gflat = vec![T::zero(); o * batch * p];
        let go = grad_out.data();
        for b in 0..batch {
            for oc in 0..o {
                gflat[oc * batch * p + b * p..oc * batch * p + (b + 1) * p]
                    .copy_from_slice(&go[(b * o + oc) * p..(b * o + oc + 1) * p]);
            }
        }
        if let Some((wg, bg)) = param_grads {
            let col = Self::im2col(&g, input.data(), batch);
            matmul(
                Mat::new(&gflat, o, batch * p),
                Mat::t(&col, batch * p, g.patch()),
                wg.data_mut(),
                true,
            );
            for (oc, bgv) in bg.data_mut().iter_mut().enumerate() {
                *bgv += gflat[oc * batch * p..(oc + 1) * batch * p].iter().copied().sum::<T>();
            }
        }
        let mut gcol = vec![T::zero(); g.patch() * batch * p];
        matmul(
            Mat::t(weight.data(), g.patch(), o),
            Mat::new(&gflat, o, batch * p),
            &mut gcol,
            false,
        );
        let gx = Self::col2im(&g, &gcol, batch);
        Tensor::from_vec(input.shape(), gx).expect("conv input grad shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &[f64],
        c: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        bias: &[f64],
        o: usize,
        k: usize,
        s: usize,
    ) -> Vec<f64> {
        let oh = (h - k) / s + 1;
        let ow = (w - k) / s + 1;
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                acc += wt[((oc * c + ic) * k + ki) * k + kj]
                                    * x[(ic * h + oy * s + ki) * w + ox * s + kj];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_loops() {
        let (c, h, w, o, k, s) = (2, 7, 6, 3, 3, 2);
        let x: Vec<f64> = (0..2 * c * h * w).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let wt: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let conv = Conv2D {
            in_channels: c,
            out_channels: o,
            kernel_size: k,
            stride: s,
            weight: Tensor::from_vec(&[o, c, k, k], wt.clone()).unwrap(),
            bias: Tensor::from_vec(&[o], bias.clone()).unwrap(),
        };
        let input = Tensor::from_vec(&[2, c, h, w], x.clone()).unwrap();
        let out = conv.forward(&input, true);
        assert_eq!(out.shape(), &[2, 3, 3, 2]);
        for b in 0..2 {
            let want = naive_conv(&x[b * c * h * w..(b + 1) * c * h * w], c, h, w, &wt, &bias, o, k, s);
            let got = &out.data()[b * want.len()..(b + 1) * want.len()];
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_len_for_model_shapes() {
        // 64 -> 31 -> 15 -> 7 -> 3
        assert_eq!(conv_out_len(64, 3, 2), Some(31));
        assert_eq!(conv_out_len(31, 3, 2), Some(15));
        assert_eq!(conv_out_len(15, 3, 2), Some(7));
        assert_eq!(conv_out_len(7, 3, 2), Some(3));
        assert_eq!(conv_out_len(2, 3, 2), None);
    }
}
