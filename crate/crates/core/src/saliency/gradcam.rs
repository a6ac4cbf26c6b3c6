use super::one_hot;
use crate::error::{Error, Result};
use crate::nn::{GradientRule, Layer, Network};
use crate::tensor::{Scalar, Tensor};

/// Bilinear resize of a row-major `h x w` map with half-pixel centers and
/// edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let (rows, cols) = (axis(h, out_h), axis(w, out_w));
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Grad-CAM on the activations after the last convolution (after its ReLU
/// when one follows), upsampled to the image size. Returns `[1, H, W]`.
pub fn gradcam<T: Scalar>(net: &Network<T>, image: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    let layers = net.layers();
    let conv = layers
        .iter()
        .rposition(|l| matches!(l, Layer::Conv2D(_)))
        .ok_or_else(|| Error::config("Grad-CAM needs a convolutional layer"))?;
    let feature = if matches!(layers.get(conv + 1), Some(Layer::ReLU)) { conv + 2 } else { conv + 1 };
    let (logits, trace) = net.forward(image)?;
    let upstream = one_hot(1, logits.len(), target)?;
    let grad = net.backprop_to(&trace, &upstream, &mut GradientRule, feature)?;
    let acts = trace.input(feature);
    let (k, h, w) = match acts.shape() {
        [1, k, h, w] => (*k, *h, *w),
        s => return Err(Error::Usage(format!("unexpected feature map shape {s:?}"))),
    };
    let hw = h * w;
    let mut cam = vec![0.0f64; hw];
    for ch in 0..k {
        let g = &grad.data()[ch * hw..(ch + 1) * hw];
        let weight = g.iter().map(|v| v.f64()).sum::<f64>() / hw as f64;
        for (c, a) in cam.iter_mut().zip(&acts.data()[ch * hw..(ch + 1) * hw]) {
            *c += weight * a.f64();
        }
    }
    for c in &mut cam {
        *c = c.max(0.0);
    }
    let (out_h, out_w) = (image.shape()[1], image.shape()[2]);
    let up = upsample_bilinear(&cam, h, w, out_h, out_w);
    Tensor::from_vec(&[1, out_h, out_w], up.into_iter().map(T::of).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2D, Dense, NetworkMeta};

    fn toy(channels: usize, readout: f64) -> Network<f64> {
        let mut weight = Tensor::zeros(&[channels, channels, 1, 1]);
        for c in 0..channels {
            weight.data_mut()[c * channels + c] = 1.0;
        }
        let conv = Conv2D { in_channels: channels, out_channels: channels, kernel_size: 1, stride: 1, weight, bias: Tensor::zeros(&[channels]) };
        let n = channels * 4;
        let dense = Dense { in_units: n, out_units: 2, weight: Tensor::full(&[2, n], readout), bias: Tensor::zeros(&[2]) };
        Network::from_layers(&[channels, 2, 2], vec![Layer::Conv2D(conv), Layer::Flatten, Layer::Dense(dense)], NetworkMeta::default())
            .unwrap()
    }

    #[test]
    fn identity_conv_gives_channel_mean() {
        let img = Tensor::from_vec(&[3, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 0.0, 1.0, 0.0, 3.0, 3.0, 1.0]).unwrap();
        let cam = gradcam(&toy(3, 1.0), &img, 0).unwrap();
        // every channel weight is 1, so the map is the channel sum = 3 x mean
        let expect = [1.5, 5.5, 6.0, 6.0];
        for (got, e) in cam.data().iter().zip(expect) {
            assert!((got - e).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_evidence_is_clamped() {
        let img = Tensor::full(&[2, 2, 2], 0.7);
        let cam = gradcam(&toy(2, -1.0), &img, 0).unwrap();
        assert!(cam.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn upsampling_keeps_the_peak_cell() {
        let (h, w, out) = (7, 7, 64);
        for peak in [0, 8, 24, 48] {
            let mut src = vec![0.1; h * w];
            src[peak] = 1.0;
            let up = upsample_bilinear(&src, h, w, out, out);
            let best = (0..up.len()).max_by(|&a, &b| up[a].partial_cmp(&up[b]).unwrap()).unwrap();
            let (r, c) = (best / out, best % out);
            assert_eq!((r * h / out, c * w / out), (peak / w, peak % w));
        }
    }

    #[test]
    fn same_size_upsampling_is_identity() {
        let src: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(upsample_bilinear(&src, 3, 4, 3, 4), src);
    }
}
