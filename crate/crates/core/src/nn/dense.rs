use crate::tensor::{matmul, Mat, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub in_units: usize,
    pub out_units: usize,
    /// `[out_units, in_units]`
    pub weight: Tensor<T>,
    /// `[out_units]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    /// `[B, in] -> [B, out]`
    pub fn forward(&self, input: &Tensor<T>, with_bias: bool) -> Tensor<T> {
        self.forward_with(&self.weight, input, with_bias)
    }

    pub fn forward_with(&self, weight: &Tensor<T>, input: &Tensor<T>, with_bias: bool) -> Tensor<T> {
        let batch = input.shape()[0];
        assert_eq!(input.shape()[1], self.in_units, "dense input width");
        let mut out = vec![T::zero(); batch * self.out_units];
        if with_bias {
            for row in out.chunks_mut(self.out_units) {
                row.copy_from_slice(self.bias.data());
            }
        }
        matmul(
            Mat::new(input.data(), batch, self.in_units),
            Mat::t(weight.data(), self.in_units, self.out_units),
            &mut out,
            with_bias,
        );
        Tensor::from_vec(&[batch, self.out_units], out).expect("dense output shape")
    }

    pub fn backward(
        &self,
        weight: &Tensor<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        param_grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
    ) -> Tensor<T> {
        let batch = input.shape()[0];
        if let Some((wg, bg)) = param_grads {
            matmul(
                Mat::t(grad_out.data(), self.out_units, batch),
                Mat::new(input.data(), batch, self.in_units),
                wg.data_mut(),
                true,
            );
            for row in grad_out.data().chunks(self.out_units) {
                for (b, &g) in bg.data_mut().iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let mut gx = vec![T::zero(); batch * self.in_units];
        matmul(
            Mat::new(grad_out.data(), batch, self.out_units),
            Mat::new(weight.data(), self.out_units, self.in_units),
            &mut gx,
            false,
        );
        Tensor::from_vec(input.shape(), gx).expect("dense input grad shape")
    }
}
