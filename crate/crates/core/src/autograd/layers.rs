//! Tensor-in, tensor-out wrappers around single graph ops.

use crate::autograd::graph::{Graph, Mode};
use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `params = [weight [out,in], bias [out]]`
    Dense,
    Relu,
    MaxPool2,
    AvgPoolGlobal,
    /// `params = [gamma, beta]`; batch statistics.
    BatchNorm,
    Flatten,
    Softmax,
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let k = g.input(kernel.clone());
    let y = g.conv2d(x, k, stride, padding)?;
    Ok(g.value(y).clone())
}

pub fn layer_forward<T: Scalar>(kind: LayerKind, input: &Tensor<T>, params: &[Tensor<T>]) -> Result<Tensor<T>> {
    let want = match kind {
        LayerKind::Dense | LayerKind::BatchNorm => 2,
        _ => 0,
    };
    if params.len() != want {
        return Err(Error::Config(format!(
            "{kind:?} takes {want} parameter tensors, got {}",
            params.len()
        )));
    }
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let y = match kind {
        LayerKind::Dense => {
            if input.rank() != 2 {
                return Err(Error::Config(format!(
                    "dense input must be rank 2, got {:?}",
                    input.shape()
                )));
            }
            let w = g.input(params[0].clone());
            let b = g.input(params[1].clone());
            let y = g.matmul_nt(x, w)?;
            g.add_bias(y, b)?
        }
        LayerKind::Relu => g.relu(x),
        LayerKind::MaxPool2 => g.maxpool2(x)?,
        LayerKind::AvgPoolGlobal => g.global_avg_pool(x)?,
        LayerKind::BatchNorm => {
            let gamma = g.input(params[0].clone());
            let beta = g.input(params[1].clone());
            let c = params[0].len();
            let zeros = vec![T::zero(); c];
            let ones = vec![T::one(); c];
            g.batchnorm(x, gamma, beta, 0, Mode::Train, (&zeros, &ones))?
        }
        LayerKind::Flatten => g.flatten(x)?,
        LayerKind::Softmax => g.softmax(x)?,
    };
    Ok(g.value(y).clone())
}

/// Mean softmax cross-entropy; errors on targets outside `[0, C)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let mut g = Graph::new();
    let x = g.input(logits.clone());
    let l = g.cross_entropy(x, targets)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn conv_scalar_kernel_scales() {
        let y = conv2d_forward(&t(&[1, 1, 2, 2], &[1., 2., 3., 4.]), &t(&[1, 1, 1, 1], &[2.]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let x = t(&[2, 3, 5, 5], &(0..150).map(|i| i as f64).collect::<Vec<_>>());
        let y = conv2d_forward(&x, &Tensor::zeros(vec![4, 3, 3, 3]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_diagonal_kernel() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        let y = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y.data(), &[6., 8., 12., 14.]);
    }

    #[test]
    fn conv_padding_and_stride_shape() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 7, 6]);
        let y = conv2d_forward(&x, &Tensor::zeros(vec![3, 2, 3, 3]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 3]);
    }

    #[test]
    fn conv_channel_mismatch_is_config_error() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 4, 4]);
        let err = conv2d_forward(&x, &Tensor::zeros(vec![1, 3, 3, 3]), 1, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = conv2d_forward(&x, &Tensor::zeros(vec![1, 2, 7, 7]), 1, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn simple_layers() {
        let y = layer_forward(LayerKind::Relu, &t(&[3], &[-1., 0., 2.]), &[]).unwrap();
        assert_eq!(y.data(), &[0., 0., 2.]);
        let y = layer_forward(LayerKind::MaxPool2, &t(&[1, 1, 2, 2], &[1., 2., 3., 4.]), &[]).unwrap();
        assert_eq!(y.data(), &[4.]);
        let y = layer_forward(LayerKind::Softmax, &t(&[1, 2], &[0., 0.]), &[]).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = layer_forward(LayerKind::AvgPoolGlobal, &t(&[1, 1, 2, 2], &[1., 2., 3., 4.]), &[]).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let y = layer_forward(LayerKind::Flatten, &Tensor::<f64>::zeros(vec![2, 3, 2, 2]), &[]).unwrap();
        assert_eq!(y.shape(), &[2, 12]);
    }

    #[test]
    fn dense_layer() {
        let x = t(&[1, 2], &[1., 2.]);
        let w = t(&[3, 2], &[1., 0., 0., 1., 1., 1.]);
        let b = t(&[3], &[0.5, 0., -1.]);
        let y = layer_forward(LayerKind::Dense, &x, &[w, b]).unwrap();
        assert_eq!(y.data(), &[1.5, 2., 2.]);
        assert!(layer_forward(LayerKind::Dense, &x, &[]).is_err());
        assert!(layer_forward(
            LayerKind::Dense,
            &t(&[1, 3], &[0.; 3]),
            &[t(&[3, 2], &[0.; 6]), t(&[3], &[0.; 3])]
        )
        .is_err());
    }

    #[test]
    fn batchnorm_normalises_channels() {
        let x = t(&[4, 2], &[1., 10., 2., 20., 3., 30., 4., 40.]);
        let y = layer_forward(LayerKind::BatchNorm, &x, &[t(&[2], &[1., 1.]), t(&[2], &[0., 0.])]).unwrap();
        for ch in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| y.data()[i * 2 + ch]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn incompatible_shapes_are_config_errors() {
        let v = Tensor::<f32>::zeros(vec![4]);
        assert!(matches!(
            layer_forward(LayerKind::MaxPool2, &v, &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            layer_forward(LayerKind::Softmax, &v, &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            layer_forward(LayerKind::AvgPoolGlobal, &v, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cross_entropy_values() {
        let l = softmax_cross_entropy(&t(&[1, 2], &[0., 0.]), &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = softmax_cross_entropy(&t(&[1, 2], &[10., -10.]), &[0]).unwrap();
        let want = (1.0 + (-20.0f64).exp()).ln();
        assert!((l - want).abs() < 1e-20);
        assert!((l - 2.061e-9).abs() < 1e-12);
        assert!(matches!(
            softmax_cross_entropy(&t(&[1, 2], &[0., 0.]), &[2]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = t(&[2, 3], &[0.2, -1.0, 0.5, 1.0, 1.0, -2.0]);
        let targets = [2, 0];
        let mut g = Graph::new();
        let x = g.leaf(logits.clone(), true);
        let l = g.cross_entropy(x, &targets).unwrap();
        let grads = g.gradients(l).unwrap();
        let got = grads.get(x).unwrap();
        let h = 1e-3;
        for (i, &want) in got.iter().enumerate() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&plus, &targets).unwrap()
                - softmax_cross_entropy(&minus, &targets).unwrap())
                / (2.0 * h);
            assert!((fd - want).abs() < 1e-6, "coord {i}: fd {fd} vs {want}");
        }
        let row0: Vec<f64> = {
            let z: f64 = [0.2f64, -1.0, 0.5].iter().map(|v| v.exp()).sum();
            [0.2f64, -1.0, 0.5].iter().map(|v| v.exp() / z).collect()
        };
        assert!((got[0] - row0[0] / 2.0).abs() < 1e-12);
        assert!((got[2] - (row0[2] - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1], &[3.]), true);
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.gradients(y).unwrap().get(x).unwrap(), &[6.0]);

        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[4], &[1., -2., 3., 0.5]), true);
        let s = g.sum(x);
        assert_eq!(g.gradients(s).unwrap().get(x).unwrap(), &[1.0; 4]);
        assert!(matches!(g.gradients(x), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut params = vec![
            t(&[2], &[1., 2.]).with_requires_grad(true),
            t(&[2], &[5., 5.]).with_requires_grad(true),
        ];
        let mut g = Graph::new();
        let a = g.param(&params[0], 0);
        let _b = g.param(&params[1], 1);
        let s = g.sum(a);
        g.backward(s, &mut params).unwrap();
        assert_eq!(params[0].grad().unwrap(), &[1., 1.]);
        assert_eq!(params[1].grad().unwrap(), &[0., 0.]);
    }
}
