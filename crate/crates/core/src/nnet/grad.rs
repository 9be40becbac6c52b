//! Reverse-mode gradients and the finite-difference oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{
    cross_entropy, forward_traced, softmax_rows, ActTransform, Batch, ForwardTrace, Network,
};

/// One gradient tensor per parameter tensor, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `(d_weight, d_bias)` per layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Gradients {
    /// Flattened in the same order as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (dw, db) in &self.layers {
            out.extend_from_slice(dw.data());
            out.extend_from_slice(db.data());
        }
        out
    }
}

/// Exact reverse-mode gradients of the mean cross-entropy loss.
pub fn grad(net: &Network, batch: &Batch) -> Result<Gradients> {
    loss_and_grad(net, batch).map(|(_, g)| g)
}

/// Loss value and gradients in one pass.
pub fn loss_and_grad(net: &Network, batch: &Batch) -> Result<(f64, Gradients)> {
    let acts = vec![ActTransform::None; net.num_layers()];
    let trace = forward_traced(net, &batch.inputs, &acts)?;
    backward(net, &trace, &batch.labels, &acts)
}

/// Backpropagation through a recorded forward pass.
///
/// Fake-quantized activations use the straight-through rule: the gradient
/// passes unchanged where the pre-quant value lies inside the clamp range
/// and is zeroed outside.
pub fn backward(
    net: &Network,
    trace: &ForwardTrace,
    labels: &[usize],
    acts: &[ActTransform],
) -> Result<(f64, Gradients)> {
    let logits = trace.logits();
    let loss = cross_entropy(logits, labels)?;
    let n = logits.shape()[0];
    let classes = logits.shape()[1];

    // dL/dlogits = (softmax - onehot) / n
    let probs = softmax_rows(logits);
    let mut delta = probs.data().to_vec();
    for (row, &label) in labels.iter().enumerate() {
        delta[row * classes + label] -= 1.0;
    }
    for v in &mut delta {
        *v /= n as f64;
    }

    let mut grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(net.num_layers());
    for k in (0..net.num_layers()).rev() {
        let layer = &net.layers[k];
        let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());

        // Straight-through mask of the activation fake-quant, if any.
        if let ActTransform::FakeQuant(scheme) = &acts[k] {
            let a = trace.post_act[k].data();
            let lo = scheme.qmin() as f64 * scheme.step;
            let hi = scheme.qmax() as f64 * scheme.step;
            for (d, &v) in delta.iter_mut().zip(a) {
                if v < lo || v > hi {
                    *d = 0.0;
                }
            }
        }

        // Through the activation derivative.
        let pre = trace.pre[k].data();
        for (d, &z) in delta.iter_mut().zip(pre) {
            *d *= layer.activation.derivative(z);
        }

        let layer_input: &Tensor = if k == 0 {
            &trace.inputs
        } else {
            &trace.out[k - 1]
        };
        let x = layer_input.data();

        let mut dw = vec![0.0; out_dim * in_dim];
        let mut db = vec![0.0; out_dim];
        let mut dx = vec![0.0; n * in_dim];
        let w = layer.weight.data();
        for row in 0..n {
            let dr = &delta[row * out_dim..(row + 1) * out_dim];
            let xr = &x[row * in_dim..(row + 1) * in_dim];
            for (o, &d) in dr.iter().enumerate() {
                db[o] += d;
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let dwrow = &mut dw[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    dwrow[i] += d * xr[i];
                    dx[row * in_dim + i] += d * wrow[i];
                }
            }
        }

        grads.push((
            Tensor::matrix(out_dim, in_dim, dw)?,
            Tensor::vector(&db)?,
        ));
        delta = dx;
    }

    grads.reverse();
    Ok((loss, Gradients { layers: grads }))
}

/// Central finite differences of the mean cross-entropy loss.
pub fn finite_diff_grad(net: &Network, batch: &Batch, h: f64) -> Result<Gradients> {
    let flat = finite_diff_grad_with(net, h, |candidate| {
        let logits = super::forward(candidate, &batch.inputs)?;
        cross_entropy(&logits, &batch.labels)
    })?;
    gradients_from_flat(net, &flat)
}

/// Central finite differences `(L(w+h) - L(w-h)) / 2h` of an arbitrary
/// scalar objective, one coordinate at a time.
pub fn finite_diff_grad_with(
    net: &Network,
    h: f64,
    mut loss: impl FnMut(&Network) -> Result<f64>,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Range(format!("finite-difference step must be > 0, got {h}")));
    }
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + h;
        probe.set_flat_params(&params)?;
        let plus = loss(&probe)?;
        params[i] = base[i] - h;
        probe.set_flat_params(&params)?;
        let minus = loss(&probe)?;
        params[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

fn gradients_from_flat(net: &Network, flat: &[f64]) -> Result<Gradients> {
    if flat.len() != net.param_count() {
        return Err(Error::Shape("flat gradient length mismatch".into()));
    }
    let mut layers = Vec::with_capacity(net.num_layers());
    let mut offset = 0;
    for layer in net.layers() {
        let w = layer.weight().len();
        let dw = Tensor::new(layer.weight().shape().to_vec(), flat[offset..offset + w].to_vec())?;
        offset += w;
        let b = layer.bias().len();
        let db = Tensor::vector(&flat[offset..offset + b])?;
        offset += b;
        layers.push((dw, db));
    }
    Ok(Gradients { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, DenseLayer};
    use crate::rng::Prng;

    fn relative_error(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-7 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    fn max_grad_mismatch(net: &Network, batch: &Batch) -> f64 {
        let analytic = grad(net, batch).unwrap().flat();
        let numeric = finite_diff_grad(net, batch, 1e-5).unwrap().flat();
        analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &b)| relative_error(a, b))
            .fold(0.0, f64::max)
    }

    fn random_batch(rng: &mut Prng, n: usize, dim: usize, classes: usize) -> Batch {
        let inputs: Vec<f64> = (0..n * dim).map(|_| rng.uniform_sym(2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        Batch::new(Tensor::matrix(n, dim, inputs).unwrap(), labels, classes).unwrap()
    }

    #[test]
    fn bias_gradient_vanishes_by_symmetry() {
        // Zero single linear layer on a symmetric two-class batch: softmax is
        // uniform everywhere, the label residues cancel in the bias sum.
        let net = Network::new(vec![DenseLayer::new(
            Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
            Tensor::vector(&[0.0, 0.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let inputs = Tensor::matrix(2, 2, vec![1.0, 0.5, -1.0, -0.5]).unwrap();
        let batch = Batch::new(inputs, vec![0, 1], 2).unwrap();
        let g = grad(&net, &batch).unwrap();
        assert_eq!(g.layers[0].1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_matches_finite_differences_small_nets() {
        let mut rng = Prng::seed_from(42);
        for arch in [&[2usize, 2][..], &[2, 8, 2], &[3, 16, 8, 2]] {
            let net = Network::init_he(arch, &mut rng).unwrap();
            let batch = random_batch(&mut rng, 16, arch[0], 2);
            let worst = max_grad_mismatch(&net, &batch);
            assert!(worst < 1e-4, "architecture {arch:?}: max rel err {worst}");
        }
    }

    #[test]
    fn duplicated_sample_keeps_mean_gradient() {
        let mut rng = Prng::seed_from(7);
        let net = Network::init_he(&[2, 4, 2], &mut rng).unwrap();
        let x = [0.3, -1.2];
        let single = Batch::new(Tensor::matrix(1, 2, x.to_vec()).unwrap(), vec![1], 2).unwrap();
        let doubled = Batch::new(
            Tensor::matrix(2, 2, [x, x].concat()).unwrap(),
            vec![1, 1],
            2,
        )
        .unwrap();
        let g1 = grad(&net, &single).unwrap();
        let g2 = grad(&net, &doubled).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn finite_diff_quadratic_analytic_derivative() {
        // L(w) = w^2 with w = 3 has derivative 6.
        let net = Network::new(vec![DenseLayer::new(
            Tensor::matrix(1, 1, vec![3.0]).unwrap(),
            Tensor::vector(&[0.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let g = finite_diff_grad_with(&net, 1e-5, |n| {
            let w = n.flat_params()[0];
            Ok(w * w)
        })
        .unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6, "{}", g[0]);
    }

    #[test]
    fn finite_diff_rejects_zero_step() {
        let mut rng = Prng::seed_from(1);
        let net = Network::init_he(&[2, 2], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, 2, 2);
        assert!(matches!(
            finite_diff_grad(&net, &batch, 0.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn cross_check_holds_both_directions() {
        // Same check as above phrased from the finite-difference side.
        let mut rng = Prng::seed_from(99);
        let net = Network::init_he(&[2, 6, 2], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 8, 2, 2);
        assert!(max_grad_mismatch(&net, &batch) < 1e-4);
    }
}
