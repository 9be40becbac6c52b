//! Empirical instruments for the loss landscape: linear interpolation,
//! error barriers, cross-domain barriers, affine loss-surface grids, and
//! Hessian quadratic-form probes.
//!
//! Hessians are never materialized; curvature is probed through central
//! finite differences of the gradient.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nnet::{self, Batch, Network};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Elementwise convex combination `(1-λ)·t1 + λ·t2`.
///
/// The endpoints are returned exactly (bitwise) so barrier grids evaluate
/// the true endpoint losses.
pub fn interpolate(t1: &Network, t2: &Network, lam: f64) -> Result<Network> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::Range(format!("lambda {lam} outside [0, 1]")));
    }
    if !t1.same_architecture(t2) {
        return Err(Error::Shape("interpolate needs identical architectures".into()));
    }
    if lam == 0.0 {
        return Ok(t1.clone());
    }
    if lam == 1.0 {
        return Ok(t2.clone());
    }
    let a = t1.flat_params();
    let b = t2.flat_params();
    let mixed: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (1.0 - lam) * x + lam * y)
        .collect();
    let mut out = t1.clone();
    out.set_flat_params(&mixed)?;
    Ok(out)
}

/// Sampled losses along an interpolation path plus the barrier value.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierReport {
    /// Strictly increasing grid over [0, 1], endpoints included.
    pub lambdas: Vec<f64>,
    /// Loss at each grid point.
    pub losses: Vec<f64>,
    pub endpoint_losses: (f64, f64),
    /// `max_λ [L(θ_λ) - ½(L(θ_1) + L(θ_2))]`.
    pub barrier: f64,
    pub loss_fn_domain: String,
}

impl BarrierReport {
    /// Recomputes the barrier from the stored arrays.
    pub fn recompute_barrier(&self) -> f64 {
        let mid = 0.5 * (self.endpoint_losses.0 + self.endpoint_losses.1);
        self.losses
            .iter()
            .map(|&l| l - mid)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Error barrier of the cross-entropy loss on `eval_batch`.
pub fn error_barrier(
    t1: &Network,
    t2: &Network,
    eval_batch: &Batch,
    grid_n: usize,
) -> Result<BarrierReport> {
    error_barrier_with(t1, t2, grid_n, "eval", |net| {
        let logits = nnet::forward(net, &eval_batch.inputs)?;
        nnet::cross_entropy(&logits, &eval_batch.labels)
    })
}

/// Error barrier of an arbitrary scalar objective along the linear path.
pub fn error_barrier_with(
    t1: &Network,
    t2: &Network,
    grid_n: usize,
    domain: &str,
    mut loss: impl FnMut(&Network) -> Result<f64>,
) -> Result<BarrierReport> {
    if grid_n < 3 {
        return Err(Error::Range(format!("grid_n must be >= 3, got {grid_n}")));
    }
    let mut lambdas = Vec::with_capacity(grid_n);
    let mut losses = Vec::with_capacity(grid_n);
    for i in 0..grid_n {
        let lam = i as f64 / (grid_n - 1) as f64;
        let theta = interpolate(t1, t2, lam)?;
        lambdas.push(lam);
        losses.push(loss(&theta)?);
    }
    let endpoint_losses = (losses[0], losses[grid_n - 1]);
    let mid = 0.5 * (endpoint_losses.0 + endpoint_losses.1);
    let barrier = losses
        .iter()
        .map(|&l| l - mid)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BarrierReport {
        lambdas,
        losses,
        endpoint_losses,
        barrier,
        loss_fn_domain: String::from(domain),
    })
}

/// Barriers of two domain losses along one path, with the loss-asymmetry
/// floor `½|L₁(θ₁) - L₁(θ₂)|` of the first domain's view.
pub fn cross_domain_barrier(
    t1: &Network,
    t2: &Network,
    batch_d1: &Batch,
    batch_d2: &Batch,
    grid_n: usize,
) -> Result<(BarrierReport, BarrierReport, f64)> {
    cross_domain_barrier_with(
        t1,
        t2,
        grid_n,
        ("domain1", |net: &Network| {
            let logits = nnet::forward(net, &batch_d1.inputs)?;
            nnet::cross_entropy(&logits, &batch_d1.labels)
        }),
        ("domain2", |net: &Network| {
            let logits = nnet::forward(net, &batch_d2.inputs)?;
            nnet::cross_entropy(&logits, &batch_d2.labels)
        }),
    )
}

/// Closure-driven variant of [`cross_domain_barrier`].
pub fn cross_domain_barrier_with<F1, F2>(
    t1: &Network,
    t2: &Network,
    grid_n: usize,
    loss1: (&str, F1),
    loss2: (&str, F2),
) -> Result<(BarrierReport, BarrierReport, f64)>
where
    F1: FnMut(&Network) -> Result<f64>,
    F2: FnMut(&Network) -> Result<f64>,
{
    let r1 = error_barrier_with(t1, t2, grid_n, loss1.0, loss1.1)?;
    let r2 = error_barrier_with(t1, t2, grid_n, loss2.0, loss2.1)?;
    let shifted_floor = 0.5 * math::abs(r1.endpoint_losses.0 - r1.endpoint_losses.1);
    Ok((r1, r2, shifted_floor))
}

/// Loss values over an affine plane in parameter space.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    /// Orthonormal in-plane directions, flat parameter order.
    pub basis: (Vec<f64>, Vec<f64>),
    pub origin: Network,
    /// Row-major `[nu, nv]` losses.
    pub grid: Vec<f64>,
    pub extent: SurfaceExtent,
    pub resolution: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceExtent {
    pub u: (f64, f64),
    pub v: (f64, f64),
}

impl SurfaceGrid {
    pub fn value_at(&self, iu: usize, iv: usize) -> f64 {
        self.grid[iu * self.resolution.1 + iv]
    }

    /// Grid coordinate of cell `(iu, iv)` in plane coordinates.
    pub fn coords_at(&self, iu: usize, iv: usize) -> (f64, f64) {
        (
            lerp_grid(self.extent.u, iu, self.resolution.0),
            lerp_grid(self.extent.v, iv, self.resolution.1),
        )
    }
}

/// Orthonormal basis of the plane through `origin`, `t1`, `t2` via
/// Gram-Schmidt on `(t1 - origin, t2 - origin)`.
pub fn gram_schmidt_basis(
    origin: &Network,
    t1: &Network,
    t2: &Network,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !origin.same_architecture(t1) || !origin.same_architecture(t2) {
        return Err(Error::Shape("basis needs identical architectures".into()));
    }
    let o = origin.flat_params();
    let d1: Vec<f64> = t1.flat_params().iter().zip(&o).map(|(&a, &b)| a - b).collect();
    let d2: Vec<f64> = t2.flat_params().iter().zip(&o).map(|(&a, &b)| a - b).collect();
    let n1 = math::sqrt(d1.iter().map(|&v| v * v).sum());
    let n2_raw = math::sqrt(d2.iter().map(|&v| v * v).sum());
    if n1 == 0.0 || n2_raw == 0.0 {
        return Err(Error::Validation(
            "surface directions must be nonzero".into(),
        ));
    }
    let e1: Vec<f64> = d1.iter().map(|&v| v / n1).collect();
    let proj: f64 = d2.iter().zip(&e1).map(|(&a, &b)| a * b).sum();
    let resid: Vec<f64> = d2.iter().zip(&e1).map(|(&a, &b)| a - proj * b).collect();
    let n2 = math::sqrt(resid.iter().map(|&v| v * v).sum());
    if n2 <= 1e-12 * n2_raw {
        return Err(Error::Validation(
            "surface directions are linearly dependent".into(),
        ));
    }
    let e2: Vec<f64> = resid.iter().map(|&v| v / n2).collect();
    Ok((e1, e2))
}

/// Cross-entropy loss surface over the plane spanned by the two models.
pub fn surface_grid(
    origin: &Network,
    t1: &Network,
    t2: &Network,
    eval_batch: &Batch,
    resolution: (usize, usize),
    extent: SurfaceExtent,
) -> Result<SurfaceGrid> {
    surface_grid_with(origin, t1, t2, resolution, extent, |net| {
        let logits = nnet::forward(net, &eval_batch.inputs)?;
        nnet::cross_entropy(&logits, &eval_batch.labels)
    })
}

/// Closure-driven variant of [`surface_grid`].
pub fn surface_grid_with(
    origin: &Network,
    t1: &Network,
    t2: &Network,
    resolution: (usize, usize),
    extent: SurfaceExtent,
    mut loss: impl FnMut(&Network) -> Result<f64>,
) -> Result<SurfaceGrid> {
    let (nu, nv) = resolution;
    if nu < 2 || nv < 2 {
        return Err(Error::Range("surface resolution must be at least 2x2".into()));
    }
    let (e1, e2) = gram_schmidt_basis(origin, t1, t2)?;
    let o = origin.flat_params();
    let mut probe = origin.clone();
    let mut grid = Vec::with_capacity(nu * nv);
    let mut params = o.clone();
    for iu in 0..nu {
        let u = lerp_grid(extent.u, iu, nu);
        for iv in 0..nv {
            let v = lerp_grid(extent.v, iv, nv);
            for i in 0..params.len() {
                params[i] = o[i] + u * e1[i] + v * e2[i];
            }
            probe.set_flat_params(&params)?;
            grid.push(loss(&probe)?);
        }
    }
    Ok(SurfaceGrid {
        basis: (e1, e2),
        origin: origin.clone(),
        grid,
        extent,
        resolution,
    })
}

/// Grid coordinate `i` of `n` over `range`, hitting both ends exactly.
fn lerp_grid(range: (f64, f64), i: usize, n: usize) -> f64 {
    if i == 0 {
        range.0
    } else if i == n - 1 {
        range.1
    } else {
        range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
    }
}

/// `vᵀ∇²L(θ)v` via central differences of the exact gradient:
/// `vᵀ(∇L(θ+hv) - ∇L(θ-hv)) / 2h`.
pub fn hessian_quadform(net: &Network, batch: &Batch, v: &Tensor, h: f64) -> Result<f64> {
    hessian_quadform_with(net, v, h, |probe| Ok(nnet::grad(probe, batch)?.flat()))
}

/// Quadratic form against an arbitrary gradient oracle.
pub fn hessian_quadform_with(
    net: &Network,
    v: &Tensor,
    h: f64,
    mut grad_fn: impl FnMut(&Network) -> Result<Vec<f64>>,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Range(format!("probe step must be > 0, got {h}")));
    }
    if v.len() != net.param_count() {
        return Err(Error::Shape(format!(
            "probe has {} entries for {} parameters",
            v.len(),
            net.param_count()
        )));
    }
    let base = net.flat_params();
    let mut probe = net.clone();

    let shifted: Vec<f64> = base.iter().zip(v.data()).map(|(&p, &d)| p + h * d).collect();
    probe.set_flat_params(&shifted)?;
    let g_plus = grad_fn(&probe)?;

    let shifted: Vec<f64> = base.iter().zip(v.data()).map(|(&p, &d)| p - h * d).collect();
    probe.set_flat_params(&shifted)?;
    let g_minus = grad_fn(&probe)?;

    let mut acc = 0.0;
    for ((&gp, &gm), &vi) in g_plus.iter().zip(&g_minus).zip(v.data()) {
        acc += vi * (gp - gm);
    }
    Ok(acc / (2.0 * h))
}

/// `|vᵀ∇²L(θ_½)v - ½(vᵀ∇²L(θ₁)v + vᵀ∇²L(θ₂)v)|`, the midpoint curvature
/// deviation bounded by Hessian Lipschitz continuity.
pub fn midpoint_hessian_gap(
    t1: &Network,
    t2: &Network,
    batch: &Batch,
    v: &Tensor,
    h: f64,
) -> Result<f64> {
    let mid = interpolate(t1, t2, 0.5)?;
    let q_mid = hessian_quadform(&mid, batch, v, h)?;
    let q1 = hessian_quadform(t1, batch, v, h)?;
    let q2 = hessian_quadform(t2, batch, v, h)?;
    Ok(math::abs(q_mid - 0.5 * (q1 + q2)))
}

/// Gaussian direction normalized to unit length in parameter space.
pub fn random_unit_probe(net: &Network, rng: &mut Prng) -> Tensor {
    let n = net.param_count();
    let mut data: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let norm = math::sqrt(data.iter().map(|&v| v * v).sum());
    if norm > 0.0 {
        for v in &mut data {
            *v /= norm;
        }
    }
    Tensor::vector(&data).expect("probe is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, DenseLayer};

    /// Single 1x1 identity-layer net holding a scalar parameter pair (w, b).
    fn scalar_net(w: f64, b: f64) -> Network {
        Network::new(alloc::vec![DenseLayer::new(
            Tensor::matrix(1, 1, alloc::vec![w]).unwrap(),
            Tensor::vector(&[b]).unwrap(),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn weight_of(net: &Network) -> f64 {
        net.flat_params()[0]
    }

    #[test]
    fn interpolate_endpoints_exact() {
        let a = scalar_net(1.25, -0.5);
        let b = scalar_net(-3.75, 2.0);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
    }

    #[test]
    fn interpolate_midpoint_matches_fp_merge() {
        let a = scalar_net(1.0, 0.25);
        let b = scalar_net(3.0, -0.75);
        let mid = interpolate(&a, &b, 0.5).unwrap();
        let merged = crate::merge::merge_fp_midpoint(&a, &b).unwrap();
        assert_eq!(mid, merged);
    }

    #[test]
    fn interpolate_scalar_value() {
        let a = scalar_net(0.0, 0.0);
        let b = scalar_net(10.0, 0.0);
        let m = interpolate(&a, &b, 0.3).unwrap();
        assert!((weight_of(&m) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interpolate_rejects_out_of_range_lambda() {
        let a = scalar_net(0.0, 0.0);
        assert!(matches!(interpolate(&a, &a, 1.5), Err(Error::Range(_))));
        assert!(matches!(interpolate(&a, &a, -0.1), Err(Error::Range(_))));
    }

    #[test]
    fn convex_quadratic_has_zero_barrier() {
        let t1 = scalar_net(-1.0, 0.0);
        let t2 = scalar_net(1.0, 0.0);
        let report = error_barrier_with(&t1, &t2, 21, "quadratic", |net| {
            let w = weight_of(net);
            Ok(w * w)
        })
        .unwrap();
        assert!(report.barrier.abs() <= 1e-9, "barrier {}", report.barrier);
    }

    #[test]
    fn double_well_barrier_is_one() {
        let t1 = scalar_net(-1.0, 0.0);
        let t2 = scalar_net(1.0, 0.0);
        let report = error_barrier_with(&t1, &t2, 21, "double-well", |net| {
            let w = weight_of(net);
            Ok((w * w - 1.0) * (w * w - 1.0))
        })
        .unwrap();
        assert!(
            (report.barrier - 1.0).abs() <= 1e-6,
            "barrier {}",
            report.barrier
        );
    }

    #[test]
    fn identical_endpoints_zero_barrier() {
        let t = scalar_net(0.7, 0.1);
        let report = error_barrier_with(&t, &t, 11, "flat", |net| {
            let w = weight_of(net);
            Ok(w * w)
        })
        .unwrap();
        assert_eq!(report.barrier, 0.0);
    }

    #[test]
    fn report_recomputes_its_own_barrier() {
        let t1 = scalar_net(-1.0, 0.3);
        let t2 = scalar_net(2.0, -0.4);
        let report = error_barrier_with(&t1, &t2, 13, "q", |net| {
            let w = weight_of(net);
            Ok(w * w * w * w - w)
        })
        .unwrap();
        assert_eq!(report.barrier, report.recompute_barrier());
        assert!(report.lambdas.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(report.lambdas[0], 0.0);
        assert_eq!(*report.lambdas.last().unwrap(), 1.0);
    }

    #[test]
    fn grid_refinement_never_lowers_barrier() {
        let t1 = scalar_net(-1.3, 0.0);
        let t2 = scalar_net(0.9, 0.0);
        let quartic = |net: &Network| {
            let w = weight_of(net);
            Ok((w * w - 1.0) * (w * w - 1.0) + 0.3 * w)
        };
        for k in [2usize, 4, 8] {
            let coarse = error_barrier_with(&t1, &t2, k + 1, "q", quartic).unwrap();
            let fine = error_barrier_with(&t1, &t2, 2 * k + 1, "q", quartic).unwrap();
            assert!(fine.barrier >= coarse.barrier);
        }
    }

    #[test]
    fn cross_domain_quadratic_fixture() {
        // L1(θ) = (θ-1)^2, L2(θ) = (θ+1)^2, θ1 = 1, θ2 = -1.
        let t1 = scalar_net(1.0, 0.0);
        let t2 = scalar_net(-1.0, 0.0);
        let (r1, r2, floor) = cross_domain_barrier_with(
            &t1,
            &t2,
            21,
            ("L1", |net: &Network| {
                let w = weight_of(net);
                Ok((w - 1.0) * (w - 1.0))
            }),
            ("L2", |net: &Network| {
                let w = weight_of(net);
                Ok((w + 1.0) * (w + 1.0))
            }),
        )
        .unwrap();
        // L1 along the path: (θλ - 1)^2 = (2λ)^2, endpoints 0 and 4.
        assert!((r1.barrier - 2.0).abs() < 1e-12);
        assert!((r2.barrier - 2.0).abs() < 1e-12);
        assert!((floor - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cross_domain_identical_batches_degenerates() {
        let mut rng = Prng::seed_from(4);
        let t1 = Network::init_he(&[2, 4, 2], &mut rng).unwrap();
        let t2 = Network::init_he(&[2, 4, 2], &mut rng).unwrap();
        let inputs: Vec<f64> = (0..16).map(|_| rng.uniform_sym(1.0)).collect();
        let batch = Batch::new(
            Tensor::matrix(8, 2, inputs).unwrap(),
            (0..8).map(|i| i % 2).collect(),
            2,
        )
        .unwrap();
        let (r1, r2, floor) = cross_domain_barrier(&t1, &t2, &batch, &batch, 9).unwrap();
        let plain = error_barrier(&t1, &t2, &batch, 9).unwrap();
        assert_eq!(r1.barrier, plain.barrier);
        assert_eq!(r2.barrier, plain.barrier);
        let endpoint_gap = 0.5 * (plain.endpoint_losses.0 - plain.endpoint_losses.1).abs();
        assert_eq!(floor, endpoint_gap);
    }

    #[test]
    fn barrier_never_below_negative_floor() {
        let mut rng = Prng::seed_from(8);
        for _ in 0..100 {
            let t1 = Network::init_he(&[2, 3, 2], &mut rng).unwrap();
            let t2 = Network::init_he(&[2, 3, 2], &mut rng).unwrap();
            let inputs: Vec<f64> = (0..16).map(|_| rng.uniform_sym(1.0)).collect();
            let b1 = Batch::new(
                Tensor::matrix(8, 2, inputs.clone()).unwrap(),
                (0..8).map(|i| i % 2).collect(),
                2,
            )
            .unwrap();
            let inputs2: Vec<f64> = (0..16).map(|_| rng.uniform_sym(1.0)).collect();
            let b2 = Batch::new(
                Tensor::matrix(8, 2, inputs2).unwrap(),
                (0..8).map(|i| (i + 1) % 2).collect(),
                2,
            )
            .unwrap();
            let (r1, _, floor) = cross_domain_barrier(&t1, &t2, &b1, &b2, 7).unwrap();
            assert!(r1.barrier >= -floor - 1e-12);
        }
    }

    #[test]
    fn surface_grid_origin_and_endpoint_values() {
        let origin = scalar_net(0.0, 0.0);
        let t1 = scalar_net(2.0, 0.0);
        let t2 = scalar_net(0.0, 1.0);
        let quad = |net: &Network| {
            let p = net.flat_params();
            Ok(p[0] * p[0] + 3.0 * p[1] * p[1])
        };
        let (e1, _e2) = gram_schmidt_basis(&origin, &t1, &t2).unwrap();
        let d1: Vec<f64> = t1
            .flat_params()
            .iter()
            .zip(origin.flat_params())
            .map(|(&a, b)| a - b)
            .collect();
        let u1: f64 = d1.iter().zip(&e1).map(|(&a, &b)| a * b).sum();

        let grid = surface_grid_with(
            &origin,
            &t1,
            &t2,
            (2, 2),
            SurfaceExtent {
                u: (0.0, u1),
                v: (0.0, 1.0),
            },
            quad,
        )
        .unwrap();
        // (0, 0) maps to the origin exactly.
        assert_eq!(grid.value_at(0, 0), 0.0);
        // (u1, 0) reconstructs t1.
        assert!((grid.value_at(1, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn surface_grid_quadratic_second_differences_constant() {
        let origin = scalar_net(0.1, -0.2);
        let t1 = scalar_net(1.1, 0.3);
        let t2 = scalar_net(-0.4, 0.9);
        let grid = surface_grid_with(
            &origin,
            &t1,
            &t2,
            (9, 9),
            SurfaceExtent {
                u: (-1.0, 1.0),
                v: (-1.0, 1.0),
            },
            |net| {
                let p = net.flat_params();
                Ok(2.0 * p[0] * p[0] + 0.5 * p[1] * p[1] + p[0] * p[1])
            },
        )
        .unwrap();
        let mut diffs = Vec::new();
        for iu in 0..9 {
            for iv in 1..8 {
                diffs.push(
                    grid.value_at(iu, iv + 1) - 2.0 * grid.value_at(iu, iv)
                        + grid.value_at(iu, iv - 1),
                );
            }
        }
        let first = diffs[0];
        for d in diffs {
            assert!((d - first).abs() < 1e-9, "{d} vs {first}");
        }
    }

    #[test]
    fn surface_grid_rejects_dependent_directions() {
        let origin = scalar_net(0.0, 0.0);
        let t1 = scalar_net(1.0, 1.0);
        let t2 = scalar_net(2.0, 2.0);
        assert!(matches!(
            gram_schmidt_basis(&origin, &t1, &t2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = Prng::seed_from(12);
        let origin = Network::init_he(&[2, 5, 2], &mut rng).unwrap();
        let t1 = Network::init_he(&[2, 5, 2], &mut rng).unwrap();
        let t2 = Network::init_he(&[2, 5, 2], &mut rng).unwrap();
        let (e1, e2) = gram_schmidt_basis(&origin, &t1, &t2).unwrap();
        let n1: f64 = e1.iter().map(|&v| v * v).sum();
        let n2: f64 = e2.iter().map(|&v| v * v).sum();
        let dot: f64 = e1.iter().zip(&e2).map(|(&a, &b)| a * b).sum();
        assert!((n1 - 1.0).abs() < 1e-10);
        assert!((n2 - 1.0).abs() < 1e-10);
        assert!(dot.abs() < 1e-10);
    }

    #[test]
    fn quadform_exact_on_quadratic() {
        // L = ½ θᵀ diag(2, 6) θ over (w, b); probe e_w gives 2.
        let net = scalar_net(0.4, -0.7);
        let grad_fn = |probe: &Network| {
            let p = probe.flat_params();
            Ok(alloc::vec![2.0 * p[0], 6.0 * p[1]])
        };
        let v = Tensor::vector(&[1.0, 0.0]).unwrap();
        let q = hessian_quadform_with(&net, &v, 1e-4, grad_fn).unwrap();
        assert!((q - 2.0).abs() < 1e-6, "{q}");
        let v = Tensor::vector(&[0.0, 1.0]).unwrap();
        let q = hessian_quadform_with(&net, &v, 1e-4, grad_fn).unwrap();
        assert!((q - 6.0).abs() < 1e-6, "{q}");
    }

    #[test]
    fn quadform_zero_probe_is_zero() {
        let mut rng = Prng::seed_from(3);
        let net = Network::init_he(&[2, 3, 2], &mut rng).unwrap();
        let inputs: Vec<f64> = (0..8).map(|_| rng.uniform_sym(1.0)).collect();
        let batch = Batch::new(
            Tensor::matrix(4, 2, inputs).unwrap(),
            alloc::vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let v = Tensor::zeros(alloc::vec![net.param_count()]).unwrap();
        assert_eq!(hessian_quadform(&net, &batch, &v, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn quadform_even_in_probe_direction() {
        let mut rng = Prng::seed_from(14);
        let net = Network::init_he(&[2, 4, 2], &mut rng).unwrap();
        let inputs: Vec<f64> = (0..16).map(|_| rng.uniform_sym(1.5)).collect();
        let batch = Batch::new(
            Tensor::matrix(8, 2, inputs).unwrap(),
            (0..8).map(|i| i % 2).collect(),
            2,
        )
        .unwrap();
        let v = random_unit_probe(&net, &mut rng);
        let neg = v.map(|x| -x).unwrap();
        let q1 = hessian_quadform(&net, &batch, &v, 1e-4).unwrap();
        let q2 = hessian_quadform(&net, &batch, &neg, 1e-4).unwrap();
        assert!((q1 - q2).abs() < 1e-8);
    }

    #[test]
    fn quadform_rejects_bad_probe() {
        let net = scalar_net(1.0, 0.0);
        let batch = Batch::new(
            Tensor::matrix(1, 1, alloc::vec![1.0]).unwrap(),
            alloc::vec![0],
            1,
        )
        .unwrap();
        let v = Tensor::vector(&[1.0]).unwrap();
        assert!(matches!(
            hessian_quadform(&net, &batch, &v, 1e-4),
            Err(Error::Shape(_))
        ));
        let v = Tensor::vector(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            hessian_quadform(&net, &batch, &v, 0.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn midpoint_gap_zero_for_constant_hessian() {
        let t1 = scalar_net(-1.0, 0.5);
        let t2 = scalar_net(2.0, -0.5);
        let grad_fn = |probe: &Network| {
            let p = probe.flat_params();
            Ok(alloc::vec![3.0 * p[0], 1.5 * p[1]])
        };
        let v = Tensor::vector(&[0.6, 0.8]).unwrap();
        let mid = interpolate(&t1, &t2, 0.5).unwrap();
        let q_mid = hessian_quadform_with(&mid, &v, 1e-4, grad_fn).unwrap();
        let q1 = hessian_quadform_with(&t1, &v, 1e-4, grad_fn).unwrap();
        let q2 = hessian_quadform_with(&t2, &v, 1e-4, grad_fn).unwrap();
        assert!((q_mid - 0.5 * (q1 + q2)).abs() < 1e-8);
    }

    #[test]
    fn midpoint_gap_grows_with_separation_on_quartic() {
        // L(w) = w^4 has Hessian 12 w^2; the midpoint deviation grows with
        // the endpoint separation.
        let v = Tensor::vector(&[1.0, 0.0]).unwrap();
        let grad_fn = |probe: &Network| {
            let p = probe.flat_params();
            Ok(alloc::vec![4.0 * p[0] * p[0] * p[0], 0.0])
        };
        let mut last = -1.0;
        for scale in [0.5, 1.0, 1.5, 2.0, 2.5] {
            let t1 = scalar_net(-scale, 0.0);
            let t2 = scalar_net(scale + 0.3, 0.0);
            let mid = interpolate(&t1, &t2, 0.5).unwrap();
            let q_mid = hessian_quadform_with(&mid, &v, 1e-5, grad_fn).unwrap();
            let q1 = hessian_quadform_with(&t1, &v, 1e-5, grad_fn).unwrap();
            let q2 = hessian_quadform_with(&t2, &v, 1e-5, grad_fn).unwrap();
            let gap = (q_mid - 0.5 * (q1 + q2)).abs();
            assert!(gap > last, "gap {gap} after {last}");
            last = gap;
        }
    }

    #[test]
    fn midpoint_gap_zero_for_identical_endpoints() {
        let mut rng = Prng::seed_from(6);
        let t = Network::init_he(&[2, 3, 2], &mut rng).unwrap();
        let inputs: Vec<f64> = (0..8).map(|_| rng.uniform_sym(1.0)).collect();
        let batch = Batch::new(
            Tensor::matrix(4, 2, inputs).unwrap(),
            alloc::vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let v = random_unit_probe(&t, &mut rng);
        let gap = midpoint_hessian_gap(&t, &t, &batch, &v, 1e-4).unwrap();
        assert!(gap < 1e-12);
    }
}
