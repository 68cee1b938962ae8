//! Smoothing kernels, Nadaraya–Watson weights and the kernel density estimate
//! of the covariate distribution.
//!
//! All families are polynomial profiles `(1 - r²)^m` on the closed unit ball,
//! normalized so that the multivariate kernel is a probability density on
//! `R^p`. In one dimension the bi-quadratic family is
//! `K(u) = 15/16 (1 - u²)² 1{|u| <= 1}`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    #[default]
    Biquadratic,
    Uniform,
    Epanechnikov,
}

impl KernelFamily {
    /// Exponent `m` of the profile `(1 - r²)^m`.
    fn exponent(self) -> i32 {
        match self {
            KernelFamily::Uniform => 0,
            KernelFamily::Epanechnikov => 1,
            KernelFamily::Biquadratic => 2,
        }
    }

    /// Unnormalized profile `(1 - r²)^m` as a function of `r²`.
    #[inline]
    pub fn radial_profile(self, r2: f64) -> f64 {
        if r2 > 1.0 {
            return 0.0;
        }
        let s = 1.0 - r2;
        match self {
            KernelFamily::Uniform => 1.0,
            KernelFamily::Epanechnikov => s,
            KernelFamily::Biquadratic => s * s,
        }
    }

    /// Normalized univariate kernel.
    pub fn eval_1d(self, u: f64) -> f64 {
        radial_constant(self, 1) * self.radial_profile(u * u)
    }
}

/// How a univariate profile is lifted to `R^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultivariateMode {
    /// `K(u) = c_p k(||u||_2)`.
    #[default]
    Radial,
    /// `K(u) = prod_j k(u_j)`.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub mode: MultivariateMode,
}

/// `c_p = Γ(p/2 + m + 1) / (π^{p/2} m!)`, the constant making `c_p (1 - ||u||²)^m`
/// integrate to one over the unit ball of `R^p`.
fn radial_constant(family: KernelFamily, dim: usize) -> f64 {
    let m = family.exponent();
    let half_p = dim as f64 / 2.0;
    gamma(half_p + m as f64 + 1.0) / (PI.powf(half_p) * factorial(m))
}

fn factorial(m: i32) -> f64 {
    (1..=m).map(f64::from).product()
}

impl KernelSpec {
    pub fn new(family: KernelFamily, mode: MultivariateMode) -> Self {
        Self { family, mode }
    }

    /// Normalizing constant of the kernel on `R^dim`.
    pub fn normalizing_constant(&self, dim: usize) -> f64 {
        match self.mode {
            MultivariateMode::Radial => radial_constant(self.family, dim),
            MultivariateMode::Product => radial_constant(self.family, 1).powi(dim as i32),
        }
    }

    /// Evaluates `K(u)`; zero outside the unit ball (radial) or unit cube (product).
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.normalizing_constant(u.len()) * self.unnormalized(u, 1.0)
    }

    /// `K(u / h)` up to the normalizing constant. This is all that the
    /// Nadaraya–Watson weights need, since constants cancel.
    #[inline]
    pub fn unnormalized(&self, u: &[f64], h: f64) -> f64 {
        let inv_h2 = 1.0 / (h * h);
        match self.mode {
            MultivariateMode::Radial => {
                let r2: f64 = u.iter().map(|v| v * v).sum::<f64>() * inv_h2;
                self.family.radial_profile(r2)
            }
            MultivariateMode::Product => u
                .iter()
                .map(|v| self.family.radial_profile(v * v * inv_h2))
                .product(),
        }
    }

    /// Same as [`KernelSpec::unnormalized`] between two points, without
    /// materializing the displacement.
    #[inline]
    pub fn unnormalized_between(&self, a: &[f64], b: &[f64], h: f64) -> f64 {
        let inv_h2 = 1.0 / (h * h);
        match self.mode {
            MultivariateMode::Radial => {
                let r2: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    * inv_h2;
                self.family.radial_profile(r2)
            }
            MultivariateMode::Product => a
                .iter()
                .zip(b)
                .map(|(x, y)| self.family.radial_profile((x - y) * (x - y) * inv_h2))
                .product(),
        }
    }

    /// `||K||_∞` on `R^dim`.
    pub fn sup_norm(&self, dim: usize) -> f64 {
        self.normalizing_constant(dim)
    }

    /// `||K||_2²` on `R^dim`.
    pub fn l2_norm_sq(&self, dim: usize) -> f64 {
        match self.mode {
            MultivariateMode::Radial => {
                // c_p² π^{p/2} (2m)! / Γ(p/2 + 2m + 1)
                let m = self.family.exponent();
                let half_p = dim as f64 / 2.0;
                let c = radial_constant(self.family, dim);
                c * c * PI.powf(half_p) * factorial(2 * m) / gamma(half_p + 2.0 * m as f64 + 1.0)
            }
            MultivariateMode::Product => {
                KernelSpec::new(self.family, MultivariateMode::Radial)
                    .l2_norm_sq(1)
                    .powi(dim as i32)
            }
        }
    }
}

/// Smoothing bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Evaluates `K(u)` for a displacement vector.
pub fn kernel_eval(u: &[f64], spec: &KernelSpec) -> f64 {
    spec.eval(u)
}

/// Unnormalized kernel values `K((x - X_i) / h)` for every covariate in `xs`.
pub fn kernel_values<X: AsRef<[f64]>>(x: &[f64], xs: &[X], h: Bandwidth, spec: &KernelSpec) -> Vec<f64> {
    xs.iter()
        .map(|xi| spec.unnormalized_between(x, xi.as_ref(), h.value()))
        .collect()
}

/// Nadaraya–Watson weights `W_h(x - X_i) = K_h(x - X_i) / Σ_j K_h(x - X_j)`.
pub fn nw_weights<X: AsRef<[f64]>>(x: &[f64], xs: &[X], h: Bandwidth, spec: &KernelSpec) -> Result<Vec<f64>> {
    let mut w = kernel_values(x, xs, h, spec);
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyNeighborhood);
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Kernel density estimate `f_n(x) = n^{-1} Σ K_h(x - X_i)` with `K_h(u) = K(u/h) / h^p`.
pub fn density_estimate<X: AsRef<[f64]>>(x: &[f64], xs: &[X], h: Bandwidth, spec: &KernelSpec) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let p = x.len();
    let sum: f64 = kernel_values(x, xs, h, spec).iter().sum();
    spec.normalizing_constant(p) * sum / (xs.len() as f64 * h.value().powi(p as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bw(h: f64) -> Bandwidth {
        Bandwidth::new(h).unwrap()
    }

    /// Composite Simpson on [a, b] with `n` (even) intervals.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let step = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * step);
        }
        acc * step / 3.0
    }

    #[test]
    fn biquadratic_values() {
        let spec = KernelSpec::default();
        assert_abs_diff_eq!(kernel_eval(&[0.0], &spec), 0.9375, epsilon = 1e-15);
        assert_eq!(kernel_eval(&[1.0], &spec), 0.0);
        assert_abs_diff_eq!(kernel_eval(&[0.5], &spec), 0.52734375, epsilon = 1e-15);
        assert_eq!(kernel_eval(&[-1.5], &spec), 0.0);
    }

    #[test]
    fn univariate_kernels_integrate_to_one() {
        for family in [KernelFamily::Biquadratic, KernelFamily::Uniform, KernelFamily::Epanechnikov] {
            let mass = simpson(|u| family.eval_1d(u), -1.0, 1.0, 20_000);
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn two_dimensional_radial_kernel_is_a_density() {
        // Polar coordinates: ∫ K = 2π ∫_0^1 r K(r) dr.
        for family in [KernelFamily::Biquadratic, KernelFamily::Epanechnikov, KernelFamily::Uniform] {
            let spec = KernelSpec::new(family, MultivariateMode::Radial);
            let mass = 2.0 * PI * simpson(|r| r * spec.eval(&[r, 0.0]), 0.0, 1.0, 20_000);
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn l2_norms_match_quadrature() {
        for family in [KernelFamily::Biquadratic, KernelFamily::Uniform, KernelFamily::Epanechnikov] {
            let spec = KernelSpec::new(family, MultivariateMode::Radial);
            let q = simpson(|u| family.eval_1d(u).powi(2), -1.0, 1.0, 20_000);
            assert_abs_diff_eq!(spec.l2_norm_sq(1), q, epsilon = 1e-9);
            let q2 = 2.0 * PI * simpson(|r| r * spec.eval(&[0.0, r]).powi(2), 0.0, 1.0, 20_000);
            assert_abs_diff_eq!(spec.l2_norm_sq(2), q2, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(KernelSpec::default().l2_norm_sq(1), 5.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn product_mode_multiplies_marginals() {
        let spec = KernelSpec::new(KernelFamily::Biquadratic, MultivariateMode::Product);
        assert_abs_diff_eq!(spec.eval(&[0.5, 0.0]), 0.52734375 * 0.9375, epsilon = 1e-15);
        assert_eq!(spec.eval(&[0.5, 1.0]), 0.0);
        // Radial support is the ball, product support the cube.
        assert!(spec.eval(&[0.8, 0.8]) > 0.0);
        assert_eq!(KernelSpec::default().eval(&[0.8, 0.8]), 0.0);
    }

    #[test]
    fn weight_examples() {
        let spec = KernelSpec::default();
        let w = nw_weights(&[0.0], &[[0.0], [0.0]], bw(0.5), &spec).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);

        let w = nw_weights(&[0.0], &[[0.1], [3.0]], bw(0.5), &spec).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);

        let h = 0.4;
        let w = nw_weights(&[1.0], &[[1.0], [1.0 + 0.5 * h], [1.0 - 2.0 * h]], bw(h), &spec).unwrap();
        let total = 0.9375 + 0.52734375;
        assert_abs_diff_eq!(w[0], 0.9375 / total, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 0.52734375 / total, epsilon = 1e-14);
        assert_eq!(w[2], 0.0);

        assert_eq!(nw_weights(&[0.0], &[[2.0]], bw(0.5), &spec), Err(Error::EmptyNeighborhood));
    }

    #[test]
    fn density_examples() {
        let spec = KernelSpec::default();
        assert_abs_diff_eq!(density_estimate(&[0.3], &[[0.3]], bw(0.5), &spec), 1.875, epsilon = 1e-14);
        assert_eq!(density_estimate(&[0.0], &[[2.0], [3.0]], bw(0.5), &spec), 0.0);

        // A fine grid of sample points inside [0, 1]: the estimate integrates to one.
        let xs: Vec<[f64; 1]> = (0..200).map(|i| [0.1 + 0.8 * i as f64 / 199.0]).collect();
        let mass = simpson(|x| density_estimate(&[x], &xs, bw(0.05), &spec), -0.5, 1.5, 8_000);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 0.01);
    }

    #[test]
    fn density_is_consistent_on_uniform_design() {
        use rand::{Rng, SeedableRng};
        let spec = KernelSpec::default();
        let mut hits = 0;
        let seeds = 20;
        for seed in 0..seeds {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<[f64; 1]> = (0..50_000).map(|_| [rng.random::<f64>()]).collect();
            let f = density_estimate(&[0.5], &xs, bw(0.05), &spec);
            if (0.95..=1.05).contains(&f) {
                hits += 1;
            }
        }
        assert!(hits >= seeds - 1, "{hits}/{seeds} estimates inside [0.95, 1.05]");
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(Bandwidth::new(0.0).is_err());
        assert!(Bandwidth::new(-1.0).is_err());
        assert!(Bandwidth::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn kernel_nonnegative_and_compact(u in prop::collection::vec(-3.0f64..3.0, 1..5)) {
            for mode in [MultivariateMode::Radial, MultivariateMode::Product] {
                let spec = KernelSpec::new(KernelFamily::Biquadratic, mode);
                let k = spec.eval(&u);
                prop_assert!(k >= 0.0);
                let outside = match mode {
                    MultivariateMode::Radial => u.iter().map(|v| v * v).sum::<f64>() > 1.0,
                    MultivariateMode::Product => u.iter().any(|v| v.abs() > 1.0),
                };
                if outside {
                    prop_assert_eq!(k, 0.0);
                }
            }
        }

        #[test]
        fn weights_permute_with_inputs(
            pts in prop::collection::vec(0.0f64..1.0, 2..20),
            shift in 0usize..19,
        ) {
            let spec = KernelSpec::default();
            let xs: Vec<[f64; 1]> = pts.iter().map(|&v| [v]).collect();
            let mut rotated = xs.clone();
            let k = shift % xs.len();
            rotated.rotate_left(k);
            let a = nw_weights(&[0.5], &xs, bw(0.6), &spec);
            let b = nw_weights(&[0.5], &rotated, bw(0.6), &spec);
            match (a, b) {
                (Ok(mut a), Ok(b)) => {
                    a.rotate_left(k);
                    for (u, v) in a.iter().zip(&b) {
                        prop_assert!((u - v).abs() < 1e-12);
                    }
                    prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "feasibility differs under permutation"),
            }
        }

        #[test]
        fn weights_scale_invariant(
            pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..15),
            scale in 0.1f64..10.0,
        ) {
            let spec = KernelSpec::default();
            let x = [0.5, 0.5];
            let scaled: Vec<Vec<f64>> = pts
                .iter()
                .map(|p| p.iter().zip(&x).map(|(v, c)| c + (v - c) * scale).collect())
                .collect();
            let a = nw_weights(&x, &pts, bw(0.7), &spec);
            let b = nw_weights(&x, &scaled, bw(0.7 * scale), &spec);
            if let (Ok(a), Ok(b)) = (a, b) {
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }
}
