//! Fourier-collocation operators on the unit torus.
//!
//! Samples are treated as values of their trigonometric interpolant. First
//! derivatives use the wavenumbers with the Nyquist mode zeroed so that real fields
//! stay real; even-order operators keep the Nyquist mode. All elliptic solves are
//! diagonal in Fourier space.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{integrate, ScalarField, SymTracelessField, TorusGrid, VectorField};

/// Largest admissible mean of a right-hand side that must be mean-free, relative to
/// `max(1, max|rhs|)`.
pub const SOLVABILITY_TOL: f64 = 1e-10;

fn solvability_bound(scale: f64) -> f64 {
    SOLVABILITY_TOL * scale.max(1.0)
}

/// Output of the Helmholtz decomposition `q = v + mean + ∇ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HelmholtzParts {
    /// Divergence-free, mean-zero part.
    pub v: VectorField,
    /// Spatial average of the input.
    pub mean: [f64; 2],
    /// Mean-zero potential of the gradient part.
    pub psi: ScalarField,
}

impl HelmholtzParts {
    pub fn reconstruct(&self) -> VectorField {
        let ops = Spectral::for_grid(*self.v.grid());
        let grad = ops.grad(&self.psi);
        let m = self.mean;
        grad.map_indexed(|k, [a, b]| {
            let v = self.v.at(k);
            [v[0] + m[0] + a, v[1] + m[1] + b]
        })
    }
}

pub struct Spectral {
    grid: TorusGrid,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// Odd-derivative wavenumbers (Nyquist zeroed) per axis.
    kx_odd: Vec<f64>,
    ky_odd: Vec<f64>,
    kx_even: Vec<f64>,
    ky_even: Vec<f64>,
}

fn wavenumbers(n: usize, keep_nyquist: bool) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = if i < n / 2 {
                i as f64
            } else if i == n / 2 {
                if keep_nyquist {
                    (n / 2) as f64
                } else {
                    0.0
                }
            } else {
                i as f64 - n as f64
            };
            2.0 * PI * m
        })
        .collect()
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            fwd_x: planner.plan_fft_forward(grid.nx()),
            inv_x: planner.plan_fft_inverse(grid.nx()),
            fwd_y: planner.plan_fft_forward(grid.ny()),
            inv_y: planner.plan_fft_inverse(grid.ny()),
            kx_odd: wavenumbers(grid.nx(), false),
            ky_odd: wavenumbers(grid.ny(), false),
            kx_even: wavenumbers(grid.nx(), true),
            ky_even: wavenumbers(grid.ny(), true),
        }
    }

    /// Shared, lazily planned operators for `grid`.
    pub fn for_grid(grid: TorusGrid) -> Arc<Spectral> {
        static CACHE: OnceLock<Mutex<HashMap<TorusGrid, Arc<Spectral>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        map.entry(grid)
            .or_insert_with(|| Arc::new(Spectral::new(grid)))
            .clone()
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn transform(&self, buf: &mut [Complex64], fx: &Arc<dyn Fft<f64>>, fy: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        fx.process(buf);
        let mut col = vec![Complex64::default(); ny * nx];
        for j in 0..ny {
            for i in 0..nx {
                col[i * ny + j] = buf[j * nx + i];
            }
        }
        fy.process(&mut col);
        for j in 0..ny {
            for i in 0..nx {
                buf[j * nx + i] = col[i * ny + j];
            }
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd_x, &self.fwd_y);
        buf
    }

    /// Inverse transform, normalized, real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, &self.inv_x, &self.inv_y);
        let scale = 1.0 / self.grid.len() as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }

    /// Visits every mode with `(index, kx_odd, ky_odd, kx_even, ky_even)`.
    fn modes(&self) -> impl Iterator<Item = (usize, f64, f64, f64, f64)> + '_ {
        let nx = self.grid.nx();
        (0..self.grid.ny()).flat_map(move |j| {
            (0..nx).map(move |i| {
                (
                    j * nx + i,
                    self.kx_odd[i],
                    self.ky_odd[j],
                    self.kx_even[i],
                    self.ky_even[j],
                )
            })
        })
    }

    /// Applies a Fourier multiplier built from the odd-derivative wavenumbers.
    pub fn apply_symbol(
        &self,
        f: &ScalarField,
        symbol: impl Fn(f64, f64) -> Complex64,
    ) -> ScalarField {
        let mut spec = self.forward(f.values());
        for (k, kx, ky, _, _) in self.modes() {
            spec[k] *= symbol(kx, ky);
        }
        ScalarField::from_raw(self.grid, self.inverse(spec))
    }

    pub fn grad(&self, f: &ScalarField) -> VectorField {
        let spec = self.forward(f.values());
        let mut gx = spec.clone();
        let mut gy = spec;
        for (k, kx, ky, _, _) in self.modes() {
            gx[k] *= Complex64::new(0.0, kx);
            gy[k] *= Complex64::new(0.0, ky);
        }
        VectorField::from_raw(self.grid, self.inverse(gx), self.inverse(gy))
    }

    pub fn div(&self, q: &VectorField) -> ScalarField {
        let sx = self.forward(q.x());
        let sy = self.forward(q.y());
        let mut out = vec![Complex64::default(); self.grid.len()];
        for (k, kx, ky, _, _) in self.modes() {
            out[k] = Complex64::new(0.0, kx) * sx[k] + Complex64::new(0.0, ky) * sy[k];
        }
        ScalarField::from_raw(self.grid, self.inverse(out))
    }

    /// Divergence of a symmetric traceless field `[[p, s], [s, -p]]`.
    pub fn div_tensor(&self, t: &SymTracelessField) -> VectorField {
        let sp = self.forward(t.p());
        let ss = self.forward(t.s());
        let mut ox = vec![Complex64::default(); self.grid.len()];
        let mut oy = vec![Complex64::default(); self.grid.len()];
        for (k, kx, ky, _, _) in self.modes() {
            let (ikx, iky) = (Complex64::new(0.0, kx), Complex64::new(0.0, ky));
            ox[k] = ikx * sp[k] + iky * ss[k];
            oy[k] = ikx * ss[k] - iky * sp[k];
        }
        VectorField::from_raw(self.grid, self.inverse(ox), self.inverse(oy))
    }

    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let mut spec = self.forward(f.values());
        for (k, _, _, kx, ky) in self.modes() {
            spec[k] *= -(kx * kx + ky * ky);
        }
        ScalarField::from_raw(self.grid, self.inverse(spec))
    }

    /// Solves `-Δψ = rhs` with `∫ψ = 0`.
    pub fn poisson_solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        let mean = integrate(rhs);
        if mean.abs() > solvability_bound(rhs.max_abs()) {
            return Err(Error::Solvability(format!(
                "Poisson right side has mean {mean:e}"
            )));
        }
        let mut spec = self.forward(rhs.values());
        for (k, _, _, kx, ky) in self.modes() {
            let k2 = kx * kx + ky * ky;
            spec[k] = if k2 > 0.0 {
                spec[k] / k2
            } else {
                Complex64::default()
            };
        }
        Ok(ScalarField::from_raw(self.grid, self.inverse(spec)))
    }

    /// L²-orthogonal splitting `q = v + mean + ∇ψ`.
    pub fn helmholtz_decompose(&self, q: &VectorField) -> HelmholtzParts {
        let sx = self.forward(q.x());
        let sy = self.forward(q.y());
        let mut vx = vec![Complex64::default(); self.grid.len()];
        let mut vy = vec![Complex64::default(); self.grid.len()];
        let mut psi = vec![Complex64::default(); self.grid.len()];
        for (k, kx, ky, _, _) in self.modes() {
            if k == 0 {
                continue;
            }
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                // Nyquist-only modes carry no divergence and no gradient.
                vx[k] = sx[k];
                vy[k] = sy[k];
                continue;
            }
            let kq = kx * sx[k] + ky * sy[k];
            psi[k] = Complex64::new(0.0, -1.0) * kq / k2;
            vx[k] = sx[k] - kx * kq / k2;
            vy[k] = sy[k] - ky * kq / k2;
        }
        let n = self.grid.len() as f64;
        HelmholtzParts {
            v: VectorField::from_raw(self.grid, self.inverse(vx), self.inverse(vy)),
            mean: [sx[0].re / n, sy[0].re / n],
            psi: ScalarField::from_raw(self.grid, self.inverse(psi)),
        }
    }

    /// Solves `div(∇m + ∇ᵗm - (div m) I) = rhs` with `∫m = 0`.
    ///
    /// Returns `m` and `M = ∇m + ∇ᵗm - (div m) I`. Each component of `rhs` must have
    /// mean below [`SOLVABILITY_TOL`]; the residual mean is removed before solving.
    pub fn korn_solve(&self, rhs: &VectorField) -> Result<(VectorField, SymTracelessField)> {
        let mean = rhs.mean();
        let bound = solvability_bound(rhs.max_norm());
        if mean[0].abs() > bound || mean[1].abs() > bound {
            return Err(Error::Solvability(format!(
                "Korn right side has mean ({:e}, {:e})",
                mean[0], mean[1]
            )));
        }
        let rx = self.forward(rhs.x());
        let ry = self.forward(rhs.y());
        let len = self.grid.len();
        let (mut mx, mut my) = (
            vec![Complex64::default(); len],
            vec![Complex64::default(); len],
        );
        let (mut mp, mut ms) = (
            vec![Complex64::default(); len],
            vec![Complex64::default(); len],
        );
        for (k, kx, ky, _, _) in self.modes() {
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                // Zero wavevector: fixed by the gauge ∫m = 0.
                continue;
            }
            // The symbols of div ∇ᵗm and -div((div m)I) cancel, so div M = Δm.
            let m1 = -rx[k] / k2;
            let m2 = -ry[k] / k2;
            let (ikx, iky) = (Complex64::new(0.0, kx), Complex64::new(0.0, ky));
            mx[k] = m1;
            my[k] = m2;
            mp[k] = ikx * m1 - iky * m2;
            ms[k] = iky * m1 + ikx * m2;
        }
        Ok((
            VectorField::from_raw(self.grid, self.inverse(mx), self.inverse(my)),
            SymTracelessField::from_raw(self.grid, self.inverse(mp), self.inverse(ms)),
        ))
    }

    /// `M = ∇m + ∇ᵗm - (div m) I` for a given `m`.
    pub fn korn_tensor(&self, m: &VectorField) -> SymTracelessField {
        let sx = self.forward(m.x());
        let sy = self.forward(m.y());
        let len = self.grid.len();
        let (mut mp, mut ms) = (
            vec![Complex64::default(); len],
            vec![Complex64::default(); len],
        );
        for (k, kx, ky, _, _) in self.modes() {
            let (ikx, iky) = (Complex64::new(0.0, kx), Complex64::new(0.0, ky));
            mp[k] = ikx * sx[k] - iky * sy[k];
            ms[k] = iky * sx[k] + ikx * sy[k];
        }
        SymTracelessField::from_raw(self.grid, self.inverse(mp), self.inverse(ms))
    }
}

pub fn spectral_grad(f: &ScalarField) -> VectorField {
    Spectral::for_grid(*f.grid()).grad(f)
}

pub fn spectral_div(q: &VectorField) -> ScalarField {
    Spectral::for_grid(*q.grid()).div(q)
}

pub fn spectral_laplacian(f: &ScalarField) -> ScalarField {
    Spectral::for_grid(*f.grid()).laplacian(f)
}

pub fn poisson_solve(rhs: &ScalarField) -> Result<ScalarField> {
    Spectral::for_grid(*rhs.grid()).poisson_solve(rhs)
}

pub fn helmholtz_decompose(q: &VectorField) -> HelmholtzParts {
    Spectral::for_grid(*q.grid()).helmholtz_decompose(q)
}

pub fn korn_solve(rhs: &VectorField) -> Result<(VectorField, SymTracelessField)> {
    Spectral::for_grid(*rhs.grid()).korn_solve(rhs)
}

/// L² norm of the full 2x2 gradient matrix of `m`.
pub fn gradient_l2(m: &VectorField) -> f64 {
    let ops = Spectral::for_grid(*m.grid());
    let gx = ops.grad(&m.component(0));
    let gy = ops.grad(&m.component(1));
    let sq = gx.dot(&gx).zip_map(&gy.dot(&gy), |a, b| a + b);
    integrate(&sq).sqrt()
}

/// L² norm of a symmetric traceless field, as a full 2x2 matrix.
pub fn tensor_l2(t: &SymTracelessField) -> f64 {
    let n = t.grid().len() as f64;
    let sum: f64 = t
        .p()
        .iter()
        .zip(t.s())
        .map(|(p, s)| 2.0 * (p * p + s * s))
        .sum();
    (sum / n).sqrt()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::square(64).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Random trigonometric polynomial with modes |k| <= kmax and zero mean.
    fn random_field(g: TorusGrid, rng: &mut ChaCha8Rng, kmax: i32) -> ScalarField {
        let mut terms = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                if k1 == 0 && k2 == 0 {
                    continue;
                }
                terms.push((
                    k1,
                    k2,
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0 * PI),
                ));
            }
        }
        ScalarField::from_fn(g, |[x, y]| {
            terms
                .iter()
                .map(|&(k1, k2, a, ph)| a * (2.0 * PI * (k1 as f64 * x + k2 as f64 * y) + ph).cos())
                .sum()
        })
    }

    #[test]
    fn gradient_of_sine() {
        let g = grid();
        let f = ScalarField::from_fn(g, |[x, _]| (2.0 * PI * x).sin());
        let d = spectral_grad(&f);
        let ex = ScalarField::from_fn(g, |[x, _]| 2.0 * PI * (2.0 * PI * x).cos());
        assert!(max_diff(d.x(), ex.values()) < 1e-12);
        assert!(d.y().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_of_constant_vanishes() {
        let q = VectorField::constant(grid(), [1.5, -0.3]);
        assert!(spectral_div(&q).max_abs() < 1e-14);
    }

    #[test]
    fn div_grad_is_laplacian_eigenfunction() {
        let g = grid();
        let f = ScalarField::from_fn(g, |[x, y]| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let lap = spectral_div(&spectral_grad(&f));
        let ex = &f * (-8.0 * PI * PI);
        assert!(max_diff(lap.values(), ex.values()) < 1e-10);
    }

    #[test]
    fn poisson_examples() {
        let g = grid();
        let psi = ScalarField::from_fn(g, |[x, y]| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let rhs = &psi * (8.0 * PI * PI);
        let sol = poisson_solve(&rhs).unwrap();
        assert!(max_diff(sol.values(), psi.values()) < 1e-10);
        assert!(poisson_solve(&ScalarField::zeros(g)).unwrap().max_abs() == 0.0);
        assert!(matches!(
            poisson_solve(&ScalarField::constant(g, 1.0)),
            Err(Error::Solvability(_))
        ));
    }

    #[test]
    fn poisson_inverts_negative_laplacian() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let f = random_field(g, &mut rng, 6);
            let back = poisson_solve(&-&spectral_laplacian(&f)).unwrap();
            assert!(max_diff(back.values(), f.values()) < 1e-10);
        }
    }

    #[test]
    fn helmholtz_examples() {
        let g = grid();
        let q = VectorField::from_fn(g, |[_, y]| [(2.0 * PI * y).sin(), 0.0]);
        let h = helmholtz_decompose(&q);
        assert!(max_diff(h.v.x(), q.x()) < 1e-12 && max_diff(h.v.y(), q.y()) < 1e-12);
        assert!(h.mean[0].abs() < 1e-14 && h.mean[1].abs() < 1e-14);
        assert!(h.psi.max_abs() < 1e-12);

        let q = VectorField::from_fn(g, |[x, _]| [-2.0 * PI * (2.0 * PI * x).sin(), 0.0]);
        let h = helmholtz_decompose(&q);
        assert!(h.v.max_norm() < 1e-12);
        let psi = ScalarField::from_fn(g, |[x, _]| (2.0 * PI * x).cos());
        assert!(max_diff(h.psi.values(), psi.values()) < 1e-12);

        let h = helmholtz_decompose(&VectorField::constant(g, [1.0, 2.0]));
        assert!(h.v.max_norm() < 1e-14 && h.psi.max_abs() < 1e-14);
        assert!((h.mean[0] - 1.0).abs() < 1e-14 && (h.mean[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn helmholtz_invariants_on_random_fields() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let q = VectorField::from_components(
                &random_field(g, &mut rng, 5) + &ScalarField::constant(g, 0.3),
                random_field(g, &mut rng, 5),
            )
            .unwrap();
            let parts = helmholtz_decompose(&q);
            assert!(spectral_div(&parts.v).max_abs() < 1e-10);
            let vm = parts.v.mean();
            assert!(vm[0].abs() < 1e-14 && vm[1].abs() < 1e-14);
            assert!(integrate(&parts.psi).abs() < 1e-14);
            let back = parts.reconstruct();
            assert!(max_diff(back.x(), q.x()) < 1e-10 && max_diff(back.y(), q.y()) < 1e-10);
            let ortho = integrate(&parts.v.dot(&spectral_grad(&parts.psi)));
            assert!(ortho.abs() < 1e-10);
            // Projection property.
            let again = helmholtz_decompose(&parts.v);
            assert!(max_diff(again.v.x(), parts.v.x()) < 1e-12);
            assert!(again.psi.max_abs() < 1e-12);
            assert!(again.mean[0].abs() < 1e-14 && again.mean[1].abs() < 1e-14);
        }
    }

    #[test]
    fn korn_examples() {
        let g = grid();
        let (m, big_m) = korn_solve(&VectorField::zeros(g)).unwrap();
        assert_eq!(m.max_norm(), 0.0);
        assert_eq!(big_m.max_abs(), 0.0);
        assert!(matches!(
            korn_solve(&VectorField::constant(g, [1.0, 0.0])),
            Err(Error::Solvability(_))
        ));
    }

    #[test]
    fn korn_forward_inverse_round_trip() {
        let g = grid();
        // Forward oracle: build the right side from a known m* with the derivative operators.
        let m_star = VectorField::from_fn(g, |[x, y]| [(2.0 * PI * y).sin(), (2.0 * PI * x).cos()]);
        let ops = Spectral::for_grid(g);
        let gx = ops.grad(&m_star.component(0));
        let gy = ops.grad(&m_star.component(1));
        let tensor = SymTracelessField::new(
            g,
            (0..g.len()).map(|k| gx.x()[k] - gy.y()[k]).collect(),
            (0..g.len()).map(|k| gx.y()[k] + gy.x()[k]).collect(),
        )
        .unwrap();
        let rhs = ops.div_tensor(&tensor);
        let (m, big_m) = korn_solve(&rhs).unwrap();
        assert!(max_diff(m.x(), m_star.x()) < 1e-9 && max_diff(m.y(), m_star.y()) < 1e-9);
        let back = ops.div_tensor(&big_m);
        assert!(max_diff(back.x(), rhs.x()) < 1e-9 && max_diff(back.y(), rhs.y()) < 1e-9);
        let mm = big_m.mean();
        assert!(mm[0].abs() < 1e-14 && mm[1].abs() < 1e-14);
    }

    #[test]
    fn korn_inequality_holds_on_random_fields() {
        let g = TorusGrid::square(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops = Spectral::for_grid(g);
        for _ in 0..20 {
            let m = VectorField::from_components(
                random_field(g, &mut rng, 4),
                random_field(g, &mut rng, 4),
            )
            .unwrap();
            let t = ops.korn_tensor(&m);
            assert!(tensor_l2(&t) >= 0.5 * gradient_l2(&m));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn helmholtz_parts_reconstruct_and_separate(
            seed in any::<u64>(), c1 in -2.0f64..2.0, c2 in -2.0f64..2.0,
        ) {
            let g = TorusGrid::square(32).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_field(g, &mut rng, 4);
            let chi = random_field(g, &mut rng, 4);
            let rot = spectral_grad(&chi).map(|[a, b]| [-b, a]);
            let q = (&spectral_grad(&phi) + &rot).map(|[a, b]| [a + c1, b + c2]);
            let h = helmholtz_decompose(&q);
            let back = h.reconstruct();
            prop_assert!(max_diff(back.x(), q.x()) < 1e-9 && max_diff(back.y(), q.y()) < 1e-9);
            prop_assert!(spectral_div(&h.v).max_abs() < 1e-9);
            prop_assert!((h.mean[0] - c1).abs() < 1e-12 && (h.mean[1] - c2).abs() < 1e-12);
            prop_assert!(max_diff(h.psi.values(), phi.values()) < 1e-10);
            prop_assert!(integrate(&h.v.dot(&spectral_grad(&h.psi))).abs() < 1e-9);
        }

        #[test]
        fn poisson_solution_has_zero_mean_and_inverts(seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let g = TorusGrid::new(16, 32).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = &random_field(g, &mut rng, 3) * scale;
            let u = poisson_solve(&f).unwrap();
            prop_assert!(integrate(&u).abs() < 1e-12 * scale);
            prop_assert!(max_diff(spectral_laplacian(&u).values(), (-&f).values()) < 1e-10 * scale);
        }
    }
}
