//! Coulomb friction: the multi-valued graph `u ↦ u/|u|` (closed unit ball at rest),
//! its backward-Euler resolvent, and the velocity-dependent extension.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrictionLaw {
    /// `-γ u/|u|`
    #[default]
    Coulomb,
    /// `-γ u/|u| - γ₂ |u| u`
    Extended,
}

impl FrictionLaw {
    pub fn name(&self) -> &'static str {
        match self {
            FrictionLaw::Coulomb => "coulomb",
            FrictionLaw::Extended => "extended",
        }
    }
}

impl std::str::FromStr for FrictionLaw {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "coulomb" => Ok(FrictionLaw::Coulomb),
            "extended" => Ok(FrictionLaw::Extended),
            other => Err(format!("unknown friction law `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Field(ScalarField),
}

impl Coefficient {
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Field(f) => f.values()[k],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant(c) => *c == 0.0,
            Coefficient::Field(f) => f.values().iter().all(|&v| v == 0.0),
        }
    }

    pub fn to_field(&self, grid: TorusGrid) -> ScalarField {
        match self {
            Coefficient::Constant(c) => ScalarField::constant(grid, *c),
            Coefficient::Field(f) => f.clone(),
        }
    }

    fn min(&self) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Field(f) => f.min(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionParams {
    /// Coulomb coefficient γ (γ₁ under the extended law).
    pub gamma: Coefficient,
    /// Velocity-dependent coefficient γ₂, used by [`FrictionLaw::Extended`] only.
    pub gamma2: f64,
    pub law: FrictionLaw,
}

impl FrictionParams {
    pub fn coulomb(gamma: f64) -> Result<Self> {
        Self::new(Coefficient::Constant(gamma), 0.0, FrictionLaw::Coulomb)
    }

    pub fn extended(gamma: f64, gamma2: f64) -> Result<Self> {
        Self::new(Coefficient::Constant(gamma), gamma2, FrictionLaw::Extended)
    }

    pub fn new(gamma: Coefficient, gamma2: f64, law: FrictionLaw) -> Result<Self> {
        let gmin = gamma.min();
        if !(gmin >= 0.0) {
            return Err(Error::Validation {
                key: "friction.gamma".into(),
                message: format!("must be nonnegative, got minimum {gmin}"),
            });
        }
        if !(gamma2 >= 0.0 && gamma2.is_finite()) {
            return Err(Error::Validation {
                key: "friction.gamma2".into(),
                message: format!("must be nonnegative, got {gamma2}"),
            });
        }
        Ok(Self { gamma, gamma2, law })
    }

    pub fn none() -> Self {
        Self {
            gamma: Coefficient::Constant(0.0),
            gamma2: 0.0,
            law: FrictionLaw::Coulomb,
        }
    }

    fn effective_gamma2(&self) -> f64 {
        match self.law {
            FrictionLaw::Coulomb => 0.0,
            FrictionLaw::Extended => self.gamma2,
        }
    }
}

/// Default normalization floor: `1e-12 (max|u| + 1)`.
pub fn default_velocity_tol(u: &VectorField) -> f64 {
    1e-12 * (u.max_norm() + 1.0)
}

/// The selection `B = u/|u|` where `|u| > tol`, `B = 0` otherwise.
pub fn coulomb_selection(u: &VectorField, tol_u: f64) -> VectorField {
    u.map(|[a, b]| {
        let n = a.hypot(b);
        if n > tol_u {
            [a / n, b / n]
        } else {
            [0.0, 0.0]
        }
    })
}

/// Result of one implicit friction sub-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkOutcome {
    pub q: VectorField,
    /// Effective Coulomb selection `(q_pre - q_coulomb) / (dt γ h)`, clamped to the unit ball;
    /// zero where `γ = 0`.
    pub selection: VectorField,
}

fn check_positive(h: &ScalarField) -> Result<()> {
    if let Some(k) = h.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Positivity(format!(
            "friction needs h > 0, found {} at cell {k}",
            h.values()[k]
        )));
    }
    Ok(())
}

/// Exact resolvent of `q' ∈ q - dt γ h ∂|·|(q/h)` (plus the `γ₂` sub-step under the
/// extended law), applied cell by cell.
pub fn friction_shrink(
    q: &VectorField,
    h: &ScalarField,
    params: &FrictionParams,
    dt: f64,
) -> Result<VectorField> {
    Ok(friction_shrink_with_selection(q, h, params, dt)?.q)
}

pub fn friction_shrink_with_selection(
    q: &VectorField,
    h: &ScalarField,
    params: &FrictionParams,
    dt: f64,
) -> Result<ShrinkOutcome> {
    q.grid().ensure_same(h.grid())?;
    check_positive(h)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidValue(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let g2 = params.effective_gamma2();
    let n = q.grid().len();
    let (mut qx, mut qy) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut bx, mut by) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let [a, b] = q.at(k);
        let hk = h.values()[k];
        let thr = dt * params.gamma.at(k) * hk;
        let norm = a.hypot(b);
        let (mut ca, mut cb, sel) = if thr == 0.0 {
            (a, b, [0.0, 0.0])
        } else if norm <= thr {
            // Full stop; the selection is whatever element of the ball absorbs q.
            (0.0, 0.0, [a / thr, b / thr])
        } else {
            let f = 1.0 - thr / norm;
            (a * f, b * f, [a / norm, b / norm])
        };
        if g2 > 0.0 {
            let m = ca.hypot(cb);
            if m > 0.0 {
                // |q'| (1 + c |q'|) = |q|, positive root in cancellation-free form.
                let c = dt * g2 / hk;
                let root = 2.0 * m / (1.0 + (1.0 + 4.0 * c * m).sqrt());
                ca *= root / m;
                cb *= root / m;
            }
        }
        qx.push(ca);
        qy.push(cb);
        let sn = sel[0].hypot(sel[1]);
        if sn > 1.0 {
            bx.push(sel[0] / sn);
            by.push(sel[1] / sn);
        } else {
            bx.push(sel[0]);
            by.push(sel[1]);
        }
    }
    Ok(ShrinkOutcome {
        q: VectorField::from_raw(*q.grid(), qx, qy),
        selection: VectorField::from_raw(*q.grid(), bx, by),
    })
}

/// The scalar multiplier `γ (h/2E)^{1/2}` (plus `γ₂ (2E/h)^{1/2}` under the extended law)
/// that turns the friction term into a linear function of the momentum.
pub fn friction_coefficient_field(
    h: &ScalarField,
    energy: &ScalarField,
    params: &FrictionParams,
) -> Result<ScalarField> {
    h.grid().ensure_same(energy.grid())?;
    check_positive(h)?;
    if let Some(k) = energy.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::EnergyPositivity(format!(
            "kinetic energy must stay positive, found {} at cell {k}",
            energy.values()[k]
        )));
    }
    let g2 = params.effective_gamma2();
    let vals = (0..h.grid().len())
        .map(|k| {
            let ratio = h.values()[k] / (2.0 * energy.values()[k]);
            let mut c = params.gamma.at(k) * ratio.sqrt();
            if g2 > 0.0 {
                c += g2 / ratio.sqrt();
            }
            c
        })
        .collect();
    Ok(ScalarField::from_raw(*h.grid(), vals))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn g() -> TorusGrid {
        TorusGrid::square(4).unwrap()
    }

    #[test]
    fn selection_examples() {
        let b = coulomb_selection(&VectorField::constant(g(), [3.0, 4.0]), 1e-12);
        assert!((b.at(0)[0] - 0.6).abs() < 1e-15 && (b.at(0)[1] - 0.8).abs() < 1e-15);
        let b = coulomb_selection(&VectorField::zeros(g()), 1e-12);
        assert_eq!(b.at(0), [0.0, 0.0]);
        let b = coulomb_selection(&VectorField::constant(g(), [1e-13, 0.0]), 1e-12);
        assert_eq!(b.at(0), [0.0, 0.0]);
    }

    #[test]
    fn shrink_examples() {
        let h = ScalarField::constant(g(), 1.0);
        let p = FrictionParams::coulomb(2.0).unwrap();
        let q = friction_shrink(&VectorField::constant(g(), [3.0, 4.0]), &h, &p, 1.0).unwrap();
        assert!((q.at(0)[0] - 1.8).abs() < 1e-14 && (q.at(0)[1] - 2.4).abs() < 1e-14);

        let p = FrictionParams::coulomb(0.5).unwrap();
        let q = friction_shrink(&VectorField::constant(g(), [0.1, 0.0]), &h, &p, 1.0).unwrap();
        assert_eq!(q.at(0), [0.0, 0.0]);

        let q0 = VectorField::from_fn(g(), |[x, y]| [x - 0.3, y * y]);
        let id =
            friction_shrink(&q0, &h, &FrictionParams::extended(0.0, 0.0).unwrap(), 0.7).unwrap();
        assert_eq!(id, q0);
    }

    #[test]
    fn shrink_rejects_nonpositive_height() {
        let h = ScalarField::from_fn(g(), |[x, _]| x - 0.5);
        let p = FrictionParams::coulomb(1.0).unwrap();
        assert!(matches!(
            friction_shrink(&VectorField::zeros(g()), &h, &p, 0.1),
            Err(Error::Positivity(_))
        ));
    }

    #[test]
    fn extended_law_solves_the_quadratic() {
        let h = ScalarField::constant(g(), 2.0);
        let p = FrictionParams::extended(0.0, 3.0).unwrap();
        let q0 = VectorField::constant(g(), [1.0, -2.0]);
        let dt = 0.1;
        let q = friction_shrink(&q0, &h, &p, dt).unwrap();
        let [a, b] = q.at(0);
        let m = a.hypot(b);
        // q' (1 + dt γ₂ |q'| / h) = q
        let f = 1.0 + dt * 3.0 * m / 2.0;
        assert!((a * f - 1.0).abs() < 1e-13 && (b * f + 2.0).abs() < 1e-13);
    }

    #[test]
    fn selection_record_matches_applied_impulse() {
        let h = ScalarField::from_fn(g(), |[x, _]| 1.0 + x);
        let p = FrictionParams::coulomb(0.7).unwrap();
        let q0 = VectorField::from_fn(g(), |[x, y]| [x - 0.4, 0.3 - y]);
        let dt = 0.05;
        let out = friction_shrink_with_selection(&q0, &h, &p, dt).unwrap();
        for k in 0..g().len() {
            let hk = h.values()[k];
            let [b1, b2] = out.selection.at(k);
            assert!(b1.hypot(b2) <= 1.0 + 1e-15);
            let qa = q0.at(k);
            let qb = out.q.at(k);
            assert!((qa[0] - qb[0] - dt * 0.7 * hk * b1).abs() < 1e-14);
            assert!((qa[1] - qb[1] - dt * 0.7 * hk * b2).abs() < 1e-14);
        }
    }

    #[test]
    fn coefficient_field_examples() {
        let one = ScalarField::constant(g(), 1.0);
        let c = friction_coefficient_field(
            &one,
            &ScalarField::constant(g(), 0.5),
            &FrictionParams::coulomb(1.0).unwrap(),
        )
        .unwrap();
        assert!((c.values()[0] - 1.0).abs() < 1e-15);
        let c = friction_coefficient_field(
            &ScalarField::constant(g(), 2.0),
            &one,
            &FrictionParams::extended(1.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!((c.values()[0] - 2.0).abs() < 1e-15);
        let c =
            friction_coefficient_field(&one, &one, &FrictionParams::extended(0.0, 0.0).unwrap())
                .unwrap();
        assert_eq!(c.max_abs(), 0.0);
        assert!(matches!(
            friction_coefficient_field(&one, &ScalarField::zeros(g()), &FrictionParams::none()),
            Err(Error::EnergyPositivity(_))
        ));
    }

    #[test]
    fn negative_coefficients_are_rejected() {
        assert!(FrictionParams::coulomb(-1.0).is_err());
        assert!(FrictionParams::extended(1.0, -0.1).is_err());
    }

    #[test]
    fn linearized_friction_matches_selection() {
        // On fields with ½|q|²/h = E the two forms of the friction term coincide.
        let grid = TorusGrid::square(16).unwrap();
        let h = ScalarField::from_fn(grid, |[x, y]| 1.0 + 0.3 * (6.0 * x).sin() * y);
        let q = VectorField::from_fn(grid, |[x, y]| [0.5 + x, (3.0 * y).cos()]);
        let e = q.dot(&q).zip_map(&h, |qq, hh| 0.5 * qq / hh);
        let params = FrictionParams::coulomb(0.8).unwrap();
        let coef = friction_coefficient_field(&h, &e, &params).unwrap();
        let u = q.map_indexed(|k, [a, b]| [a / h.values()[k], b / h.values()[k]]);
        let b = coulomb_selection(&u, default_velocity_tol(&u));
        for k in 0..grid.len() {
            let lhs = [
                0.8 * h.values()[k] * b.at(k)[0],
                0.8 * h.values()[k] * b.at(k)[1],
            ];
            let rhs = [coef.values()[k] * q.at(k)[0], coef.values()[k] * q.at(k)[1]];
            assert!((lhs[0] - rhs[0]).abs() < 1e-10 && (lhs[1] - rhs[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn shrink_tracks_the_selection_for_small_steps() {
        let grid = g();
        let h = ScalarField::constant(grid, 1.5);
        let q = VectorField::constant(grid, [2.0, -1.0]);
        let p = FrictionParams::coulomb(0.4).unwrap();
        let u = q.map(|[a, b]| [a / 1.5, b / 1.5]);
        let b = coulomb_selection(&u, 1e-12);
        for dt in [1e-2, 1e-3, 1e-4] {
            let out = friction_shrink(&q, &h, &p, dt).unwrap();
            let rate = [
                (q.at(0)[0] - out.at(0)[0]) / dt,
                (q.at(0)[1] - out.at(0)[1]) / dt,
            ];
            let want = [0.4 * 1.5 * b.at(0)[0], 0.4 * 1.5 * b.at(0)[1]];
            assert!((rate[0] - want[0]).abs() <= 10.0 * dt);
            assert!((rate[1] - want[1]).abs() <= 10.0 * dt);
        }
    }

    proptest! {
        #[test]
        fn shrink_is_contractive_and_monotone(
            qx in -5.0f64..5.0, qy in -5.0f64..5.0, scale in 1.0f64..3.0,
            gamma in 0.0f64..2.0, gamma2 in 0.0f64..2.0, hh in 0.1f64..3.0, dt in 1e-4f64..0.5,
            extended in any::<bool>(),
        ) {
            let grid = g();
            let h = ScalarField::constant(grid, hh);
            let p = if extended {
                FrictionParams::extended(gamma, gamma2).unwrap()
            } else {
                FrictionParams::coulomb(gamma).unwrap()
            };
            let small = friction_shrink(&VectorField::constant(grid, [qx, qy]), &h, &p, dt).unwrap();
            let big = friction_shrink(
                &VectorField::constant(grid, [scale * qx, scale * qy]), &h, &p, dt,
            ).unwrap();
            let n0 = qx.hypot(qy);
            let n1 = small.at(0)[0].hypot(small.at(0)[1]);
            let n2 = big.at(0)[0].hypot(big.at(0)[1]);
            prop_assert!(n1 <= n0 * (1.0 + 1e-14));
            prop_assert!(n2 + 1e-14 >= n1);
            // Direction is preserved.
            prop_assert!(small.at(0)[0] * qx + small.at(0)[1] * qy >= -1e-14);
        }

        #[test]
        fn selection_stays_in_unit_ball(ux in -3.0f64..3.0, uy in -3.0f64..3.0) {
            let b = coulomb_selection(&VectorField::constant(g(), [ux, uy]), 1e-12);
            let [b1, b2] = b.at(0);
            prop_assert!(b1.hypot(b2) <= 1.0 + 1e-15);
            prop_assert!(b1 * ux + b2 * uy >= 0.0);
        }
    }
}
