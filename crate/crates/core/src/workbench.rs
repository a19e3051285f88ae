//! Subsolution workbench: designed height, stream potential, kinetic energy profile,
//! the mean-flow ODE, the Korn correction, the subsolution certificate, the energy gap
//! functional, oscillatory perturbations and the improvement step built on them.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::friction::{friction_coefficient_field, FrictionParams};
use crate::grid::{
    integrate, lambda_max_traceless, trapezoid, ScalarField, SpaceTimeField, SymTraceless2,
    SymTracelessField, TorusGrid, VectorField,
};
use crate::solver::Force;
use crate::spectral::Spectral;

pub const DEFAULT_NODES: usize = 65;
pub const DEFAULT_AMPLITUDE_CAP: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.1;
/// Lower bound on the relaxation time of the height profile, relative to `T`.
pub const TAU_MIN_FRACTION: f64 = 1e-3;

type Scalars = SpaceTimeField<ScalarField>;
type Vectors = SpaceTimeField<VectorField>;
type Tensors = SpaceTimeField<SymTracelessField>;

/// `h(t, x) = h₀(x) + s(t) g(x)` with `s(t) = τ (1 − e^{−t/τ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightDesign {
    pub h: Scalars,
    /// Initial height rate `g = −ΔΨ₀`.
    pub g: ScalarField,
    /// Mean-zero solution of `−Δψ = g`.
    pub psi_g: ScalarField,
    pub tau: f64,
}

impl HeightDesign {
    pub fn s(&self, t: f64) -> f64 {
        self.tau * (1.0 - (-t / self.tau).exp())
    }

    pub fn ds(&self, t: f64) -> f64 {
        (-t / self.tau).exp()
    }

    pub fn d2s(&self, t: f64) -> f64 {
        -(-t / self.tau).exp() / self.tau
    }
}

fn s_final(tau: f64, t_final: f64) -> f64 {
    tau * (1.0 - (-t_final / tau).exp())
}

pub fn design_height(
    h0: &ScalarField,
    psi0: &ScalarField,
    t_final: f64,
    nodes: usize,
    amplitude_cap: f64,
) -> Result<HeightDesign> {
    h0.grid().ensure_same(psi0.grid())?;
    if !(amplitude_cap > 0.0 && amplitude_cap < 1.0) {
        return Err(Error::InvalidValue(format!(
            "amplitude cap must lie in (0, 1), got {amplitude_cap}"
        )));
    }
    let hmin = h0.min();
    if !(hmin > 0.0) {
        return Err(Error::Positivity(format!(
            "h_0 > 0 in Ω is required, min is {hmin}"
        )));
    }
    let ops = Spectral::for_grid(*h0.grid());
    let lap = ops.laplacian(psi0);
    let lm = lap.mean();
    let g = lap.map(|v| lm - v);
    let psi_g = ops.poisson_solve(&g)?;
    let gmax = g.max_abs();
    let budget = amplitude_cap * hmin;
    let tau_min = TAU_MIN_FRACTION * t_final;
    let tau = if gmax == 0.0 || s_final(t_final, t_final) * gmax <= budget {
        t_final
    } else {
        if s_final(tau_min, t_final) * gmax > budget {
            return Err(Error::Design(format!(
                "initial height rate {gmax:.3e} too large for positivity with relaxation time >= {tau_min:.3e}"
            )));
        }
        // s(T; τ) increases with τ; bisect for the largest admissible τ.
        let (mut lo, mut hi) = (tau_min, t_final);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s_final(mid, t_final) * gmax <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * t_final {
                break;
            }
        }
        lo
    };
    let mut design = HeightDesign {
        h: SpaceTimeField::from_fn(t_final, nodes, |_, _| h0.clone())?,
        g,
        psi_g,
        tau,
    };
    let h = SpaceTimeField::from_fn(t_final, nodes, |_, t| {
        let s = design.s(t);
        h0.zip_map(&design.g, |a, b| a + s * b)
    })?;
    let m0 = integrate(h0);
    for (k, slice) in h.slices().iter().enumerate() {
        if !(slice.min() > 0.0) {
            return Err(Error::Design(format!(
                "designed height not positive at node {k}"
            )));
        }
        if (integrate(slice) - m0).abs() > 1e-12 * m0.abs().max(1.0) {
            return Err(Error::Design(format!(
                "designed height changes mass at node {k}"
            )));
        }
    }
    design.h = h;
    Ok(design)
}

/// Per-slice `−ΔΨ = ∂t h`, `∫Ψ = 0`, with the centered time derivative.
pub fn stream_potential(h: &Scalars) -> Result<Scalars> {
    let m0 = integrate(h.slice(0));
    for (k, s) in h.slices().iter().enumerate() {
        let drift = (integrate(s) - m0).abs();
        if drift > 1e-10 * m0.abs().max(1.0) {
            return Err(Error::Solvability(format!(
                "mass drifts by {drift:e} at time node {k}"
            )));
        }
    }
    let ops = Spectral::for_grid(*h.slice(0).grid());
    let dh = h.time_derivative();
    let slices = dh
        .slices()
        .par_iter()
        .map(|s| {
            // Remove the roundoff-level mean left by differencing before the solve.
            let m = s.mean();
            ops.poisson_solve(&s.map(|v| v - m))
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(h.t_final(), slices)
}

/// `E = Λ − a h² − ∂tΨ`.
pub fn kinetic_energy_field(
    lambda: f64,
    a: &ScalarField,
    h: &Scalars,
    psi: &Scalars,
) -> Result<Scalars> {
    let psi_t = psi.time_derivative();
    energy_from_parts(lambda, a, h, &psi_t)
}

fn energy_from_parts(
    lambda: f64,
    a: &ScalarField,
    h: &Scalars,
    psi_t: &Scalars,
) -> Result<Scalars> {
    let slices = h
        .slices()
        .iter()
        .zip(psi_t.slices())
        .map(|(hs, pt)| {
            a.grid().ensure_same(hs.grid())?;
            let av = a.values();
            let hv = hs.values();
            let pv = pt.values();
            Ok(ScalarField::from_fn_indexed(*hs.grid(), |k| {
                lambda - av[k] * hv[k] * hv[k] - pv[k]
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(h.t_final(), slices)
}

fn check_energy_floor(e: &Scalars, e_min: f64) -> Result<()> {
    for (k, s) in e.slices().iter().enumerate() {
        let m = s.min();
        if !(m >= e_min) {
            return Err(Error::EnergyPositivity(format!(
                "kinetic energy {m:e} below floor {e_min:e} at time node {k}"
            )));
        }
    }
    Ok(())
}

fn add_vec(a: &VectorField, c: [f64; 2], b: &VectorField) -> VectorField {
    a.map_indexed(|k, [x, y]| {
        let bb = b.at(k);
        [x + c[0] + bb[0], y + c[1] + bb[1]]
    })
}

/// Coefficient mean `α(t)` and forcing `β(t)` of the mean-flow ODE `V' = α V + β`
/// at every time node.
fn mean_flow_coefficients(
    v: &Vectors,
    e: &Scalars,
    h: &Scalars,
    grad_psi: &Vectors,
    friction: &FrictionParams,
    force: &Force,
) -> Result<Vec<(f64, [f64; 2])>> {
    let grid = *h.slice(0).grid();
    (0..h.nodes())
        .into_par_iter()
        .map(|k| {
            let t = h.times()[k];
            let c = friction_coefficient_field(h.slice(k), e.slice(k), friction)?;
            let base = add_vec(v.slice(k), [0.0, 0.0], grad_psi.slice(k));
            let f = force.sample(grid, t);
            let hv = h.slice(k).values();
            let cv = c.values();
            let n = grid.len() as f64;
            let mut beta = [0.0; 2];
            for i in 0..grid.len() {
                let b = base.at(i);
                let fi = f.at(i);
                beta[0] += cv[i] * b[0] + hv[i] * fi[0];
                beta[1] += cv[i] * b[1] + hv[i] * fi[1];
            }
            Ok((c.mean(), [beta[0] / n, beta[1] / n]))
        })
        .collect()
}

/// Classical RK4 for `V' − ᾱ(t) V = β̄(t)`, `V(0) = V₀`, with `ᾱ`, `β̄` linear between nodes.
#[allow(clippy::too_many_arguments)]
pub fn solve_v_ode(
    v: &Vectors,
    e: &Scalars,
    h: &Scalars,
    grad_psi: &Vectors,
    friction: &FrictionParams,
    force: &Force,
    v0: [f64; 2],
    e_min: f64,
) -> Result<Vec<[f64; 2]>> {
    check_energy_floor(e, e_min)?;
    let coef = mean_flow_coefficients(v, e, h, grad_psi, friction, force)?;
    Ok(integrate_mean_flow(&coef, h.dt(), v0))
}

fn integrate_mean_flow(coef: &[(f64, [f64; 2])], dt: f64, v0: [f64; 2]) -> Vec<[f64; 2]> {
    let rhs = |al: f64, be: [f64; 2], x: [f64; 2]| [al * x[0] + be[0], al * x[1] + be[1]];
    let mut out = Vec::with_capacity(coef.len());
    let mut x = v0;
    out.push(x);
    for w in coef.windows(2) {
        let (a0, b0) = w[0];
        let (a1, b1) = w[1];
        let am = 0.5 * (a0 + a1);
        let bm = [0.5 * (b0[0] + b1[0]), 0.5 * (b0[1] + b1[1])];
        let k1 = rhs(a0, b0, x);
        let k2 = rhs(am, bm, [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
        let k3 = rhs(am, bm, [x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
        let k4 = rhs(a1, b1, [x[0] + dt * k3[0], x[1] + dt * k3[1]]);
        for c in 0..2 {
            x[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        out.push(x);
    }
    out
}

/// Right side of the Korn problem at one time node:
/// `−c q + mean(c q) + h f − mean(h f)` with `q = v + V + ∇Ψ`.
#[allow(clippy::too_many_arguments)]
fn korn_rhs(
    v: &VectorField,
    big_v: [f64; 2],
    e: &ScalarField,
    h: &ScalarField,
    grad_psi: &VectorField,
    friction: &FrictionParams,
    force: &Force,
    t: f64,
) -> Result<VectorField> {
    let grid = *h.grid();
    let c = friction_coefficient_field(h, e, friction)?;
    let q = add_vec(v, big_v, grad_psi);
    let f = force.sample(grid, t);
    let hv = h.values();
    let cv = c.values();
    let raw = q.map_indexed(|k, [a, b]| {
        let fk = f.at(k);
        [-cv[k] * a + hv[k] * fk[0], -cv[k] * b + hv[k] * fk[1]]
    });
    let m = raw.mean();
    Ok(raw.map(|[a, b]| [a - m[0], b - m[1]]))
}

#[allow(clippy::too_many_arguments)]
pub fn solve_m(
    v: &Vectors,
    big_v: &[[f64; 2]],
    e: &Scalars,
    h: &Scalars,
    grad_psi: &Vectors,
    friction: &FrictionParams,
    force: &Force,
) -> Result<Tensors> {
    let ops = Spectral::for_grid(*h.slice(0).grid());
    let slices = (0..h.nodes())
        .into_par_iter()
        .map(|k| {
            let rhs = korn_rhs(
                v.slice(k),
                big_v[k],
                e.slice(k),
                h.slice(k),
                grad_psi.slice(k),
                friction,
                force,
                h.times()[k],
            )?;
            Ok(ops.korn_solve(&rhs)?.1)
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(h.t_final(), slices)
}

/// Problem data for the workbench.
#[derive(Debug, Clone)]
pub struct WorkbenchData {
    pub h0: ScalarField,
    pub u0: VectorField,
    pub a: ScalarField,
    pub friction: FrictionParams,
    pub force: Force,
    pub t_final: f64,
    pub nodes: usize,
    pub amplitude_cap: f64,
}

impl WorkbenchData {
    pub fn new(h0: ScalarField, u0: VectorField, a: ScalarField, t_final: f64) -> Result<Self> {
        let d = Self {
            h0,
            u0,
            a,
            friction: FrictionParams::none(),
            force: Force::Zero,
            t_final,
            nodes: DEFAULT_NODES,
            amplitude_cap: DEFAULT_AMPLITUDE_CAP,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_friction(mut self, friction: FrictionParams) -> Self {
        self.friction = friction;
        self
    }

    pub fn with_force(mut self, force: Force) -> Self {
        self.force = force;
        self
    }

    pub fn with_nodes(mut self, nodes: usize) -> Result<Self> {
        self.nodes = nodes;
        self.validate()?;
        Ok(self)
    }

    pub fn grid(&self) -> TorusGrid {
        *self.h0.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.h0.grid().ensure_same(self.u0.grid())?;
        self.h0.grid().ensure_same(self.a.grid())?;
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Validation {
                key: "physics.T".into(),
                message: format!("workbench needs a positive horizon, got {}", self.t_final),
            });
        }
        if self.nodes < 3 {
            return Err(Error::Validation {
                key: "workbench.nodes".into(),
                message: format!("need at least 3 time nodes, got {}", self.nodes),
            });
        }
        if self.a.min() < 0.0 {
            return Err(Error::Validation {
                key: "physics.a".into(),
                message: "pressure coefficient must be nonnegative".into(),
            });
        }
        if let Some(k) = self.h0.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Validation {
                key: "initial.h".into(),
                message: format!(
                    "h_0 > 0 in Ω is required, found {} at cell {k}",
                    self.h0.values()[k]
                ),
            });
        }
        Ok(())
    }
}

/// Everything that does not depend on `Λ`: the designed height, its potential and the
/// Helmholtz parts of the initial momentum.
#[derive(Debug, Clone)]
pub struct WorkbenchBase {
    pub data: WorkbenchData,
    pub design: HeightDesign,
    pub psi: Scalars,
    pub psi_t: Scalars,
    pub grad_psi: Vectors,
    pub v0: VectorField,
    pub big_v0: [f64; 2],
}

impl WorkbenchBase {
    pub fn new(data: WorkbenchData) -> Result<Self> {
        data.validate()?;
        let ops = Spectral::for_grid(data.grid());
        let q0 = data.u0.scale_by(&data.h0);
        let parts = ops.helmholtz_decompose(&q0);
        let design = design_height(
            &data.h0,
            &parts.psi,
            data.t_final,
            data.nodes,
            data.amplitude_cap,
        )?;
        let psi = stream_potential(&design.h)?;
        let psi_t = psi.time_derivative();
        let grad_psi = psi.map(|p| ops.grad(p));
        Ok(Self {
            data,
            design,
            psi,
            psi_t,
            grad_psi,
            v0: parts.v,
            big_v0: parts.mean,
        })
    }

    /// The subsolution with `w = v₀`, `F = 0` for a given `Λ` and margin `δ`.
    pub fn initial_subsolution(&self, lambda: f64, delta: f64) -> Result<SubsolutionState> {
        if !(delta > 0.0) {
            return Err(Error::InvalidValue(format!(
                "margin must be positive, got {delta}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "Λ must be positive, got {lambda}"
            )));
        }
        let h = self.design.h.clone();
        let e = energy_from_parts(lambda, &self.data.a, &h, &self.psi_t)?;
        let v =
            SpaceTimeField::from_fn(self.data.t_final, self.data.nodes, |_, _| self.v0.clone())?;
        let flux = v.map(|s| SymTracelessField::zeros(*s.grid()));
        let mut sub = SubsolutionState {
            design: self.design.clone(),
            psi: self.psi.clone(),
            psi_t: self.psi_t.clone(),
            grad_psi: self.grad_psi.clone(),
            lambda,
            a: self.data.a.clone(),
            e,
            v,
            flux,
            big_v: Vec::new(),
            m: SpaceTimeField::from_fn(self.data.t_final, self.data.nodes, |_, _| {
                SymTracelessField::zeros(self.data.grid())
            })?,
            delta,
            big_v0: self.big_v0,
            friction: self.data.friction.clone(),
            force: self.data.force.clone(),
            e_min: 1e-6 * lambda,
        };
        sub.refresh()?;
        Ok(sub)
    }
}

/// The full subsolution record.
#[derive(Debug, Clone)]
pub struct SubsolutionState {
    pub design: HeightDesign,
    pub psi: Scalars,
    pub psi_t: Scalars,
    pub grad_psi: Vectors,
    /// Constant-in-time energy level.
    pub lambda: f64,
    pub a: ScalarField,
    pub e: Scalars,
    pub v: Vectors,
    /// Flux `F` with `∂t v + div F = 0`.
    pub flux: Tensors,
    pub big_v: Vec<[f64; 2]>,
    pub m: Tensors,
    pub delta: f64,
    pub big_v0: [f64; 2],
    pub friction: FrictionParams,
    pub force: Force,
    pub e_min: f64,
}

impl SubsolutionState {
    pub fn h(&self) -> &Scalars {
        &self.design.h
    }

    pub fn grid(&self) -> TorusGrid {
        *self.e.slice(0).grid()
    }

    pub fn lambda_series(&self) -> Vec<f64> {
        vec![self.lambda; self.e.nodes()]
    }

    /// Recomputes `V[v]` and `M[v]` from the current `v`.
    pub fn refresh(&mut self) -> Result<()> {
        let h = &self.design.h;
        self.big_v = solve_v_ode(
            &self.v,
            &self.e,
            h,
            &self.grad_psi,
            &self.friction,
            &self.force,
            self.big_v0,
            self.e_min,
        )?;
        self.m = solve_m(
            &self.v,
            &self.big_v,
            &self.e,
            h,
            &self.grad_psi,
            &self.friction,
            &self.force,
        )?;
        Ok(())
    }

    /// `v + V + ∇Ψ` at time node `k`.
    pub fn momentum(&self, k: usize) -> VectorField {
        add_vec(self.v.slice(k), self.big_v[k], self.grad_psi.slice(k))
    }
}

/// Largest eigenvalue of the full symmetric matrix `q⊗q/h − T` with `T` traceless.
#[inline]
fn lambda_full(q: [f64; 2], h: f64, t: SymTraceless2) -> f64 {
    let half = 0.5 * (q[0] * q[0] + q[1] * q[1]) / h;
    half + SymTraceless2::new(
        (q[0] * q[0] - q[1] * q[1]) / (2.0 * h) - t.p,
        q[0] * q[1] / h - t.s,
    )
    .lambda_max()
}

/// Same eigenvalue through the trace–determinant formula for a general symmetric matrix.
#[inline]
fn lambda_full_direct(q: [f64; 2], h: f64, t: SymTraceless2) -> f64 {
    let a11 = q[0] * q[0] / h - t.p;
    let a22 = q[1] * q[1] / h + t.p;
    let a12 = q[0] * q[1] / h - t.s;
    let m = 0.5 * (a11 + a22);
    let d = (0.5 * (a11 - a22)).hypot(a12);
    m + d
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub pass: bool,
    /// `E − δ − λ_max[q⊗q/h − F − M]`.
    pub margin: Scalars,
    pub min_margin: f64,
    pub min_margin_per_node: Vec<f64>,
    /// Largest value of `½|q|²/h − λ_max[…]`; nonpositive up to roundoff.
    pub kinetic_excess: f64,
}

pub fn subsolution_certificate(sub: &SubsolutionState) -> Result<Certificate> {
    let h = &sub.design.h;
    let per: Vec<(ScalarField, f64)> = (0..h.nodes())
        .into_par_iter()
        .map(|k| {
            let q = sub.momentum(k);
            let hv = h.slice(k).values();
            let ev = sub.e.slice(k).values();
            let fm = sub.flux.slice(k);
            let mm = sub.m.slice(k);
            let mut excess = f64::NEG_INFINITY;
            let margin = ScalarField::from_fn_indexed(*h.slice(k).grid(), |i| {
                let t = fm.at(i) + mm.at(i);
                let qi = q.at(i);
                let lam = lambda_full(qi, hv[i], t);
                let direct = lambda_full_direct(qi, hv[i], t);
                let kin = 0.5 * (qi[0] * qi[0] + qi[1] * qi[1]) / hv[i];
                excess = excess.max(kin - direct);
                ev[i] - sub.delta - lam
            });
            (margin, excess)
        })
        .collect();
    let mut excess = f64::NEG_INFINITY;
    let mut slices = Vec::with_capacity(per.len());
    for (m, e) in per {
        excess = excess.max(e);
        slices.push(m);
    }
    if slices
        .iter()
        .any(|s| s.values().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NumericalAbort(
            "non-finite certificate margin".into(),
        ));
    }
    let per_node: Vec<f64> = slices.iter().map(|s| s.min()).collect();
    let min_margin = per_node.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = sub.lambda.abs().max(1.0);
    Ok(Certificate {
        pass: min_margin > 0.0 && excess <= 1e-12 * scale,
        margin: SpaceTimeField::new(h.t_final(), slices)?,
        min_margin,
        min_margin_per_node: per_node,
        kinetic_excess: excess,
    })
}

/// `I = ∫₀ᵀ ∫ ½|v + V + ∇Ψ|²/h − E`.
pub fn energy_gap(sub: &SubsolutionState) -> f64 {
    let h = &sub.design.h;
    let per: Vec<f64> = (0..h.nodes())
        .into_par_iter()
        .map(|k| {
            let q = sub.momentum(k);
            let hv = h.slice(k).values();
            let ev = sub.e.slice(k).values();
            (0..hv.len())
                .map(|i| {
                    let qi = q.at(i);
                    0.5 * (qi[0] * qi[0] + qi[1] * qi[1]) / hv[i] - ev[i]
                })
                .sum::<f64>()
                / hv.len() as f64
        })
        .collect();
    trapezoid(h.times(), &per)
}

/// Smallest passing `Λ` (to relative 1e-3) for the data's initial subsolution, times 1.1.
pub fn find_lambda0(base: &WorkbenchBase, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidValue(format!(
            "margin must be positive, got {delta}"
        )));
    }
    let passes = |lambda: f64| -> Result<bool> {
        match base.initial_subsolution(lambda, delta) {
            Ok(sub) => Ok(subsolution_certificate(&sub)?.pass),
            Err(Error::EnergyPositivity(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let cap = 1e12;
    let mut hi = 1.0;
    while !passes(hi)? {
        hi *= 2.0;
        if hi > cap {
            return Err(Error::Search(format!(
                "certificate still fails at Λ = {cap:e}"
            )));
        }
    }
    let mut lo = 0.0;
    // Tighten below the requested tolerance so rounding of the final bracket does not matter.
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(1.1 * hi)
}

/// Residuals of the linear relations tying the subsolution together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainResiduals {
    /// `max |D_t v + div F|`.
    pub transport: f64,
    /// `max |−ΔΨ − ∂t h|` against the exact height rate.
    pub continuity: f64,
    /// `max |E − (Λ − a h² − ∂tΨ)|` against the exact potential rate.
    pub energy: f64,
    /// `max |D_t V − ᾱ V − β̄|` over interior nodes.
    pub mean_flow: f64,
    /// `max |div M − rhs|`.
    pub korn: f64,
}

impl ChainResiduals {
    pub fn max(&self) -> f64 {
        self.transport
            .max(self.continuity)
            .max(self.energy)
            .max(self.mean_flow)
            .max(self.korn)
    }
}

pub fn chain_residuals(sub: &SubsolutionState) -> Result<ChainResiduals> {
    let ops = Spectral::for_grid(sub.grid());
    let h = &sub.design.h;
    let d = &sub.design;
    let dv = sub.v.time_derivative();
    let nodes = h.nodes();
    let per: Vec<[f64; 4]> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let t = h.times()[k];
            let transport = (dv.slice(k) + &ops.div_tensor(sub.flux.slice(k))).max_norm();
            let lap = ops.laplacian(sub.psi.slice(k));
            let ds = d.ds(t);
            let continuity = lap
                .values()
                .iter()
                .zip(d.g.values())
                .map(|(l, g)| (-l - ds * g).abs())
                .fold(0.0, f64::max);
            let d2s = d.d2s(t);
            let (av, hv, ev, pg) = (
                sub.a.values(),
                h.slice(k).values(),
                sub.e.slice(k).values(),
                d.psi_g.values(),
            );
            let energy = (0..hv.len())
                .map(|i| (ev[i] - (sub.lambda - av[i] * hv[i] * hv[i] - d2s * pg[i])).abs())
                .fold(0.0, f64::max);
            let rhs = korn_rhs(
                sub.v.slice(k),
                sub.big_v[k],
                sub.e.slice(k),
                h.slice(k),
                sub.grad_psi.slice(k),
                &sub.friction,
                &sub.force,
                t,
            )?;
            let korn = (&ops.div_tensor(sub.m.slice(k)) - &rhs).max_norm();
            Ok([transport, continuity, energy, korn])
        })
        .collect::<Result<Vec<_>>>()?;
    let coef = mean_flow_coefficients(&sub.v, &sub.e, h, &sub.grad_psi, &sub.friction, &sub.force)?;
    let dt = h.dt();
    let mut mean_flow: f64 = 0.0;
    for k in 1..nodes - 1 {
        let (al, be) = coef[k];
        for c in 0..2 {
            let dv = (sub.big_v[k + 1][c] - sub.big_v[k - 1][c]) / (2.0 * dt);
            mean_flow = mean_flow.max((dv - al * sub.big_v[k][c] - be[c]).abs());
        }
    }
    let mut out = ChainResiduals {
        transport: 0.0,
        continuity: 0.0,
        energy: 0.0,
        mean_flow,
        korn: 0.0,
    };
    for r in per {
        out.transport = out.transport.max(r[0]);
        out.continuity = out.continuity.max(r[1]);
        out.energy = out.energy.max(r[2]);
        out.korn = out.korn.max(r[3]);
    }
    Ok(out)
}

/// Space-time box `[t0, t1] × [x0, x1] × [y0, y1]` inside `(0, T) × [0, 1)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBox {
    pub t: [f64; 2],
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl SupportBox {
    pub fn whole_torus(t0: f64, t1: f64) -> Self {
        Self {
            t: [t0, t1],
            x: [0.0, 1.0],
            y: [0.0, 1.0],
        }
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t > self.t[0] && t < self.t[1]
    }

    pub fn contains_point(&self, [x, y]: [f64; 2]) -> bool {
        x >= self.x[0] && x < self.x[1] && y >= self.y[0] && y < self.y[1]
    }

    fn validate(&self, t_final: f64) -> Result<()> {
        let ok = 0.0 <= self.t[0]
            && self.t[0] < self.t[1]
            && self.t[1] <= t_final
            && 0.0 <= self.x[0]
            && self.x[0] < self.x[1]
            && self.x[1] <= 1.0
            && 0.0 <= self.y[0]
            && self.y[0] < self.y[1]
            && self.y[1] <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!(
                "support box {self:?} is not inside (0, T) x torus"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatoryOptions {
    pub seed: u64,
    /// Spatial patches per direction.
    pub patches: usize,
    /// Patches in time.
    pub time_patches: usize,
    /// Fraction of the local gap spent on the perturbation's kinetic energy.
    pub fill: f64,
    pub max_backtracks: usize,
}

impl Default for OscillatoryOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            patches: 4,
            time_patches: 2,
            fill: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OscillatoryPair {
    pub w: Vectors,
    pub flux: Tensors,
    pub n: usize,
    pub support: SupportBox,
    /// `∫∫ |w|²/r`.
    pub energy: f64,
    /// `∫∫ |w|²/r` divided by `∫∫_box (e − ½|g|²/r)²`.
    pub energy_ratio: f64,
    /// Largest `|w|` outside the spatial box relative to the overall largest `|w|`.
    pub leakage: f64,
    pub warning: Option<String>,
}

impl OscillatoryPair {
    pub fn is_zero(&self) -> bool {
        self.energy == 0.0
    }
}

/// `exp(1 − 1/(1 − u²))` on `u = 2s − 1 ∈ (−1, 1)` and its derivative in `s`.
fn bump(s: f64) -> (f64, f64) {
    let u = 2.0 * s - 1.0;
    let d = 1.0 - u * u;
    if d <= 0.0 {
        return (0.0, 0.0);
    }
    let b = (1.0 - 1.0 / d).exp();
    (b, b * (-2.0 * u / (d * d)) * 2.0)
}

struct Patch {
    /// Spatial rectangle and time interval.
    x: [f64; 2],
    y: [f64; 2],
    t: [f64; 2],
    xi: [f64; 2],
    omega: f64,
    phase: f64,
    alpha: f64,
}

struct PatchLayout {
    patches: Vec<Patch>,
    /// For each cell, its spatial patch index (if inside the box).
    cell_patch: Vec<Option<usize>>,
    nsp: usize,
}

impl PatchLayout {
    fn patch_of(&self, cell: usize, time_patch: usize) -> Option<usize> {
        self.cell_patch[cell].map(|p| time_patch * self.nsp + p)
    }
}

fn time_patch_of(support: &SupportBox, q: usize, t: f64) -> Option<usize> {
    if !support.contains_time(t) {
        return None;
    }
    let len = (support.t[1] - support.t[0]) / q as f64;
    Some((((t - support.t[0]) / len) as usize).min(q - 1))
}

fn sample_potential(
    layout: &PatchLayout,
    grid: TorusGrid,
    n: usize,
    t: f64,
) -> (ScalarField, ScalarField) {
    let kn = 2.0 * PI * n as f64;
    let amp_unit = 2.0 / kn.powi(3);
    let mut phi = vec![0.0; grid.len()];
    let mut phi_t = vec![0.0; grid.len()];
    for (c, x) in grid.centers().enumerate() {
        let Some(sp) = layout.cell_patch[c] else {
            continue;
        };
        for tp in 0..layout.patches.len() / layout.nsp {
            let p = &layout.patches[tp * layout.nsp + sp];
            if p.alpha == 0.0 || t <= p.t[0] || t >= p.t[1] {
                continue;
            }
            let tl = p.t[1] - p.t[0];
            let (th, dth) = bump((t - p.t[0]) / tl);
            let (bx, _) = bump((x[0] - p.x[0]) / (p.x[1] - p.x[0]));
            let (by, _) = bump((x[1] - p.y[0]) / (p.y[1] - p.y[0]));
            let chi = bx * by;
            if chi == 0.0 {
                continue;
            }
            let a = amp_unit * p.alpha;
            let arg = kn * (p.xi[0] * x[0] + p.xi[1] * x[1] + p.omega * t) + p.phase;
            let (sn, cs) = arg.sin_cos();
            phi[c] += th * chi * a * sn;
            phi_t[c] += (dth / tl) * chi * a * sn + th * chi * a * kn * p.omega * cs;
        }
    }
    (
        ScalarField::from_raw(grid, phi),
        ScalarField::from_raw(grid, phi_t),
    )
}

/// `w = ½ ∇⊥ΔΦ`, `G = (∂₁∂₂Φ_t, −½(∂₁² − ∂₂²)Φ_t)`: then `div w = 0` and
/// `∂t w + div G = ½ ∇⊥Δ(∂tΦ − Φ_t)`.
fn pair_from_potential(
    ops: &Spectral,
    phi: &ScalarField,
    phi_t: &ScalarField,
) -> (VectorField, SymTracelessField) {
    let grid = *ops.grid();
    let sp = ops.forward(phi.values());
    let st = ops.forward(phi_t.values());
    let nx = grid.nx();
    let kw = |i: usize, n: usize| -> f64 {
        let m = if i < n / 2 {
            i as f64
        } else if i == n / 2 {
            0.0
        } else {
            i as f64 - n as f64
        };
        2.0 * PI * m
    };
    let len = grid.len();
    let (mut w1, mut w2) = (
        vec![Complex64::default(); len],
        vec![Complex64::default(); len],
    );
    let (mut gp, mut gs) = (
        vec![Complex64::default(); len],
        vec![Complex64::default(); len],
    );
    for j in 0..grid.ny() {
        let ky = kw(j, grid.ny());
        for i in 0..nx {
            let kx = kw(i, nx);
            let k = j * nx + i;
            let k2 = kx * kx + ky * ky;
            w1[k] = Complex64::new(0.0, 0.5 * ky * k2) * sp[k];
            w2[k] = Complex64::new(0.0, -0.5 * kx * k2) * sp[k];
            gp[k] = st[k] * (-kx * ky);
            gs[k] = st[k] * (0.5 * (kx * kx - ky * ky));
        }
    }
    (
        VectorField::from_raw(grid, ops.inverse(w1), ops.inverse(w2)),
        SymTracelessField::from_raw(grid, ops.inverse(gp), ops.inverse(gs)),
    )
}

/// Oscillatory perturbation `(w, G)` supported in `support`, preserving
/// `λ_max[(g + w)⊗(g + w)/r − (W + G)] < e` there.
pub fn oscillatory_pair(
    g: &Vectors,
    w_tensor: &Tensors,
    r: &Scalars,
    e: &Scalars,
    n: usize,
    support: SupportBox,
    opts: &OscillatoryOptions,
) -> Result<OscillatoryPair> {
    let grid = *r.slice(0).grid();
    let nodes = r.nodes();
    let t_final = r.t_final();
    support.validate(t_final)?;
    if n == 0 || opts.patches == 0 || opts.time_patches == 0 {
        return Err(Error::InvalidValue(
            "wavenumber and patch counts must be positive".into(),
        ));
    }
    if !(opts.fill > 0.0 && opts.fill < 1.0) {
        return Err(Error::InvalidValue(format!(
            "fill must lie in (0, 1), got {}",
            opts.fill
        )));
    }
    let times = r.times().to_vec();
    let centers: Vec<[f64; 2]> = grid.centers().collect();
    let in_box: Vec<bool> = centers.iter().map(|&x| support.contains_point(x)).collect();

    // Precondition and pointwise gap on the box.
    let mut gap = vec![vec![f64::INFINITY; grid.len()]; nodes];
    let mut worst = f64::INFINITY;
    let mut gap_max: f64 = 0.0;
    let mut e_scale: f64 = 1.0;
    for k in 0..nodes {
        if !support.contains_time(times[k]) {
            continue;
        }
        let (gs, ws, rs, es) = (
            g.slice(k),
            w_tensor.slice(k),
            r.slice(k).values(),
            e.slice(k).values(),
        );
        for c in 0..grid.len() {
            if !in_box[c] {
                continue;
            }
            if !(rs[c] > 0.0) {
                return Err(Error::Positivity(format!(
                    "r = {} at node {k}, cell {c}",
                    rs[c]
                )));
            }
            let slack = es[c] - lambda_full(gs.at(c), rs[c], ws.at(c));
            gap[k][c] = slack;
            worst = worst.min(slack);
            gap_max = gap_max.max(slack);
            e_scale = e_scale.max(es[c].abs());
        }
    }
    if worst <= 0.0 {
        return Err(Error::Constraint(format!(
            "precondition fails on the support box: min slack {worst:e}"
        )));
    }
    let zero = |warning: Option<String>| -> Result<OscillatoryPair> {
        Ok(OscillatoryPair {
            w: SpaceTimeField::from_fn(t_final, nodes, |_, _| VectorField::zeros(grid))?,
            flux: SpaceTimeField::from_fn(t_final, nodes, |_, _| SymTracelessField::zeros(grid))?,
            n,
            support,
            energy: 0.0,
            energy_ratio: 0.0,
            leakage: 0.0,
            warning,
        })
    };
    let gap_floor = 1e-12 * e_scale;
    if gap_max <= gap_floor || !worst.is_finite() {
        let msg = "degenerate gap: nothing to add".to_string();
        log::warn!("{msg}");
        return zero(Some(msg));
    }

    // Patch layout with seeded directions and phases.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (np, nq) = (opts.patches, opts.time_patches);
    let (wx, wy) = (
        (support.x[1] - support.x[0]) / np as f64,
        (support.y[1] - support.y[0]) / np as f64,
    );
    let wt = (support.t[1] - support.t[0]) / nq as f64;
    let mut cell_patch = vec![None; grid.len()];
    for (c, x) in centers.iter().enumerate() {
        if in_box[c] {
            let i = (((x[0] - support.x[0]) / wx) as usize).min(np - 1);
            let j = (((x[1] - support.y[0]) / wy) as usize).min(np - 1);
            cell_patch[c] = Some(j * np + i);
        }
    }
    let mut patches = Vec::with_capacity(np * np * nq);
    for q in 0..nq {
        let t = [
            support.t[0] + q as f64 * wt,
            support.t[0] + (q + 1) as f64 * wt,
        ];
        let tc = 0.5 * (t[0] + t[1]);
        let kc = ((tc / r.dt()).round() as usize).min(nodes - 1);
        for j in 0..np {
            for i in 0..np {
                let x = [
                    support.x[0] + i as f64 * wx,
                    support.x[0] + (i + 1) as f64 * wx,
                ];
                let y = [
                    support.y[0] + j as f64 * wy,
                    support.y[0] + (j + 1) as f64 * wy,
                ];
                let xc = [0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1])];
                let ci = ((xc[0] * grid.nx() as f64) as usize).min(grid.nx() - 1);
                let cj = ((xc[1] * grid.ny() as f64) as usize).min(grid.ny() - 1);
                let cc = grid.index(ci, cj);
                let gc = g.slice(kc).at(cc);
                let rc = r.slice(kc).values()[cc];
                let gn = gc[0].hypot(gc[1]);
                let random_angle: f64 = rng.gen_range(0.0..2.0 * PI);
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                let (xi, omega) = if gn > 1e-12 {
                    ([gc[0] / gn, gc[1] / gn], -gn / rc)
                } else {
                    ([random_angle.cos(), random_angle.sin()], 0.0)
                };
                // Smallest r · gap over the patch's support.
                let sp = j * np + i;
                let mut rg = f64::INFINITY;
                for k in 0..nodes {
                    if !(times[k] > t[0] && times[k] < t[1]) {
                        continue;
                    }
                    let rs = r.slice(k).values();
                    for c in 0..grid.len() {
                        if cell_patch[c] == Some(sp) {
                            rg = rg.min(rs[c] * gap[k][c]);
                        }
                    }
                }
                let alpha = if rg.is_finite() && rg > gap_floor {
                    (opts.fill * rg).sqrt()
                } else {
                    0.0
                };
                patches.push(Patch {
                    x,
                    y,
                    t,
                    xi,
                    omega,
                    phase,
                    alpha,
                });
            }
        }
    }
    let mut layout = PatchLayout {
        patches,
        cell_patch,
        nsp: np * np,
    };
    let ops = Spectral::for_grid(grid);
    let mut backtracks = vec![0usize; layout.patches.len()];
    let mut rounds = 0usize;
    let (w, flux) = loop {
        let built: Vec<(VectorField, SymTracelessField)> = times
            .par_iter()
            .map(|&t| {
                let (phi, phi_t) = sample_potential(&layout, grid, n, t);
                pair_from_potential(&ops, &phi, &phi_t)
            })
            .collect();
        let mut violated = vec![false; layout.patches.len()];
        for k in 0..nodes {
            let Some(tp) = time_patch_of(&support, nq, times[k]) else {
                continue;
            };
            let (gs, ws, rs, es) = (
                g.slice(k),
                w_tensor.slice(k),
                r.slice(k).values(),
                e.slice(k).values(),
            );
            let (wk, gk) = &built[k];
            for c in 0..grid.len() {
                if !in_box[c] {
                    continue;
                }
                let gg = gs.at(c);
                let ww = wk.at(c);
                let val = lambda_full([gg[0] + ww[0], gg[1] + ww[1]], rs[c], ws.at(c) + gk.at(c));
                if !(val < es[c]) {
                    if let Some(p) = layout.patch_of(c, tp) {
                        violated[p] = true;
                    }
                }
            }
        }
        if !violated.iter().any(|&v| v) {
            break built.into_iter().unzip::<_, _, Vec<_>, Vec<_>>();
        }
        rounds += 1;
        // A violation inside a silent patch comes from its neighbours' tails.
        let spill = violated
            .iter()
            .zip(&layout.patches)
            .any(|(&bad, p)| bad && p.alpha == 0.0);
        for (p, bad) in violated.iter().enumerate() {
            if *bad || (spill && layout.patches[p].alpha > 0.0) {
                backtracks[p] += 1;
                layout.patches[p].alpha = if backtracks[p] > opts.max_backtracks {
                    0.0
                } else {
                    0.5 * layout.patches[p].alpha
                };
            }
        }
        if rounds > 4 * opts.max_backtracks || layout.patches.iter().all(|p| p.alpha == 0.0) {
            let msg = "degenerate gap: backtracking exhausted every amplitude".to_string();
            log::warn!("{msg}");
            return zero(Some(msg));
        }
    };
    let w = SpaceTimeField::new(t_final, w)?;
    let flux = SpaceTimeField::new(t_final, flux)?;

    let mut energy_t = Vec::with_capacity(nodes);
    let mut gap_t = Vec::with_capacity(nodes);
    let (mut inside, mut outside): (f64, f64) = (0.0, 0.0);
    for k in 0..nodes {
        let (wk, rs, gs, es) = (
            w.slice(k),
            r.slice(k).values(),
            g.slice(k),
            e.slice(k).values(),
        );
        let mut en = 0.0;
        let mut gp = 0.0;
        for c in 0..grid.len() {
            let ww = wk.at(c);
            let m2 = ww[0] * ww[0] + ww[1] * ww[1];
            en += m2 / rs[c];
            let norm = m2.sqrt();
            if in_box[c] {
                inside = inside.max(norm);
                if support.contains_time(times[k]) {
                    let gg = gs.at(c);
                    let d = es[c] - 0.5 * (gg[0] * gg[0] + gg[1] * gg[1]) / rs[c];
                    gp += d * d;
                }
            } else {
                outside = outside.max(norm);
            }
        }
        energy_t.push(en / grid.len() as f64);
        gap_t.push(gp / grid.len() as f64);
    }
    let energy = trapezoid(&times, &energy_t);
    let gap_int = trapezoid(&times, &gap_t);
    let max_w = inside.max(outside);
    Ok(OscillatoryPair {
        w,
        flux,
        n,
        support,
        energy,
        energy_ratio: if gap_int > 0.0 {
            energy / gap_int
        } else {
            f64::NAN
        },
        leakage: if max_w > 0.0 { outside / max_w } else { 0.0 },
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementOptions {
    pub n: usize,
    pub oscillation: OscillatoryOptions,
    /// Attempts with successively halved fill before the step is rejected.
    pub retries: usize,
}

impl Default for ImprovementOptions {
    fn default() -> Self {
        Self {
            n: 4,
            oscillation: OscillatoryOptions::default(),
            retries: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImprovementReport {
    pub state: SubsolutionState,
    pub accepted: bool,
    pub gap_before: f64,
    pub gap_after: f64,
    /// Measured `∫∫|w|²/r / ∫∫(e − ½|g|²/r)²` of the perturbation that was tried last.
    pub energy_ratio: f64,
    pub message: Option<String>,
}

/// One convex-integration step: add an oscillatory pair to `(v, F)`, recompute `V` and `M`,
/// and re-certify with half the margin. Rejected steps return the input unchanged.
pub fn improvement_step(
    sub: &SubsolutionState,
    opts: &ImprovementOptions,
) -> Result<ImprovementReport> {
    let gap_before = energy_gap(sub);
    let unchanged = |message: String, ratio: f64| {
        log::info!("{message}");
        ImprovementReport {
            state: sub.clone(),
            accepted: false,
            gap_before,
            gap_after: gap_before,
            energy_ratio: ratio,
            message: Some(message),
        }
    };
    let scale = sub.lambda.abs().max(1.0);
    if gap_before >= -1e-14 * scale {
        return Ok(unchanged("energy gap already closed".into(), 0.0));
    }
    let cert = subsolution_certificate(sub)?;
    if !cert.pass {
        return Err(Error::Constraint(format!(
            "improvement needs a certified subsolution, min margin {:e}",
            cert.min_margin
        )));
    }
    let h = sub.h();
    let nodes = h.nodes();
    let g = SpaceTimeField::new(h.t_final(), (0..nodes).map(|k| sub.momentum(k)).collect())?;
    let wt = SpaceTimeField::new(
        h.t_final(),
        (0..nodes)
            .map(|k| sub.flux.slice(k) + sub.m.slice(k))
            .collect(),
    )?;
    let half = 0.5 * sub.delta;
    let e = sub.e.map(|s| s.map(|v| v - half));
    let support = SupportBox::whole_torus(0.0, h.t_final());
    let mut osc = opts.oscillation;
    let mut last_ratio = 0.0;
    for attempt in 0..=opts.retries {
        let pair = oscillatory_pair(&g, &wt, h, &e, opts.n, support, &osc)?;
        last_ratio = pair.energy_ratio;
        if pair.is_zero() {
            return Ok(unchanged(
                pair.warning.unwrap_or_else(|| "zero perturbation".into()),
                last_ratio,
            ));
        }
        // (−w, −G) is an equally valid pair; its linear cross term with g has the other sign.
        let mut best: Option<(SubsolutionState, f64)> = None;
        for sign in [1.0, -1.0] {
            let mut next = sub.clone();
            next.v = SpaceTimeField::new(
                h.t_final(),
                (0..nodes)
                    .map(|k| sub.v.slice(k) + &(pair.w.slice(k) * sign))
                    .collect(),
            )?;
            next.flux = SpaceTimeField::new(
                h.t_final(),
                (0..nodes)
                    .map(|k| {
                        let f = pair.flux.slice(k);
                        if sign > 0.0 {
                            sub.flux.slice(k) + f
                        } else {
                            sub.flux.slice(k) - f
                        }
                    })
                    .collect(),
            )?;
            next.delta = half;
            next.refresh()?;
            let pass = subsolution_certificate(&next)?.pass;
            let gap_after = energy_gap(&next);
            log::debug!(
                "improvement attempt {attempt}, sign {sign}: pass = {pass}, I {gap_before:e} -> {gap_after:e}"
            );
            if pass && gap_after > gap_before && best.as_ref().is_none_or(|b| gap_after > b.1) {
                best = Some((next, gap_after));
            }
        }
        if let Some((state, gap_after)) = best {
            return Ok(ImprovementReport {
                state,
                accepted: true,
                gap_before,
                gap_after,
                energy_ratio: last_ratio,
                message: None,
            });
        }
        osc.fill *= 0.5;
    }
    Ok(unchanged(
        "re-certification failed for every amplitude; step rejected".into(),
        last_ratio,
    ))
}

/// Wavenumber schedule for successive improvement steps, capped by grid resolution.
pub fn frequency_schedule(step: usize, base: usize, grid: TorusGrid) -> usize {
    let cap = (grid.nx().min(grid.ny()) / 8).max(1);
    (base + 2 * step).min(cap).max(1)
}

/// Traceless check helper used by the certificate's documentation tests.
pub fn lambda_max_of_full(q: [f64; 2], h: f64, t: SymTraceless2) -> Result<f64> {
    let half = 0.5 * (q[0] * q[0] + q[1] * q[1]) / h;
    Ok(half
        + lambda_max_traceless(SymTraceless2::new(
            (q[0] * q[0] - q[1] * q[1]) / (2.0 * h) - t.p,
            q[0] * q[1] / h - t.s,
        ))?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn g(n: usize) -> TorusGrid {
        TorusGrid::square(n).unwrap()
    }

    fn canonical(n: usize, nodes: usize) -> WorkbenchBase {
        let grid = g(n);
        let data = WorkbenchData::new(
            ScalarField::constant(grid, 1.0),
            VectorField::zeros(grid),
            ScalarField::constant(grid, 0.5),
            1.0,
        )
        .unwrap()
        .with_nodes(nodes)
        .unwrap();
        WorkbenchBase::new(data).unwrap()
    }

    #[test]
    fn zero_potential_gives_constant_height() {
        let grid = g(8);
        let h0 = ScalarField::from_fn(grid, |[x, _]| 1.0 + 0.2 * (2.0 * PI * x).sin());
        let d = design_height(&h0, &ScalarField::zeros(grid), 1.0, 9, 0.5).unwrap();
        for s in d.h.slices() {
            assert_eq!(s, &h0);
        }
    }

    #[test]
    fn single_mode_design_matches_closed_form() {
        let grid = g(16);
        let eps = 1e-3;
        let psi0 = ScalarField::from_fn(grid, |[x, _]| eps * (2.0 * PI * x).cos());
        let d = design_height(&ScalarField::constant(grid, 1.0), &psi0, 1.0, 17, 0.5).unwrap();
        assert_eq!(d.tau, 1.0);
        for (k, s) in d.h.slices().iter().enumerate() {
            let t = d.h.times()[k];
            let st = d.s(t);
            for (c, x) in grid.centers().enumerate() {
                let want = 1.0 + st * 4.0 * PI * PI * eps * (2.0 * PI * x[0]).cos();
                assert!((s.values()[c] - want).abs() < 1e-12);
            }
            assert!((integrate(s) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn design_respects_the_cap_and_fails_when_impossible() {
        let grid = g(16);
        let psi0 = ScalarField::from_fn(grid, |[x, _]| 0.05 * (2.0 * PI * x).cos());
        let h0 = ScalarField::constant(grid, 1.0);
        let d = design_height(&h0, &psi0, 1.0, 9, 0.5).unwrap();
        assert!(d.tau < 1.0);
        let peak = d.s(1.0) * d.g.max_abs();
        assert!(peak <= 0.5 + 1e-12);
        let psi0 = ScalarField::from_fn(grid, |[x, _]| 1e5 * (2.0 * PI * x).cos());
        let r = design_height(&h0, &psi0, 1.0, 9, 0.5);
        assert!(matches!(r, Err(Error::Design(_))), "{:?}", r.map(|d| d.tau));
    }

    #[test]
    fn stream_potential_of_constant_height_vanishes() {
        let grid = g(8);
        let h = SpaceTimeField::from_fn(1.0, 5, |_, _| ScalarField::constant(grid, 2.0)).unwrap();
        let psi = stream_potential(&h).unwrap();
        assert!(psi.slices().iter().all(|s| s.max_abs() == 0.0));
        let drifting =
            SpaceTimeField::from_fn(1.0, 5, |_, t| ScalarField::constant(grid, 1.0 + t)).unwrap();
        assert!(matches!(
            stream_potential(&drifting),
            Err(Error::Solvability(_))
        ));
    }

    #[test]
    fn kinetic_energy_examples() {
        let grid = g(4);
        let h = SpaceTimeField::from_fn(1.0, 3, |_, _| ScalarField::constant(grid, 1.0)).unwrap();
        let psi = h.map(|s| ScalarField::zeros(*s.grid()));
        let a = ScalarField::constant(grid, 0.5);
        let e = kinetic_energy_field(1.0, &a, &h, &psi).unwrap();
        assert!(e
            .slices()
            .iter()
            .all(|s| s.values().iter().all(|&v| v == 0.5)));
        let e = kinetic_energy_field(0.5, &a, &h, &psi).unwrap();
        assert!(e.slices().iter().all(|s| s.max_abs() == 0.0));
    }

    #[test]
    fn mean_flow_examples() {
        let grid = g(4);
        let nodes = 65;
        let h =
            SpaceTimeField::from_fn(1.0, nodes, |_, _| ScalarField::constant(grid, 1.0)).unwrap();
        let e = h.map(|s| s.map(|_| 0.5));
        let zero_v = h.map(|s| VectorField::zeros(*s.grid()));
        let v0 = [0.3, -1.2];
        let none = FrictionParams::none();
        let vv = solve_v_ode(&zero_v, &e, &h, &zero_v, &none, &Force::Zero, v0, 1e-9).unwrap();
        assert!(vv.iter().all(|x| *x == v0));
        let vv = solve_v_ode(
            &zero_v,
            &e,
            &h,
            &zero_v,
            &none,
            &Force::Constant([1.0, 0.0]),
            v0,
            1e-9,
        )
        .unwrap();
        for (k, x) in vv.iter().enumerate() {
            let t = h.times()[k];
            assert!((x[0] - (v0[0] + t)).abs() < 1e-13 && (x[1] - v0[1]).abs() < 1e-13);
        }
        let fr = FrictionParams::coulomb(1.0).unwrap();
        let vv = solve_v_ode(&zero_v, &e, &h, &zero_v, &fr, &Force::Zero, v0, 1e-9).unwrap();
        for (k, x) in vv.iter().enumerate() {
            let t = h.times()[k];
            assert!((x[0] - v0[0] * t.exp()).abs() < 1e-9 * t.exp());
            assert!(
                (x[1] - v0[1] * t.exp()).abs() < 1e-9 * t.exp(),
                "{} {}",
                x[1],
                v0[1] * t.exp()
            );
        }
        let low = h.map(|s| s.map(|_| 1e-12));
        assert!(matches!(
            solve_v_ode(&zero_v, &low, &h, &zero_v, &fr, &Force::Zero, v0, 1e-9),
            Err(Error::EnergyPositivity(_))
        ));
    }

    #[test]
    fn mean_flow_is_linear_without_friction() {
        let grid = g(8);
        let h = SpaceTimeField::from_fn(1.0, 9, |_, t| {
            ScalarField::from_fn(grid, |[x, _]| 1.0 + 0.1 * t * (2.0 * PI * x).sin())
        })
        .unwrap();
        let e = h.map(|s| s.map(|_| 1.0));
        let zv = h.map(|s| VectorField::zeros(*s.grid()));
        let none = FrictionParams::none();
        let f1 = Force::Function(std::sync::Arc::new(|t, [x, _]| [t * x, 1.0]));
        let f2 = Force::Constant([0.5, -0.25]);
        let f12 = Force::Function(std::sync::Arc::new(|t, [x, _]| {
            [2.0 * t * x + 1.5, 2.0 - 0.75]
        }));
        let a = solve_v_ode(&zv, &e, &h, &zv, &none, &f1, [1.0, 2.0], 0.0).unwrap();
        let b = solve_v_ode(&zv, &e, &h, &zv, &none, &f2, [0.5, 0.0], 0.0).unwrap();
        let c = solve_v_ode(&zv, &e, &h, &zv, &none, &f12, [3.5, 4.0], 0.0).unwrap();
        for k in 0..a.len() {
            for d in 0..2 {
                assert!((c[k][d] - (2.0 * a[k][d] + 3.0 * b[k][d])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn korn_correction_examples() {
        let grid = g(32);
        let h = SpaceTimeField::from_fn(1.0, 3, |_, _| ScalarField::constant(grid, 1.0)).unwrap();
        let e = h.map(|s| s.map(|_| 1.0));
        let zv = h.map(|s| VectorField::zeros(*s.grid()));
        let none = FrictionParams::none();
        let m = solve_m(
            &zv,
            &[[0.0; 2]; 3],
            &e,
            &h,
            &zv,
            &none,
            &Force::Constant([2.0, 1.0]),
        )
        .unwrap();
        assert!(m.slices().iter().all(|s| s.max_abs() < 1e-15));
        let f = Force::Function(std::sync::Arc::new(|_, [_, y]| [(2.0 * PI * y).sin(), 0.0]));
        let m = solve_m(&zv, &[[0.0; 2]; 3], &e, &h, &zv, &none, &f).unwrap();
        let ops = Spectral::for_grid(grid);
        let div = ops.div_tensor(m.slice(1));
        for (c, x) in grid.centers().enumerate() {
            assert!((div.at(c)[0] - (2.0 * PI * x[1]).sin()).abs() < 1e-9);
            assert!(div.at(c)[1].abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_lambda_and_certificate() {
        let base = canonical(8, 9);
        let l0 = find_lambda0(&base, 0.1).unwrap();
        assert!((l0 - 0.66).abs() < 0.66 * 2e-3, "{l0}");
        let l2 = find_lambda0(&base, 0.2).unwrap();
        assert!(l2 - l0 <= 1.1 * 0.1 + 1e-3);
        let sub = base.initial_subsolution(l0, 0.1).unwrap();
        let cert = subsolution_certificate(&sub).unwrap();
        assert!(cert.pass);
        for s in cert.margin.slices() {
            for &m in s.values() {
                assert!((m - (l0 - 0.5 - 0.1)).abs() < 1e-12);
            }
        }
        let fail = base.initial_subsolution(0.5, 0.1);
        match fail {
            Ok(s) => assert!(!subsolution_certificate(&s).unwrap().pass),
            Err(e) => assert!(matches!(e, Error::EnergyPositivity(_))),
        }
        let gap = energy_gap(&sub);
        assert!((gap + (l0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn energy_gap_examples() {
        let base = canonical(4, 5);
        let sub = base.initial_subsolution(1.0, 0.1).unwrap();
        assert!((energy_gap(&sub) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn full_eigenvalue_agrees_with_direct_formula() {
        let q = [0.7, -1.3];
        let t = SymTraceless2::new(0.2, -0.4);
        let a = lambda_full(q, 1.7, t);
        let b = lambda_full_direct(q, 1.7, t);
        let c = lambda_max_of_full(q, 1.7, t).unwrap();
        assert!((a - b).abs() < 1e-14 && (a - c).abs() < 1e-14);
        assert!(a >= 0.5 * (q[0] * q[0] + q[1] * q[1]) / 1.7);
    }

    #[test]
    fn degenerate_gap_yields_zero_pair() {
        let grid = g(16);
        let nodes = 9;
        let zv = SpaceTimeField::from_fn(1.0, nodes, |_, _| VectorField::zeros(grid)).unwrap();
        let zt = zv.map(|s| SymTracelessField::zeros(*s.grid()));
        let r = zv.map(|s| ScalarField::constant(*s.grid(), 1.0));
        let e = r.map(|s| s.map(|_| 1e-15));
        let pair = oscillatory_pair(
            &zv,
            &zt,
            &r,
            &e,
            2,
            SupportBox::whole_torus(0.0, 1.0),
            &Default::default(),
        )
        .unwrap();
        assert!(pair.is_zero() && pair.warning.is_some());
        let neg = r.map(|s| s.map(|_| -1.0));
        assert!(matches!(
            oscillatory_pair(
                &zv,
                &zt,
                &r,
                &neg,
                2,
                SupportBox::whole_torus(0.0, 1.0),
                &Default::default()
            ),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn canonical_improvement_increases_gap() {
        let base = canonical(32, 17);
        let l0 = find_lambda0(&base, 0.1).unwrap();
        let sub = base.initial_subsolution(l0, 0.1).unwrap();
        let rep = improvement_step(&sub, &ImprovementOptions::default()).unwrap();
        assert!(rep.accepted, "{:?}", rep.message);
        assert!(rep.gap_after > rep.gap_before);
        assert!(subsolution_certificate(&rep.state).unwrap().pass);
        assert_eq!(rep.state.delta, 0.05);
    }

    #[test]
    fn closed_gap_is_left_alone() {
        let base = canonical(8, 5);
        let mut sub = base.initial_subsolution(1.0, 0.1).unwrap();
        sub.e = sub.e.map(|s| s.map(|_| 0.0));
        let rep = improvement_step(&sub, &ImprovementOptions::default()).unwrap();
        assert!(!rep.accepted);
        assert_eq!(rep.gap_after, rep.gap_before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn oscillatory_pair_is_solenoidal_and_admissible(
            seed in any::<u64>(), n in 1usize..=3, g1 in -0.6f64..0.6, g2 in -0.6f64..0.6,
        ) {
            let grid = g(16);
            let gv = SpaceTimeField::from_fn(1.0, 5, |_, _| VectorField::constant(grid, [g1, g2])).unwrap();
            let wt = gv.map(|s| SymTracelessField::zeros(*s.grid()));
            let r = gv.map(|s| ScalarField::constant(*s.grid(), 1.0));
            let e = r.map(|s| s.map(|_| 1.0));
            let opts = OscillatoryOptions { seed, ..Default::default() };
            let pair = oscillatory_pair(&gv, &wt, &r, &e, n, SupportBox::whole_torus(0.0, 1.0), &opts)
                .unwrap();
            let ops = Spectral::for_grid(grid);
            for k in 0..5 {
                let w = pair.w.slice(k);
                prop_assert!(ops.div(w).max_abs() < 1e-9);
                let m = w.mean();
                prop_assert!(m[0].abs() < 1e-12 && m[1].abs() < 1e-12);
                let gk = pair.flux.slice(k);
                for c in 0..grid.len() {
                    let ww = w.at(c);
                    let val = lambda_full([g1 + ww[0], g2 + ww[1]], 1.0, gk.at(c));
                    prop_assert!(val < 1.0, "node {k} cell {c}: {val}");
                }
            }
        }

        #[test]
        fn certificate_margin_shifts_with_the_energy_level(extra in 0.0f64..2.0) {
            let base = canonical(8, 5);
            let lo = base.initial_subsolution(1.0, 0.1).unwrap();
            let hi = base.initial_subsolution(1.0 + extra, 0.1).unwrap();
            let (a, b) = (subsolution_certificate(&lo).unwrap(), subsolution_certificate(&hi).unwrap());
            prop_assert!(a.pass && b.pass);
            prop_assert!((b.min_margin - a.min_margin - extra).abs() < 1e-10);
            prop_assert!((energy_gap(&lo) - energy_gap(&hi) - extra).abs() < 1e-10);
        }
    }
}
