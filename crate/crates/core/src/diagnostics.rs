//! Energy bookkeeping, relative energy, weak-strong experiments and the weak-form residual.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::friction::Coefficient;
use crate::grid::{integrate, ScalarField, TorusGrid, VectorField};
use crate::solver::{simulate, simulate_with, Force, Scenario, SimulateOptions, State, Trajectory};
use crate::workbench::SubsolutionState;

pub const LEDGER_HEADER: &str =
    "t,mass,kinetic,potential,total,dissipation_cum,work_cum,e2_residual";

pub fn kinetic_energy(state: &State) -> f64 {
    let (h, qx, qy) = (state.h.values(), state.q.x(), state.q.y());
    (0..h.len())
        .map(|k| 0.5 * (qx[k] * qx[k] + qy[k] * qy[k]) / h[k])
        .sum::<f64>()
        / h.len() as f64
}

pub fn potential_energy(state: &State, a: f64) -> f64 {
    let h = state.h.values();
    a * h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64
}

/// `∫ ½|q|²/h + a h²`.
pub fn total_energy(state: &State, a: f64) -> f64 {
    kinetic_energy(state) + potential_energy(state, a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub mass: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub dissipation_cum: f64,
    pub work_cum: f64,
    pub e2_residual: f64,
}

impl LedgerRow {
    /// Row for `state`; `total0 = None` makes this the reference row.
    pub fn from_state(
        t: f64,
        state: &State,
        a: f64,
        dissipation_cum: f64,
        work_cum: f64,
        total0: Option<f64>,
    ) -> Self {
        let kinetic = kinetic_energy(state);
        let potential = potential_energy(state, a);
        let total = kinetic + potential;
        let total0 = total0.unwrap_or(total);
        Self {
            t,
            mass: state.mass(),
            kinetic,
            potential,
            total,
            dissipation_cum,
            work_cum,
            e2_residual: total + dissipation_cum - total0 - work_cum,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LEDGER_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t,
                r.mass,
                r.kinetic,
                r.potential,
                r.total,
                r.dissipation_cum,
                r.work_cum,
                r.e2_residual
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header.trim() != LEDGER_HEADER {
            return Err(Error::Format(format!(
                "unexpected ledger header `{header}`"
            )));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("ledger row {}: {e}", n + 1)))?;
            if v.len() != 8 {
                return Err(Error::Format(format!(
                    "ledger row {} has {} columns, expected 8",
                    n + 1,
                    v.len()
                )));
            }
            rows.push(LedgerRow {
                t: v[0],
                mass: v[1],
                kinetic: v[2],
                potential: v[3],
                total: v[4],
                dissipation_cum: v[5],
                work_cum: v[6],
                e2_residual: v[7],
            });
        }
        if rows.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Format("ledger rows are not time-ordered".into()));
        }
        Ok(Self { rows })
    }

    /// `1e-8 total(0) + 10 dt rate_scale`.
    pub fn default_tolerance(&self, dt: f64, rate_scale: f64) -> f64 {
        let total0 = self.rows.first().map_or(0.0, |r| r.total.abs());
        1e-8 * total0 + 10.0 * dt * rate_scale
    }
}

/// Worst-case (largest) energy-inequality residual; nonpositive for dissipative runs.
pub fn energy_inequality_residual(ledger: &EnergyLedger) -> f64 {
    ledger
        .rows()
        .iter()
        .map(|r| r.e2_residual)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `∫ ½ h|u − U|² + a (h − H)²`.
pub fn relative_energy(state: &State, reference: &State, a: f64) -> Result<f64> {
    state.grid().ensure_same(reference.grid())?;
    let (h, qx, qy) = (state.h.values(), state.q.x(), state.q.y());
    let (hh, rx, ry) = (reference.h.values(), reference.q.x(), reference.q.y());
    if h.iter().chain(hh).any(|&v| !(v > 0.0)) {
        return Err(Error::Positivity("relative energy needs h, H > 0".into()));
    }
    let n = h.len();
    let sum: f64 = (0..n)
        .map(|k| {
            let du = [qx[k] / h[k] - rx[k] / hh[k], qy[k] / h[k] - ry[k] / hh[k]];
            let dh = h[k] - hh[k];
            0.5 * h[k] * (du[0] * du[0] + du[1] * du[1]) + a * dh * dh
        })
        .sum();
    Ok(sum / n as f64)
}

/// `E_tot(t₁) − ∫ ½ h₀|u₀|² + a h₀²`, with the kinetic part of the constructed solution
/// equal to `E` at the first interior time node.
pub fn energy_jump(
    sub: &SubsolutionState,
    h0: &ScalarField,
    u0: &VectorField,
    a: &ScalarField,
) -> Result<f64> {
    h0.grid().ensure_same(u0.grid())?;
    h0.grid().ensure_same(a.grid())?;
    let h1 = sub.h().slice(1);
    let e1 = sub.e.slice(1);
    let av = a.values();
    let pressure = a.zip_map(h1, |a, h| a * h * h);
    let later = integrate(&(e1 + &pressure));
    let n = h0.grid().len();
    let initial = (0..n)
        .map(|k| {
            let h = h0.values()[k];
            let [ux, uy] = u0.at(k);
            0.5 * h * (ux * ux + uy * uy) + av[k] * h * h
        })
        .sum::<f64>()
        / n as f64;
    Ok(later - initial)
}

/// Cell-average restriction from a grid refined by an integer factor in both directions.
pub fn restrict_scalar(f: &ScalarField, coarse: TorusGrid) -> Result<ScalarField> {
    let fine = *f.grid();
    let r = refinement_ratio(fine, coarse)?;
    let inv = 1.0 / (r * r) as f64;
    let v = f.values();
    let vals = (0..coarse.ny())
        .flat_map(|j| (0..coarse.nx()).map(move |i| (i, j)))
        .map(|(i, j)| {
            let mut s = 0.0;
            for b in 0..r {
                for a in 0..r {
                    s += v[fine.index(i * r + a, j * r + b)];
                }
            }
            s * inv
        })
        .collect();
    ScalarField::new(coarse, vals)
}

pub fn restrict_vector(f: &VectorField, coarse: TorusGrid) -> Result<VectorField> {
    VectorField::from_components(
        restrict_scalar(&f.component(0), coarse)?,
        restrict_scalar(&f.component(1), coarse)?,
    )
}

/// Conservative restriction of `(h, q)`.
pub fn restrict_state(s: &State, coarse: TorusGrid) -> Result<State> {
    State::new(
        restrict_scalar(&s.h, coarse)?,
        restrict_vector(&s.q, coarse)?,
    )
}

fn refinement_ratio(fine: TorusGrid, coarse: TorusGrid) -> Result<usize> {
    let r = fine.nx() / coarse.nx();
    if r == 0 || fine.nx() != r * coarse.nx() || fine.ny() != r * coarse.ny() {
        return Err(Error::GridMismatch(format!(
            "{}x{} is not a uniform refinement of {}x{}",
            fine.nx(),
            fine.ny(),
            coarse.nx(),
            coarse.ny()
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeEnergyReport {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Fitted Gronwall rate in `ℰ(t) ≈ ℰ(0) e^{ct}`; NaN when too few usable points.
    pub rate: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub fit_residual: f64,
    /// Time at which the reference was judged to have lost regularity.
    pub truncated_at: Option<f64>,
    pub warnings: Vec<String>,
}

impl RelativeEnergyReport {
    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,E_rel,fitted_c\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            let _ = writeln!(out, "{t},{v},{}", self.rate);
        }
        out
    }
}

/// Perturbation profile added to `u₀` (scaled by ε) in the weak-strong experiment.
pub fn perturbation_profile([x, y]: [f64; 2]) -> [f64; 2] {
    [(2.0 * PI * y).sin(), (2.0 * PI * x).cos()]
}

fn max_gradient(h: &ScalarField) -> f64 {
    let g = h.grid();
    let v = h.values();
    let mut m: f64 = 0.0;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let k = g.index(i, j);
            let ex = (v[g.index((i + 1) % g.nx(), j)] - v[k]).abs() / g.dx();
            let ey = (v[g.index(i, (j + 1) % g.ny())] - v[k]).abs() / g.dy();
            m = m.max(ex).max(ey);
        }
    }
    m
}

fn restrict_scenario(fine: &Scenario, coarse: TorusGrid) -> Result<Scenario> {
    let mut sc = fine.clone();
    sc.grid = coarse;
    sc.h0 = restrict_scalar(&fine.h0, coarse)?;
    // Restrict momentum, then recover the velocity, so the coarse data are cell averages.
    let q0 = restrict_vector(&fine.u0.scale_by(&fine.h0), coarse)?;
    let h = sc.h0.values().to_vec();
    sc.u0 = q0.map_indexed(|k, [a, b]| [a / h[k], b / h[k]]);
    if let Coefficient::Field(g) = &fine.friction.gamma {
        sc.friction.gamma = Coefficient::Field(restrict_scalar(g, coarse)?);
    }
    if let Force::Field(f) = &fine.force {
        sc.force = Force::Field(restrict_vector(f, coarse)?);
    }
    sc.validate()?;
    Ok(sc)
}

/// Least-squares fit of `log ℰ = α + c t`; returns `(c, rms residual)`.
pub fn gronwall_fit(times: &[f64], values: &[f64], floor: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 10.0 * floor)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if stt == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let c = sty / stt;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - my - c * (p.0 - mt)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (c, rms)
}

/// Runs `scenario` (sampled on the fine grid) as the strong reference and its cell-averaged
/// restriction, with `u₀` perturbed by `eps · perturbation_profile`, as the weak candidate.
pub fn weak_strong_experiment(
    scenario: &Scenario,
    eps: f64,
    coarse_grid: TorusGrid,
) -> Result<RelativeEnergyReport> {
    let fine_grid = scenario.grid;
    let ratio = refinement_ratio(fine_grid, coarse_grid)?;
    if ratio != 1 && ratio < 4 {
        return Err(Error::InvalidValue(format!(
            "the reference grid must be identical to or at least 4x finer than the candidate, got ratio {ratio}"
        )));
    }
    if !eps.is_finite() {
        return Err(Error::InvalidValue(format!(
            "perturbation size must be finite, got {eps}"
        )));
    }
    let mut candidate = restrict_scenario(scenario, coarse_grid)?;
    if eps != 0.0 {
        let pert = VectorField::from_fn(coarse_grid, perturbation_profile);
        candidate.u0 = &candidate.u0 + &(&pert * eps);
    }
    let reference = simulate(scenario)?;
    let weak = simulate(&candidate)?;

    let g0 = max_gradient(&reference.states[0].h).max(1e-3 * reference.states[0].h.mean());
    let mut warnings = Vec::new();
    let mut truncated_at = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, t) in reference.times.iter().enumerate() {
        let href = &reference.states[k].h;
        if max_gradient(href) > 10.0 * g0 {
            truncated_at = Some(*t);
            let msg =
                format!("reference steepened into a shock near t = {t}; experiment truncated");
            log::warn!("{msg}");
            warnings.push(msg);
            break;
        }
        let r = restrict_state(&reference.states[k], coarse_grid)?;
        times.push(*t);
        values.push(relative_energy(&weak.states[k], &r, scenario.a)?);
    }
    let scale = total_energy(&reference.states[0], scenario.a);
    let (rate, fit_residual) = gronwall_fit(&times, &values, 1e-14 * scale);
    Ok(RelativeEnergyReport {
        times,
        values,
        rate,
        fit_residual,
        truncated_at,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    /// Largest residual of the mass identity over the test basis.
    pub mass: f64,
    /// Largest residual of the momentum identity over the test basis.
    pub momentum: f64,
    /// Residual of the mass identity for the spatially constant test function.
    pub mass_mode: f64,
    pub test_functions: usize,
}

/// `θ(t) = (1 − t/T)² (1 + 2t/T)`: equal to 1 with zero slope at 0, vanishing to first order at T.
pub fn time_bump(t: f64, t_final: f64) -> f64 {
    let s = (t / t_final).clamp(0.0, 1.0);
    (1.0 - s) * (1.0 - s) * (1.0 + 2.0 * s)
}

#[derive(Clone, Copy)]
struct Mode {
    k: [f64; 2],
    sine: bool,
}

impl Mode {
    #[inline]
    fn eval(&self, [x, y]: [f64; 2]) -> (f64, [f64; 2]) {
        let ph = 2.0 * PI * (self.k[0] * x + self.k[1] * y);
        let (s, c) = ph.sin_cos();
        let w = [2.0 * PI * self.k[0], 2.0 * PI * self.k[1]];
        if self.sine {
            (s, [w[0] * c, w[1] * c])
        } else {
            (c, [-w[0] * s, -w[1] * s])
        }
    }
}

fn basis(max_mode: usize) -> Vec<Mode> {
    let m = max_mode as i64;
    let mut out = vec![Mode {
        k: [0.0, 0.0],
        sine: false,
    }];
    for k2 in 0..=m {
        for k1 in -m..=m {
            if k2 == 0 && k1 <= 0 {
                continue;
            }
            for sine in [false, true] {
                out.push(Mode {
                    k: [k1 as f64, k2 as f64],
                    sine,
                });
            }
        }
    }
    out
}

/// Spatial integrals of one state against every basis mode.
struct Pairings {
    h: Vec<f64>,
    q_grad: Vec<f64>,
    q: Vec<[f64; 2]>,
    /// `∫ q⊗q/h : ∇(c e_j) + a h² ∂_j c` for `j = 1, 2`.
    flux: Vec<[f64; 2]>,
}

fn pairings(state: &State, a: f64, modes: &[Mode], table: &[Vec<(f64, [f64; 2])>]) -> Pairings {
    let n = state.h.values().len();
    let (h, qx, qy) = (state.h.values(), state.q.x(), state.q.y());
    let inv = 1.0 / n as f64;
    let mut out = Pairings {
        h: vec![0.0; modes.len()],
        q_grad: vec![0.0; modes.len()],
        q: vec![[0.0; 2]; modes.len()],
        flux: vec![[0.0; 2]; modes.len()],
    };
    for (m, tab) in table.iter().enumerate() {
        let (mut sh, mut sg, mut s1, mut s2, mut f1, mut f2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            let (c, g) = tab[k];
            let (hk, a1, a2) = (h[k], qx[k], qy[k]);
            sh += hk * c;
            sg += a1 * g[0] + a2 * g[1];
            s1 += a1 * c;
            s2 += a2 * c;
            let p = a * hk * hk;
            // (q⊗q/h) : ∇(c e_1) = (q_1 q · ∇c)/h, likewise for e_2.
            let qg = (a1 * g[0] + a2 * g[1]) / hk;
            f1 += a1 * qg + p * g[0];
            f2 += a2 * qg + p * g[1];
        }
        out.h[m] = sh * inv;
        out.q_grad[m] = sg * inv;
        out.q[m] = [s1 * inv, s2 * inv];
        out.flux[m] = [f1 * inv, f2 * inv];
    }
    out
}

fn source_pairings(
    h: &ScalarField,
    selection: &VectorField,
    gamma: &Coefficient,
    force: &VectorField,
    table: &[Vec<(f64, [f64; 2])>],
) -> Vec<[f64; 2]> {
    let n = h.values().len();
    let inv = 1.0 / n as f64;
    table
        .iter()
        .map(|tab| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in 0..n {
                let c = tab[k].0;
                let hk = h.values()[k];
                let gk = gamma.at(k);
                let b = selection.at(k);
                let f = force.at(k);
                s1 += hk * (gk * b[0] - f[0]) * c;
                s2 += hk * (gk * b[1] - f[1]) * c;
            }
            [s1 * inv, s2 * inv]
        })
        .collect()
}

/// Residuals of both integral identities over a basis of trigonometric modes with
/// `|k_i| ≤ basis_size` times the cubic time bump, using the friction selections the
/// solver recorded.
pub fn weak_residual(trajectory: &Trajectory, basis_size: usize) -> Result<WeakResidual> {
    let steps = trajectory.steps.as_ref().ok_or_else(|| {
        Error::Data("weak residual needs a trajectory recorded with every step".into())
    })?;
    let grid = *trajectory.initial.grid();
    let t_final = *trajectory.times.last().unwrap();
    if steps.is_empty() || t_final <= 0.0 {
        return Err(Error::Data("trajectory has no steps".into()));
    }
    let modes = basis(basis_size);
    let table: Vec<Vec<(f64, [f64; 2])>> = modes
        .iter()
        .map(|m| grid.centers().map(|x| m.eval(x)).collect())
        .collect();
    let a = trajectory.a;
    let mut states: Vec<&State> = vec![&trajectory.initial];
    states.extend(steps.iter().map(|r| &r.state));
    let mut node_t = vec![0.0];
    node_t.extend(steps.iter().map(|r| r.t + r.dt));
    let pair: Vec<Pairings> = states
        .par_iter()
        .map(|s| pairings(s, a, &modes, &table))
        .collect();
    let sources: Vec<Vec<[f64; 2]>> = steps
        .par_iter()
        .map(|r| {
            let f = trajectory.force.sample(grid, r.t);
            source_pairings(
                &r.state.h,
                &r.selection,
                &trajectory.friction.gamma,
                &f,
                &table,
            )
        })
        .collect();
    let theta: Vec<f64> = node_t.iter().map(|&t| time_bump(t, t_final)).collect();

    let mut mass = 0.0f64;
    let mut momentum = 0.0f64;
    let mut mass_mode = 0.0;
    for m in 0..modes.len() {
        // ∫∫ h ∂tφ + q·∇φ  +  ∫ h₀ φ(0)
        let mut r5 = theta[0] * pair[0].h[m];
        let mut r6 = [theta[0] * pair[0].q[m][0], theta[0] * pair[0].q[m][1]];
        for n in 0..steps.len() {
            let dt = steps[n].dt;
            let dth = theta[n + 1] - theta[n];
            let (p0, p1) = (&pair[n], &pair[n + 1]);
            r5 += 0.5 * (p0.h[m] + p1.h[m]) * dth;
            r5 += 0.5 * dt * (theta[n] * p0.q_grad[m] + theta[n + 1] * p1.q_grad[m]);
            for j in 0..2 {
                r6[j] += 0.5 * (p0.q[m][j] + p1.q[m][j]) * dth;
                r6[j] += 0.5 * dt * (theta[n] * p0.flux[m][j] + theta[n + 1] * p1.flux[m][j]);
                r6[j] -= dt * theta[n + 1] * sources[n][m][j];
            }
        }
        if m == 0 {
            mass_mode = r5.abs();
        }
        mass = mass.max(r5.abs());
        momentum = momentum.max(r6[0].abs()).max(r6[1].abs());
    }
    Ok(WeakResidual {
        mass,
        momentum,
        mass_mode,
        test_functions: modes.len(),
    })
}

/// Convenience wrapper: simulate with step recording and evaluate the weak residual.
pub fn simulate_weak_residual(scenario: &Scenario, basis_size: usize) -> Result<WeakResidual> {
    let traj = simulate_with(
        scenario,
        SimulateOptions {
            record_steps: true,
            max_steps: None,
        },
    )?;
    weak_residual(&traj, basis_size)
}

/// Errors of coarse runs against the scenario's own grid used as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    /// L¹ distance of `(h, q)` at `T` from the restricted reference.
    pub errors: Vec<f64>,
    /// Observed orders between consecutive sizes; one fewer than `sizes`.
    pub orders: Vec<f64>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,l1_error,observed_order\n");
        for (i, (n, e)) in self.sizes.iter().zip(&self.errors).enumerate() {
            let p = if i == 0 { f64::NAN } else { self.orders[i - 1] };
            let _ = writeln!(out, "{n},{e},{p}");
        }
        out
    }
}

fn l1_distance(a: &State, b: &State) -> f64 {
    let n = a.h.values().len() as f64;
    let pairs =
        a.h.values()
            .iter()
            .zip(b.h.values())
            .chain(a.q.x().iter().zip(b.q.x()))
            .chain(a.q.y().iter().zip(b.q.y()));
    pairs.map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

/// Runs `scenario` on its grid as reference and on each square grid in `sizes` (with
/// cell-averaged initial data), then reports L¹ errors at `T` and observed orders.
pub fn convergence_study(scenario: &Scenario, sizes: &[usize]) -> Result<ConvergenceReport> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::InvalidValue(
            "convergence study needs at least one grid".into(),
        ));
    }
    let reference = simulate(scenario)?;
    let mut errors = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        let coarse = TorusGrid::new(n, n * scenario.grid.ny() / scenario.grid.nx())?;
        refinement_ratio(scenario.grid, coarse)?;
        let run = simulate(&restrict_scenario(scenario, coarse)?)?;
        let r = restrict_state(reference.final_state(), coarse)?;
        errors.push(l1_distance(run.final_state(), &r));
    }
    let orders = errors
        .windows(2)
        .zip(sizes.windows(2))
        .map(|(e, n)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
        .collect();
    Ok(ConvergenceReport {
        sizes,
        errors,
        orders,
    })
}
