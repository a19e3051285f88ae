//! First-order finite-volume solver on the torus: unsplit Rusanov fluxes for the
//! conservative part, then the exact friction resolvent, then an explicit force update.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{EnergyLedger, LedgerRow};
use crate::error::{Error, Result};
use crate::friction::{friction_shrink_with_selection, FrictionParams};
use crate::grid::{integrate, ScalarField, TorusGrid, VectorField};

pub const H_FLOOR: f64 = 1e-10;
pub const DEFAULT_CFL: f64 = 0.25;
pub const DEFAULT_OUTPUT_COUNT: usize = 101;

/// Conservative variables `(h, q = h u)` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub h: ScalarField,
    pub q: VectorField,
}

impl State {
    pub fn new(h: ScalarField, q: VectorField) -> Result<Self> {
        h.grid().ensure_same(q.grid())?;
        if let Some(k) = h.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Positivity(format!(
                "height {} at cell {k}",
                h.values()[k]
            )));
        }
        Ok(Self { h, q })
    }

    pub fn from_velocity(h: ScalarField, u: &VectorField) -> Result<Self> {
        let q = u.scale_by(&h);
        Self::new(h, q)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.h.grid()
    }

    pub fn velocity(&self) -> VectorField {
        let h = self.h.values();
        self.q.map_indexed(|k, [a, b]| [a / h[k], b / h[k]])
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.h)
    }

    pub fn shifted(&self, di: usize, dj: usize) -> Self {
        Self {
            h: self.h.shifted(di, dj),
            q: self.q.shifted(di, dj),
        }
    }
}

/// Body force `f(t, x)`.
#[derive(Clone, Default)]
pub enum Force {
    #[default]
    Zero,
    Constant([f64; 2]),
    Field(VectorField),
    Function(Arc<dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync>),
}

impl fmt::Debug for Force {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Force::Zero => write!(f, "Zero"),
            Force::Constant(c) => write!(f, "Constant({c:?})"),
            Force::Field(v) => write!(f, "Field({}x{})", v.grid().nx(), v.grid().ny()),
            Force::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl Force {
    pub fn is_zero(&self) -> bool {
        match self {
            Force::Zero => true,
            Force::Constant(c) => c[0] == 0.0 && c[1] == 0.0,
            Force::Field(v) => v.max_norm() == 0.0,
            Force::Function(_) => false,
        }
    }

    pub fn sample(&self, grid: TorusGrid, t: f64) -> VectorField {
        match self {
            Force::Zero => VectorField::zeros(grid),
            Force::Constant(c) => VectorField::constant(grid, *c),
            Force::Field(v) => v.clone(),
            Force::Function(f) => VectorField::from_fn(grid, |x| f(t, x)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: TorusGrid,
    pub t_final: f64,
    /// Pressure coefficient in `p(h) = a h²`.
    pub a: f64,
    pub friction: FrictionParams,
    pub force: Force,
    pub h0: ScalarField,
    pub u0: VectorField,
    pub cfl: f64,
    /// Largest admissible step; `T/100` when unset.
    pub dt_max: Option<f64>,
    pub output_count: usize,
}

impl Scenario {
    pub fn new(t_final: f64, a: f64, h0: ScalarField, u0: VectorField) -> Result<Self> {
        let s = Self {
            grid: *h0.grid(),
            t_final,
            a,
            friction: FrictionParams::none(),
            force: Force::Zero,
            h0,
            u0,
            cfl: DEFAULT_CFL,
            dt_max: None,
            output_count: DEFAULT_OUTPUT_COUNT,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_friction(mut self, friction: FrictionParams) -> Self {
        self.friction = friction;
        self
    }

    pub fn with_force(mut self, force: Force) -> Self {
        self.force = force;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Result<Self> {
        self.cfl = cfl;
        self.validate()?;
        Ok(self)
    }

    pub fn with_output_count(mut self, n: usize) -> Result<Self> {
        self.output_count = n;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dt_max(mut self, dt_max: f64) -> Result<Self> {
        self.dt_max = Some(dt_max);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Validation {
                key: key.into(),
                message,
            })
        };
        self.grid.ensure_same(self.h0.grid())?;
        self.grid.ensure_same(self.u0.grid())?;
        if let Force::Field(f) = &self.force {
            self.grid.ensure_same(f.grid())?;
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(
                "physics.T",
                format!("final time must be nonnegative, got {}", self.t_final),
            );
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad("physics.a", format!("must be positive, got {}", self.a));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(
                "physics.cfl",
                format!("must lie in (0, 1), got {}", self.cfl),
            );
        }
        if self.output_count < 2 {
            return bad(
                "output.count",
                format!("need at least 2 output times, got {}", self.output_count),
            );
        }
        if let Some(d) = self.dt_max {
            if !(d > 0.0) {
                return bad("physics.dt_max", format!("must be positive, got {d}"));
            }
        }
        if let Some(k) = self.h0.values().iter().position(|&v| !(v > 0.0)) {
            return bad(
                "initial.h",
                format!(
                    "h_0 > 0 in Ω is required, found {} at cell {k}",
                    self.h0.values()[k]
                ),
            );
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<State> {
        State::from_velocity(self.h0.clone(), &self.u0)
    }

    pub fn dt_cap(&self) -> f64 {
        match self.dt_max {
            Some(d) => d,
            None if self.t_final > 0.0 => self.t_final / 100.0,
            None => 1.0,
        }
    }

    pub fn output_times(&self) -> Vec<f64> {
        if self.t_final == 0.0 {
            return vec![0.0];
        }
        let m = (self.output_count - 1) as f64;
        (0..self.output_count)
            .map(|i| self.t_final * i as f64 / m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[inline]
fn physical_flux(u: [f64; 3], a: f64, axis: Axis) -> ([f64; 3], f64) {
    let [h, qx, qy] = u;
    let c = (2.0 * a * h).sqrt();
    match axis {
        Axis::X => {
            let ux = qx / h;
            ([qx, qx * ux + a * h * h, qy * ux], ux.abs() + c)
        }
        Axis::Y => {
            let uy = qy / h;
            ([qy, qx * uy, qy * uy + a * h * h], uy.abs() + c)
        }
    }
}

/// Local Lax–Friedrichs flux between two cells `(h, q_x, q_y)`.
#[inline]
pub fn rusanov_flux(left: [f64; 3], right: [f64; 3], a: f64, axis: Axis) -> [f64; 3] {
    let (fl, sl) = physical_flux(left, a, axis);
    let (fr, sr) = physical_flux(right, a, axis);
    let s = sl.max(sr);
    [
        0.5 * (fl[0] + fr[0]) - 0.5 * s * (right[0] - left[0]),
        0.5 * (fl[1] + fr[1]) - 0.5 * s * (right[1] - left[1]),
        0.5 * (fl[2] + fr[2]) - 0.5 * s * (right[2] - left[2]),
    ]
}

/// `max |u_axis| + sqrt(2 a h)` over cells and both axes.
pub fn max_wave_speed(state: &State, a: f64) -> f64 {
    let (h, qx, qy) = (state.h.values(), state.q.x(), state.q.y());
    (0..h.len())
        .into_par_iter()
        .map(|k| {
            let c = (2.0 * a * h[k]).sqrt();
            (qx[k] / h[k]).abs().max((qy[k] / h[k]).abs()) + c
        })
        .reduce(|| 0.0, f64::max)
}

/// `cfl * min(dx, dy) / speed`, capped at `dt_max`.
pub fn cfl_dt(state: &State, a: f64, cfl: f64, dt_max: f64) -> f64 {
    let speed = max_wave_speed(state, a);
    let g = state.grid();
    let dx = g.dx().min(g.dy());
    if speed > 0.0 {
        (cfl * dx / speed).min(dt_max)
    } else {
        dt_max
    }
}

fn hyperbolic_update(state: &State, a: f64, dt: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let g = *state.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (h, qx, qy) = (state.h.values(), state.q.x(), state.q.y());
    let cell = |k: usize| [h[k], qx[k], qy[k]];
    // Face fluxes: fx[k] sits between cell k and its +x neighbour, gy[k] likewise in y.
    let mut fx = vec![[0.0; 3]; g.len()];
    let mut gy = vec![[0.0; 3]; g.len()];
    fx.par_chunks_mut(nx)
        .zip(gy.par_chunks_mut(nx))
        .enumerate()
        .for_each(|(j, (frow, grow))| {
            let jp = (j + 1) % ny;
            for i in 0..nx {
                let k = j * nx + i;
                let ip = (i + 1) % nx;
                frow[i] = rusanov_flux(cell(k), cell(j * nx + ip), a, Axis::X);
                grow[i] = rusanov_flux(cell(k), cell(jp * nx + i), a, Axis::Y);
            }
        });
    let (lx, ly) = (dt / g.dx(), dt / g.dy());
    let mut out_h = vec![0.0; g.len()];
    let mut out_x = vec![0.0; g.len()];
    let mut out_y = vec![0.0; g.len()];
    out_h
        .par_chunks_mut(nx)
        .zip(out_x.par_chunks_mut(nx))
        .zip(out_y.par_chunks_mut(nx))
        .enumerate()
        .for_each(|(j, ((rh, rx), ry))| {
            let jm = (j + ny - 1) % ny;
            for i in 0..nx {
                let k = j * nx + i;
                let im = (i + nx - 1) % nx;
                let (fe, fw) = (fx[k], fx[j * nx + im]);
                let (gn, gs) = (gy[k], gy[jm * nx + i]);
                rh[i] = h[k] - lx * (fe[0] - fw[0]) - ly * (gn[0] - gs[0]);
                rx[i] = qx[k] - lx * (fe[1] - fw[1]) - ly * (gn[1] - gs[1]);
                ry[i] = qy[k] - lx * (fe[2] - fw[2]) - ly * (gn[2] - gs[2]);
            }
        });
    (out_h, out_x, out_y)
}

/// Everything one time step produced, including what the energy ledger and the weak
/// residual need.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: State,
    /// Friction selection actually applied, per cell.
    pub selection: VectorField,
    /// `dt ∫ h γ B·u` with the post-friction velocity.
    pub dissipation: f64,
    /// `dt ∫ h f·u` with the post-force velocity.
    pub work: f64,
    pub clipped: bool,
}

pub fn step(state: &State, scenario: &Scenario, t: f64, dt: f64) -> Result<State> {
    Ok(step_detailed(state, scenario, t, dt)?.state)
}

pub fn step_detailed(state: &State, scenario: &Scenario, t: f64, dt: f64) -> Result<StepOutcome> {
    let g = *state.grid();
    let (mut h, qx, qy) = hyperbolic_update(state, scenario.a, dt);
    if h.iter().chain(&qx).chain(&qy).any(|v| !v.is_finite()) {
        return Err(Error::NumericalAbort(format!(
            "non-finite values after flux update at t = {t}"
        )));
    }
    let mut q = VectorField::from_raw(g, qx, qy);
    let mut clipped = false;
    if h.iter().any(|&v| v < H_FLOOR) {
        clipped = true;
        let before: f64 = h.iter().sum();
        let mut qxv = q.x().to_vec();
        let mut qyv = q.y().to_vec();
        for k in 0..h.len() {
            if h[k] < H_FLOOR {
                h[k] = H_FLOOR;
                qxv[k] = 0.0;
                qyv[k] = 0.0;
            }
        }
        let after: f64 = h.iter().sum();
        if before > 0.0 {
            let r = before / after;
            h.iter_mut().for_each(|v| *v *= r);
        }
        if let Some(k) = h.iter().position(|&v| !(v >= H_FLOOR * (1.0 - 1e-12))) {
            return Err(Error::NumericalAbort(format!(
                "height {} below floor at cell {k}, t = {t}, after clip-and-renormalize",
                h[k]
            )));
        }
        log::warn!("clip-and-renormalize applied at t = {t}");
        q = VectorField::from_raw(g, qxv, qyv);
    }
    let h = ScalarField::from_raw(g, h);

    let fr = friction_shrink_with_selection(&q, &h, &scenario.friction, dt)?;
    let hv = h.values();
    let selection = fr.selection;
    let mut q = fr.q;
    let dissipation = dt
        * mean_over(g.len(), |k| {
            let b = selection.at(k);
            let qq = q.at(k);
            scenario.friction.gamma.at(k) * (b[0] * qq[0] + b[1] * qq[1])
        });

    let mut work = 0.0;
    if !scenario.force.is_zero() {
        let f = scenario.force.sample(g, t);
        q = q.map_indexed(|k, [a, b]| {
            let fk = f.at(k);
            [a + dt * hv[k] * fk[0], b + dt * hv[k] * fk[1]]
        });
        work = dt
            * mean_over(g.len(), |k| {
                let fk = f.at(k);
                let qq = q.at(k);
                fk[0] * qq[0] + fk[1] * qq[1]
            });
    }
    Ok(StepOutcome {
        state: State { h, q },
        selection,
        dissipation,
        work,
        clipped,
    })
}

fn mean_over(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    (0..n).map(f).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions {
    /// Keep every intermediate state and friction selection (needed by the weak residual).
    pub record_steps: bool,
    /// Abort once this many steps were taken.
    pub max_steps: Option<usize>,
}

/// One completed step: the state at `t + dt` and the selection used to get there.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub state: State,
    pub selection: VectorField,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub ledger: EnergyLedger,
    pub initial: State,
    pub steps: Option<Vec<StepRecord>>,
    pub step_count: usize,
    pub a: f64,
    pub friction: FrictionParams,
    pub force: Force,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().unwrap()
    }
}

pub fn simulate(scenario: &Scenario) -> Result<Trajectory> {
    simulate_with(scenario, SimulateOptions::default())
}

pub fn simulate_with(scenario: &Scenario, opts: SimulateOptions) -> Result<Trajectory> {
    scenario.validate()?;
    let initial = scenario.initial_state()?;
    let a = scenario.a;
    let outputs = scenario.output_times();
    let mut ledger = EnergyLedger::new();
    let (mut diss, mut work) = (0.0, 0.0);
    ledger.push(LedgerRow::from_state(0.0, &initial, a, 0.0, 0.0, None));
    let total0 = ledger.rows()[0].total;
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    let mut records = opts.record_steps.then(Vec::new);
    let mut state = initial.clone();
    let mut t = 0.0;
    let mut steps = 0usize;
    let cap = scenario.dt_cap();
    for &target in outputs.iter().skip(1) {
        while t < target {
            let mut dt = cfl_dt(&state, a, scenario.cfl, cap);
            // Land exactly on the output time; also avoid a sliver step right before it.
            if t + dt >= target || target - (t + dt) < 1e-12 * scenario.t_final {
                dt = target - t;
            }
            let t0 = t;
            let out = step_detailed(&state, scenario, t, dt)?;
            diss += out.dissipation;
            work += out.work;
            steps += 1;
            t = if t + dt >= target { target } else { t + dt };
            if let Some(r) = records.as_mut() {
                r.push(StepRecord {
                    t: t0,
                    dt,
                    state: out.state.clone(),
                    selection: out.selection,
                });
            }
            state = out.state;
            if let Some(m) = opts.max_steps {
                if steps >= m && t < scenario.t_final {
                    return Err(Error::NumericalAbort(format!(
                        "step budget of {m} exhausted at t = {t}"
                    )));
                }
            }
        }
        ledger.push(LedgerRow::from_state(
            t,
            &state,
            a,
            diss,
            work,
            Some(total0),
        ));
        times.push(t);
        states.push(state.clone());
    }
    Ok(Trajectory {
        times,
        states,
        ledger,
        initial,
        steps: records,
        step_count: steps,
        a,
        friction: scenario.friction.clone(),
        force: scenario.force.clone(),
    })
}
