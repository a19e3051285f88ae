//! Scenario files: flat dotted keys in TOML, with closed-form or SHLAB1 initial data.
//!
//! ```toml
//! grid.nx = 64
//! grid.ny = 64
//! physics.T = 1.0
//! physics.a = 0.5
//! friction.gamma = 0.2
//! initial.h = "1 + 0.1*sin(2*pi*x1)"
//! initial.u1 = 0
//! initial.u2 = "cos(2*pi*x2)"
//! ```
//! Section headers (`[physics]`) are equivalent to dotted keys. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Expr, Var};
use crate::friction::{Coefficient, FrictionLaw, FrictionParams};
use crate::grid::{ScalarField, TorusGrid, VectorField};
use crate::snapshot::{read_snapshot, Snapshot};
use crate::solver::{Force, Scenario, DEFAULT_CFL, DEFAULT_OUTPUT_COUNT};
use crate::workbench::{
    OscillatoryOptions, WorkbenchData, DEFAULT_AMPLITUDE_CAP, DEFAULT_DELTA, DEFAULT_NODES,
};

const KNOWN_KEYS: &[&str] = &[
    "grid.nx",
    "grid.ny",
    "physics.T",
    "physics.a",
    "physics.cfl",
    "physics.dt_max",
    "friction.law",
    "friction.gamma",
    "friction.gamma2",
    "initial.h",
    "initial.u",
    "initial.u1",
    "initial.u2",
    "force.f1",
    "force.f2",
    "output.count",
    "output.snapshots",
    "workbench.nodes",
    "workbench.delta",
    "workbench.lambda",
    "workbench.steps",
    "workbench.frequency",
    "workbench.patches",
    "workbench.time_patches",
    "workbench.fill",
    "workbench.amplitude_cap",
    "diagnostics.eps",
    "diagnostics.coarse",
    "diagnostics.basis",
    "diagnostics.levels",
];

#[derive(Debug, Clone, PartialEq)]
pub struct WorkbenchConfig {
    pub nodes: usize,
    pub delta: f64,
    /// Fixed energy level; searched for when absent.
    pub lambda: Option<f64>,
    pub steps: usize,
    /// Wavenumber of the first improvement step.
    pub frequency: usize,
    pub patches: usize,
    pub time_patches: usize,
    pub fill: f64,
    pub amplitude_cap: f64,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        let osc = OscillatoryOptions::default();
        Self {
            nodes: DEFAULT_NODES,
            delta: DEFAULT_DELTA,
            lambda: None,
            steps: 1,
            frequency: 4,
            patches: osc.patches,
            time_patches: osc.time_patches,
            fill: osc.fill,
            amplitude_cap: DEFAULT_AMPLITUDE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub eps: f64,
    /// Coarse grid size for the weak-strong experiment.
    pub coarse: usize,
    pub basis: usize,
    /// Grid sizes for the convergence study, all dividing the scenario grid.
    pub levels: Vec<usize>,
}

/// A parsed and validated scenario file with every field sampled on its grid.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub source: String,
    pub grid: TorusGrid,
    pub t_final: f64,
    pub a: f64,
    pub cfl: f64,
    pub dt_max: Option<f64>,
    pub output_count: usize,
    pub snapshots: bool,
    pub friction: FrictionParams,
    pub h0: ScalarField,
    pub u0: VectorField,
    pub force: Force,
    /// Expressions behind `force`, kept for the summary.
    pub force_text: Option<[String; 2]>,
    pub workbench: WorkbenchConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::new(self.t_final, self.a, self.h0.clone(), self.u0.clone())?
            .with_friction(self.friction.clone())
            .with_force(self.force.clone())
            .with_cfl(self.cfl)?
            .with_output_count(self.output_count)?;
        if let Some(d) = self.dt_max {
            s = s.with_dt_max(d)?;
        }
        Ok(s)
    }

    pub fn workbench_data(&self) -> Result<WorkbenchData> {
        let mut d = WorkbenchData::new(
            self.h0.clone(),
            self.u0.clone(),
            ScalarField::constant(self.grid, self.a),
            self.t_final,
        )?
        .with_friction(self.friction.clone())
        .with_force(self.force.clone())
        .with_nodes(self.workbench.nodes)?;
        d.amplitude_cap = self.workbench.amplitude_cap;
        Ok(d)
    }

    pub fn oscillatory_options(&self, seed: u64) -> OscillatoryOptions {
        OscillatoryOptions {
            seed,
            patches: self.workbench.patches,
            time_patches: self.workbench.time_patches,
            fill: self.workbench.fill,
            ..OscillatoryOptions::default()
        }
    }
}

enum FieldSource {
    Expr(Expr),
    File(PathBuf),
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Reader {
    values: BTreeMap<String, toml::Value>,
    base: PathBuf,
}

fn parse_err(key: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        key: key.into(),
        message: message.into(),
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        message: message.into(),
    }
}

impl Reader {
    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(toml::Value::String(s)) => {
                let e = parse_expr(s).map_err(|m| parse_err(key, m))?;
                e.as_constant()
                    .map(Some)
                    .ok_or_else(|| parse_err(key, "expected a constant"))
            }
            Some(other) => Err(parse_err(
                key,
                format!("expected a number, found {}", other.type_str()),
            )),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
            Some(toml::Value::Integer(v)) => {
                Err(invalid(key, format!("must be nonnegative, got {v}")))
            }
            Some(other) => Err(parse_err(
                key,
                format!("expected an integer, found {}", other.type_str()),
            )),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(parse_err(
                key,
                format!("expected a boolean, found {}", other.type_str()),
            )),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(parse_err(
                key,
                format!("expected a string, found {}", other.type_str()),
            )),
        }
    }

    fn counts(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(n) if *n > 0 => Ok(*n as usize),
                    _ => Err(parse_err(key, "expected an array of positive integers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(parse_err(
                key,
                format!("expected an array, found {}", other.type_str()),
            )),
        }
    }

    fn field(&self, key: &str) -> Result<Option<FieldSource>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(FieldSource::Expr(Expr::Num(*v)))),
            Some(toml::Value::Integer(v)) => Ok(Some(FieldSource::Expr(Expr::Num(*v as f64)))),
            Some(toml::Value::String(s)) if s.trim_end().ends_with(".shlab") => {
                Ok(Some(FieldSource::File(self.base.join(s.trim()))))
            }
            Some(toml::Value::String(s)) => {
                let e = parse_expr(s).map_err(|m| parse_err(key, m))?;
                if e.uses(Var::T) {
                    return Err(parse_err(key, "initial data cannot depend on t"));
                }
                Ok(Some(FieldSource::Expr(e)))
            }
            Some(other) => Err(parse_err(
                key,
                format!(
                    "expected a number, expression or .shlab path, found {}",
                    other.type_str()
                ),
            )),
        }
    }

    fn scalar(&self, key: &str, grid: TorusGrid) -> Result<Option<ScalarField>> {
        Ok(match self.field(key)? {
            None => None,
            Some(FieldSource::Expr(e)) => {
                Some(ScalarField::from_fn(grid, |[x, y]| e.eval(x, y, 0.0)))
            }
            Some(FieldSource::File(p)) => match read_snapshot(&p)? {
                Snapshot::Scalar(f) => {
                    f.grid().ensure_same(&grid)?;
                    Some(f)
                }
                other => {
                    return Err(invalid(
                        key,
                        format!("{} holds a {} field", p.display(), other.kind()),
                    ))
                }
            },
        })
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario_str(&text, &base)
}

/// Parses scenario text; relative snapshot paths resolve against `base`.
pub fn parse_scenario_str(text: &str, base: &Path) -> Result<ScenarioConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| parse_err("<file>", e.message().to_string()))?;
    let mut values = BTreeMap::new();
    flatten("", &table, &mut values);
    if let Some(k) = values.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(parse_err(k, "unknown key"));
    }
    let r = Reader {
        values,
        base: base.to_path_buf(),
    };

    let nx = r.count("grid.nx")?.unwrap_or(64);
    let ny = r.count("grid.ny")?.unwrap_or(nx);
    let grid = TorusGrid::new(nx, ny).map_err(|e| invalid("grid.nx", e.to_string()))?;

    let t_final = r.float("physics.T")?.unwrap_or(1.0);
    let a = r.float("physics.a")?.unwrap_or(0.5);
    let cfl = r.float("physics.cfl")?.unwrap_or(DEFAULT_CFL);
    let dt_max = r.float("physics.dt_max")?;
    let output_count = r.count("output.count")?.unwrap_or(DEFAULT_OUTPUT_COUNT);
    let snapshots = r.boolean("output.snapshots")?.unwrap_or(true);

    let law = match r.string("friction.law")? {
        None => FrictionLaw::Coulomb,
        Some(s) => s
            .parse()
            .map_err(|_| invalid("friction.law", format!("unknown law '{s}'")))?,
    };
    let gamma = match r.scalar("friction.gamma", grid)? {
        None => Coefficient::Constant(0.0),
        Some(f) if f.min() == f.max() => Coefficient::Constant(f.min()),
        Some(f) => Coefficient::Field(f),
    };
    let gamma2 = r.float("friction.gamma2")?.unwrap_or(0.0);
    if gamma2 != 0.0 && law == FrictionLaw::Coulomb {
        return Err(invalid(
            "friction.gamma2",
            "only used with friction.law = \"extended\"",
        ));
    }
    let friction = FrictionParams::new(gamma, gamma2, law)?;

    let h0 = r
        .scalar("initial.h", grid)?
        .unwrap_or_else(|| ScalarField::constant(grid, 1.0));
    let u0 = match r.field("initial.u")? {
        Some(FieldSource::File(p)) => {
            if r.values.contains_key("initial.u1") || r.values.contains_key("initial.u2") {
                return Err(invalid(
                    "initial.u",
                    "give either initial.u or initial.u1/u2",
                ));
            }
            match read_snapshot(&p)? {
                Snapshot::Vector(v) => {
                    v.grid().ensure_same(&grid)?;
                    v
                }
                other => {
                    return Err(invalid(
                        "initial.u",
                        format!("{} holds a {} field", p.display(), other.kind()),
                    ))
                }
            }
        }
        Some(FieldSource::Expr(_)) => {
            return Err(parse_err(
                "initial.u",
                "expected a .shlab vector snapshot path",
            ))
        }
        None => {
            let u1 = r
                .scalar("initial.u1", grid)?
                .unwrap_or_else(|| ScalarField::zeros(grid));
            let u2 = r
                .scalar("initial.u2", grid)?
                .unwrap_or_else(|| ScalarField::zeros(grid));
            VectorField::from_components(u1, u2)?
        }
    };

    let (force, force_text) = parse_force(&r)?;

    let defaults = WorkbenchConfig::default();
    let workbench = WorkbenchConfig {
        nodes: r.count("workbench.nodes")?.unwrap_or(defaults.nodes),
        delta: r.float("workbench.delta")?.unwrap_or(defaults.delta),
        lambda: r.float("workbench.lambda")?,
        steps: r.count("workbench.steps")?.unwrap_or(defaults.steps),
        frequency: r
            .count("workbench.frequency")?
            .unwrap_or(defaults.frequency),
        patches: r.count("workbench.patches")?.unwrap_or(defaults.patches),
        time_patches: r
            .count("workbench.time_patches")?
            .unwrap_or(defaults.time_patches),
        fill: r.float("workbench.fill")?.unwrap_or(defaults.fill),
        amplitude_cap: r
            .float("workbench.amplitude_cap")?
            .unwrap_or(defaults.amplitude_cap),
    };
    let diagnostics = DiagnosticsConfig {
        eps: r.float("diagnostics.eps")?.unwrap_or(0.0),
        coarse: r.count("diagnostics.coarse")?.unwrap_or((nx / 4).max(4)),
        basis: r.count("diagnostics.basis")?.unwrap_or(3),
        levels: r
            .counts("diagnostics.levels")?
            .unwrap_or_else(|| vec![(nx / 8).max(4), (nx / 4).max(4)]),
    };

    let cfg = ScenarioConfig {
        source: text.to_string(),
        grid,
        t_final,
        a,
        cfl,
        dt_max,
        output_count,
        snapshots,
        friction,
        h0,
        u0,
        force,
        force_text,
        workbench,
        diagnostics,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_force(r: &Reader) -> Result<(Force, Option<[String; 2]>)> {
    let parse = |key: &str| -> Result<(Expr, String)> {
        match r.values.get(key) {
            None => Ok((Expr::Num(0.0), "0".into())),
            Some(toml::Value::Float(v)) => Ok((Expr::Num(*v), v.to_string())),
            Some(toml::Value::Integer(v)) => Ok((Expr::Num(*v as f64), v.to_string())),
            Some(toml::Value::String(s)) => {
                Ok((parse_expr(s).map_err(|m| parse_err(key, m))?, s.clone()))
            }
            Some(other) => Err(parse_err(
                key,
                format!(
                    "expected a number or expression, found {}",
                    other.type_str()
                ),
            )),
        }
    };
    if !r.values.contains_key("force.f1") && !r.values.contains_key("force.f2") {
        return Ok((Force::Zero, None));
    }
    let (e1, s1) = parse("force.f1")?;
    let (e2, s2) = parse("force.f2")?;
    let force = match (e1.as_constant(), e2.as_constant()) {
        (Some(a), Some(b)) if a == 0.0 && b == 0.0 => Force::Zero,
        (Some(a), Some(b)) => Force::Constant([a, b]),
        _ => Force::Function(Arc::new(move |t, [x, y]| {
            [e1.eval(x, y, t), e2.eval(x, y, t)]
        })),
    };
    Ok((force, Some([s1, s2])))
}

fn validate(cfg: &ScenarioConfig) -> Result<()> {
    if let Some(k) = cfg.h0.values().iter().position(|v| !(*v > 0.0)) {
        let (i, j) = (k % cfg.grid.nx(), k / cfg.grid.nx());
        let x = cfg.grid.center(i, j);
        return Err(invalid(
            "initial.h",
            format!(
                "h_0 > 0 in Ω is required, found {} at ({:.4}, {:.4})",
                cfg.h0.values()[k],
                x[0],
                x[1]
            ),
        ));
    }
    if cfg.u0.x().iter().chain(cfg.u0.y()).any(|v| !v.is_finite()) {
        return Err(invalid("initial.u", "velocity must be finite"));
    }
    // The solver performs its own range checks (T, a, cfl, dt_max, output.count).
    cfg.scenario()?;
    let w = &cfg.workbench;
    if !(w.delta > 0.0) {
        return Err(invalid(
            "workbench.delta",
            format!("must be positive, got {}", w.delta),
        ));
    }
    if let Some(l) = w.lambda {
        if !(l > 0.0) {
            return Err(invalid(
                "workbench.lambda",
                format!("must be positive, got {l}"),
            ));
        }
    }
    if w.nodes < 3 {
        return Err(invalid("workbench.nodes", "need at least 3 time nodes"));
    }
    if w.frequency == 0 || w.patches == 0 || w.time_patches == 0 {
        return Err(invalid(
            "workbench.frequency",
            "frequency and patch counts must be positive",
        ));
    }
    if !(w.fill > 0.0 && w.fill < 1.0) {
        return Err(invalid(
            "workbench.fill",
            format!("must lie in (0, 1), got {}", w.fill),
        ));
    }
    if !(w.amplitude_cap > 0.0 && w.amplitude_cap < 1.0) {
        return Err(invalid(
            "workbench.amplitude_cap",
            format!("must lie in (0, 1), got {}", w.amplitude_cap),
        ));
    }
    let d = &cfg.diagnostics;
    if !(d.eps >= 0.0 && d.eps.is_finite()) {
        return Err(invalid(
            "diagnostics.eps",
            format!("must be nonnegative, got {}", d.eps),
        ));
    }
    let divides = |n: usize| {
        n >= 4
            && n.is_multiple_of(2)
            && cfg.grid.nx().is_multiple_of(n)
            && cfg.grid.ny().is_multiple_of(n)
    };
    if !divides(d.coarse) {
        return Err(invalid(
            "diagnostics.coarse",
            format!(
                "{} must be an even divisor (>= 4) of the grid size",
                d.coarse
            ),
        ));
    }
    if let Some(&bad) = d
        .levels
        .iter()
        .find(|&&n| !divides(n) || n >= cfg.grid.nx())
    {
        return Err(invalid(
            "diagnostics.levels",
            format!("{bad} must be an even divisor (>= 4) strictly below the grid size"),
        ));
    }
    if d.basis == 0 {
        return Err(invalid("diagnostics.basis", "must be positive"));
    }
    Ok(())
}
