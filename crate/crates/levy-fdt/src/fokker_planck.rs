//! Time-dependent and stationary solves of the nonlocal Fokker-Planck
//! equation `dp/dt = A* p (+ F(t) L* p)`, and the conjugate-variable elliptic
//! solve `A* v = L* p_ss` with mass-zero gauge.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::model::{Perturbation, SdeModel};
use crate::nonlocal::{
    apply_adjoint, spectral_derivative, FieldKind, Grid1D, GridField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpMethod {
    /// exact spectral step for the constant-coefficient nonlocal part,
    /// Heun step for the drift-divergence part (Strang splitting)
    ExponentialSplitting,
    /// classical RK4 on the full right-hand side; needed when sigma varies
    ExplicitRk,
}

#[derive(Debug, Clone, Copy)]
pub struct FpSolveSpec {
    pub dt: f64,
    pub t_end: f64,
    pub method: FpMethod,
    /// stationarity tolerance on ||A* p||_1 / ||p||_1
    pub stop_tol: f64,
}

impl Default for FpSolveSpec {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 60.0,
            method: FpMethod::ExponentialSplitting,
            stop_tol: 1e-8,
        }
    }
}

/// One recorded state of an evolution.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub field: GridField,
    /// pre-clamp minimum at this snapshot (densities only; 0 for signed runs)
    pub clamp_min: f64,
}

/// Mass drift per unit time above this aborts the evolution.
const MASS_DRIFT_LIMIT: f64 = 1e-6;

struct Stepper<'a> {
    model: &'a SdeModel,
    grid: Grid1D,
    sigma_alpha: Vec<f64>,
    drift: Vec<f64>,
    method: FpMethod,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a SdeModel, grid: Grid1D, method: FpMethod) -> Result<Self, Error> {
        if model.dim() != 1 {
            return Err(Error::Unsupported("PDE solvers are 1D".into()));
        }
        let method = if !model.constant_sigma && method == FpMethod::ExponentialSplitting {
            // the nonlocal part is not diagonal in Fourier space then
            FpMethod::ExplicitRk
        } else {
            method
        };
        Ok(Self {
            model,
            grid,
            sigma_alpha: crate::nonlocal::sample_sigma_alpha(model, grid),
            drift: crate::nonlocal::sample_drift(model, grid),
            method,
        })
    }

    /// Effective advection velocity at time `t`.
    fn velocity(&self, t: f64, pert: Option<(&Perturbation, f64)>, out: &mut [f64]) {
        out.copy_from_slice(&self.drift);
        if let Some((p, eps)) = pert {
            if eps != 0.0 {
                let f = (p.time_profile)(t);
                if f != 0.0 {
                    for (i, v) in out.iter_mut().enumerate() {
                        *v += eps * f * p.k1(self.grid.x(i));
                    }
                }
            }
        }
    }

    /// Heun step of the advection part `dp/dt = -(v p)'`.
    fn advect(&self, p: &mut GridField, vel: &[f64], dt: f64) {
        let flux = |field: &GridField| {
            let vp = GridField::new(
                self.grid,
                field.values.iter().zip(vel).map(|(a, b)| a * b).collect(),
                FieldKind::Generic,
            )
            .expect("same grid");
            spectral_derivative(&vp)
        };
        let k1 = flux(p);
        let mid = GridField::new(
            self.grid,
            p.values
                .iter()
                .zip(&k1.values)
                .map(|(a, b)| a - dt * b)
                .collect(),
            FieldKind::Generic,
        )
        .expect("same grid");
        let k2 = flux(&mid);
        for i in 0..p.values.len() {
            p.values[i] -= 0.5 * dt * (k1.values[i] + k2.values[i]);
        }
    }

    /// Exact spectral step of `dp/dt = -sigma^alpha (-Delta)^{alpha/2} p`
    /// (constant sigma only).
    fn nonlocal_exact(&self, p: &mut GridField, dt: f64) {
        let s = self.sigma_alpha[0];
        let alpha = self.model.alpha();
        let decayed = crate::nonlocal::spectral_semigroup(p, alpha, s * dt);
        p.values = decayed.values;
    }

    fn rhs(&self, p: &GridField, t: f64, pert: Option<(&Perturbation, f64)>) -> GridField {
        let mut out = apply_adjoint(self.model, p);
        if let Some((pe, eps)) = pert {
            if eps != 0.0 {
                let f = (pe.time_profile)(t);
                if f != 0.0 {
                    let kp = GridField::new(
                        self.grid,
                        p.values
                            .iter()
                            .enumerate()
                            .map(|(i, v)| pe.k1(self.grid.x(i)) * v)
                            .collect(),
                        FieldKind::Generic,
                    )
                    .expect("same grid");
                    let dkp = spectral_derivative(&kp);
                    for i in 0..out.values.len() {
                        out.values[i] -= eps * f * dkp.values[i];
                    }
                }
            }
        }
        out
    }

    fn step(&self, p: &mut GridField, t: f64, dt: f64, pert: Option<(&Perturbation, f64)>) {
        match self.method {
            FpMethod::ExponentialSplitting => {
                let mut vel = vec![0.0; self.grid.len()];
                self.velocity(t, pert, &mut vel);
                self.advect(p, &vel, 0.5 * dt);
                self.nonlocal_exact(p, dt);
                self.velocity(t + 0.5 * dt, pert, &mut vel);
                self.advect(p, &vel, 0.5 * dt);
            }
            FpMethod::ExplicitRk => {
                let k1 = self.rhs(p, t, pert);
                let k2 = self.rhs(&lin(p, &k1, 0.5 * dt), t + 0.5 * dt, pert);
                let k3 = self.rhs(&lin(p, &k2, 0.5 * dt), t + 0.5 * dt, pert);
                let k4 = self.rhs(&lin(p, &k3, dt), t + dt, pert);
                for i in 0..p.values.len() {
                    p.values[i] += dt / 6.0
                        * (k1.values[i]
                            + 2.0 * k2.values[i]
                            + 2.0 * k3.values[i]
                            + k4.values[i]);
                }
            }
        }
    }
}

fn lin(p: &GridField, d: &GridField, c: f64) -> GridField {
    GridField::new(
        p.grid,
        p.values.iter().zip(&d.values).map(|(a, b)| a + c * b).collect(),
        p.kind,
    )
    .expect("same grid")
}

/// Evolve a field under the (possibly perturbed) Fokker-Planck flow,
/// recording a snapshot every `snapshot_interval` time units.
///
/// Density inputs are clamped nonnegative and renormalized at snapshots
/// (pre-clamp minima recorded); signed inputs (`Generic` kind) are left
/// untouched, which the semigroup response route relies on.
pub fn evolve_density(
    model: &SdeModel,
    p0: &GridField,
    spec: &FpSolveSpec,
    perturbation: Option<(&Perturbation, f64)>,
    snapshot_interval: f64,
) -> Result<Vec<Snapshot>, Error> {
    let is_density = p0.kind == FieldKind::Density;
    if is_density && (p0.mass() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "initial density mass {} is not 1",
            p0.mass()
        )));
    }
    let stepper = Stepper::new(model, p0.grid, spec.method)?;
    let n_steps = (spec.t_end / spec.dt).round() as usize;
    let snap_stride = ((snapshot_interval / spec.dt).round() as usize).max(1);
    let mut p = p0.clone();
    let mass0 = p.mass();
    let mut snaps = Vec::with_capacity(n_steps / snap_stride + 2);
    snaps.push(Snapshot { t: 0.0, field: p.clone(), clamp_min: 0.0 });
    for k in 0..n_steps {
        let t = k as f64 * spec.dt;
        stepper.step(&mut p, t, spec.dt, perturbation);
        let mass = p.mass();
        if !mass.is_finite() || (mass - mass0).abs() > MASS_DRIFT_LIMIT * (t + spec.dt).max(1.0) {
            return Err(Error::Solver(format!(
                "mass drift {:.3e} at step {} (t = {:.4})",
                mass - mass0,
                k + 1,
                t + spec.dt
            )));
        }
        if (k + 1) % snap_stride == 0 || k + 1 == n_steps {
            let mut field = p.clone();
            let clamp_min = if is_density { field.clamp_normalize() } else { 0.0 };
            snaps.push(Snapshot { t: (k + 1) as f64 * spec.dt, field, clamp_min });
        }
    }
    Ok(snaps)
}

/// JSON-serializable record of a stationary solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveLog {
    pub residual_history: Vec<(f64, f64)>,
    pub boundary_mass: f64,
    pub clamp_min: f64,
    pub final_residual: f64,
    pub deflated_solve: bool,
}

/// Dense matrix of the discrete `A*` (columns are `A*` applied to unit
/// vectors; every column sums to zero exactly).
fn adjoint_matrix(model: &SdeModel, grid: Grid1D) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = GridField::zeros(grid, FieldKind::Generic);
    for j in 0..n {
        e.values[j] = 1.0;
        let col = apply_adjoint(model, &e);
        for i in 0..n {
            m[(i, j)] = col.values[i];
        }
        e.values[j] = 0.0;
    }
    m
}

/// Stationary density: long-time evolution from a broad Gaussian start until
/// the residual stalls, then one deflated linear solve of `A* p = 0` with the
/// mass constraint replacing the redundant row.
pub fn solve_stationary(
    model: &SdeModel,
    grid: Grid1D,
    spec: &FpSolveSpec,
) -> Result<(GridField, SolveLog), Error> {
    let width = grid.half_width() / 8.0;
    let mut p = GridField::from_fn(grid, FieldKind::Density, |x| {
        (-x * x / (2.0 * width * width)).exp()
    });
    p.clamp_normalize();

    let residual = |p: &GridField| apply_adjoint(model, p).l1_norm() / p.l1_norm();
    let mut history = vec![(0.0, residual(&p))];
    let block = 1.0_f64; // time units between residual checks
    let mut t = 0.0;
    let mut clamp_min = 0.0_f64;
    while t < spec.t_end {
        let snaps = evolve_density(
            model,
            &p,
            &FpSolveSpec { t_end: block, ..*spec },
            None,
            block,
        )?;
        let last = snaps.into_iter().last().expect("nonempty");
        p = last.field;
        clamp_min = clamp_min.min(last.clamp_min);
        t += block;
        let r = residual(&p);
        let prev = history.last().expect("nonempty").1;
        history.push((t, r));
        if r <= spec.stop_tol || r > 0.99 * prev {
            break; // converged or stalled
        }
    }

    // deflated solve: replace one row by the mass constraint h * 1^T p = 1
    let n = grid.len();
    let h = grid.spacing();
    let mut m = adjoint_matrix(model, grid);
    let pivot_row = p
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(n / 2);
    for j in 0..n {
        m[(pivot_row, j)] = h;
    }
    let mut rhs = DVector::zeros(n);
    rhs[pivot_row] = 1.0;
    let lu = m.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("deflated stationary system is singular".into()))?;
    let mut p_lin = GridField::new(grid, sol.iter().cloned().collect(), FieldKind::Density)?;
    if !p_lin.values.iter().all(|v| v.is_finite()) {
        return Err(Error::Solver("stationary solve produced non-finite values".into()));
    }
    // a sign-indefinite null vector means the discrete null space is not
    // spanned by a density
    let neg_mass: f64 = p_lin.values.iter().map(|v| v.min(0.0).abs() * h).sum();
    if neg_mass > 1e-2 {
        return Err(Error::Solver(format!(
            "deflated solve returned a sign-indefinite field (negative mass {neg_mass:.3e}); \
             discrete null space pathology"
        )));
    }
    let lin_clamp = p_lin.clamp_normalize();
    clamp_min = clamp_min.min(lin_clamp);
    let final_residual = residual(&p_lin);
    history.push((t, final_residual));

    let boundary_mass: f64 = (0..n)
        .filter(|&i| grid.x(i).abs() > 0.9 * grid.half_width())
        .map(|i| p_lin.values[i] * h)
        .sum();
    // A constant density is an exact kernel element of the discrete adjoint:
    // its boundary share is geometry, not truncation pile-up, so the breach
    // check only applies to non-constant solutions.
    let p_max = p_lin.values.iter().cloned().fold(f64::MIN, f64::max);
    let p_min = p_lin.values.iter().cloned().fold(f64::MAX, f64::min);
    let essentially_constant = p_max - p_min <= 1e-8 * p_max.abs();
    if boundary_mass > 1e-2 && !essentially_constant {
        return Err(Error::Solver(format!(
            "boundary mass {boundary_mass:.3e} exceeds 1e-2; enlarge the domain"
        )));
    }
    if final_residual > spec.stop_tol.max(1e-10) * 100.0 && final_residual > 1e-8 {
        return Err(Error::Solver(format!(
            "stationary residual {final_residual:.3e} did not converge"
        )));
    }
    Ok((
        p_lin,
        SolveLog {
            residual_history: history,
            boundary_mass,
            clamp_min,
            final_residual,
            deflated_solve: true,
        },
    ))
}

/// `L* p = -div(K p)` on the grid.
pub fn perturbation_source(pert: &Perturbation, p_ss: &GridField) -> GridField {
    let kp = GridField::new(
        p_ss.grid,
        p_ss.values
            .iter()
            .enumerate()
            .map(|(i, v)| pert.k1(p_ss.grid.x(i)) * v)
            .collect(),
        FieldKind::Generic,
    )
    .expect("same grid");
    let mut d = spectral_derivative(&kp);
    for v in &mut d.values {
        *v = -*v;
    }
    d
}

/// Mass-zero solution of `A* v = L* p_ss` and the conjugate variable
/// `U = v / p_ss`.
#[derive(Debug, Clone)]
pub struct ConjugateSolution {
    pub v: GridField,
    pub u: GridField,
    /// `||A* v - L* p_ss||_1`
    pub residual: f64,
    /// grid indices where the division by p_ss hit the positivity floor
    pub floored: Vec<usize>,
}

/// Positivity floor for divisions by `p_ss`, relative to its maximum.
pub const DENSITY_FLOOR_REL: f64 = 1e-3;

pub fn solve_conjugate(
    model: &SdeModel,
    p_ss: &GridField,
    pert: &Perturbation,
) -> Result<ConjugateSolution, Error> {
    let grid = p_ss.grid;
    let g = perturbation_source(pert, p_ss);
    if g.mass().abs() > 1e-8 * g.l1_norm().max(1.0) {
        return Err(Error::Solver(format!(
            "compatibility violated: mass(L* p_ss) = {:.3e} is nonzero",
            g.mass()
        )));
    }
    let n = grid.len();
    let h = grid.spacing();
    let mut m = adjoint_matrix(model, grid);
    let pivot_row = p_ss
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(n / 2);
    for j in 0..n {
        m[(pivot_row, j)] = h; // mass-zero gauge replaces the redundant row
    }
    let mut rhs = DVector::from_iterator(n, g.values.iter().cloned());
    rhs[pivot_row] = 0.0;
    let lu = m.lu();
    let sol = lu.solve(&rhs).ok_or_else(|| {
        Error::Solver("conjugate system is singular; null space dimension != 1".into())
    })?;
    let v = GridField::new(grid, sol.iter().cloned().collect(), FieldKind::Generic)?;
    let residual = apply_adjoint(model, &v).l1_distance(&g);
    let denom_floor = DENSITY_FLOOR_REL * p_ss.values.iter().cloned().fold(0.0, f64::max);
    let mut floored = Vec::new();
    let u_values: Vec<f64> = (0..n)
        .map(|i| {
            let d = p_ss.values[i];
            if d < denom_floor {
                floored.push(i);
                v.values[i] / denom_floor
            } else {
                v.values[i] / d
            }
        })
        .collect();
    let rel_resid = residual / g.l1_norm().max(f64::MIN_POSITIVE);
    if g.l1_norm() > 0.0 && rel_resid > 1e-6 {
        return Err(Error::Solver(format!(
            "conjugate residual {rel_resid:.3e} exceeds 1e-6"
        )));
    }
    Ok(ConjugateSolution {
        u: GridField::new(grid, u_values, FieldKind::Observable)?,
        v,
        residual,
        floored,
    })
}

/// Project a candidate solution onto the mass-zero gauge: `v - mass(v) p_ss`
/// (`p_ss` has unit mass, so the projection is idempotent).
pub fn regauge(v: &GridField, p_ss: &GridField) -> GridField {
    let c = v.mass();
    GridField::new(
        v.grid,
        v.values
            .iter()
            .zip(&p_ss.values)
            .map(|(a, b)| a - c * b)
            .collect(),
        v.kind,
    )
    .expect("same grid")
}

/// Agarwal observable `Y = -div(K p_ss) / p_ss` with the positivity floor.
pub fn agarwal_observable(p_ss: &GridField, pert: &Perturbation) -> Result<GridField, Error> {
    let g = perturbation_source(pert, p_ss);
    // the construction guarantees int Y p_ss dx = mass(-div(K p_ss)) = 0
    if g.mass().abs() > 1e-8 * g.l1_norm().max(1.0) {
        return Err(Error::Solver(format!(
            "divergence mass {:.3e} is nonzero; Y would be biased",
            g.mass()
        )));
    }
    let n = p_ss.grid.len();
    let h = p_ss.grid.spacing();
    let floor = DENSITY_FLOOR_REL * p_ss.values.iter().cloned().fold(0.0, f64::max);
    let mut floored_mass = 0.0;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let d = p_ss.values[i];
            if d < floor {
                floored_mass += d * h;
                g.values[i] / floor
            } else {
                g.values[i] / d
            }
        })
        .collect();
    // A large *count* of floored points is normal for heavy-tailed densities
    // on a wide grid (the far tail sits below any relative floor with
    // negligible mass); Y is only floor-dominated when the floored region
    // carries probability a stationary sample would actually visit.
    if floored_mass > 1e-2 {
        return Err(Error::Solver(format!(
            "floored region carries mass {floored_mass:.3e} (> 1e-2); Y is floor-dominated"
        )));
    }
    GridField::new(p_ss.grid, values, FieldKind::Observable)
}
