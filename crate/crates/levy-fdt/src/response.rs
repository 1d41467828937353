//! The response function R_O(t) computed four independent ways: direct
//! perturbed-ensemble differencing, the Agarwal correlation, the conjugate
//! variable correlation with time differentiation, and the dual-semigroup
//! PDE route, plus the cross-validation harness comparing them.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Error;
use crate::fokker_planck::{
    agarwal_observable, evolve_density, perturbation_source, solve_conjugate, solve_stationary,
    FpSolveSpec,
};
use crate::model::{Perturbation, SdeModel};
use crate::nonlocal::{spectral_derivative, FieldKind, Grid1D, GridField};
use crate::simulate::{pairwise_sum, sample_steady_state, IntegratorSpec};
use crate::stable::RngStream;

/// Scalar observable of the 1D state.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// false when the function falls outside the decay class the correlation
    /// identities assume (reported as a warning, not an error)
    pub theorem_class: bool,
}

impl Observable {
    pub fn tanh() -> Self {
        Self { name: "tanh".into(), f: Arc::new(f64::tanh), theorem_class: true }
    }

    pub fn coordinate() -> Self {
        Self { name: "x".into(), f: Arc::new(|x| x), theorem_class: false }
    }

    pub fn rational() -> Self {
        Self {
            name: "x_over_1px2".into(),
            f: Arc::new(|x| x / (1.0 + x * x)),
            theorem_class: true,
        }
    }

    /// Smoothed indicator of `[c - w, c + w]`.
    pub fn bump(center: f64, width: f64) -> Self {
        Self {
            name: format!("bump_{center}_{width}"),
            f: Arc::new(move |x| {
                let u = (x - center) / width;
                1.0 / (1.0 + (4.0 * (u * u - 1.0)).exp())
            }),
            theorem_class: true,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self { name: format!("const_{c}"), f: Arc::new(move |_| c), theorem_class: true }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Samples on a grid, for quadratures against grid fields.
    pub fn on_grid(&self, grid: Grid1D) -> GridField {
        GridField::from_fn(grid, FieldKind::Observable, |x| (self.f)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMethod {
    Direct,
    Agarwal,
    Seifert,
    Semigroup,
}

impl ResponseMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ResponseMethod::Direct => "direct",
            ResponseMethod::Agarwal => "agarwal",
            ResponseMethod::Seifert => "seifert",
            ResponseMethod::Semigroup => "semigroup",
        }
    }
}

/// One estimated response curve. `stderr` is the Monte Carlo standard error
/// for sampling methods and a step-refinement error estimate for the PDE
/// method.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResponseCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub method: ResponseMethod,
    pub observable_name: String,
    pub perturbation_name: String,
    /// per-batch curves backing the stderr; empty for deterministic methods
    #[serde(skip)]
    pub batches: Vec<Vec<f64>>,
}

impl ResponseCurve {
    fn validate(&self) -> Result<(), Error> {
        if !self.times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Solver("response times must be strictly increasing".into()));
        }
        if self.stderr.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::Solver("response stderr must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Number of trajectory blocks used for batch-mean standard errors.
pub const N_BATCHES: usize = 32;

/// Savitzky-Golay weights of the quadratic least-squares derivative on an
/// odd window of `2 half + 1` points, evaluated at offset `m` from the
/// window center. The weights sum to zero.
fn sg_weights(half: i64, m: i64) -> Vec<f64> {
    let w = (2 * half + 1) as f64;
    let s2: f64 = (-half..=half).map(|j| (j * j) as f64).sum();
    let s4: f64 = (-half..=half).map(|j| (j * j * j * j) as f64).sum();
    let curv_norm = s4 - s2 * s2 / w;
    (-half..=half)
        .map(|j| {
            let jf = j as f64;
            jf / s2 + 2.0 * m as f64 * (jf * jf - s2 / w) / curv_norm
        })
        .collect()
}

/// Smoothed derivative of a uniformly sampled curve: quadratic
/// Savitzky-Golay on odd windows (default 5 points), one-sided at the
/// edges. Applied to a constant sequence the result is exactly zero.
pub fn smoothed_derivative(values: &[f64], dt: f64, window: usize) -> Result<Vec<f64>, Error> {
    let n = values.len();
    if window < 3 || window % 2 == 0 || n < window {
        return Err(Error::InvalidParameter(format!(
            "smoothing window must be odd, >= 3 and <= the {n} samples; got {window}"
        )));
    }
    let half = window / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let center = i.clamp(half, n - 1 - half);
        let m = i as i64 - center as i64;
        let w = sg_weights(half as i64, m);
        // anchoring on values[i] keeps constants exactly in the kernel
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            acc += wk * (values[center - half + k] - values[i]);
        }
        out.push(acc / dt);
    }
    Ok(out)
}

fn batch_stats(batches: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let nb = batches.len() as f64;
    let n_t = batches[0].len();
    let mut mean = vec![0.0; n_t];
    let mut se = vec![0.0; n_t];
    let mut col = Vec::with_capacity(batches.len());
    for t in 0..n_t {
        col.clear();
        col.extend(batches.iter().map(|b| b[t]));
        let mu = pairwise_sum(&col) / nb;
        let sq: Vec<f64> = col.iter().map(|v| (v - mu) * (v - mu)).collect();
        let var = pairwise_sum(&sq) / (nb - 1.0);
        mean[t] = mu;
        se[t] = (var / nb).sqrt();
    }
    (mean, se)
}

/// Time grid for response curves.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        let n = (self.t_max / self.dt).round() as usize;
        (0..=n).map(|k| k as f64 * self.dt).collect()
    }
}

/// Shared knobs of the Monte Carlo response estimators.
#[derive(Debug, Clone, Copy)]
pub struct McSpec {
    pub n_traj: usize,
    pub integrator_dt: f64,
    pub burn_in: f64,
    pub thinning: f64,
    pub master_seed: u64,
    /// odd width of the Savitzky-Golay derivative window
    pub smoothing_window: usize,
    /// when set, starting points with |x0| above this half-width are
    /// excluded, matching the off-grid exclusion of the correlation routes
    pub initial_window: Option<f64>,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            n_traj: 200_000,
            integrator_dt: 1e-3,
            burn_in: 20.0,
            thinning: 1.0,
            master_seed: 1,
            smoothing_window: 5,
            initial_window: None,
        }
    }
}

fn seed_for(master: u64, role: u64) -> u64 {
    // distinct stream families per role within one master seed
    master.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(role)
}

fn stationary_initials(
    model: &SdeModel,
    mc: &McSpec,
) -> Result<Vec<f64>, Error> {
    let samples = sample_steady_state(
        model,
        mc.burn_in,
        mc.n_traj,
        mc.thinning,
        mc.integrator_dt,
        seed_for(mc.master_seed, 1),
    )?;
    Ok(samples.into_iter().map(|s| s[0]).collect())
}

/// Correlation curves `E[O(X_t) w_k(X_0)]` for several weight fields sharing
/// one stationary ensemble. Off-grid starting points are excluded and
/// counted. Returns per-weight batch curves plus the exclusion count.
fn stationary_correlations(
    model: &SdeModel,
    weights: &[&GridField],
    observable: &Observable,
    t_grid: &TimeGrid,
    mc: &McSpec,
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>, usize), Error> {
    stationary_correlations_impl(model, weights, observable, t_grid, mc, false)
}

/// As `stationary_correlations` but per batch returns the sample covariance
/// cov(w, O(X_t)) instead of the raw mean of w * O(X_t).  Centering on the
/// batch sample mean of w makes a constant shift w -> w + c cancel exactly
/// (to rounding), not just in expectation.
fn stationary_covariances(
    model: &SdeModel,
    weights: &[&GridField],
    observable: &Observable,
    t_grid: &TimeGrid,
    mc: &McSpec,
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>, usize), Error> {
    stationary_correlations_impl(model, weights, observable, t_grid, mc, true)
}

fn stationary_correlations_impl(
    model: &SdeModel,
    weights: &[&GridField],
    observable: &Observable,
    t_grid: &TimeGrid,
    mc: &McSpec,
    center: bool,
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>, usize), Error> {
    let x0s = stationary_initials(model, mc)?;
    let times = t_grid.times();
    let n_t = times.len();
    let n_w = weights.len();
    let save_stride = (t_grid.dt / mc.integrator_dt).round() as usize;
    let spec = IntegratorSpec::new(mc.integrator_dt, t_grid.t_max, save_stride)?;
    let alpha = model.alpha();
    let jump_scale = mc.integrator_dt.powf(1.0 / alpha);
    let path_seed = seed_for(mc.master_seed, 2);

    struct Batch {
        sums: Vec<f64>,   // n_w * n_t, weight-major
        w_sums: Vec<f64>, // n_w
        o_sums: Vec<f64>, // n_t
        kept: usize,
        excluded: usize,
    }

    let batch_size = x0s.len().div_ceil(N_BATCHES);
    let batches: Vec<Batch> = (0..N_BATCHES)
        .into_par_iter()
        .map(|b| {
            let lo = b * batch_size;
            let hi = ((b + 1) * batch_size).min(x0s.len());
            let mut sums = vec![0.0; n_w * n_t];
            let mut w_sums = vec![0.0; n_w];
            let mut o_sums = vec![0.0; n_t];
            let mut kept = 0usize;
            let mut excluded = 0usize;
            let mut o_path = vec![0.0; n_t];
            for i in lo..hi {
                let x0 = x0s[i];
                let Some(ws) = weights
                    .iter()
                    .map(|w| w.interpolate(x0))
                    .collect::<Option<Vec<f64>>>()
                else {
                    excluded += 1;
                    continue;
                };
                let mut stream = RngStream::new(path_seed, i as u64);
                let mut x = x0;
                o_path[0] = observable.eval(x);
                let mut save = 1usize;
                let mut diverged = false;
                for k in 0..spec.n_steps() {
                    let b1 = model.drift1(x);
                    let sg = model.sigma1(x);
                    x += b1 * mc.integrator_dt + sg * jump_scale * stream.standard_stable(alpha);
                    if !x.is_finite() || x.abs() > crate::simulate::OVERFLOW_LIMIT {
                        diverged = true;
                        break;
                    }
                    if (k + 1) % save_stride == 0 {
                        o_path[save] = observable.eval(x);
                        save += 1;
                    }
                }
                if diverged {
                    excluded += 1;
                    continue;
                }
                kept += 1;
                for (wi, w0) in ws.iter().enumerate() {
                    let row = &mut sums[wi * n_t..(wi + 1) * n_t];
                    for t in 0..n_t {
                        row[t] += w0 * o_path[t];
                    }
                    w_sums[wi] += w0;
                }
                for t in 0..n_t {
                    o_sums[t] += o_path[t];
                }
            }
            Batch { sums, w_sums, o_sums, kept, excluded }
        })
        .collect();

    let excluded: usize = batches.iter().map(|b| b.excluded).sum();
    if excluded * 10 > x0s.len() {
        return Err(Error::Reliability(format!(
            "{excluded}/{} starting points excluded (off-grid or diverged)",
            x0s.len()
        )));
    }
    let mut per_weight = vec![Vec::with_capacity(N_BATCHES); n_w];
    for b in &batches {
        if b.kept == 0 {
            continue;
        }
        let inv = 1.0 / b.kept as f64;
        for wi in 0..n_w {
            let w_mean = b.w_sums[wi] * inv;
            per_weight[wi].push(
                b.sums[wi * n_t..(wi + 1) * n_t]
                    .iter()
                    .zip(&b.o_sums)
                    .map(|(s, o)| {
                        if center {
                            s * inv - w_mean * (o * inv)
                        } else {
                            s * inv
                        }
                    })
                    .collect(),
            );
        }
    }
    Ok((times, per_weight, excluded))
}

/// R_O(t) = E[O(X_t) Y(X_0)] with Y from `agarwal_observable`.
pub fn response_agarwal(
    model: &SdeModel,
    y: &GridField,
    observable: &Observable,
    pert_name: &str,
    t_grid: &TimeGrid,
    mc: &McSpec,
) -> Result<ResponseCurve, Error> {
    let (times, mut per_weight, _) =
        stationary_correlations(model, &[y], observable, t_grid, mc)?;
    let batches = per_weight.pop().expect("one weight");
    let (values, stderr) = batch_stats(&batches);
    let curve = ResponseCurve {
        times,
        values,
        stderr,
        method: ResponseMethod::Agarwal,
        observable_name: observable.name.clone(),
        perturbation_name: pert_name.to_string(),
        batches,
    };
    curve.validate()?;
    Ok(curve)
}

fn differentiate_batches(
    batches: &[Vec<f64>],
    dt: f64,
    window: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>), Error> {
    let db: Result<Vec<Vec<f64>>, Error> =
        batches.iter().map(|b| smoothed_derivative(b, dt, window)).collect();
    let db = db?;
    let (values, stderr) = batch_stats(&db);
    Ok((values, stderr, db))
}

/// R_O(t) = d/dt E[O(X_t) U(X_0)] with U the conjugate variable.
pub fn response_seifert(
    model: &SdeModel,
    u: &GridField,
    observable: &Observable,
    pert_name: &str,
    t_grid: &TimeGrid,
    mc: &McSpec,
) -> Result<ResponseCurve, Error> {
    let (times, mut per_weight, _) =
        stationary_covariances(model, &[u], observable, t_grid, mc)?;
    let corr = per_weight.pop().expect("one weight");
    let (values, stderr, batches) = differentiate_batches(&corr, t_grid.dt, mc.smoothing_window)?;
    let curve = ResponseCurve {
        times,
        values,
        stderr,
        method: ResponseMethod::Seifert,
        observable_name: observable.name.clone(),
        perturbation_name: pert_name.to_string(),
        batches,
    };
    curve.validate()?;
    Ok(curve)
}

/// Empirical first-order behaviour of the direct estimator.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LinearityReport {
    pub eps: Vec<f64>,
    /// sup over t of |Delta_eps - Delta_{eps'}| for consecutive eps pairs
    pub residual_sup: Vec<f64>,
    /// median over t in [0, 3] of log2(|r_k| / |r_{k+1}|); needs >= 3 eps
    pub empirical_order: Option<f64>,
    pub monotone: bool,
    /// starting points outside `McSpec::initial_window`, skipped to match
    /// the off-grid exclusion of the correlation routes
    pub excluded_initials: usize,
}

/// Direct route: common-random-number ensembles at each perturbation
/// amplitude, integrated response Delta_eps(t), Richardson extrapolation
/// over the eps ladder, then the smoothed time derivative.
pub fn response_direct(
    model: &SdeModel,
    pert: &Perturbation,
    observable: &Observable,
    eps_list: &[f64],
    t_grid: &TimeGrid,
    mc: &McSpec,
) -> Result<(ResponseCurve, LinearityReport), Error> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "eps_list must be decreasing and nonempty".into(),
        ));
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter("eps values must be positive".into()));
    }
    let x0s = stationary_initials(model, mc)?;
    let times = t_grid.times();
    let n_t = times.len();
    let n_eps = eps_list.len();
    let save_stride = (t_grid.dt / mc.integrator_dt).round() as usize;
    let spec = IntegratorSpec::new(mc.integrator_dt, t_grid.t_max, save_stride)?;
    let alpha = model.alpha();
    let dt = mc.integrator_dt;
    let jump_scale = dt.powf(1.0 / alpha);
    let path_seed = seed_for(mc.master_seed, 3);

    // variant 0 is the unperturbed baseline
    let n_var = n_eps + 1;
    struct Batch {
        // variant-major sums of O along the path
        sums: Vec<f64>,
        kept: usize,
        dropped: usize,
        excluded: usize,
    }
    let batch_size = x0s.len().div_ceil(N_BATCHES);
    let batches: Vec<Batch> = (0..N_BATCHES)
        .into_par_iter()
        .map(|b| {
            let lo = b * batch_size;
            let hi = ((b + 1) * batch_size).min(x0s.len());
            let mut sums = vec![0.0; n_var * n_t];
            let mut kept = 0usize;
            let mut dropped = 0usize;
            let mut excluded = 0usize;
            let mut x = vec![0.0; n_var];
            let mut o_paths = vec![0.0; n_var * n_t];
            for i in lo..hi {
                if let Some(w) = mc.initial_window {
                    if x0s[i].abs() > w {
                        excluded += 1;
                        continue;
                    }
                }
                let mut stream = RngStream::new(path_seed, i as u64);
                x.fill(x0s[i]);
                for v in 0..n_var {
                    o_paths[v * n_t] = observable.eval(x[v]);
                }
                let mut save = 1usize;
                let mut diverged = false;
                'steps: for k in 0..spec.n_steps() {
                    let t = k as f64 * dt;
                    // one shared increment drives every variant (common
                    // random numbers)
                    let dl = jump_scale * stream.standard_stable(alpha);
                    let f = (pert.time_profile)(t);
                    for (v, xv) in x.iter_mut().enumerate() {
                        let mut b1 = model.drift1(*xv);
                        if v > 0 && f != 0.0 {
                            b1 += eps_list[v - 1] * f * pert.k1(*xv);
                        }
                        *xv += b1 * dt + model.sigma1(*xv) * dl;
                        if !xv.is_finite() || xv.abs() > crate::simulate::OVERFLOW_LIMIT {
                            diverged = true;
                            break 'steps;
                        }
                    }
                    if (k + 1) % save_stride == 0 {
                        for v in 0..n_var {
                            o_paths[v * n_t + save] = observable.eval(x[v]);
                        }
                        save += 1;
                    }
                }
                if diverged {
                    // drop the whole common-random-number bundle
                    dropped += 1;
                    continue;
                }
                kept += 1;
                for (s, o) in sums.iter_mut().zip(&o_paths) {
                    *s += o;
                }
            }
            Batch { sums, kept, dropped, excluded }
        })
        .collect();

    let dropped: usize = batches.iter().map(|b| b.dropped).sum();
    let excluded: usize = batches.iter().map(|b| b.excluded).sum();
    if (dropped + excluded) * 10 > x0s.len() {
        return Err(Error::Reliability(format!(
            "{dropped}/{} trajectory bundles diverged, {excluded} excluded",
            x0s.len()
        )));
    }

    // per-batch integrated responses Delta_eps(t)
    let mut delta_batches = vec![Vec::with_capacity(N_BATCHES); n_eps];
    for b in &batches {
        if b.kept == 0 {
            continue;
        }
        let m = b.kept as f64;
        for e in 0..n_eps {
            let base = &b.sums[..n_t];
            let pert_sums = &b.sums[(e + 1) * n_t..(e + 2) * n_t];
            delta_batches[e].push(
                (0..n_t)
                    .map(|t| (pert_sums[t] - base[t]) / (m * eps_list[e]))
                    .collect::<Vec<f64>>(),
            );
        }
    }

    // Richardson extrapolation of the two smallest amplitudes, per batch
    let richardson: Vec<Vec<f64>> = (0..delta_batches[0].len())
        .map(|bi| {
            if n_eps == 1 {
                delta_batches[0][bi].clone()
            } else {
                let coarse = &delta_batches[n_eps - 2][bi];
                let fine = &delta_batches[n_eps - 1][bi];
                (0..n_t).map(|t| 2.0 * fine[t] - coarse[t]).collect()
            }
        })
        .collect();
    let (values, stderr, r_batches) = differentiate_batches(&richardson, t_grid.dt, mc.smoothing_window)?;

    // linearity ladder on the ensemble-mean Delta curves
    let delta_means: Vec<Vec<f64>> =
        delta_batches.iter().map(|b| batch_stats(b).0).collect();
    let mut residual_sup = Vec::new();
    let mut residual_curves = Vec::new();
    for e in 0..n_eps.saturating_sub(1) {
        let r: Vec<f64> = (0..n_t)
            .map(|t| delta_means[e][t] - delta_means[e + 1][t])
            .collect();
        residual_sup.push(r.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        residual_curves.push(r);
    }
    let empirical_order = if residual_curves.len() >= 2 {
        let mut orders: Vec<f64> = (0..n_t)
            .filter(|&t| times[t] <= 3.0)
            .filter_map(|t| {
                let r0 = residual_curves[residual_curves.len() - 2][t].abs();
                let r1 = residual_curves[residual_curves.len() - 1][t].abs();
                (r1 > 0.0 && r0 > 0.0).then(|| (r0 / r1).log2())
            })
            .collect();
        orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (!orders.is_empty()).then(|| orders[orders.len() / 2])
    } else {
        None
    };
    let monotone = residual_sup.windows(2).all(|w| w[1] <= w[0]);

    let curve = ResponseCurve {
        times,
        values,
        stderr,
        method: ResponseMethod::Direct,
        observable_name: observable.name.clone(),
        perturbation_name: pert.name.clone(),
        batches: r_batches,
    };
    curve.validate()?;
    Ok((
        curve,
        LinearityReport {
            eps: eps_list.to_vec(),
            residual_sup,
            empirical_order,
            monotone,
            excluded_initials: excluded,
        },
    ))
}

/// PDE route: evolve the signed field `g_0 = -div(K p_ss)` under the dual
/// semigroup and quadrature against O at each time. The stderr slot carries
/// a dt-refinement error estimate.
pub fn response_semigroup(
    model: &SdeModel,
    p_ss: &GridField,
    pert: &Perturbation,
    observable: &Observable,
    t_grid: &TimeGrid,
    spec: &FpSolveSpec,
) -> Result<ResponseCurve, Error> {
    let o = observable.on_grid(p_ss.grid);
    let run = |dt: f64| -> Result<Vec<f64>, Error> {
        let g0 = perturbation_source(pert, p_ss);
        let fp = FpSolveSpec { dt, t_end: t_grid.t_max, ..*spec };
        let snaps = evolve_density(model, &g0, &fp, None, t_grid.dt)?;
        snaps
            .iter()
            .map(|s| {
                if s.field.mass().abs() > 1e-8 {
                    return Err(Error::Solver(format!(
                        "evolved signed field leaked mass {:.3e} at t={}",
                        s.field.mass(),
                        s.t
                    )));
                }
                Ok(o.dot(&s.field))
            })
            .collect()
    };
    let fine = run(spec.dt)?;
    let coarse = run(2.0 * spec.dt)?;
    let times = t_grid.times();
    if fine.len() != times.len() {
        return Err(Error::Solver("snapshot cadence mismatch".into()));
    }
    let stderr: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| (f - c).abs()).collect();
    let curve = ResponseCurve {
        times,
        values: fine,
        stderr,
        method: ResponseMethod::Semigroup,
        observable_name: observable.name.clone(),
        perturbation_name: pert.name.clone(),
        batches: Vec::new(),
    };
    curve.validate()?;
    Ok(curve)
}

/// Instantaneous response `R(0) = int K O' p_ss dx` by grid quadrature.
pub fn instant_response(p_ss: &GridField, pert: &Perturbation, observable: &Observable) -> f64 {
    let o = observable.on_grid(p_ss.grid);
    let do_dx = spectral_derivative(&o);
    let integrand = GridField::from_fn(p_ss.grid, FieldKind::Generic, |x| pert.k1(x));
    let h = p_ss.grid.spacing();
    let terms: Vec<f64> = (0..p_ss.grid.len())
        .map(|i| integrand.values[i] * do_dx.values[i] * p_ss.values[i])
        .collect();
    h * pairwise_sum(&terms)
}

/// One pairwise comparison of the cross-validation report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PairwiseCheck {
    pub a: ResponseMethod,
    pub b: ResponseMethod,
    /// sup over the compared range of |a - b|
    pub sup_diff: f64,
    /// tolerance at the argmax point
    pub tol: f64,
    pub t_min: f64,
    pub pass: bool,
}

/// Verification configuration for [`verify_fdt`].
#[derive(Debug, Clone)]
pub struct VerifySpec {
    pub grid: Grid1D,
    pub t_grid: TimeGrid,
    pub eps_list: Vec<f64>,
    pub mc: McSpec,
    pub fp: FpSolveSpec,
    /// absolute floors added to the statistical tolerances of checks
    /// against the PDE curve (MC routes, direct route)
    pub pde_floor_mc: f64,
    pub pde_floor_direct: f64,
    /// negative control: flip the sign of the Agarwal weight
    pub corrupt_y: bool,
}

impl VerifySpec {
    pub fn flagship(master_seed: u64) -> Self {
        Self {
            grid: Grid1D::new(32.0, 2048).expect("valid grid"),
            t_grid: TimeGrid { t_max: 5.0, dt: 0.1 },
            eps_list: vec![0.1, 0.05],
            mc: McSpec { master_seed, ..Default::default() },
            fp: FpSolveSpec::default(),
            pde_floor_mc: 2e-2,
            pde_floor_direct: 3e-2,
            corrupt_y: false,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub schema: u32,
    pub scenario: String,
    pub observable: String,
    pub perturbation: String,
    pub master_seed: u64,
    pub curves: Vec<ResponseCurve>,
    pub pairwise_checks: Vec<PairwiseCheck>,
    pub linearity: LinearityReport,
    pub warnings: Vec<String>,
    pub runtime_seconds: f64,
    pub pass: bool,
}

/// Sup-difference check between two curves with a pointwise tolerance
/// `max(3 sqrt(se_a^2 + se_b^2), floor)`, restricted to `t >= t_min`. When
/// both curves carry batch data from the same ensemble, the difference
/// stderr comes from per-batch differences instead of the quadrature sum.
fn pairwise_check(
    a: &ResponseCurve,
    b: &ResponseCurve,
    floor: f64,
    t_min: f64,
    shared_ensemble: bool,
) -> PairwiseCheck {
    let n_t = a.times.len();
    let diff_se: Vec<f64> = if shared_ensemble
        && a.batches.len() == b.batches.len()
        && !a.batches.is_empty()
    {
        let db: Vec<Vec<f64>> = a
            .batches
            .iter()
            .zip(&b.batches)
            .map(|(ba, bb)| ba.iter().zip(bb).map(|(x, y)| x - y).collect())
            .collect();
        batch_stats(&db).1
    } else {
        (0..n_t)
            .map(|t| (a.stderr[t] * a.stderr[t] + b.stderr[t] * b.stderr[t]).sqrt())
            .collect()
    };
    let mut sup_diff = 0.0;
    let mut tol_at_sup = f64::INFINITY;
    let mut pass = true;
    for t in 0..n_t {
        if a.times[t] < t_min {
            continue;
        }
        let d = (a.values[t] - b.values[t]).abs();
        let tol = (3.0 * diff_se[t]).max(floor);
        if d > tol {
            pass = false;
        }
        if d > sup_diff {
            sup_diff = d;
            tol_at_sup = tol;
        }
    }
    PairwiseCheck { a: a.method, b: b.method, sup_diff, tol: tol_at_sup, t_min, pass }
}

/// Run all four response estimators on one scenario and cross-validate
/// them pairwise.
pub fn verify_fdt(
    model: &SdeModel,
    pert: &Perturbation,
    observable: &Observable,
    spec: &VerifySpec,
) -> Result<VerifyReport, Error> {
    let t0 = std::time::Instant::now();
    let mut warnings = Vec::new();
    if !observable.theorem_class {
        warnings.push(format!(
            "observable '{}' is outside the decay class the correlation identities assume",
            observable.name
        ));
    }
    if pert.constant_k {
        warnings.push(format!(
            "perturbation '{}' has constant K, outside the decay hypothesis of the \
             conjugate-variable identity",
            pert.name
        ));
    }

    let (p_ss, _log) = solve_stationary(model, spec.grid, &spec.fp)?;
    let mut y = agarwal_observable(&p_ss, pert)?;
    if spec.corrupt_y {
        for v in &mut y.values {
            *v = -*v;
        }
        warnings.push("negative control: Agarwal weight sign-flipped".into());
    }
    let conj = solve_conjugate(model, &p_ss, pert)?;

    // one stationary ensemble serves both correlation routes
    let (times, mut per_weight, excluded) =
        stationary_correlations(model, &[&y, &conj.u], observable, &spec.t_grid, &spec.mc)?;
    if excluded > 0 {
        warnings.push(format!("{excluded} starting points excluded from the correlation run"));
    }
    let u_batches = per_weight.pop().expect("two weights");
    let y_batches = per_weight.pop().expect("two weights");
    let (ag_values, ag_se) = batch_stats(&y_batches);
    let agarwal = ResponseCurve {
        times: times.clone(),
        values: ag_values,
        stderr: ag_se,
        method: ResponseMethod::Agarwal,
        observable_name: observable.name.clone(),
        perturbation_name: pert.name.clone(),
        batches: y_batches,
    };
    agarwal.validate()?;
    let (sf_values, sf_se, sf_batches) = differentiate_batches(&u_batches, spec.t_grid.dt, spec.mc.smoothing_window)?;
    let seifert = ResponseCurve {
        times: times.clone(),
        values: sf_values,
        stderr: sf_se,
        method: ResponseMethod::Seifert,
        observable_name: observable.name.clone(),
        perturbation_name: pert.name.clone(),
        batches: sf_batches,
    };
    seifert.validate()?;

    // the correlation routes drop starting points their grid weights cannot
    // interpolate; conditioning the direct ensemble to the same window keeps
    // all three Monte Carlo routes estimating the same (windowed) response
    let mc_direct = McSpec { initial_window: Some(spec.grid.half_width()), ..spec.mc };
    let (direct, linearity) =
        response_direct(model, pert, observable, &spec.eps_list, &spec.t_grid, &mc_direct)?;
    if linearity.excluded_initials > 0 {
        warnings.push(format!(
            "{} starting points outside the grid window excluded from the direct run",
            linearity.excluded_initials
        ));
    }
    let semigroup =
        response_semigroup(model, &p_ss, pert, observable, &spec.t_grid, &spec.fp)?;

    // curves with time differencing are compared away from the first edge
    // window of the stencil
    let edge = 2.0 * spec.t_grid.dt;
    let checks = vec![
        pairwise_check(&direct, &agarwal, 0.0, edge, false),
        pairwise_check(&direct, &seifert, 0.0, edge, false),
        pairwise_check(&agarwal, &seifert, 0.0, edge, true),
        pairwise_check(&agarwal, &semigroup, spec.pde_floor_mc, 0.0, false),
        pairwise_check(&seifert, &semigroup, spec.pde_floor_mc, edge, false),
        pairwise_check(&direct, &semigroup, spec.pde_floor_direct, edge, false),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        schema: 1,
        scenario: model.name.clone(),
        observable: observable.name.clone(),
        perturbation: pert.name.clone(),
        master_seed: spec.mc.master_seed,
        curves: vec![direct, agarwal, seifert, semigroup],
        pairwise_checks: checks,
        linearity,
        warnings,
        runtime_seconds: t0.elapsed().as_secs_f64(),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::mean_stderr;

    fn tanh_well() -> SdeModel {
        SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap()
    }

    fn small_mc(seed: u64) -> McSpec {
        McSpec { n_traj: 20_000, master_seed: seed, ..Default::default() }
    }

    fn grid() -> Grid1D {
        Grid1D::new(32.0, 2048).unwrap()
    }

    #[test]
    fn stencil_annihilates_constants_exactly() {
        let values = vec![0.7311; 40];
        let d = smoothed_derivative(&values, 0.1, 5).unwrap();
        assert!(d.iter().all(|v| *v == 0.0), "stencil leaked on constants: {d:?}");
    }

    #[test]
    fn stencil_is_exact_on_quadratics() {
        let dt = 0.1;
        let values: Vec<f64> = (0..30).map(|k| {
            let t = k as f64 * dt;
            1.0 + 2.0 * t - 0.5 * t * t
        }).collect();
        let d = smoothed_derivative(&values, dt, 5).unwrap();
        for (k, v) in d.iter().enumerate() {
            let t = k as f64 * dt;
            assert!((v - (2.0 - t)).abs() < 1e-10, "t={t}: {v}");
        }
    }

    #[test]
    fn zero_perturbation_gives_zero_direct_response() {
        let model = tanh_well();
        let pert = Perturbation::constant_step(0.0);
        let (curve, _) = response_direct(
            &model,
            &pert,
            &Observable::tanh(),
            &[0.1],
            &TimeGrid { t_max: 1.0, dt: 0.1 },
            &McSpec { n_traj: 2_000, master_seed: 7, ..Default::default() },
        )
        .unwrap();
        // with eps multiplying a zero field, perturbed and baseline paths
        // are identical, so the estimate is exactly zero
        assert!(curve.values.iter().all(|v| *v == 0.0), "{:?}", curve.values);
    }

    #[test]
    fn direct_instant_response_for_linear_observable() {
        // O(x) = x, K = c: Delta(t) ~ c t for small t, so R(0) = c
        let model = tanh_well();
        let c = 0.8;
        let pert = Perturbation::constant_step(c);
        let (curve, _) = response_direct(
            &model,
            &pert,
            &Observable::coordinate(),
            &[0.1, 0.05],
            &TimeGrid { t_max: 1.0, dt: 0.1 },
            &small_mc(11),
        )
        .unwrap();
        let tol = 3.0 * curve.stderr[0] + 0.02;
        assert!(
            (curve.values[0] - c).abs() < tol,
            "R(0) = {} vs {c} (tol {tol})",
            curve.values[0]
        );
    }

    #[test]
    fn agarwal_t0_matches_quadrature() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let pert = Perturbation::lorentzian_step();
        let y = agarwal_observable(&p_ss, &pert).unwrap();
        let obs = Observable::tanh();
        let curve = response_agarwal(
            &model,
            &y,
            &obs,
            &pert.name,
            &TimeGrid { t_max: 0.5, dt: 0.1 },
            &small_mc(23),
        )
        .unwrap();
        let o = obs.on_grid(grid());
        let oy = GridField::new(
            grid(),
            o.values.iter().zip(&y.values).map(|(a, b)| a * b).collect(),
            FieldKind::Generic,
        )
        .unwrap();
        let exact = oy.dot(&p_ss);
        let tol = 3.0 * curve.stderr[0];
        assert!(
            (curve.values[0] - exact).abs() < tol,
            "R(0) = {} vs quadrature {exact} (tol {tol})",
            curve.values[0]
        );
    }

    #[test]
    fn agarwal_constant_observable_vanishes() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let pert = Perturbation::lorentzian_step();
        let y = agarwal_observable(&p_ss, &pert).unwrap();
        let curve = response_agarwal(
            &model,
            &y,
            &Observable::constant(1.0),
            &pert.name,
            &TimeGrid { t_max: 1.0, dt: 0.5 },
            &small_mc(31),
        )
        .unwrap();
        for (t, (v, se)) in curve.values.iter().zip(&curve.stderr).enumerate() {
            assert!(v.abs() < 4.0 * se + 1e-12, "t index {t}: {v} vs se {se}");
        }
    }

    #[test]
    fn seifert_constant_observable_is_exactly_zero() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let pert = Perturbation::lorentzian_step();
        let conj = solve_conjugate(&model, &p_ss, &pert).unwrap();
        let curve = response_seifert(
            &model,
            &conj.u,
            &Observable::constant(2.5),
            &pert.name,
            &TimeGrid { t_max: 1.0, dt: 0.1 },
            &McSpec { n_traj: 2_000, master_seed: 41, ..Default::default() },
        )
        .unwrap();
        // O constant makes C(t) constant per batch; the stencil kills it
        assert!(curve.values.iter().all(|v| *v == 0.0), "{:?}", curve.values);
    }

    #[test]
    fn semigroup_t0_matches_integration_by_parts() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let pert = Perturbation::lorentzian_step();
        let obs = Observable::tanh();
        let curve = response_semigroup(
            &model,
            &p_ss,
            &pert,
            &obs,
            &TimeGrid { t_max: 0.2, dt: 0.1 },
            &FpSolveSpec::default(),
        )
        .unwrap();
        let ibp = instant_response(&p_ss, &pert, &obs);
        assert!(
            (curve.values[0] - ibp).abs() < 1e-6,
            "R(0) = {} vs integration by parts {ibp}",
            curve.values[0]
        );
    }

    #[test]
    fn semigroup_sign_flip_negates_curve() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let obs = Observable::tanh();
        let tg = TimeGrid { t_max: 1.0, dt: 0.1 };
        let plus = response_semigroup(
            &model, &p_ss, &Perturbation::lorentzian_step(), &obs, &tg,
            &FpSolveSpec::default(),
        )
        .unwrap();
        let mut flipped = Perturbation::lorentzian_step();
        let base = flipped.space_field.clone();
        flipped.space_field = Arc::new(move |x, out| {
            base(x, out);
            for v in out.iter_mut() {
                *v = -*v;
            }
        });
        let minus =
            response_semigroup(&model, &p_ss, &flipped, &obs, &tg, &FpSolveSpec::default())
                .unwrap();
        for (a, b) in plus.values.iter().zip(&minus.values) {
            assert!((a + b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn semigroup_decays_at_large_time() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let curve = response_semigroup(
            &model,
            &p_ss,
            &Perturbation::lorentzian_step(),
            &Observable::tanh(),
            &TimeGrid { t_max: 30.0, dt: 1.0 },
            &FpSolveSpec::default(),
        )
        .unwrap();
        let tail = curve.values.last().unwrap().abs();
        let peak = curve.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(tail < 1e-3 * peak.max(1e-6), "tail {tail} vs peak {peak}");
    }

    #[test]
    fn correlation_reproducible_across_worker_counts() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let pert = Perturbation::lorentzian_step();
        let y = agarwal_observable(&p_ss, &pert).unwrap();
        let tg = TimeGrid { t_max: 0.5, dt: 0.1 };
        let mc = McSpec { n_traj: 5_000, master_seed: 77, ..Default::default() };
        let run = || {
            response_agarwal(&model, &y, &Observable::tanh(), &pert.name, &tg, &mc)
                .unwrap()
                .values
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let b = pool.install(run);
        assert_eq!(a, b);
    }

    #[test]
    fn instant_response_constant_k_is_mean_gradient() {
        // K = c, O = x: R(0) = c int p_ss = c
        let g = grid();
        let mut p = GridField::from_fn(g, FieldKind::Density, |x| (-x * x / 3.0).exp());
        p.clamp_normalize();
        let r = instant_response(&p, &Perturbation::constant_step(0.8), &Observable::coordinate());
        assert!((r - 0.8).abs() < 1e-8, "{r}");
    }

    #[test]
    fn mean_observable_is_time_constant_in_stationary_state() {
        // the gauge-invariance mechanism: E O(X_t) is flat, so adding a
        // constant to U shifts C(t) by a constant the stencil removes
        let model = tanh_well();
        let (_, per_weight, _) = stationary_correlations(
            &model,
            &[&GridField::from_fn(grid(), FieldKind::Observable, |_| 1.0)],
            &Observable::tanh(),
            &TimeGrid { t_max: 2.0, dt: 0.5 },
            &small_mc(99),
        )
        .unwrap();
        let (mean, se) = batch_stats(&per_weight[0]);
        for t in 1..mean.len() {
            let tol = 3.0 * (se[t] * se[t] + se[0] * se[0]).sqrt() + 1e-12;
            assert!((mean[t] - mean[0]).abs() < tol, "t index {t}: {} vs {}", mean[t], mean[0]);
        }
    }

    #[test]
    fn seifert_gauge_shift_changes_nothing() {
        let model = tanh_well();
        let (p_ss, _) = solve_stationary(&model, grid(), &FpSolveSpec::default()).unwrap();
        let pert = Perturbation::lorentzian_step();
        let conj = solve_conjugate(&model, &p_ss, &pert).unwrap();
        let mut u_shift = conj.u.clone();
        for v in &mut u_shift.values {
            *v += 1.3;
        }
        let tg = TimeGrid { t_max: 1.0, dt: 0.1 };
        let mc = McSpec { n_traj: 3_000, master_seed: 53, ..Default::default() };
        let obs = Observable::tanh();
        let a = response_seifert(&model, &conj.u, &obs, &pert.name, &tg, &mc).unwrap();
        let b = response_seifert(&model, &u_shift, &obs, &pert.name, &tg, &mc).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn batch_stats_match_plain_mean_stderr() {
        let batches: Vec<Vec<f64>> = (0..8).map(|b| vec![b as f64, 2.0 * b as f64]).collect();
        let (mean, se) = batch_stats(&batches);
        let col0: Vec<f64> = batches.iter().map(|b| b[0]).collect();
        let (m0, s0) = mean_stderr(&col0);
        assert!((mean[0] - m0).abs() < 1e-14);
        assert!((se[0] - s0).abs() < 1e-14);
    }
}
