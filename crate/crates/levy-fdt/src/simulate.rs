//! Explicit Euler integration of the unperturbed and perturbed SDEs with
//! exact stable increments, ensemble management, and steady-state sampling.
//!
//! Reproducibility contract: trajectory `i` of an ensemble uses the RNG stream
//! `(master_seed, i)` and nothing else; aggregation is order-insensitive
//! (indexed slots plus pairwise summation), so results are bit-identical for
//! any worker count.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Error;
use crate::model::{Perturbation, ScalarField, SdeModel};
use crate::stable::RngStream;

/// Threshold beyond which a state is treated as numerically divergent.
/// States beyond this magnitude are treated as numerically divergent.
pub const OVERFLOW_LIMIT: f64 = 1e9;

/// Warn when more than 1% of trajectories are flagged, hard-error above 10%.
const FLAG_WARN_FRACTION: f64 = 0.01;
const FLAG_FAIL_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy)]
pub struct IntegratorSpec {
    pub dt: f64,
    pub t_max: f64,
    /// record every k-th step
    pub save_stride: usize,
}

impl IntegratorSpec {
    pub fn new(dt: f64, t_max: f64, save_stride: usize) -> Result<Self, Error> {
        if !(dt > 0.0) || !(t_max >= dt) || save_stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "integrator spec needs dt > 0, t_max >= dt, save_stride >= 1 \
                 (got dt={dt}, t_max={t_max}, save_stride={save_stride})"
            )));
        }
        Ok(Self { dt, t_max, save_stride })
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn save_times(&self) -> Vec<f64> {
        (0..=self.n_steps())
            .step_by(self.save_stride)
            .map(|k| k as f64 * self.dt)
            .collect()
    }
}

/// One integrated path. `flagged` marks trajectories that left the finite
/// range (a rare but inevitable event with heavy-tailed jumps).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub flagged: bool,
}

/// Explicit Euler with exact stable increments:
/// `X_{k+1} = X_k + [b(X_k) + eps F(t_k) K(X_k)] dt + sigma(X_k) dL_k`,
/// with `sigma` evaluated at the pre-jump (left) state.
pub fn integrate_path(
    model: &SdeModel,
    x0: &[f64],
    spec: &IntegratorSpec,
    perturbation: Option<(&Perturbation, f64)>,
    stream: &mut RngStream,
) -> Result<Trajectory, Error> {
    if x0.len() != model.dim() {
        return Err(Error::InvalidParameter("x0 dimension mismatch".into()));
    }
    if let Some((_, eps)) = perturbation {
        if !eps.is_finite() {
            return Err(Error::InvalidParameter("perturbation amplitude must be finite".into()));
        }
    }
    let n = model.dim();
    let alpha = model.alpha();
    let dt = spec.dt;
    let jump_scale = dt.powf(1.0 / alpha);
    let n_steps = spec.n_steps();

    let mut times = Vec::with_capacity(n_steps / spec.save_stride + 2);
    let mut states = Vec::with_capacity(times.capacity());
    let mut flagged = false;

    if n == 1 {
        let mut x = x0[0];
        times.push(0.0);
        states.push(vec![x]);
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let mut b = model.drift1(x);
            if let Some((p, eps)) = perturbation {
                if eps != 0.0 {
                    b += eps * (p.time_profile)(t) * p.k1(x);
                }
            }
            let sigma = model.sigma1(x);
            let dl = jump_scale * stream.standard_stable(alpha);
            x += b * dt + sigma * dl;
            if !x.is_finite() || x.abs() > OVERFLOW_LIMIT {
                flagged = true;
                break;
            }
            if (k + 1) % spec.save_stride == 0 {
                times.push((k + 1) as f64 * dt);
                states.push(vec![x]);
            }
        }
    } else {
        let mut x = x0.to_vec();
        let mut b = vec![0.0; n];
        let mut kfield = vec![0.0; n];
        let mut sigma = vec![0.0; n * n];
        times.push(0.0);
        states.push(x.clone());
        'outer: for k in 0..n_steps {
            let t = k as f64 * dt;
            (model.drift)(&x, &mut b);
            if let Some((p, eps)) = perturbation {
                if eps != 0.0 {
                    let f = (p.time_profile)(t);
                    (p.space_field)(&x, &mut kfield);
                    for i in 0..n {
                        b[i] += eps * f * kfield[i];
                    }
                }
            }
            (model.diffusion)(&x, &mut sigma);
            let dl = crate::stable::standard_stable_vector(&model.stable, stream);
            for i in 0..n {
                let jump: f64 = (0..n).map(|j| sigma[i * n + j] * dl[j]).sum();
                x[i] += b[i] * dt + jump_scale * jump;
                if !x[i].is_finite() || x[i].abs() > OVERFLOW_LIMIT {
                    flagged = true;
                    break 'outer;
                }
            }
            if (k + 1) % spec.save_stride == 0 {
                times.push((k + 1) as f64 * dt);
                states.push(x.clone());
            }
        }
    }

    Ok(Trajectory { times, states, flagged })
}

/// Initial law of an ensemble.
#[derive(Clone)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// trajectory `i` starts from `samples[i % len]`
    Samples(Arc<Vec<Vec<f64>>>),
}

impl InitialLaw {
    fn state(&self, i: usize) -> &[f64] {
        match self {
            InitialLaw::Point(x) => x,
            InitialLaw::Samples(s) => &s[i % s.len()],
        }
    }
}

/// Ensemble statistics of named observables at the save times.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// `mean[obs][time]`
    pub observable_mean: Vec<Vec<f64>>,
    /// `stderr[obs][time]`
    pub stderr: Vec<Vec<f64>>,
    pub n_traj: usize,
    pub n_flagged: usize,
    pub seed: u64,
    pub model_name: String,
    pub warning: Option<String>,
}

/// Raw per-trajectory observable paths; `data[i]` holds trajectory `i` as
/// `n_times * n_obs` values (time-major), empty when the trajectory is
/// flagged.
pub struct ObservablePaths {
    pub times: Vec<f64>,
    pub data: Vec<Vec<f64>>,
    pub flagged: Vec<bool>,
}

/// Integrate `n_traj` trajectories and record the observables along each.
pub fn collect_observable_paths(
    model: &SdeModel,
    init: &InitialLaw,
    spec: &IntegratorSpec,
    perturbation: Option<(&Perturbation, f64)>,
    observables: &[(String, ScalarField)],
    n_traj: usize,
    master_seed: u64,
) -> Result<ObservablePaths, Error> {
    let times = spec.save_times();
    let n_times = times.len();
    let n_obs = observables.len();
    let results: Vec<(Vec<f64>, bool)> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut stream = RngStream::new(master_seed, i as u64);
            let traj = integrate_path(model, init.state(i), spec, perturbation, &mut stream)
                .expect("validated before the parallel loop");
            if traj.flagged {
                return (Vec::new(), true);
            }
            let mut row = Vec::with_capacity(n_times * n_obs);
            for s in &traj.states {
                for (_, f) in observables {
                    row.push(f(s));
                }
            }
            (row, false)
        })
        .collect();
    let mut data = Vec::with_capacity(n_traj);
    let mut flagged = Vec::with_capacity(n_traj);
    for (row, fl) in results {
        data.push(row);
        flagged.push(fl);
    }
    Ok(ObservablePaths { times, data, flagged })
}

/// Pairwise (cascade) sum; order-stable and accurate for large ensembles.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Ensemble means and standard errors of the requested observables.
pub fn run_ensemble(
    model: &SdeModel,
    init: &InitialLaw,
    spec: &IntegratorSpec,
    perturbation: Option<(&Perturbation, f64)>,
    observables: &[(String, ScalarField)],
    n_traj: usize,
    master_seed: u64,
) -> Result<EnsembleResult, Error> {
    if n_traj < 2 {
        return Err(Error::InvalidParameter("ensemble needs n_traj >= 2".into()));
    }
    let paths =
        collect_observable_paths(model, init, spec, perturbation, observables, n_traj, master_seed)?;
    let n_flagged = paths.flagged.iter().filter(|f| **f).count();
    let frac = n_flagged as f64 / n_traj as f64;
    if frac > FLAG_FAIL_FRACTION {
        return Err(Error::Reliability(format!(
            "{n_flagged}/{n_traj} trajectories diverged ({:.1}% > 10%)",
            frac * 100.0
        )));
    }
    let warning = (frac > FLAG_WARN_FRACTION).then(|| {
        format!(
            "{n_flagged}/{n_traj} trajectories diverged ({:.2}% > 1%); tail statistics are biased",
            frac * 100.0
        )
    });

    let n_times = paths.times.len();
    let n_obs = observables.len();
    let kept: Vec<&Vec<f64>> = paths
        .data
        .iter()
        .zip(&paths.flagged)
        .filter(|(_, fl)| !**fl)
        .map(|(d, _)| d)
        .collect();
    let m = kept.len() as f64;
    let mut mean = vec![vec![0.0; n_times]; n_obs];
    let mut stderr = vec![vec![0.0; n_times]; n_obs];
    let mut col = Vec::with_capacity(kept.len());
    for o in 0..n_obs {
        for t in 0..n_times {
            col.clear();
            col.extend(kept.iter().map(|row| row[t * n_obs + o]));
            let mu = pairwise_sum(&col) / m;
            let sq: Vec<f64> = col.iter().map(|v| (v - mu) * (v - mu)).collect();
            let var = pairwise_sum(&sq) / (m - 1.0);
            mean[o][t] = mu;
            stderr[o][t] = (var / m).sqrt();
        }
    }

    Ok(EnsembleResult {
        times: paths.times,
        observable_names: observables.iter().map(|(n, _)| n.clone()).collect(),
        observable_mean: mean,
        stderr,
        n_traj,
        n_flagged,
        seed: master_seed,
        model_name: model.name.clone(),
        warning,
    })
}

/// Long-run sampler of the invariant law: several independent chains, each
/// discarded for `burn_in` time units, then one retained state every
/// `thinning` time units.
pub fn sample_steady_state(
    model: &SdeModel,
    burn_in: f64,
    n_samples: usize,
    thinning: f64,
    dt: f64,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>, Error> {
    if !(burn_in > 0.0) || !(thinning > 0.0) || !(dt > 0.0) || n_samples == 0 {
        return Err(Error::InvalidParameter(
            "steady-state sampler needs burn_in, thinning, dt > 0 and n_samples >= 1".into(),
        ));
    }
    let n_chains = 32.min(n_samples);
    let per_chain = n_samples.div_ceil(n_chains);
    let burn_steps = (burn_in / dt).round() as usize;
    let thin_steps = ((thinning / dt).round() as usize).max(1);
    let alpha = model.alpha();
    let jump_scale = dt.powf(1.0 / alpha);
    let dim = model.dim();

    let chains: Vec<Result<Vec<Vec<f64>>, Error>> = (0..n_chains)
        .into_par_iter()
        .map(|c| {
            let mut stream = RngStream::new(master_seed, c as u64);
            let mut out = Vec::with_capacity(per_chain);
            if dim == 1 {
                let mut x = 0.0_f64;
                let step = |x: &mut f64, s: &mut RngStream| -> bool {
                    let b = model.drift1(*x);
                    let sg = model.sigma1(*x);
                    *x += b * dt + sg * jump_scale * s.standard_stable(alpha);
                    x.is_finite() && x.abs() <= OVERFLOW_LIMIT
                };
                let mut k = 0usize;
                while out.len() < per_chain {
                    if !step(&mut x, &mut stream) {
                        // restart the chain from the origin after a blow-up
                        x = 0.0;
                        k = 0;
                        continue;
                    }
                    k += 1;
                    if k >= burn_steps && (k - burn_steps) % thin_steps == 0 {
                        out.push(vec![x]);
                    }
                }
            } else {
                let spec = IntegratorSpec::new(dt, thinning.max(dt), thin_steps)?;
                let mut x = vec![0.0; dim];
                // burn-in by one long call, then marched in thinning blocks
                let burn_spec = IntegratorSpec::new(dt, burn_in, burn_steps.max(1))?;
                let t = integrate_path(model, &x, &burn_spec, None, &mut stream)?;
                x = t.states.last().unwrap().clone();
                while out.len() < per_chain {
                    let t = integrate_path(model, &x, &spec, None, &mut stream)?;
                    if t.flagged {
                        x = vec![0.0; dim];
                        continue;
                    }
                    x = t.states.last().unwrap().clone();
                    out.push(x.clone());
                }
            }
            Ok(out)
        })
        .collect();

    let mut samples = Vec::with_capacity(n_samples);
    for chain in chains {
        samples.extend(chain?);
    }
    samples.truncate(n_samples);
    Ok(samples)
}
