//! SDE model definitions, separable perturbations, and the numerical audit of
//! the standing assumptions (Holder drift/diffusion, uniform ellipticity,
//! uniform boundedness, dissipativity).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::expr::Expr;
use crate::special::sphere_surface;
use crate::stable::{levy_constant_1d, RngStream, StableParams};

/// Drift `b(x)`: writes an n-vector into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Diffusion `sigma(x)`: writes an n x n matrix (row-major) into `out`.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Scalar function of state.
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One dynamical system `dX = b(X) dt + sigma(X-) dL`.
#[derive(Clone)]
pub struct SdeModel {
    pub name: String,
    pub drift: VectorField,
    pub diffusion: MatrixField,
    pub stable: StableParams,
    /// true when `sigma` does not depend on `x`; lets the PDE side take the
    /// constant-coefficient spectral path
    pub constant_sigma: bool,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("stable", &self.stable)
            .finish()
    }
}

impl SdeModel {
    pub fn dim(&self) -> usize {
        self.stable.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.stable.alpha()
    }

    /// 1D drift evaluation.
    #[inline]
    pub fn drift1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        (self.drift)(&[x], &mut out);
        out[0]
    }

    /// 1D diffusion evaluation.
    #[inline]
    pub fn sigma1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        (self.diffusion)(&[x], &mut out);
        out[0]
    }

    /// Ornstein-Uhlenbeck-type model `b = -lambda x`, constant scalar sigma.
    pub fn stable_ou(lambda: f64, sigma: f64, alpha: f64) -> Result<Self, Error> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter("stable-ou needs lambda > 0".into()));
        }
        let stable = StableParams::new(alpha, 1)?;
        Ok(Self {
            name: format!("stable-ou(lambda={lambda})"),
            drift: Arc::new(move |x, out| out[0] = -lambda * x[0]),
            diffusion: Arc::new(move |_x, out| out[0] = sigma),
            stable,
            constant_sigma: true,
        })
    }

    /// Bounded-drift well `b = -a x / sqrt(1 + x^2)`, constant scalar sigma.
    pub fn tanh_well(a: f64, sigma: f64, alpha: f64) -> Result<Self, Error> {
        if !(a > 0.0) {
            return Err(Error::InvalidParameter("tanh-well needs a > 0".into()));
        }
        let stable = StableParams::new(alpha, 1)?;
        Ok(Self {
            name: format!("tanh-well(a={a})"),
            drift: Arc::new(move |x, out| out[0] = -a * x[0] / (1.0 + x[0] * x[0]).sqrt()),
            diffusion: Arc::new(move |_x, out| out[0] = sigma),
            stable,
            constant_sigma: true,
        })
    }

    /// 1D model from expression strings for `b(x)` and `sigma(x)`.
    pub fn custom(drift_expr: &str, sigma_expr: &str, alpha: f64) -> Result<Self, Error> {
        let stable = StableParams::new(alpha, 1)?;
        let b = Expr::parse(drift_expr)?;
        let s = Expr::parse(sigma_expr)?;
        // constant sigma iff the expression ignores x
        let probe: Vec<f64> = vec![-3.7, -1.0, 0.0, 0.9, 2.4];
        let s0 = s.eval(probe[0]);
        let constant_sigma = probe.iter().all(|&x| (s.eval(x) - s0).abs() < 1e-14);
        Ok(Self {
            name: format!("custom(b={drift_expr}, sigma={sigma_expr})"),
            drift: Arc::new(move |x, out| out[0] = b.eval(x[0])),
            diffusion: Arc::new(move |x, out| out[0] = s.eval(x[0])),
            stable,
            constant_sigma,
        })
    }
}

/// Separable drift perturbation `F(t) K(x)`.
#[derive(Clone)]
pub struct Perturbation {
    pub name: String,
    pub time_profile: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub space_field: VectorField,
    /// true when `K` does not depend on `x` (then it falls outside the decay
    /// hypotheses of the correlation identities; callers flag this)
    pub constant_k: bool,
    divergence: Option<ScalarField>,
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Perturbation").field("name", &self.name).finish()
    }
}

impl Perturbation {
    pub fn new(
        name: &str,
        time_profile: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        space_field: VectorField,
        divergence: Option<ScalarField>,
    ) -> Self {
        let mut probe = [0.0];
        let mut k0 = [0.0];
        space_field(&[0.0], &mut k0);
        let constant_k = [0.37, -1.2, 3.1, -7.7].iter().all(|&x| {
            space_field(&[x], &mut probe);
            probe[0] == k0[0]
        });
        Self {
            name: name.to_string(),
            time_profile,
            space_field,
            constant_k,
            divergence,
        }
    }

    /// 1D spatial field evaluation.
    #[inline]
    pub fn k1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        (self.space_field)(&[x], &mut out);
        out[0]
    }

    /// div K, by the explicit function when supplied, else central finite
    /// differences with step `h = 1e-5 (1 + |x|)`.
    pub fn div_k(&self, x: &[f64]) -> f64 {
        if let Some(div) = &self.divergence {
            return div(x);
        }
        let n = x.len();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-5 * (1.0 + norm);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut kp = vec![0.0; n];
        let mut km = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            xp[i] = x[i] + h;
            xm[i] = x[i] - h;
            (self.space_field)(&xp, &mut kp);
            (self.space_field)(&xm, &mut km);
            acc += (kp[i] - km[i]) / (2.0 * h);
            xp[i] = x[i];
            xm[i] = x[i];
        }
        acc
    }

    /// Constant spatial field `K = c` with unit step time profile.
    pub fn constant_step(c: f64) -> Self {
        Self::new(
            &format!("step*const({c})"),
            Arc::new(|t| if t >= 0.0 { 1.0 } else { 0.0 }),
            Arc::new(move |_x, out| out.fill(c)),
            Some(Arc::new(|_x| 0.0)),
        )
    }

    /// `K(x) = 1 / (1 + x^2)` (1D) with unit step time profile.
    pub fn lorentzian_step() -> Self {
        Self::new(
            "step*lorentzian",
            Arc::new(|t| if t >= 0.0 { 1.0 } else { 0.0 }),
            Arc::new(|x, out| out[0] = 1.0 / (1.0 + x[0] * x[0])),
            Some(Arc::new(|x: &[f64]| {
                let d = 1.0 + x[0] * x[0];
                -2.0 * x[0] / (d * d)
            })),
        )
    }

    /// Replace the time profile by a mollified impulse of width `w` centred at
    /// `t0` (unit integral).
    pub fn with_impulse(mut self, t0: f64, w: f64) -> Self {
        self.name = format!("impulse(t0={t0},w={w})*{}", self.name);
        self.time_profile = Arc::new(move |t| {
            let u = (t - t0) / w;
            if u.abs() >= 1.0 {
                0.0
            } else {
                // bump exp(-1/(1-u^2)) normalized to integral 1 over [-w, w]
                let c = 0.443993816168079438; // int_{-1}^{1} exp(-1/(1-u^2)) du
                (-1.0 / (1.0 - u * u)).exp() / (c * w)
            }
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipativityVerdict {
    Pass,
    Fail,
    FailsNearOrigin,
}

/// Probe set for the assumption audit: `count` uniform samples from the box
/// `[-half_width, half_width]^n`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ProbeSpec {
    pub half_width: f64,
    pub count: usize,
}

/// Numerical estimates for the standing assumptions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionAudit {
    /// empirical sup of |b(x)-b(y)| / |x-y|^beta over random probe pairs
    pub holder_drift: f64,
    /// empirical sup of ||sigma(x)-sigma(y)|| / |x-y|^beta
    pub holder_sigma: f64,
    pub holder_beta: f64,
    /// ellipticity constant: sup of max(s_max(sigma), 1/s_min(sigma))
    pub ellipticity_lambda: f64,
    /// sup-norm estimates: (sup |b|, sup ||sigma||)
    pub bound_c0: (f64, f64),
    /// inf over the probe annulus {1 <= |x| <= R} of -<x, b(x)> / |x|
    pub dissipativity_k1: f64,
    /// `Lambda^2 int_{|y|<1} |y|^2 nu + Lambda int_{|y|>=1} |y| nu`
    pub levy_c1: f64,
    pub verdict: DissipativityVerdict,
    pub probe_spec: ProbeSpec,
}

/// Numerical Levy-measure normalization in dimension `n`, fixed by
/// `int (1 - cos(y . e1)) nu(dy) = 1`.
pub fn levy_constant(alpha: f64, n: usize) -> f64 {
    if n == 1 {
        return levy_constant_1d(alpha);
    }
    // reduce to (r, theta): the angular factor is S^{n-2} with weight
    // sin^{n-2}(theta); for n = 2 the "sphere" S^0 carries measure 2.
    let s = if n == 2 { 2.0 } else { sphere_surface(n - 1) };
    let n_theta = 512;
    let h_theta = std::f64::consts::PI / n_theta as f64;
    let mut total = 0.0;
    // radial log-spaced Simpson as in the 1D case
    let (r_min, r_max) = (1e-6_f64, 1e6_f64);
    let panels = ((r_max / r_min).log10() * 2000.0) as usize;
    let lr = (r_max / r_min).ln() / panels as f64;
    let angular = |r: f64| {
        let mut acc = 0.0;
        for j in 0..=n_theta {
            let th = j as f64 * h_theta;
            let w = if j == 0 || j == n_theta {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (1.0 - (r * th.cos()).cos()) * th.sin().powi(n as i32 - 2);
        }
        acc * h_theta / 3.0
    };
    for p in 0..panels {
        let a = r_min * (lr * p as f64).exp();
        let b = r_min * (lr * (p + 1) as f64).exp();
        let m = 0.5 * (a + b);
        let f = |r: f64| angular(r) * r.powf(-1.0 - alpha);
        total += (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    }
    // small-r and large-r remainders are negligible at these cutoffs
    1.0 / (s * total)
}

/// Small-jump second moment `int_{0<|y|<1} |y|^2 nu(dy)`.
pub fn levy_small_moment(alpha: f64, n: usize) -> f64 {
    levy_constant(alpha, n) * sphere_surface(n) / (2.0 - alpha)
}

/// Large-jump first moment `int_{|y|>=1} |y| nu(dy)`.
pub fn levy_large_moment(alpha: f64, n: usize) -> f64 {
    levy_constant(alpha, n) * sphere_surface(n) / (alpha - 1.0)
}

/// Monte Carlo audit of assumptions (A)-(D) over a probe box.
pub fn audit_assumptions(
    model: &SdeModel,
    probe: ProbeSpec,
    stream: &mut RngStream,
) -> Result<AssumptionAudit, Error> {
    if probe.count == 0 || !(probe.half_width > 0.0) {
        return Err(Error::InvalidParameter("probe box must be nonempty".into()));
    }
    let n = model.dim();
    let alpha = model.alpha();
    let beta = 0.75;
    let draw = |s: &mut RngStream| -> Vec<f64> {
        (0..n)
            .map(|_| (2.0 * s.uniform() - 1.0) * probe.half_width)
            .collect()
    };

    let mut holder_drift = 0.0_f64;
    let mut holder_sigma = 0.0_f64;
    let mut lambda = 0.0_f64;
    let mut sup_b = 0.0_f64;
    let mut sup_sigma = 0.0_f64;
    let mut k1 = f64::INFINITY;
    let mut origin_ratio_sup = f64::NEG_INFINITY;

    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    let mut sx = vec![0.0; n * n];
    let mut sy = vec![0.0; n * n];

    for _ in 0..probe.count {
        let x = draw(stream);
        let y = draw(stream);
        (model.drift)(&x, &mut bx);
        (model.drift)(&y, &mut by);
        (model.diffusion)(&x, &mut sx);
        (model.diffusion)(&y, &mut sy);

        let dxy = dist(&x, &y);
        if dxy > 1e-12 {
            holder_drift = holder_drift.max(dist(&bx, &by) / dxy.powf(beta));
            holder_sigma = holder_sigma.max(dist(&sx, &sy) / dxy.powf(beta));
        }

        let (smax, smin) = singular_range(&sx, n);
        if smin < 1e-12 {
            return Err(Error::AssumptionViolated(format!(
                "sigma singular at probe point {x:?} (uniform ellipticity fails)"
            )));
        }
        lambda = lambda.max(smax.max(1.0 / smin));
        sup_b = sup_b.max(norm(&bx));
        sup_sigma = sup_sigma.max(norm(&sx));

        let r = norm(&x);
        let inner = x.iter().zip(&bx).map(|(a, b)| a * b).sum::<f64>();
        if r >= 1.0 {
            k1 = k1.min(-inner / r);
        } else if r > 1e-9 {
            origin_ratio_sup = origin_ratio_sup.max(inner / r);
        }
    }

    // random probes almost never land on a measure-zero degeneracy set, so
    // also check ellipticity at the origin, where diffusions like sigma = x
    // vanish
    (model.diffusion)(&vec![0.0; n], &mut sx);
    let (_, smin0) = singular_range(&sx, n);
    if smin0 < 1e-12 {
        return Err(Error::AssumptionViolated(
            "sigma singular at the origin (uniform ellipticity fails)".into(),
        ));
    }

    if !k1.is_finite() {
        return Err(Error::InvalidParameter(
            "probe box too small: no points in the annulus |x| >= 1".into(),
        ));
    }

    let c1 = lambda * lambda * levy_small_moment(alpha, n) + lambda * levy_large_moment(alpha, n);
    let annulus_ok = k1 > 0.0 && 2.0_f64.sqrt() * k1 > c1;
    let verdict = if !annulus_ok {
        DissipativityVerdict::Fail
    } else if origin_ratio_sup > -k1 {
        // continuous drifts cannot satisfy <x,b> <= -k1 |x| down to the
        // origin; report it separately instead of failing the model
        DissipativityVerdict::FailsNearOrigin
    } else {
        DissipativityVerdict::Pass
    };

    Ok(AssumptionAudit {
        holder_drift,
        holder_sigma,
        holder_beta: beta,
        ellipticity_lambda: lambda,
        bound_c0: (sup_b, sup_sigma),
        dissipativity_k1: k1,
        levy_c1: c1,
        verdict,
        probe_spec: probe,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn singular_range(m: &[f64], n: usize) -> (f64, f64) {
    if n == 1 {
        let s = m[0].abs();
        (s, s)
    } else {
        let mat = DMatrix::from_row_slice(n, n, m);
        let svd = mat.svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        (smax, smin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_well_annulus_k1() {
        // inf of 2|x|/sqrt(1+x^2) on [1, 50] is sqrt(2), attained at |x| = 1
        let model = SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap();
        let mut stream = RngStream::new(3, 0);
        let audit = audit_assumptions(
            &model,
            ProbeSpec { half_width: 50.0, count: 20_000 },
            &mut stream,
        )
        .unwrap();
        let exact = 2.0 / 2.0_f64.sqrt();
        assert!(
            (audit.dissipativity_k1 - exact).abs() / exact < 0.05,
            "k1 = {}",
            audit.dissipativity_k1
        );
        // sqrt(2) k1 = 2 falls short of C1 ~ 2.39, so a = 2 fails the
        // annulus comparison outright
        assert_eq!(audit.verdict, DissipativityVerdict::Fail);

        // a = 4 clears the annulus test (sqrt(2) k1 = 4 > C1), but no
        // continuous drift satisfies the linear bound down to the origin
        let strong = SdeModel::tanh_well(4.0, 1.0, 1.5).unwrap();
        let audit = audit_assumptions(
            &strong,
            ProbeSpec { half_width: 50.0, count: 20_000 },
            &mut RngStream::new(3, 1),
        )
        .unwrap();
        assert_eq!(audit.verdict, DissipativityVerdict::FailsNearOrigin);
    }

    #[test]
    fn identity_sigma_gives_unit_lambda() {
        let model = SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap();
        let mut stream = RngStream::new(4, 0);
        let audit = audit_assumptions(
            &model,
            ProbeSpec { half_width: 10.0, count: 1000 },
            &mut stream,
        )
        .unwrap();
        assert_eq!(audit.ellipticity_lambda, 1.0);
    }

    #[test]
    fn zero_drift_fails_dissipativity() {
        let model = SdeModel::custom("0*x", "1", 1.5).unwrap();
        let mut stream = RngStream::new(5, 0);
        let audit = audit_assumptions(
            &model,
            ProbeSpec { half_width: 10.0, count: 1000 },
            &mut stream,
        )
        .unwrap();
        assert_eq!(audit.verdict, DissipativityVerdict::Fail);
    }

    #[test]
    fn singular_sigma_is_a_distinct_error() {
        let model = SdeModel::custom("-x", "x", 1.5).unwrap();
        let mut stream = RngStream::new(6, 0);
        let err = audit_assumptions(
            &model,
            ProbeSpec { half_width: 10.0, count: 5000 },
            &mut stream,
        );
        assert!(matches!(err, Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn levy_moments_match_closed_forms_1d() {
        for &alpha in &[1.2_f64, 1.5, 1.8] {
            let c = levy_constant(alpha, 1);
            let small = levy_small_moment(alpha, 1);
            let large = levy_large_moment(alpha, 1);
            // adaptive-quadrature oracles of |y|^{1-alpha} and |y|^{-alpha};
            // both integrals get the analytic remainder beyond the cutoff
            // (the head y^{2-alpha}/(2-alpha) is not negligible near alpha=2)
            let a0 = 1e-9_f64;
            let small_quad = quad(|y| 2.0 * c * y.powf(1.0 - alpha), a0, 1.0, 400_000)
                + 2.0 * c * a0.powf(2.0 - alpha) / (2.0 - alpha);
            // truncate at B and add the analytic tail int_B^inf analytically:
            // for alpha near 1 the tail B^{1-alpha}/(alpha-1) decays slowly
            let b = 1e7_f64;
            let large_quad = quad(|y| 2.0 * c * y.powf(-alpha), 1.0, b, 400_000)
                + 2.0 * c * b.powf(1.0 - alpha) / (alpha - 1.0);
            assert!((small - small_quad).abs() / small < 1e-6, "alpha={alpha}");
            assert!((large - large_quad).abs() / large < 1e-4, "alpha={alpha}");
        }
    }

    // log-spaced Simpson
    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let lr = (b / a).ln() / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let x0 = a * (lr * p as f64).exp();
            let x1 = a * (lr * (p + 1) as f64).exp();
            let m = 0.5 * (x0 + x1);
            total += (x1 - x0) / 6.0 * (f(x0) + 4.0 * f(m) + f(x1));
        }
        total
    }

    #[test]
    fn drift_scaling_scales_k1_exactly() {
        let m1 = SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap();
        let m2 = SdeModel::tanh_well(6.0, 1.0, 1.5).unwrap();
        let probe = ProbeSpec { half_width: 30.0, count: 4000 };
        let a1 = audit_assumptions(&m1, probe, &mut RngStream::new(9, 0)).unwrap();
        let a2 = audit_assumptions(&m2, probe, &mut RngStream::new(9, 0)).unwrap();
        assert!(
            (a2.dissipativity_k1 - 3.0 * a1.dissipativity_k1).abs() < 1e-12,
            "{} vs {}",
            a2.dissipativity_k1,
            3.0 * a1.dissipativity_k1
        );
    }

    #[test]
    fn audit_is_deterministic_given_seed() {
        let model = SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap();
        let probe = ProbeSpec { half_width: 20.0, count: 2000 };
        let a = audit_assumptions(&model, probe, &mut RngStream::new(1, 2)).unwrap();
        let b = audit_assumptions(&model, probe, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(a.dissipativity_k1, b.dissipativity_k1);
        assert_eq!(a.holder_drift, b.holder_drift);
    }

    #[test]
    fn divergence_fallback_matches_explicit() {
        let p = Perturbation::lorentzian_step();
        let p_fd = Perturbation::new(
            "fd",
            Arc::new(|_| 1.0),
            Arc::new(|x, out| out[0] = 1.0 / (1.0 + x[0] * x[0])),
            None,
        );
        for &x in &[-3.0, -0.5, 0.0, 1.2, 7.0] {
            assert!((p.div_k(&[x]) - p_fd.div_k(&[x])).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn impulse_profile_has_unit_integral() {
        let p = Perturbation::constant_step(1.0).with_impulse(1.0, 0.25);
        let n = 20_000;
        let h = 2.0 / n as f64;
        let mass: f64 = (0..=n)
            .map(|i| (p.time_profile)(i as f64 * h) * h)
            .sum::<f64>();
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}
