//! Symmetric alpha-stable random variates and Levy-process increments.
//!
//! The target law is the standard symmetric alpha-stable distribution with
//! characteristic function `E exp(i <xi, S>) = exp(-|xi|^alpha)`, restricted to
//! `1 < alpha < 2`. One-dimensional variates use the exact trigonometric
//! (Chambers-Mallows-Stuck) construction from two uniforms; isotropic vectors
//! in dimension `n >= 2` are built by Gaussian subordination against a positive
//! (alpha/2)-stable variate, which reproduces the rotationally invariant Levy
//! measure `c_alpha dy / |y|^{n+alpha}` exactly.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::Error;

/// Stability index and dimension of the driving process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    alpha: f64,
    dim: usize,
}

impl StableParams {
    pub fn new(alpha: f64, dim: usize) -> Result<Self, Error> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "stability index must satisfy 1 < alpha < 2, got {alpha}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(Self { alpha, dim })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// One increment `L_{t+dt} - L_t` of the stable process.
///
/// By self-similarity the increment equals `dt^{1/alpha} * S` in law, with `S`
/// a standard stable variate; the construction is exact, not a truncation.
#[derive(Debug, Clone)]
pub struct LevyIncrement {
    pub dt: f64,
    pub value: Vec<f64>,
}

/// Deterministic per-trajectory RNG stream.
///
/// Streams are derived from `(master seed, stream index)` only, so any number
/// of streams can be consumed concurrently and a given stream always yields
/// the same sequence regardless of how work is partitioned across workers.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self { rng }
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // open (0,1): both endpoints break log/tan below
        loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 && u < 1.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        // Box-Muller; one value per call keeps the stream layout simple.
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// One standard symmetric alpha-stable variate (CMS construction).
    #[inline]
    pub fn standard_stable(&mut self, alpha: f64) -> f64 {
        let u = PI * (self.uniform() - 0.5); // uniform on (-pi/2, pi/2)
        let w = -self.uniform().ln(); // Exp(1)
        let s = (alpha * u).sin() / u.cos().powf(1.0 / alpha);
        let t = ((1.0 - alpha) * u).cos() / w;
        s * t.powf((1.0 - alpha) / alpha)
    }

    /// Positive stable variate with Laplace transform `exp(-s^a)`, `0 < a < 1`
    /// (Kanter's representation); used for Gaussian subordination.
    #[inline]
    pub fn positive_stable(&mut self, a: f64) -> f64 {
        let u = PI * self.uniform(); // uniform on (0, pi)
        let w = -self.uniform().ln();
        let num = (a * u).sin().powf(a) * ((1.0 - a) * u).sin().powf(1.0 - a);
        let ratio = num / u.sin();
        (ratio / w).powf((1.0 - a) / a) * ratio
    }
}

/// Draw one standard isotropic stable vector in `params.dim` dimensions.
#[inline]
pub fn standard_stable_vector(params: &StableParams, stream: &mut RngStream) -> Vec<f64> {
    if params.dim == 1 {
        vec![stream.standard_stable(params.alpha)]
    } else {
        // S = sqrt(2 A) Z with E exp(-s A) = exp(-s^{alpha/2}) gives
        // E exp(i xi . S) = E exp(-A |xi|^2) = exp(-|xi|^alpha).
        let a = stream.positive_stable(params.alpha / 2.0);
        let scale = (2.0 * a).sqrt();
        (0..params.dim).map(|_| scale * stream.standard_normal()).collect()
    }
}

/// I.i.d. samples of the standard symmetric stable law.
pub fn sample_stable(
    params: &StableParams,
    count: usize,
    stream: &mut RngStream,
) -> Result<Vec<Vec<f64>>, Error> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    Ok((0..count).map(|_| standard_stable_vector(params, stream)).collect())
}

/// One increment of the stable process over a step `dt`.
pub fn levy_increment(
    params: &StableParams,
    dt: f64,
    stream: &mut RngStream,
) -> Result<LevyIncrement, Error> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let scale = dt.powf(1.0 / params.alpha);
    let mut value = standard_stable_vector(params, stream);
    for v in &mut value {
        *v *= scale;
    }
    Ok(LevyIncrement { dt, value })
}

/// Scalar fast path for the 1D integrator hot loop.
#[inline]
pub fn levy_increment_1d(alpha: f64, dt_inv_alpha_scale: f64, stream: &mut RngStream) -> f64 {
    dt_inv_alpha_scale * stream.standard_stable(alpha)
}

/// Pointwise density of the standard 1D symmetric stable law by numerical
/// Fourier inversion: `p(x) = (1/pi) int_0^inf cos(xi x) exp(-xi^alpha) dxi`.
///
/// Test oracle; `resolution` multiplies the quadrature density for
/// self-consistency checks under refinement.
pub fn stable_density_oracle(
    params: &StableParams,
    xs: &[f64],
    resolution: f64,
) -> Result<Vec<f64>, Error> {
    if params.dim != 1 {
        return Err(Error::Unsupported(
            "density oracle is 1D only; n >= 2 inversion is out of scope".into(),
        ));
    }
    let alpha = params.alpha;
    // exp(-xi^alpha) < 1e-18 beyond this cutoff
    let xi_max = (18.0 * std::f64::consts::LN_10).powf(1.0 / alpha);
    let x_scale = xs.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    // resolve the cos(xi x) oscillation for the widest requested x; 256
    // points per period keeps the Simpson tail error below 1e-8 pointwise,
    // so the density integrates to 1 within 1e-6 even over [-200, 200]
    let n_base = (256.0 * x_scale * xi_max / PI).ceil() as usize;
    let n = ((n_base.max(20_000) as f64) * resolution) as usize;
    let n = n + (n % 2); // Simpson needs an even interval count
    let h = xi_max / n as f64;
    // the CF factor and Simpson weight are x-independent; precompute once
    let weights: Vec<f64> = (0..=n)
        .map(|k| {
            let xi = k as f64 * h;
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * (-xi.powf(alpha)).exp()
        })
        .collect();
    Ok(xs
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for (k, &w) in weights.iter().enumerate() {
                acc += w * (k as f64 * h * x).cos();
            }
            acc * h / 3.0 / PI
        })
        .collect())
}

/// Tail probability `P(S > x)` of the standard 1D stable law, `x > 0`, via
/// `P(S > x) = 1/2 - (1/pi) int_0^inf sin(xi x)/xi exp(-xi^alpha) dxi`.
pub fn stable_tail_oracle(alpha: f64, x: f64) -> f64 {
    let xi_max = (18.0 * std::f64::consts::LN_10).powf(1.0 / alpha);
    let n_base = (64.0 * x.abs() * xi_max / PI).ceil() as usize;
    let n = n_base.max(40_000);
    let n = n + (n % 2);
    let h = xi_max / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let xi = k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        // sin(xi x)/xi -> x as xi -> 0
        let f = if xi == 0.0 { x } else { (xi * x).sin() / xi };
        acc += w * f * (-xi.powf(alpha)).exp();
    }
    0.5 - acc * h / 3.0 / PI
}

/// Numerical normalization `c_alpha` of the 1D Levy measure, fixed by the
/// identity `int (1 - cos(xi y)) nu(dy) = |xi|^alpha` at `xi = 1`.
pub fn levy_constant_1d(alpha: f64) -> f64 {
    // int_R (1 - cos y)/|y|^{1+alpha} dy = 2 int_0^inf (1 - cos y) y^{-1-alpha} dy.
    // Near 0 the integrand is ~ y^{1-alpha}/2; start the quadrature at delta and
    // add the series correction delta^{2-alpha}/(2 (2-alpha)).
    let delta = 1e-6_f64;
    let correction = delta.powf(2.0 - alpha) / (2.0 - alpha);
    // beyond y_max the remainder is 2 int y^{-1-alpha} (1 - cos) dy; use the
    // mean value 1 for the oscillating part: remainder ~ 2/alpha y_max^-alpha
    let y_max = 1e6_f64;
    let tail = 2.0 / alpha * y_max.powf(-alpha);
    let mut total = 0.0;
    // log-spaced Simpson panels
    let decades = (y_max / delta).log10();
    let panels = (decades * 4000.0) as usize;
    let lr = (y_max / delta).ln() / panels as f64;
    for p in 0..panels {
        let a = delta * (lr * p as f64).exp();
        let b = delta * (lr * (p + 1) as f64).exp();
        let m = 0.5 * (a + b);
        let f = |y: f64| 2.0 * (1.0 - y.cos()) * y.powf(-1.0 - alpha);
        total += (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    }
    1.0 / (total + correction + tail)
}
