//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use levy_fdt::fokker_planck::{evolve_density, solve_conjugate, solve_stationary, FpSolveSpec};
use levy_fdt::model::{Perturbation, SdeModel};
use levy_fdt::nonlocal::{
    apply_adjoint, apply_generator, fractional_laplacian, heat_kernel_diagnostic, FieldKind,
    Grid1D, GridField,
};
use levy_fdt::response::{
    response_direct, smoothed_derivative, verify_fdt, McSpec, ResponseMethod, TimeGrid,
    VerifySpec,
};
use levy_fdt::simulate::{run_ensemble, sample_steady_state, InitialLaw, IntegratorSpec};
use levy_fdt::stable::RngStream;
use levy_fdt::testutil::slope_with_stderr;

fn report(number: u32, name: &str, pass: bool, started: Instant) {
    println!(
        "criterion {number} ({name}): {} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {number} ({name}) failed");
}

fn grid() -> Grid1D {
    Grid1D::new(32.0, 2048).unwrap()
}

fn tanh_well() -> SdeModel {
    SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap()
}

#[test]
fn criterion_1_sampler_characteristic_function() {
    let started = Instant::now();
    let n = 1_000_000usize;
    let xis = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut worst = 0.0_f64;
    for (ai, alpha) in [1.2, 1.5, 1.8].into_iter().enumerate() {
        let mut stream = RngStream::new(1000 + ai as u64, 0);
        let mut sums = [0.0_f64; 5];
        for _ in 0..n {
            let s = stream.standard_stable(alpha);
            for (k, xi) in xis.iter().enumerate() {
                sums[k] += (xi * s).cos();
            }
        }
        for (k, xi) in xis.iter().enumerate() {
            let expected = (-xi.powf(alpha)).exp();
            worst = worst.max((sums[k] / n as f64 - expected).abs());
        }
    }
    let pass = worst < 5e-3 && started.elapsed().as_secs_f64() < 10.0;
    println!("  max characteristic-function error: {worst:.2e}");
    report(1, "stable sampler characteristic function", pass, started);
}

#[test]
fn criterion_2_stationary_linear_drift_oracle() {
    let started = Instant::now();
    let model = SdeModel::stable_ou(1.0, 1.0, 1.5).unwrap();
    let g = grid();
    let (p_ss, _) = solve_stationary(&model, g, &FpSolveSpec::default()).unwrap();
    // stationary characteristic function exp(-|xi|^1.5 / 1.5), inverted by
    // Simpson quadrature
    let alpha = 1.5_f64;
    let xi_max = 40.0;
    let m = 16000usize;
    let h = xi_max / m as f64;
    let nodes: Vec<(f64, f64)> = (0..=m)
        .map(|j| {
            let xi = j as f64 * h;
            let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            (xi, w * (-xi.powf(alpha) / alpha).exp())
        })
        .collect();
    let oracle: Vec<f64> = g
        .xs()
        .iter()
        .map(|&x| {
            let s: f64 = nodes.iter().map(|&(xi, w)| w * (xi * x).cos()).sum();
            s * h / 3.0 / std::f64::consts::PI
        })
        .collect();
    let of = GridField::new(g, oracle, FieldKind::Density).unwrap();
    let l1 = p_ss.l1_distance(&of);
    println!("  L1 distance to the Fourier-inversion oracle: {l1:.2e}");
    let pass = l1 < 1e-2 && started.elapsed().as_secs_f64() < 60.0;
    report(2, "stationary density vs linear-drift oracle", pass, started);
}

#[test]
fn criterion_3_monte_carlo_pde_density_agreement() {
    let started = Instant::now();
    let model = tanh_well();
    let g = grid();
    let (p_ss, _) = solve_stationary(&model, g, &FpSolveSpec::default()).unwrap();
    let n_samples = 1_000_000usize;
    let samples = sample_steady_state(&model, 20.0, n_samples, 1.0, 1e-3, 99).unwrap();

    // bin both into 0.25-wide cells to keep the histogram noise below the
    // tolerance
    let cells_per_bin = 8usize;
    let n_bins = g.len() / cells_per_bin;
    let bin_width = 2.0 * g.half_width() / n_bins as f64;
    let mut hist = vec![0.0_f64; n_bins];
    for s in &samples {
        let x = s[0];
        if let Some(cell) = g.cell(x) {
            hist[cell / cells_per_bin] += 1.0;
        }
    }
    let mut l1 = 0.0;
    for b in 0..n_bins {
        let hist_density = hist[b] / (n_samples as f64 * bin_width);
        let p_mean = p_ss.values[b * cells_per_bin..(b + 1) * cells_per_bin]
            .iter()
            .sum::<f64>()
            / cells_per_bin as f64;
        l1 += (hist_density - p_mean).abs() * bin_width;
    }
    println!("  L1 distance between histogram and solver density: {l1:.2e}");
    report(3, "Monte Carlo vs PDE stationary density", l1 < 2.5e-2, started);
}

#[test]
fn criterion_4_response_cross_validation() {
    let started = Instant::now();
    let model = tanh_well();
    let pert = Perturbation::lorentzian_step();
    let obs = levy_fdt::response::Observable::tanh();
    let report_json = verify_fdt(&model, &pert, &obs, &VerifySpec::flagship(1)).unwrap();
    for c in &report_json.pairwise_checks {
        println!(
            "  {} vs {}: sup_diff={:.3e} tol={:.3e} {}",
            c.a.label(),
            c.b.label(),
            c.sup_diff,
            c.tol,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    report(4, "four-method response cross-validation", report_json.pass, started);
}

#[test]
fn criterion_5_first_order_in_epsilon() {
    let started = Instant::now();
    let model = tanh_well();
    let pert = Perturbation::lorentzian_step();
    let obs = levy_fdt::response::Observable::tanh();
    let (_, linearity) = response_direct(
        &model,
        &pert,
        &obs,
        &[0.1, 0.05, 0.025],
        &TimeGrid { t_max: 3.0, dt: 0.1 },
        &McSpec { master_seed: 5, ..Default::default() },
    )
    .unwrap();
    let order = linearity.empirical_order.unwrap();
    println!("  empirical order of the eps-residual: {order:.2}");
    report(5, "first-order perturbation expansion", order >= 1.5, started);
}

#[test]
fn criterion_6_moment_boundedness() {
    let started = Instant::now();
    // the moment bound requires the dissipativity balance sqrt(2) k1 > C1,
    // which needs a restoring force that grows with |x|: lambda = 2 OU
    // qualifies, while any bounded drift leaves the occupation-time tail
    // index at alpha - 1 < 1 and E sqrt(1 + X^2) diverges like sqrt(t)
    let model = SdeModel::stable_ou(2.0, 1.0, 1.5).unwrap();
    let spec = IntegratorSpec::new(1e-3, 50.0, 100).unwrap();
    let obs: Vec<(String, levy_fdt::model::ScalarField)> = vec![(
        "root_moment".into(),
        std::sync::Arc::new(|x: &[f64]| (1.0 + x[0] * x[0]).sqrt()),
    )];
    // sqrt(1 + x^2) has infinite variance under the stable stationary law,
    // so the slope error is estimated from independent sub-ensembles rather
    // than a single OLS fit
    let n_batches = 16;
    let mut slopes = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let result = run_ensemble(
            &model,
            &InitialLaw::Point(vec![0.0]),
            &spec,
            None,
            &obs,
            1000,
            6 + b as u64,
        )
        .unwrap();
        let half: Vec<(f64, f64)> = result
            .times
            .iter()
            .zip(&result.observable_mean[0])
            .filter(|(t, _)| **t >= 25.0)
            .map(|(t, v)| (*t, *v))
            .collect();
        let ts: Vec<f64> = half.iter().map(|p| p.0).collect();
        let vs: Vec<f64> = half.iter().map(|p| p.1).collect();
        let (s, _) = slope_with_stderr(&ts, &vs);
        slopes.push(s);
    }
    let slope = slopes.iter().sum::<f64>() / n_batches as f64;
    let var = slopes.iter().map(|s| (s - slope) * (s - slope)).sum::<f64>()
        / (n_batches as f64 - 1.0);
    let se = (var / n_batches as f64).sqrt();
    println!("  slope of E sqrt(1+X^2) on the second half: {slope:.2e} (se {se:.2e})");
    report(6, "moment boundedness along the flow", slope.abs() < 2.0 * se, started);
}

#[test]
fn criterion_7_structural_invariants() {
    let started = Instant::now();
    let model = tanh_well();
    let g = grid();
    let mut pass = true;

    // adjoint duality <Au, phi> = <u, A* phi> on 100 random smooth pairs
    let mut stream = RngStream::new(77, 0);
    let rand_field = |stream: &mut RngStream| {
        let a: f64 = stream.uniform();
        let b: f64 = stream.uniform();
        let c: f64 = stream.uniform();
        GridField::from_fn(g, FieldKind::Generic, move |x| {
            (-x * x / (2.0 * (4.0 + 20.0 * a) * (4.0 + 20.0 * a))).exp()
                * ((b * 3.0) * x + c).cos()
        })
    };
    let mut worst_duality = 0.0_f64;
    let mut worst_mass = 0.0_f64;
    for _ in 0..100 {
        let u = rand_field(&mut stream);
        let phi = rand_field(&mut stream);
        let au = apply_generator(&model, &u);
        let astar_phi = apply_adjoint(&model, &phi);
        let lhs = au.dot(&phi);
        let rhs = u.dot(&astar_phi);
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        worst_duality = worst_duality.max((lhs - rhs).abs() / scale);
        worst_mass = worst_mass.max(astar_phi.mass().abs() / astar_phi.l1_norm().max(1e-300));
    }
    println!("  duality relative error: {worst_duality:.2e}");
    println!("  adjoint mass annihilation: {worst_mass:.2e}");
    pass &= worst_duality < 1e-6 && worst_mass < 1e-8;

    // fractional Laplacian eigenfunction identity
    let k = 12.0 * std::f64::consts::PI / g.half_width();
    let mode = GridField::from_fn(g, FieldKind::Generic, |x| (k * x).cos());
    let lap = fractional_laplacian(&mode, 1.5);
    let eig_err = (0..g.len())
        .map(|i| (lap.values[i] - k.powf(1.5) * mode.values[i]).abs())
        .fold(0.0_f64, f64::max)
        / k.powf(1.5);
    println!("  eigenfunction identity error: {eig_err:.2e}");
    pass &= eig_err < 1e-10;

    // conjugate solve: residual and gauge
    let (p_ss, _) = solve_stationary(&model, g, &FpSolveSpec::default()).unwrap();
    let pert = Perturbation::lorentzian_step();
    let conj = solve_conjugate(&model, &p_ss, &pert).unwrap();
    let source = levy_fdt::fokker_planck::perturbation_source(&pert, &p_ss);
    let rel_resid = conj.residual / source.l1_norm();
    let gauge_mass = conj.v.mass().abs();
    println!("  conjugate relative residual: {rel_resid:.2e}; gauge mass: {gauge_mass:.2e}");
    pass &= rel_resid < 1e-6 && gauge_mass < 1e-8;

    // differencing stencil annihilates constants exactly
    let constants = vec![0.8371; 50];
    let d = smoothed_derivative(&constants, 0.1, 5).unwrap();
    let stencil_exact = d.iter().all(|v| *v == 0.0);
    println!("  stencil on constants exactly zero: {stencil_exact}");
    pass &= stencil_exact;

    // negative control: a sign-flipped correlation weight must break the
    // cross-validation
    let obs = levy_fdt::response::Observable::tanh();
    let mut spec = VerifySpec::flagship(2);
    spec.corrupt_y = true;
    spec.mc.n_traj = 10_000;
    spec.t_grid = TimeGrid { t_max: 1.5, dt: 0.1 };
    let negative = verify_fdt(&model, &pert, &obs, &spec).unwrap();
    let flipped_check = negative
        .pairwise_checks
        .iter()
        .find(|c| c.a == ResponseMethod::Agarwal && c.b == ResponseMethod::Semigroup)
        .unwrap();
    println!(
        "  negative control (flipped weight) fails as expected: {}",
        !flipped_check.pass
    );
    pass &= !flipped_check.pass && !negative.pass;

    report(7, "structural invariant suite", pass, started);
}

#[test]
fn criterion_8_short_time_kernel_shape() {
    let started = Instant::now();
    let model = SdeModel::custom("0*x", "1", 1.5).unwrap();
    let g = grid();
    let diag = heat_kernel_diagnostic(&model, g, 0.05, 0.0).unwrap();
    println!(
        "  kernel ratio range on |x| <= 5: [{:.3}, {:.3}]",
        diag.ratio_min, diag.ratio_max
    );
    let band_ok = diag.ratio_min >= 0.1 && diag.ratio_max <= 10.0;

    // peak self-similarity: max p over the grid scales as 2^(-1/alpha)
    // between t and 2t
    let h = g.spacing();
    let mut p0 = GridField::from_fn(g, FieldKind::Density, |x| (-x * x / (2.0 * h * h)).exp());
    p0.clamp_normalize();
    let peak_at = |t_end: f64| {
        let spec = FpSolveSpec { t_end, ..Default::default() };
        let snaps = evolve_density(&model, &p0, &spec, None, t_end).unwrap();
        snaps.last().unwrap().field.sup_norm()
    };
    let ratio = peak_at(0.1) / peak_at(0.05);
    let expected = 2.0_f64.powf(-1.0 / 1.5);
    let scale_err = (ratio / expected - 1.0).abs();
    println!(
        "  peak scaling ratio {ratio:.4} vs {expected:.4} (error {:.2}%)",
        100.0 * scale_err
    );
    report(8, "short-time kernel shape and scaling", band_ok && scale_err < 0.05, started);
}
