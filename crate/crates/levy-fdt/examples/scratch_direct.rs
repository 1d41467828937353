// scratch diagnostic: tanh-well stationary tail mass, PDE-vs-MC shape after
// conditioning to the window, and the instant-response quadrature vs the
// plain MC stationary average E[K O'].
use levy_fdt::fokker_planck::{solve_stationary, FpSolveSpec};
use levy_fdt::model::{Perturbation, SdeModel};
use levy_fdt::nonlocal::Grid1D;
use levy_fdt::response::{instant_response, Observable};
use levy_fdt::simulate::sample_steady_state;

fn main() {
    let model = SdeModel::tanh_well(2.0, 1.0, 1.5).unwrap();
    let pert = Perturbation::lorentzian_step();
    let obs = Observable::tanh();
    let n = 400_000usize;
    let samples = sample_steady_state(&model, 20.0, n, 1.0, 1e-3, 99).unwrap();
    let xs: Vec<f64> = samples.iter().map(|s| s[0]).collect();

    for v in [4.0, 8.0, 16.0, 32.0, 64.0, 128.0] {
        let frac = xs.iter().filter(|x| x.abs() > v).count() as f64 / n as f64;
        println!("P(|X| > {v:5.0}) = {frac:.4}   (0.4/sqrt(v) = {:.4})", 0.4 / v.sqrt());
    }

    // E[K(x) O'(x)] by plain MC (O = tanh, O' = sech^2)
    let (mean_ko, se) = {
        let vals: Vec<f64> = xs
            .iter()
            .map(|&x| pert.k1(x) / x.cosh().powi(2))
            .collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
        (m, (var / n as f64).sqrt())
    };
    println!("MC E[K O'] = {mean_ko:.4} +- {se:.1e} (iid se; chain-correlated)");

    for (l, np) in [(32.0, 2048usize), (128.0, 8192), (512.0, 32768)] {
        let g = Grid1D::new(l, np).unwrap();
        let (p_ss, _) = match solve_stationary(&model, g, &FpSolveSpec::default()) {
            Ok(r) => r,
            Err(e) => {
                println!("L={l}: solve failed: {e}");
                continue;
            }
        };
        let r0 = instant_response(&p_ss, &pert, &obs);
        // conditional-shape L1: histogram of in-window samples, renormalized
        let cells_per_bin = (np / 256).max(1);
        let n_bins = np / cells_per_bin;
        let bw = 2.0 * l / n_bins as f64;
        let mut hist = vec![0.0_f64; n_bins];
        let mut kept = 0usize;
        for &x in &xs {
            if let Some(c) = g.cell(x) {
                hist[c / cells_per_bin] += 1.0;
                kept += 1;
            }
        }
        let mut l1_raw = 0.0;
        let mut l1_cond = 0.0;
        for b in 0..n_bins {
            let p_mean = p_ss.values[b * cells_per_bin..(b + 1) * cells_per_bin]
                .iter()
                .sum::<f64>()
                / cells_per_bin as f64;
            let raw = hist[b] / (n as f64 * bw);
            let cond = hist[b] / (kept as f64 * bw);
            l1_raw += (raw - p_mean).abs() * bw;
            l1_cond += (cond - p_mean).abs() * bw;
        }
        println!(
            "L={l:5} n={np}: R(0) quadrature={r0:.4}  L1_raw={l1_raw:.3e}  L1_conditional={l1_cond:.3e}  in-window={:.4}",
            kept as f64 / n as f64
        );
    }
}
