//! CSV and JSON emission with provenance headers (config hash, seed,
//! package version) so every file can be traced back to its run.

use std::io::Write;
use std::path::Path;

use crate::error::Error;
use crate::nonlocal::GridField;
use crate::response::ResponseCurve;
use crate::simulate::EnsembleResult;

/// Provenance stamp written as `#` comment lines at the top of every CSV.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn header(&self) -> String {
        format!(
            "# version: {}\n# config_hash: {}\n# seed: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.config_hash,
            self.seed
        )
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// `(x, value)` rows with a grid-description comment.
pub fn write_grid_field_csv(
    path: &Path,
    field: &GridField,
    prov: &Provenance,
) -> Result<(), Error> {
    let mut out = prov.header();
    out.push_str(&format!(
        "# grid: half_width={}, n_points={}\n",
        field.grid.half_width(),
        field.grid.len()
    ));
    out.push_str("x,value\n");
    for i in 0..field.grid.len() {
        out.push_str(&format!("{:.17e},{:.17e}\n", field.grid.x(i), field.values[i]));
    }
    write_atomic(path, &out)
}

/// `(t, value, stderr, method)` rows.
pub fn write_response_csv(
    path: &Path,
    curves: &[&ResponseCurve],
    prov: &Provenance,
) -> Result<(), Error> {
    let mut out = prov.header();
    out.push_str("t,value,stderr,method\n");
    for c in curves {
        for i in 0..c.times.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{}\n",
                c.times[i],
                c.values[i],
                c.stderr[i],
                c.method.label()
            ));
        }
    }
    write_atomic(path, &out)
}

/// Ensemble means: one `t` column plus `<name>_mean` and `<name>_stderr`
/// per observable.
pub fn write_ensemble_csv(
    path: &Path,
    result: &EnsembleResult,
    prov: &Provenance,
) -> Result<(), Error> {
    let mut out = prov.header();
    out.push_str(&format!("# model: {}\n", result.model_name));
    if let Some(w) = &result.warning {
        out.push_str(&format!("# warning: {w}\n"));
    }
    out.push('t');
    for name in &result.observable_names {
        out.push_str(&format!(",{name}_mean,{name}_stderr"));
    }
    out.push('\n');
    for (ti, t) in result.times.iter().enumerate() {
        out.push_str(&format!("{t:.17e}"));
        for o in 0..result.observable_names.len() {
            out.push_str(&format!(
                ",{:.17e},{:.17e}",
                result.observable_mean[o][ti], result.stderr[o][ti]
            ));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Any serializable report as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("JSON serialization failed: {e}")))?;
    write_atomic(path, &text)
}
