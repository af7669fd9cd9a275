//! Satellite-drag CSV ingestion.
//!
//! The drag dataset has seven physical inputs plus one drag-coefficient
//! output. Inputs are min-max scaled to [0,1] using the *fixed*
//! simulator design ranges below (not data-derived ranges, so train and
//! test scale identically); values outside a range are clamped and
//! counted, since simulator exports in the wild carry boundary
//! rounding. The drag output is left on its raw scale — reported
//! metrics are in raw drag units.
//!
//! [`builtin_synthetic_drag`] is a smooth heteroskedastic stand-in
//! generator over the same input ranges, used wherever the real export
//! is not on disk; its closed-form conditional mean and noise scale
//! make oracle checks possible.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::error::Error;
use crate::rng::SeedTree;
use crate::sim::dataset::{DatasetMeta, Dims, TripleDataset};
use crate::sim::{ForwardModel, ModelKind, TrainingTriple};
use crate::Result;

/// Fixed input design ranges, in column order: name, low, high.
pub const INPUT_RANGES: [(&str, f64, f64); 7] = [
    ("velocity", 5500.0, 9500.0),
    ("surface_temperature", 100.0, 500.0),
    ("atmospheric_temperature", 200.0, 2000.0),
    ("yaw", -std::f64::consts::PI, std::f64::consts::PI),
    ("pitch", -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
    ("normal_energy_ac", 0.0, 1.0),
    ("tangential_momentum_ac", 0.0, 1.0),
];

/// Output column name.
pub const DRAG_COLUMN: &str = "drag";

/// Scale one raw input to [0,1] by its design range; the flag reports
/// whether clamping occurred.
pub fn scale_input(col: usize, raw: f64) -> (f64, bool) {
    let (_, lo, hi) = INPUT_RANGES[col];
    let u = (raw - lo) / (hi - lo);
    if (0.0..=1.0).contains(&u) {
        (u, false)
    } else {
        (u.clamp(0.0, 1.0), true)
    }
}

/// Map a scaled value in [0,1] back to raw units.
pub fn unscale_input(col: usize, u: f64) -> f64 {
    let (_, lo, hi) = INPUT_RANGES[col];
    lo + u * (hi - lo)
}

/// Result of [`load_satellite_csv`]: the seeded split plus ingestion
/// diagnostics.
#[derive(Debug)]
pub struct SatelliteSplit {
    pub train: TripleDataset,
    pub test: TripleDataset,
    /// Number of input cells that fell outside their design range and
    /// were clamped.
    pub n_clamped: usize,
    pub n_rows: usize,
}

/// Read a satellite export, scale inputs, and split rows into
/// train/test by a seeded shuffle.
///
/// Columns resolve by header name (the names in [`INPUT_RANGES`] plus
/// `drag`, case-insensitive); an export with unrecognized names but
/// exactly eight columns is taken positionally in design order with
/// drag last. In the triples the drag output occupies the θ slot and
/// the seven scaled inputs the y slot (the inputs are pure
/// conditioning information); each row gets a fresh uniform τ.
pub fn load_satellite_csv(
    path: &Path,
    train_fraction: f64,
    seed: u64,
) -> Result<SatelliteSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let col_of = resolve_columns(rdr.headers()?)?;

    let mut rows: Vec<([f64; 7], f64)> = Vec::new();
    let mut n_clamped = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            let field = rec.get(c).ok_or_else(|| {
                Error::Parse(format!("line {line}: missing column {c}"))
            })?;
            field.trim().parse::<f64>().map_err(|e| {
                Error::Parse(format!("line {line}: bad float '{field}': {e}"))
            })
        };
        let mut inputs = [0.0f64; 7];
        for (j, slot) in inputs.iter_mut().enumerate() {
            let (u, clamped) = scale_input(j, parse(col_of[j])?);
            n_clamped += clamped as usize;
            *slot = u;
        }
        rows.push((inputs, parse(col_of[7])?));
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "satellite file {} has a header but no data rows",
            path.display()
        )));
    }

    let n = rows.len();
    let tree = SeedTree::new(seed).child("satellite");
    let mut rng = tree.stream("split", 0);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher–Yates on the row order.
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut tau_rng = tree.stream("tau", 0);
    let make = |idx: &[usize], tau_rng: &mut ChaCha12Rng| -> TripleDataset {
        let records = idx
            .iter()
            .map(|&i| {
                let (inputs, drag) = rows[i];
                TrainingTriple {
                    theta: vec![drag],
                    y: inputs.to_vec(),
                    tau: vec![tau_rng.gen::<f64>()],
                    z: None,
                }
            })
            .collect::<Vec<_>>();
        let n_records = records.len();
        TripleDataset {
            records,
            meta: DatasetMeta {
                version: 1,
                model: json!({ "name": "satellite-drag", "params": { "source": path.display().to_string() } }),
                dims: Dims { theta: 1, y: 7, tau: 1, z: 0 },
                seed,
                n_records,
                created: String::new(),
            },
        }
    };
    let train = make(&order[..n_train], &mut tau_rng);
    let test = make(&order[n_train..], &mut tau_rng);

    Ok(SatelliteSplit { train, test, n_clamped, n_rows: n })
}

/// Map header names to the eight column positions (seven inputs in
/// design order, drag last).
fn resolve_columns(header: &csv::StringRecord) -> Result<[usize; 8]> {
    let names: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let mut by_name = [usize::MAX; 8];
    for (j, want) in INPUT_RANGES
        .iter()
        .map(|&(n, _, _)| n)
        .chain(std::iter::once(DRAG_COLUMN))
        .enumerate()
    {
        if let Some(pos) = names.iter().position(|n| n == want) {
            by_name[j] = pos;
        }
    }
    if by_name.iter().all(|&p| p != usize::MAX) {
        return Ok(by_name);
    }
    if header.len() == 8 {
        return Ok([0, 1, 2, 3, 4, 5, 6, 7]);
    }
    Err(Error::Parse(format!(
        "cannot resolve satellite columns: expected the 8 canonical names or a positional 8-column layout, found {} columns {names:?}",
        header.len()
    )))
}

/// Conditional mean of the synthetic drag generator, as a function of
/// the *scaled* inputs `u ∈ [0,1]⁷`.
pub fn synthetic_drag_mean(u: &[f64]) -> f64 {
    0.4 + 0.25 * u[0] - 0.2 * u[1] + 0.15 * u[2] + 0.1 * u[3] - 0.1 * u[4] + 0.05 * u[5]
        + 0.1 * (2.0 * u[6] - 1.0).tanh()
}

/// Conditional noise standard deviation of the synthetic generator
/// (heteroskedastic in the third input).
pub fn synthetic_drag_sd(u: &[f64]) -> f64 {
    0.4 + 0.2 * u[2]
}

/// Synthetic stand-in for the satellite-drag simulator: inputs drawn
/// uniformly over the design ranges (raw units), drag response normal
/// with the closed-form mean/sd above evaluated at the scaled inputs.
pub fn builtin_synthetic_drag() -> ForwardModel {
    let joint = Arc::new(|rng: &mut ChaCha12Rng| {
        let mut raw = Vec::with_capacity(7);
        let mut scaled = [0.0f64; 7];
        for (j, slot) in scaled.iter_mut().enumerate() {
            let (_, lo, hi) = INPUT_RANGES[j];
            let v = rng.gen_range(lo..hi);
            raw.push(v);
            *slot = scale_input(j, v).0;
        }
        let drag = synthetic_drag_mean(&scaled)
            + synthetic_drag_sd(&scaled) * rng.sample::<f64, _>(StandardNormal);
        (vec![drag], raw, None)
    });
    ForwardModel {
        name: "synthetic-drag".into(),
        kind: ModelKind::Stochastic,
        theta_dim: 1,
        y_dim: 7,
        latent_dim: 0,
        tau_dim: 1,
        summary_dim: 7,
        params: json!({}),
        joint,
        prior: None,
        conditional: None,
        summary: Arc::new(|y| y.to_vec()),
    }
}

/// Write a dataset of synthetic-drag draws as a satellite-format CSV
/// (raw input units, canonical header). Used to exercise the full
/// ingestion path without the real export.
pub fn write_synthetic_drag_csv(path: &Path, n: usize, seed: u64) -> Result<()> {
    let model = builtin_synthetic_drag();
    let ds = crate::sim::simulate_dataset(&model, n, seed)?;
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = INPUT_RANGES
        .iter()
        .map(|&(n, _, _)| n)
        .chain(std::iter::once(DRAG_COLUMN))
        .collect();
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row: Vec<String> = r.y.iter().map(f64::to_string).collect();
        row.push(r.theta[0].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
