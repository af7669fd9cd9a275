//! Training-triple persistence: CSV records plus a JSON sidecar.
//!
//! The CSV is the primary artifact and is a pure function of the
//! dataset contents — floats print in shortest round-trip form, so
//! save → load → save reproduces the file byte for byte. The sidecar
//! (`<stem>.meta.json`) carries provenance (model descriptor, dims,
//! seed, record count) and a creation timestamp; the timestamp lives
//! only there so reruns leave the primary artifact identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::sim::TrainingTriple;
use crate::Result;

/// Column widths of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub theta: usize,
    pub y: usize,
    pub tau: usize,
    /// 0 when the model has no latent (and the CSV has no `z_*` columns).
    pub z: usize,
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    /// Model name and parameters, echoed from the forward model.
    pub model: serde_json::Value,
    pub dims: Dims,
    pub seed: u64,
    pub n_records: usize,
    /// UTC creation time (RFC 3339, second resolution). Informational
    /// only; never compared.
    pub created: String,
}

/// In-memory dataset: records plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleDataset {
    pub records: Vec<TrainingTriple>,
    pub meta: DatasetMeta,
}

impl TripleDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

fn header(dims: Dims) -> Vec<String> {
    let mut cols = Vec::with_capacity(dims.theta + dims.y + dims.tau + dims.z);
    for i in 0..dims.theta {
        cols.push(format!("theta_{i}"));
    }
    for i in 0..dims.y {
        cols.push(format!("y_{i}"));
    }
    for i in 0..dims.tau {
        cols.push(format!("tau_{i}"));
    }
    for i in 0..dims.z {
        cols.push(format!("z_{i}"));
    }
    cols
}

/// Write `<path>` (CSV) and `<stem>.meta.json`. The sidecar's
/// `created` field is stamped at write time.
pub fn save_dataset(ds: &TripleDataset, path: &Path) -> Result<()> {
    let dims = ds.meta.dims;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(dims))?;
    let mut row: Vec<String> = Vec::with_capacity(dims.theta + dims.y + dims.tau + dims.z);
    for (idx, r) in ds.records.iter().enumerate() {
        let z_len = r.z.as_ref().map_or(0, Vec::len);
        if r.theta.len() != dims.theta || r.y.len() != dims.y || r.tau.len() != dims.tau || z_len != dims.z {
            return Err(Error::ShapeMismatch(format!(
                "record {idx} widths (θ {}, y {}, τ {}, z {z_len}) do not match dims {dims:?}",
                r.theta.len(),
                r.y.len(),
                r.tau.len()
            )));
        }
        row.clear();
        row.extend(r.theta.iter().map(f64::to_string));
        row.extend(r.y.iter().map(f64::to_string));
        row.extend(r.tau.iter().map(f64::to_string));
        if let Some(z) = &r.z {
            row.extend(z.iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let meta = DatasetMeta {
        created: now_rfc3339(),
        n_records: ds.records.len(),
        ..ds.meta.clone()
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Read a dataset written by [`save_dataset`]. Column widths come
/// from the CSV header; the sidecar, when present, must agree.
pub fn load_dataset(path: &Path) -> Result<TripleDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let dims = parse_header(rdr.headers()?)?;

    let mut records = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let want = dims.theta + dims.y + dims.tau + dims.z;
        if rec.len() != want {
            return Err(Error::Parse(format!(
                "row {idx}: expected {want} fields, found {}",
                rec.len()
            )));
        }
        let mut vals = Vec::with_capacity(want);
        for field in rec.iter() {
            vals.push(field.parse::<f64>().map_err(|e| {
                Error::Parse(format!("row {idx}: bad float '{field}': {e}"))
            })?);
        }
        let mut it = vals.into_iter();
        let theta: Vec<f64> = it.by_ref().take(dims.theta).collect();
        let y: Vec<f64> = it.by_ref().take(dims.y).collect();
        let tau: Vec<f64> = it.by_ref().take(dims.tau).collect();
        let z: Vec<f64> = it.collect();
        records.push(TrainingTriple {
            theta,
            y,
            tau,
            z: if dims.z == 0 { None } else { Some(z) },
        });
    }

    let meta = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(text) => {
            let meta: DatasetMeta = serde_json::from_str(&text)?;
            if meta.dims != dims {
                return Err(Error::Parse(format!(
                    "sidecar dims {:?} disagree with CSV header dims {dims:?}",
                    meta.dims
                )));
            }
            if meta.n_records != records.len() {
                return Err(Error::Parse(format!(
                    "sidecar says {} records, CSV has {}",
                    meta.n_records,
                    records.len()
                )));
            }
            meta
        }
        Err(_) => DatasetMeta {
            version: 1,
            model: serde_json::Value::Null,
            dims,
            seed: 0,
            n_records: records.len(),
            created: String::new(),
        },
    };

    Ok(TripleDataset { records, meta })
}

/// Selector for one of the four column groups in a dataset header.
type DimField = fn(&mut Dims) -> &mut usize;

fn parse_header(h: &csv::StringRecord) -> Result<Dims> {
    let mut dims = Dims { theta: 0, y: 0, tau: 0, z: 0 };
    // Header is ordered theta_*, y_*, tau_*, z_*; indices must run 0..width.
    let groups: [(&str, DimField); 4] = [
        ("theta_", |d| &mut d.theta),
        ("y_", |d| &mut d.y),
        ("tau_", |d| &mut d.tau),
        ("z_", |d| &mut d.z),
    ];
    let mut g = 0;
    for col in h.iter() {
        // Advance to the group this column belongs to (groups never repeat).
        while g < groups.len() && !col.starts_with(groups[g].0) {
            g += 1;
        }
        let Some((prefix, field)) = groups.get(g).map(|&(p, f)| (p, f)) else {
            return Err(Error::Parse(format!("unexpected column '{col}'")));
        };
        let idx: usize = col[prefix.len()..]
            .parse()
            .map_err(|_| Error::Parse(format!("unexpected column '{col}'")))?;
        let width = field(&mut dims);
        if idx != *width {
            return Err(Error::Parse(format!(
                "column '{col}' out of order (expected index {width})"
            )));
        }
        *width += 1;
    }
    if dims.theta == 0 || dims.y == 0 || dims.tau == 0 {
        return Err(Error::Parse(
            "header must contain theta_*, y_* and tau_* columns".into(),
        ));
    }
    Ok(dims)
}

/// Current UTC time as RFC 3339 at second resolution, from the system
/// clock. Pure date arithmetic (civil-from-days), no external deps.
pub(crate) fn now_rfc3339() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (h, m, s) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    // Howard Hinnant's civil_from_days.
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let mo = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = if mo <= 2 { y + 1 } else { y };
    format!("{y:04}-{mo:02}-{d:02}T{h:02}:{m:02}:{s:02}Z")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin_latent_normal, builtin_normal_normal, simulate_dataset};

    #[test]
    fn roundtrip_preserves_records_exactly() {
        let m = builtin_normal_normal(0.3, 2.0, 0.5, 4).unwrap();
        let ds = simulate_dataset(&m, 64, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds.records, back.records, "f64 values must survive bit-exactly");
        assert_eq!(back.meta.seed, 11);
        assert_eq!(back.meta.dims, ds.meta.dims);
    }

    #[test]
    fn resave_is_byte_identical() {
        let m = builtin_normal_normal(0.0, 1.0, 1.0, 3).unwrap();
        let ds = simulate_dataset(&m, 32, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        save_dataset(&ds, &p1).unwrap();
        save_dataset(&load_dataset(&p1).unwrap(), &p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "save → load → save must be byte-identical"
        );
    }

    #[test]
    fn latent_columns_roundtrip() {
        let m = builtin_latent_normal(0.5, 1.0).unwrap();
        let ds = simulate_dataset(&m, 16, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latent.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.meta.dims.z, 1);
        assert_eq!(ds.records, back.records);
    }

    #[test]
    fn header_outside_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "theta_0,y_0,tau_0,bogus\n0,0,0,0\n").unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn sidecar_disagreement_is_rejected() {
        let m = builtin_normal_normal(0.0, 1.0, 1.0, 2).unwrap();
        let ds = simulate_dataset(&m, 8, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        save_dataset(&ds, &path).unwrap();
        // Tamper: claim a different record count.
        let side = path.with_extension("meta.json");
        let mut meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
        meta.n_records = 999;
        std::fs::write(&side, serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn timestamp_shape_is_rfc3339() {
        let t = now_rfc3339();
        assert_eq!(t.len(), 20, "YYYY-MM-DDThh:mm:ssZ, got '{t}'");
        assert!(t.ends_with('Z') && t.as_bytes()[10] == b'T');
        assert!(t.starts_with("20"), "sane century: {t}");
    }
}
