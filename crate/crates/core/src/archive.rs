//! On-disk fit archive: a directory of JSON documents, the input tables as CSV
//! and the conditional modes as a flat little-endian `f64` array.
//!
//! ```text
//! format.json   version stamp
//! spec.json     normalized model description
//! long.csv      longitudinal table (if any)
//! surv.csv      survival table (if any)
//! fit.json      hyperparameter mode, Hessian, z-map, integration points, marginals
//! modes.bin     conditional modes: the optimum first, then one per point
//! ```
//!
//! Loading rebuilds the model from the stored description and tables and
//! refactorizes each integration point from its stored mode.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::Model;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::inference::{approx_at, Fit, IntegrationPoint, OmegaMode, PosteriorMarginal, ZMap};
use crate::spec::{parse_config, IntStrategy};

pub const FORMAT_NAME: &str = "lgmjoint-fit";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FormatStamp {
    format: String,
    version: u32,
    writer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    theta: Vec<f64>,
    z: Vec<f64>,
    weight: f64,
    log_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitRecord {
    strategy: IntStrategy,
    n_latent: usize,
    mode_theta: Vec<f64>,
    mode_iterations: usize,
    mode_grad_norm: f64,
    neg_hessian: Vec<Vec<f64>>,
    zmap_transform: Vec<Vec<f64>>,
    zmap_log_det: f64,
    points: Vec<PointRecord>,
    marginals: Vec<PosteriorMarginal>,
    mlik_integration: f64,
    mlik_gaussian: f64,
    dz: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Archive(format!("expected a {n} x {n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `fit` of `model` into `dir`, creating it if needed. Returns the
/// file names written.
pub fn save(dir: &Path, model: &Model, fit: &Fit) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let stamp = FormatStamp {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        writer: format!("lgmjoint {}", env!("CARGO_PKG_VERSION")),
    };
    write(&dir.join("format.json"), serde_json::to_string_pretty(&stamp)?.as_bytes())?;
    files.push("format.json".to_string());
    write(&dir.join("spec.json"), model.spec.to_json().as_bytes())?;
    files.push("spec.json".into());
    for (name, table) in [("long.csv", &model.long), ("surv.csv", &model.surv)] {
        if let Some(t) = table {
            write(&dir.join(name), t.to_csv_string()?.as_bytes())?;
            files.push(name.into());
        }
    }
    let record = FitRecord {
        strategy: fit.strategy,
        n_latent: model.n_latent(),
        mode_theta: fit.mode.theta.clone(),
        mode_iterations: fit.mode.iterations,
        mode_grad_norm: fit.mode.grad_norm,
        neg_hessian: rows_of(&fit.neg_hessian),
        zmap_transform: rows_of(&fit.zmap.transform),
        zmap_log_det: fit.zmap.log_det_transform,
        points: fit
            .points
            .iter()
            .map(|p| PointRecord {
                theta: p.theta.clone(),
                z: p.z.clone(),
                weight: p.weight,
                log_post: p.log_post,
            })
            .collect(),
        marginals: fit.marginals.clone(),
        mlik_integration: fit.mlik_integration,
        mlik_gaussian: fit.mlik_gaussian,
        dz: fit.dz,
    };
    write(&dir.join("fit.json"), serde_json::to_string(&record)?.as_bytes())?;
    files.push("fit.json".into());
    let mut bin = Vec::with_capacity(8 * model.n_latent() * (fit.points.len() + 1));
    for u in std::iter::once(&fit.mode.approx.mode).chain(fit.points.iter().map(|p| &p.approx.mode)) {
        for v in u {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    write(&dir.join("modes.bin"), &bin)?;
    files.push("modes.bin".into());
    Ok(files)
}

/// Reads an archive written by [`save`].
pub fn load(dir: &Path) -> Result<(Model, Fit)> {
    let stamp: FormatStamp = serde_json::from_str(&read_string(&dir.join("format.json"))?)
        .map_err(|e| Error::Archive(format!("bad format.json: {e}")))?;
    if stamp.format != FORMAT_NAME || stamp.version != FORMAT_VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive {} v{} (expected {FORMAT_NAME} v{FORMAT_VERSION})",
            stamp.format, stamp.version
        )));
    }
    let spec_text = read_string(&dir.join("spec.json"))?;
    let table = |name: &str| -> Result<Option<Table>> {
        let p = dir.join(name);
        if p.exists() {
            Ok(Some(Table::from_path(&p)?))
        } else {
            Ok(None)
        }
    };
    let long = table("long.csv")?;
    let surv = table("surv.csv")?;
    let spec = parse_config(&spec_text, long.as_ref(), surv.as_ref())?;
    let model = Model::build(&spec, long.as_ref(), surv.as_ref())?;
    let rec: FitRecord = serde_json::from_str(&read_string(&dir.join("fit.json"))?)
        .map_err(|e| Error::Archive(format!("bad fit.json: {e}")))?;
    let n = model.n_latent();
    let d = model.hyper.n_free();
    if rec.n_latent != n || rec.mode_theta.len() != d || rec.marginals.len() != n {
        return Err(Error::Archive("fit does not match the rebuilt model".into()));
    }
    let bin_path = dir.join("modes.bin");
    let bin = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bin.len() != 8 * n * (rec.points.len() + 1) {
        return Err(Error::Archive("modes.bin has the wrong length".into()));
    }
    let modes: Vec<Vec<f64>> = bin
        .chunks_exact(8 * n.max(1))
        .map(|c| c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect();
    let modes = if n == 0 { vec![vec![]; rec.points.len() + 1] } else { modes };
    let refit = |theta: &[f64], u: &[f64]| approx_at(&model, &model.hyper.expand(theta), u);
    let mode = OmegaMode {
        approx: refit(&rec.mode_theta, &modes[0])?,
        theta: rec.mode_theta.clone(),
        iterations: rec.mode_iterations,
        grad_norm: rec.mode_grad_norm,
    };
    let points = rec
        .points
        .iter()
        .zip(&modes[1..])
        .map(|(p, u)| {
            Ok(IntegrationPoint {
                approx: refit(&p.theta, u)?,
                theta: p.theta.clone(),
                z: p.z.clone(),
                weight: p.weight,
                log_post: p.log_post,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = Fit {
        strategy: rec.strategy,
        mode,
        neg_hessian: matrix_of(&rec.neg_hessian, d)?,
        zmap: ZMap {
            mode: rec.mode_theta,
            transform: matrix_of(&rec.zmap_transform, d)?,
            log_det_transform: rec.zmap_log_det,
        },
        points,
        marginals: rec.marginals,
        mlik_integration: rec.mlik_integration,
        mlik_gaussian: rec.mlik_gaussian,
        dz: rec.dz,
    };
    Ok((model, fit))
}
