//! On-disk formats.
//!
//! Every data file is a flat sequence of little-endian `f64` values (complex
//! data interleaved `re, im`) with a JSON sidecar of the same stem:
//!
//! | data            | sidecar                                             |
//! |-----------------|-----------------------------------------------------|
//! | field           | `{n, dx, x0, kind}` with kind `real` or `complex`   |
//! | matrix          | `{kind: "real-matrix", rows, cols, grid_r, grid_t}` |
//! | arm response    | `{n_in, n_out, grids, label, d, lambda}`            |
//!
//! Matrices are row-major. Round trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::CorrelationResult;
use crate::error::{Error, Result};
use crate::fields::{ComplexField, Grid1D, RealField};
use crate::propagation::{ArmLabel, ArmResponse};
use crate::scenarios::ImagingReport;

pub const DATA_EXTENSION: &str = "f64";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub n: usize,
    pub dx: f64,
    pub x0: f64,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSidecar {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub grid_r: Grid1D,
    pub grid_t: Grid1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGrids {
    pub input: Grid1D,
    pub output: Grid1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSidecar {
    pub n_in: usize,
    pub n_out: usize,
    pub grids: ArmGrids,
    pub label: ArmLabel,
    pub d: Vec<f64>,
    pub lambda: f64,
}

/// `<stem>.f64` and `<stem>.json` under `dir`.
pub fn data_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.{DATA_EXTENSION}")), dir.join(format!("{stem}.json")))
}

fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn encode_f64(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes, found {}", expected * 8, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn field_sidecar(grid: &Grid1D, kind: FieldKind) -> FieldSidecar {
    FieldSidecar {
        n: grid.len(),
        dx: grid.dx(),
        x0: grid.x0(),
        kind,
    }
}

fn grid_of(path: &Path, s: &FieldSidecar, kind: FieldKind) -> Result<Grid1D> {
    if s.kind != kind {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("sidecar kind is {:?}, expected {kind:?}", s.kind),
        });
    }
    Grid1D::new(s.n, s.dx, s.x0)
}

/// Writes a real field; returns the data and sidecar paths.
pub fn write_real_field(dir: &Path, stem: &str, field: &RealField) -> Result<Vec<PathBuf>> {
    let (data, side) = data_paths(dir, stem);
    write_bytes(&data, &encode_f64(field.samples().iter().copied()))?;
    write_json(&side, &field_sidecar(field.grid(), FieldKind::Real))?;
    Ok(vec![data, side])
}

pub fn read_real_field(data: &Path) -> Result<RealField> {
    let side = sidecar_path(data);
    let s: FieldSidecar = read_json(&side)?;
    let grid = grid_of(&side, &s, FieldKind::Real)?;
    RealField::new(grid, read_f64s(data, s.n)?)
}

pub fn write_complex_field(dir: &Path, stem: &str, field: &ComplexField) -> Result<Vec<PathBuf>> {
    let (data, side) = data_paths(dir, stem);
    write_bytes(&data, &encode_f64(field.samples().iter().flat_map(|z| [z.re, z.im])))?;
    write_json(&side, &field_sidecar(field.grid(), FieldKind::Complex))?;
    Ok(vec![data, side])
}

pub fn read_complex_field(data: &Path) -> Result<ComplexField> {
    let side = sidecar_path(data);
    let s: FieldSidecar = read_json(&side)?;
    let grid = grid_of(&side, &s, FieldKind::Complex)?;
    let v = read_f64s(data, 2 * s.n)?;
    ComplexField::new(grid, v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

/// Two-column `x value` text for plotting tools.
pub fn write_two_column(path: &Path, field: &RealField) -> Result<()> {
    let mut text = String::with_capacity(field.samples().len() * 48);
    for (x, v) in field.grid().coordinates().zip(field.samples()) {
        text.push_str(&format!("{x:e} {v:e}\n"));
    }
    write_bytes(path, text.as_bytes())
}

pub fn write_matrix(dir: &Path, stem: &str, m: &Array2<f64>, grid_r: &Grid1D, grid_t: &Grid1D) -> Result<Vec<PathBuf>> {
    if m.dim() != (grid_r.len(), grid_t.len()) {
        return Err(Error::GridMismatch(format!("matrix {:?} for grids of {} and {}", m.dim(), grid_r.len(), grid_t.len())));
    }
    let (data, side) = data_paths(dir, stem);
    write_bytes(&data, &encode_f64(m.iter().copied()))?;
    write_json(
        &side,
        &MatrixSidecar {
            kind: "real-matrix".into(),
            rows: m.nrows(),
            cols: m.ncols(),
            grid_r: *grid_r,
            grid_t: *grid_t,
        },
    )?;
    Ok(vec![data, side])
}

pub fn read_matrix(data: &Path) -> Result<(Array2<f64>, Grid1D, Grid1D)> {
    let side = sidecar_path(data);
    let s: MatrixSidecar = read_json(&side)?;
    if s.kind != "real-matrix" || s.rows != s.grid_r.len() || s.cols != s.grid_t.len() {
        return Err(Error::Format {
            path: side,
            reason: "inconsistent matrix sidecar".into(),
        });
    }
    let v = read_f64s(data, s.rows * s.cols)?;
    let m = Array2::from_shape_vec((s.rows, s.cols), v).expect("length checked");
    Ok((m, s.grid_r, s.grid_t))
}

pub fn write_arm(dir: &Path, stem: &str, arm: &ArmResponse) -> Result<Vec<PathBuf>> {
    let (data, side) = data_paths(dir, stem);
    write_bytes(&data, &encode_f64(arm.matrix().iter().flat_map(|z| [z.re, z.im])))?;
    write_json(
        &side,
        &ArmSidecar {
            n_in: arm.grid_in().len(),
            n_out: arm.grid_out().len(),
            grids: ArmGrids {
                input: *arm.grid_in(),
                output: *arm.grid_out(),
            },
            label: arm.label(),
            d: arm.distances().to_vec(),
            lambda: arm.wavelength(),
        },
    )?;
    Ok(vec![data, side])
}

pub fn read_arm(data: &Path) -> Result<ArmResponse> {
    let side = sidecar_path(data);
    let s: ArmSidecar = read_json(&side)?;
    if s.n_in != s.grids.input.len() || s.n_out != s.grids.output.len() {
        return Err(Error::Format {
            path: side,
            reason: "sample counts disagree with grids".into(),
        });
    }
    let v = read_f64s(data, 2 * s.n_in * s.n_out)?;
    let h = Array2::from_shape_vec(
        (s.n_in, s.n_out),
        v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
    )
    .expect("length checked");
    ArmResponse::from_matrix(s.grids.input, s.grids.output, h, s.label, s.lambda, s.d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGrids {
    pub reference: Grid1D,
    pub test: Grid1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationManifest {
    pub count: u64,
    pub grids: CorrelationGrids,
    pub seed: u64,
    pub scenario_hash: String,
    pub min_dii: f64,
}

/// Writes `<prefix>mean_ir`, `<prefix>mean_it`, `<prefix>g22`, `<prefix>dii`
/// and the manifest `<prefix>correlation.json`.
pub fn write_correlation(dir: &Path, prefix: &str, r: &CorrelationResult, seed: u64, scenario_hash: &str) -> Result<Vec<PathBuf>> {
    let mut out = write_real_field(dir, &format!("{prefix}mean_ir"), &r.mean_ir)?;
    out.extend(write_real_field(dir, &format!("{prefix}mean_it"), &r.mean_it)?);
    out.extend(write_matrix(dir, &format!("{prefix}g22"), &r.g22, &r.grid_r, &r.grid_t)?);
    out.extend(write_matrix(dir, &format!("{prefix}dii"), &r.dii, &r.grid_r, &r.grid_t)?);
    let manifest = dir.join(format!("{prefix}correlation.json"));
    write_json(
        &manifest,
        &CorrelationManifest {
            count: r.count,
            grids: CorrelationGrids {
                reference: r.grid_r,
                test: r.grid_t,
            },
            seed,
            scenario_hash: scenario_hash.to_string(),
            min_dii: r.min_dii,
        },
    )?;
    out.push(manifest);
    Ok(out)
}

/// Reads back what [`write_correlation`] wrote, with the manifest.
pub fn read_correlation(dir: &Path, prefix: &str) -> Result<(CorrelationResult, CorrelationManifest)> {
    let m: CorrelationManifest = read_json(&dir.join(format!("{prefix}correlation.json")))?;
    let mean_ir = read_real_field(&data_paths(dir, &format!("{prefix}mean_ir")).0)?;
    let mean_it = read_real_field(&data_paths(dir, &format!("{prefix}mean_it")).0)?;
    let (g22, ..) = read_matrix(&data_paths(dir, &format!("{prefix}g22")).0)?;
    let (dii, ..) = read_matrix(&data_paths(dir, &format!("{prefix}dii")).0)?;
    Ok((
        CorrelationResult {
            grid_r: m.grids.reference,
            grid_t: m.grids.test,
            mean_ir,
            mean_it,
            g22,
            dii,
            count: m.count,
            min_dii: m.min_dii,
        },
        m,
    ))
}

pub const IMAGING_CURVES: [&str; 3] = ["recovered", "oracle_closed_form", "oracle_dft"];

/// Writes the three curves (flat, sidecar, two-column text) and
/// `report.json` holding metrics, warnings and `config`.
pub fn write_imaging_report(dir: &Path, report: &ImagingReport, config: &serde_json::Value) -> Result<Vec<PathBuf>> {
    let curves = [&report.recovered, &report.oracle_closed_form, &report.oracle_dft];
    let mut out = Vec::new();
    for (name, curve) in IMAGING_CURVES.iter().zip(curves) {
        out.extend(write_real_field(dir, name, curve)?);
        let txt = dir.join(format!("{name}.txt"));
        write_two_column(&txt, curve)?;
        out.push(txt);
    }
    let manifest = dir.join("report.json");
    write_json(
        &manifest,
        &serde_json::json!({
            "metrics": report.metrics,
            "count": report.count,
            "test_position": report.test_position,
            "geometry_matched": report.geometry_matched,
            "warnings": report.warnings,
            "sampling_violations": report.sampling,
            "curves": IMAGING_CURVES,
            "config": config,
        }),
    )?;
    out.push(manifest);
    Ok(out)
}

/// The three curves of an imaging report directory, in [`IMAGING_CURVES`] order.
pub fn read_imaging_curves(dir: &Path) -> Result<[RealField; 3]> {
    let read = |name: &str| read_real_field(&data_paths(dir, name).0);
    Ok([read(IMAGING_CURVES[0])?, read(IMAGING_CURVES[1])?, read(IMAGING_CURVES[2])?])
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
