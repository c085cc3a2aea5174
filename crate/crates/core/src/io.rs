//! JSON files for systems and filters.
//!
//! Matrices are lists of rows. A matrix with rows but no columns is written
//! as a list of empty rows; a matrix without rows can be given as
//! `{"rows": 0, "cols": n, "data": []}`. Numbers are written in their
//! shortest round-trip form, so a file read back yields bit-identical
//! matrices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::matrix::{Mat, Vector};
use crate::synthesis::FilterRealization;
use crate::system::{DescriptorSystem, Nonlinearity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixRepr {
    Rows(Vec<Vec<f64>>),
    Shaped {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    },
}

impl MatrixRepr {
    pub fn from_mat(m: &Mat) -> Self {
        if m.nrows() == 0 && m.ncols() > 0 {
            return Self::Shaped {
                rows: 0,
                cols: m.ncols(),
                data: Vec::new(),
            };
        }
        Self::Rows(mat_rows(m))
    }

    pub fn to_mat(&self) -> Result<Mat, String> {
        match self {
            Self::Rows(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
                    return Err(format!("row {i} has {} entries, row 0 has {cols}", r.len()));
                }
                Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
            }
            Self::Shaped { rows, cols, data } => {
                if data.len() != rows * cols {
                    return Err(format!("{} entries given for a {rows}x{cols} matrix", data.len()));
                }
                Ok(Mat::from_row_slice(*rows, *cols, data))
            }
        }
    }
}

/// Rows of `m` as nested vectors.
pub fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    #[serde(rename = "E")]
    e: MatrixRepr,
    #[serde(rename = "A")]
    a: MatrixRepr,
    #[serde(rename = "B")]
    b: MatrixRepr,
    #[serde(rename = "C")]
    c: MatrixRepr,
    #[serde(rename = "D")]
    d: MatrixRepr,
    #[serde(rename = "F")]
    f: MatrixRepr,
    #[serde(rename = "G")]
    g: MatrixRepr,
    #[serde(rename = "H")]
    h: MatrixRepr,
    #[serde(rename = "K")]
    k: MatrixRepr,
    rho: f64,
    nonlinearity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0_constraint: Option<MatrixRepr>,
}

/// A system with the optional linear constraint `W x0 = 0` on initial states.
#[derive(Debug, Clone)]
pub struct SystemDescription {
    pub system: DescriptorSystem,
    pub x0_constraint: Option<Mat>,
}

fn field_err(path: &str, field: &str, message: impl Into<String>) -> FormatError {
    FormatError::Field {
        path: path.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn json_err(path: &str, source: serde_json::Error) -> FormatError {
    FormatError::Json {
        path: path.to_string(),
        source,
    }
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a system description; `origin` names the source in diagnostics.
pub fn parse_system(text: &str, origin: &str) -> Result<SystemDescription, FormatError> {
    let file: SystemFile = serde_json::from_str(text).map_err(|e| json_err(origin, e))?;
    let mat = |name: &str, m: &MatrixRepr| m.to_mat().map_err(|msg| field_err(origin, name, msg));
    let nonlinearity = Nonlinearity::builtin(&file.nonlinearity).map_err(|_| {
        field_err(
            origin,
            "nonlinearity",
            format!(
                "unknown builtin `{}`, expected one of {:?}",
                file.nonlinearity,
                Nonlinearity::BUILTINS
            ),
        )
    })?;
    if !file.rho.is_finite() {
        return Err(field_err(origin, "rho", "must be finite"));
    }
    let system = DescriptorSystem {
        e: mat("E", &file.e)?,
        a: mat("A", &file.a)?,
        b: mat("B", &file.b)?,
        c: mat("C", &file.c)?,
        d: mat("D", &file.d)?,
        f: mat("F", &file.f)?,
        g: mat("G", &file.g)?,
        h: mat("H", &file.h)?,
        k: mat("K", &file.k)?,
        rho: file.rho,
        nonlinearity,
    };
    system.ensure_valid()?;
    let x0_constraint = match &file.x0_constraint {
        Some(m) => {
            let w = mat("x0_constraint", m)?;
            if w.ncols() != system.e.ncols() {
                return Err(field_err(
                    origin,
                    "x0_constraint",
                    format!("has {} columns, the semistate has {}", w.ncols(), system.e.ncols()),
                ));
            }
            Some(w)
        }
        None => None,
    };
    Ok(SystemDescription { system, x0_constraint })
}

pub fn system_to_json(desc: &SystemDescription) -> String {
    let s = &desc.system;
    let r = MatrixRepr::from_mat;
    let file = SystemFile {
        e: r(&s.e),
        a: r(&s.a),
        b: r(&s.b),
        c: r(&s.c),
        d: r(&s.d),
        f: r(&s.f),
        g: r(&s.g),
        h: r(&s.h),
        k: r(&s.k),
        rho: s.rho,
        nonlinearity: s.nonlinearity.name().to_string(),
        x0_constraint: desc.x0_constraint.as_ref().map(r),
    };
    serde_json::to_string_pretty(&file).expect("matrices of finite numbers serialize")
}

pub fn load_system(path: &Path) -> Result<SystemDescription, FormatError> {
    parse_system(&read(path)?, &path.display().to_string())
}

pub fn save_system(path: &Path, desc: &SystemDescription) -> Result<(), FormatError> {
    write(path, &system_to_json(desc))
}

/// Filter fields; other keys (as in a synthesis report) are ignored.
#[derive(Debug, Clone, Deserialize)]
struct FilterFile {
    #[serde(rename = "N")]
    n: Option<MatrixRepr>,
    #[serde(rename = "T")]
    t: Option<MatrixRepr>,
    #[serde(rename = "L")]
    l: Option<MatrixRepr>,
    #[serde(rename = "M")]
    m: Option<MatrixRepr>,
    #[serde(rename = "P")]
    p: Option<MatrixRepr>,
    #[serde(rename = "Z1")]
    z1: Option<MatrixRepr>,
    #[serde(rename = "Z")]
    z: Option<MatrixRepr>,
    #[serde(rename = "Q")]
    q: Option<MatrixRepr>,
    gamma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadedFilter {
    pub filter: FilterRealization,
    /// Lyapunov matrix when the file is a synthesis report.
    pub q: Option<Mat>,
    pub gamma: Option<f64>,
}

/// Parses `N, T, L, M` and optionally `P` (recomputed as `N M - L` when
/// absent), `Z1`, `Z`, `Q` and `gamma`.
pub fn parse_filter(text: &str, origin: &str) -> Result<LoadedFilter, FormatError> {
    let file: FilterFile = serde_json::from_str(text).map_err(|e| json_err(origin, e))?;
    let required = |name: &str, m: &Option<MatrixRepr>| -> Result<Mat, FormatError> {
        m.as_ref()
            .ok_or_else(|| field_err(origin, name, "missing"))?
            .to_mat()
            .map_err(|msg| field_err(origin, name, msg))
    };
    let optional = |name: &str, m: &Option<MatrixRepr>| -> Result<Option<Mat>, FormatError> {
        m.as_ref()
            .map(|m| m.to_mat().map_err(|msg| field_err(origin, name, msg)))
            .transpose()
    };
    let n = required("N", &file.n)?;
    let t = required("T", &file.t)?;
    let l = required("L", &file.l)?;
    let m = required("M", &file.m)?;
    let p = n.nrows();
    if n.ncols() != p {
        return Err(field_err(
            origin,
            "N",
            format!("must be square, got {}x{}", p, n.ncols()),
        ));
    }
    for (name, mat) in [("T", &t), ("L", &l), ("M", &m)] {
        if mat.nrows() != p {
            return Err(field_err(origin, name, format!("has {} rows, N has {p}", mat.nrows())));
        }
    }
    if l.ncols() != m.ncols() {
        return Err(field_err(
            origin,
            "L",
            format!("has {} columns, M has {}", l.ncols(), m.ncols()),
        ));
    }
    let mut filter = FilterRealization::from_ntlm(n, t, l, m);
    if let Some(pm) = optional("P", &file.p)? {
        if pm.shape() != filter.p.shape() {
            return Err(field_err(
                origin,
                "P",
                format!("shape {:?}, expected {:?}", pm.shape(), filter.p.shape()),
            ));
        }
        filter.p = pm;
    }
    filter.z1 = optional("Z1", &file.z1)?;
    filter.z = optional("Z", &file.z)?;
    let q = optional("Q", &file.q)?;
    if let Some(q) = &q {
        if q.shape() != (p, p) {
            return Err(field_err(
                origin,
                "Q",
                format!("shape {:?}, expected ({p}, {p})", q.shape()),
            ));
        }
    }
    Ok(LoadedFilter {
        filter,
        q,
        gamma: file.gamma,
    })
}

pub fn load_filter(path: &Path) -> Result<LoadedFilter, FormatError> {
    parse_filter(&read(path)?, &path.display().to_string())
}

#[derive(Serialize)]
struct FilterOut {
    #[serde(rename = "N")]
    n: MatrixRepr,
    #[serde(rename = "T")]
    t: MatrixRepr,
    #[serde(rename = "L")]
    l: MatrixRepr,
    #[serde(rename = "M")]
    m: MatrixRepr,
    #[serde(rename = "P")]
    p: MatrixRepr,
    #[serde(rename = "Z1", skip_serializing_if = "Option::is_none")]
    z1: Option<MatrixRepr>,
    #[serde(rename = "Z", skip_serializing_if = "Option::is_none")]
    z: Option<MatrixRepr>,
}

pub fn filter_to_json(filt: &FilterRealization) -> String {
    let r = MatrixRepr::from_mat;
    serde_json::to_string_pretty(&FilterOut {
        n: r(&filt.n),
        t: r(&filt.t),
        l: r(&filt.l),
        m: r(&filt.m),
        p: r(&filt.p),
        z1: filt.z1.as_ref().map(r),
        z: filt.z.as_ref().map(r),
    })
    .expect("matrices of finite numbers serialize")
}

pub fn save_filter(path: &Path, filt: &FilterRealization) -> Result<(), FormatError> {
    write(path, &filter_to_json(filt))
}

/// Parses a vector given as comma-separated numbers.
pub fn parse_vector(text: &str) -> Result<Vector, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", s.trim())))
        .collect::<Result<Vec<_>, _>>()
        .map(Vector::from_vec)
}
