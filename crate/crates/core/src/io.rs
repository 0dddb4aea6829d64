//! JSON instance files.
//!
//! Matrices are nested arrays in row-major order. Every float is written with
//! 17 significant digits so a file read back reproduces the instance bit for bit.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ImbaError, Result};
use crate::problem::{InstanceMeta, ObjectiveSmooth, QdccProblem, QuadConstraint, Regularizer};

/// `serde_json` formatter emitting floats as `{:.16e}`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{}", fmt_f64(value))
        } else {
            writer.write_all(b"null")
        }
    }
}

/// 17-significant-digit decimal rendering used by every emitted float.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keep the sign of negative zero out of the files
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}

/// Serializes any value to a JSON string using [`Sig17Formatter`].
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum ObjectiveWire {
    Quadratic {
        y0: Vec<Vec<f64>>,
        b0_unit: Vec<f64>,
        omega0: f64,
    },
    StudentT {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintWire {
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    h: Vec<f64>,
    d_sq: f64,
    p_coef: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lin: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceWire {
    n: usize,
    m: usize,
    objective: ObjectiveWire,
    reg: Regularizer,
    constraints: Vec<ConstraintWire>,
    meta: InstanceMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tilt: Option<Vec<f64>>,
}

/// Starting point sidecar written next to a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPoint {
    pub x0: Vec<f64>,
    pub slacks: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ImbaError::Format(format!("{what}: every row needs {ncols} entries")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn vector_of(v: &[f64], len: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(ImbaError::Format(format!(
            "{what}: expected {len} entries, found {}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

fn to_wire(prob: &QdccProblem) -> InstanceWire {
    let objective = match &prob.objective {
        ObjectiveSmooth::Quadratic { y0, b0_unit, omega0 } => ObjectiveWire::Quadratic {
            y0: rows_of(y0),
            b0_unit: b0_unit.iter().copied().collect(),
            omega0: *omega0,
        },
        ObjectiveSmooth::StudentT { a, b } => ObjectiveWire::StudentT {
            a: rows_of(a),
            b: b.iter().copied().collect(),
        },
    };
    InstanceWire {
        n: prob.n,
        m: prob.m,
        objective,
        reg: prob.reg,
        constraints: prob
            .constraints
            .iter()
            .map(|c| ConstraintWire {
                b: rows_of(&c.b),
                h: c.h.iter().copied().collect(),
                d_sq: c.d_sq,
                p_coef: c.p_coef,
                lin: c.lin.as_ref().map(|l| l.iter().copied().collect()),
            })
            .collect(),
        meta: prob.meta.clone(),
        tilt: prob.tilt.as_ref().map(|t| t.iter().copied().collect()),
    }
}

fn from_wire(w: InstanceWire) -> Result<QdccProblem> {
    let n = w.n;
    let objective = match w.objective {
        ObjectiveWire::Quadratic { y0, b0_unit, omega0 } => ObjectiveSmooth::Quadratic {
            y0: matrix_from_rows(&y0, n, "objective.y0")?,
            b0_unit: vector_of(&b0_unit, n, "objective.b0_unit")?,
            omega0,
        },
        ObjectiveWire::StudentT { a, b } => {
            let a = matrix_from_rows(&a, n, "objective.a")?;
            let b = vector_of(&b, a.nrows(), "objective.b")?;
            ObjectiveSmooth::StudentT { a, b }
        }
    };
    if w.constraints.len() != w.m {
        return Err(ImbaError::Format(format!(
            "m = {} but {} constraints listed",
            w.m,
            w.constraints.len()
        )));
    }
    let constraints = w
        .constraints
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut qc = QuadConstraint::new(
                matrix_from_rows(&c.b, n, &format!("constraints[{i}].B"))?,
                vector_of(&c.h, n, &format!("constraints[{i}].h"))?,
                c.d_sq,
                c.p_coef,
            )?;
            if let Some(lin) = c.lin {
                qc.lin = Some(vector_of(&lin, n, &format!("constraints[{i}].lin"))?);
            }
            Ok(qc)
        })
        .collect::<Result<Vec<_>>>()?;
    let reg = Regularizer::new(w.reg.c_h0, w.reg.c_phi)?;
    let mut prob = QdccProblem::new(objective, reg, constraints, w.meta)?;
    if let Some(t) = w.tilt {
        prob = prob.with_tilt(vector_of(&t, n, "tilt")?)?;
    }
    Ok(prob)
}

pub fn instance_to_json(prob: &QdccProblem) -> Result<String> {
    to_json_string(&to_wire(prob))
}

pub fn instance_from_json(text: &str) -> Result<QdccProblem> {
    let wire: InstanceWire =
        serde_json::from_str(text).map_err(|e| ImbaError::Format(e.to_string()))?;
    from_wire(wire)
}

pub fn write_instance(path: &Path, prob: &QdccProblem) -> Result<()> {
    std::fs::write(path, instance_to_json(prob)?)?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<QdccProblem> {
    instance_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_start(path: &Path, start: &StartPoint) -> Result<()> {
    std::fs::write(path, to_json_string(start)?)?;
    Ok(())
}

pub fn read_start(path: &Path) -> Result<StartPoint> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ImbaError::Format(e.to_string()))
}
