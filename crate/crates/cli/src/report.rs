use mapfluct::Error;
use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Default)]
pub struct ModelInfo {
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_sign: Option<String>,
}

#[derive(Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: &'static str,
    pub status: &'static str,
    pub model: ModelInfo,
    pub config: Value,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub results: Value,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub diagnostics: Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<Value>,
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn new(command: &'static str) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            command,
            status: "ok",
            model: ModelInfo::default(),
            config: Value::Null,
            results: Value::Null,
            diagnostics: Value::Null,
            errors: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn fail(&mut self, failure: Failure) {
        self.status = if failure.validation {
            "invalid"
        } else {
            "numerical_failure"
        };
        self.errors = failure.errors;
        if !failure.diagnostics.is_null() {
            self.diagnostics = failure.diagnostics;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// A failed run: validation problems exit with 2, numerical ones with 3.
#[derive(Debug)]
pub struct Failure {
    pub validation: bool,
    pub errors: Vec<Value>,
    pub diagnostics: Value,
}

impl Failure {
    pub fn invalid(kind: &str, message: impl Into<String>) -> Self {
        Self {
            validation: true,
            errors: vec![json!({ "kind": kind, "message": message.into() })],
            diagnostics: Value::Null,
        }
    }

    pub fn numerical(kind: &str, message: impl Into<String>, diagnostics: Value) -> Self {
        Self {
            validation: false,
            errors: vec![json!({ "kind": kind, "message": message.into() })],
            diagnostics,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.validation {
            2
        } else {
            3
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let validation = e.is_validation();
        let (kind, diagnostics) = match &e {
            Error::InvalidModel(issues) => {
                let errors = issues
                    .iter()
                    .map(|issue| {
                        let mut v = serde_json::to_value(issue).expect("issue is serializable");
                        v["message"] = json!(issue.to_string());
                        v
                    })
                    .collect();
                return Self {
                    validation: true,
                    errors,
                    diagnostics: Value::Null,
                };
            }
            Error::Parse(_) => ("parse", Value::Null),
            Error::InvalidArgument(_) => ("invalid_argument", Value::Null),
            Error::NotMmbm => ("not_mmbm", Value::Null),
            Error::Precondition(_) => ("precondition", Value::Null),
            Error::AtPole(alpha) => ("at_pole", json!({ "alpha": complex(*alpha) })),
            Error::CountMismatch {
                what,
                expected,
                found,
                spectrum,
            } => (
                "count_mismatch",
                json!({
                    "region": what,
                    "expected": expected,
                    "found": found,
                    "spectrum": spectrum
                        .iter()
                        .map(|(z, m)| json!({ "re": z.re, "im": z.im, "multiplicity": m }))
                        .collect::<Vec<_>>(),
                }),
            ),
            Error::ImaginaryAxis(z) => ("imaginary_axis", json!({ "eigenvalue": complex(*z) })),
            Error::DegreeOverflow(size) => ("degree_overflow", json!({ "size": size })),
            Error::EigenSolver => ("eigen_solver", Value::Null),
            Error::RankAmbiguity {
                eigenvalue,
                singular_values,
            } => (
                "rank_ambiguity",
                json!({ "eigenvalue": complex(*eigenvalue), "singular_values": singular_values }),
            ),
            Error::ChainResidual { eigenvalue, residual } => (
                "chain_residual",
                json!({ "eigenvalue": complex(*eigenvalue), "residual": residual }),
            ),
            Error::Singular { what, condition } => ("singular", json!({ "matrix": what, "condition": condition })),
            Error::ImaginaryResidue { what, residue } => {
                ("imaginary_residue", json!({ "matrix": what, "residue": residue }))
            }
            Error::NonConvergence {
                iterations,
                residual,
                trajectory,
            } => (
                "non_convergence",
                json!({ "iterations": iterations, "residual": residual, "trajectory": trajectory }),
            ),
        };
        Self {
            validation,
            errors: vec![json!({ "kind": kind, "message": message })],
            diagnostics,
        }
    }
}

pub fn complex(z: Complex<f64>) -> Value {
    json!({ "re": z.re, "im": z.im })
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Writes records to a CSV string.
pub fn csv<I, R>(header: &[String], records: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in records {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

/// Matrices in long format: `matrix,row,col,value`.
pub fn matrices_csv(named: &[(&str, &DMatrix<f64>)]) -> String {
    let header = ["matrix", "row", "col", "value"].map(String::from);
    let records = named.iter().flat_map(|(name, m)| {
        (0..m.nrows()).flat_map(move |i| {
            (0..m.ncols()).map(move |j| vec![name.to_string(), i.to_string(), j.to_string(), m[(i, j)].to_string()])
        })
    });
    csv(&header, records)
}
