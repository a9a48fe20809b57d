//! JSON manifests describing a chart: metric and structure fields as expression strings.
//!
//! ```json
//! {
//!   "dim": 4,
//!   "domain": [[-1, 1], [-1, 1], [-1, 1], [-1, 1]],
//!   "metric": [["exp(2*x1)", "0", "0", "0"], ...],
//!   "j_fields": "flat-standard",
//!   "fd": {"step": 1e-5, "order": 4},
//!   "tolerances": {"algebraic": 1e-9, "fd": 1e-6},
//!   "sample": {"per_axis": 2},
//!   "seed": 0
//! }
//! ```
//!
//! `j_fields` is either `"flat-standard"` or three `dim × dim` arrays. `sample`
//! is `{"per_axis": k}`, `{"random": count}` or `{"points": [[...], ...]}`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use nhk_core::chart::{ChartManifold, Domain, MetricField, TripleField};
use nhk_core::gallery::flat_triple;
use nhk_core::HTriple;
use serde::Deserialize;
use thiserror::Error;

use crate::expr::{parse_expression, Expr};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ManifestError {
    ManifestError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum JFields {
    Shorthand(String),
    Explicit(Vec<Vec<Vec<String>>>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSpec {
    pub step: Option<f64>,
    pub order: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub algebraic: Option<f64>,
    pub fd: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSpec {
    PerAxis(usize),
    Random(usize),
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dim: usize,
    pub domain: Vec<[f64; 2]>,
    pub metric: Vec<Vec<String>>,
    pub j_fields: JFields,
    #[serde(default)]
    pub fd: FdSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    pub sample: Option<SampleSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// A validated manifest with parsed expressions.
#[derive(Debug, Clone)]
pub struct ParsedManifest {
    pub manifest: Manifest,
    pub domain: Domain,
    metric: Vec<Vec<Expr>>,
    j: Option<[Vec<Vec<Expr>>; 3]>,
}

fn parse_matrix(field: &str, m: &[Vec<String>], dim: usize) -> Result<Vec<Vec<Expr>>, ManifestError> {
    if m.len() != dim || m.iter().any(|r| r.len() != dim) {
        return Err(invalid(field, format!("must be a {dim}x{dim} array of expression strings")));
    }
    m.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, src)| {
                    let at = format!("{field}[{i}][{j}]");
                    let e = parse_expression(src).map_err(|e| invalid(&at, e.to_string()))?;
                    if e.max_variable() > dim {
                        return Err(invalid(at, format!("references x{} but dim is {dim}", e.max_variable())));
                    }
                    Ok(e)
                })
                .collect()
        })
        .collect()
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(self) -> Result<ParsedManifest, ManifestError> {
        let d = self.dim;
        if d == 0 || d % 4 != 0 {
            return Err(invalid("dim", format!("must be a positive multiple of 4, got {d}")));
        }
        if self.domain.len() != d {
            return Err(invalid("domain", format!("needs {d} [lo, hi] pairs, got {}", self.domain.len())));
        }
        for (a, [lo, hi]) in self.domain.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("domain[{a}]"), format!("[{lo}, {hi}] is empty")));
            }
        }
        let domain = Domain::new(self.domain.iter().map(|r| r[0]).collect(), self.domain.iter().map(|r| r[1]).collect())
            .map_err(|e| invalid("domain", e.to_string()))?;
        let metric = parse_matrix("metric", &self.metric, d)?;
        let j = match &self.j_fields {
            JFields::Shorthand(s) if s == "flat-standard" => None,
            JFields::Shorthand(s) => {
                return Err(invalid("j_fields", format!("unknown shorthand '{s}' (only \"flat-standard\")")));
            }
            JFields::Explicit(v) => {
                if v.len() != 3 {
                    return Err(invalid("j_fields", format!("needs three matrices, got {}", v.len())));
                }
                Some([
                    parse_matrix("j_fields[0]", &v[0], d)?,
                    parse_matrix("j_fields[1]", &v[1], d)?,
                    parse_matrix("j_fields[2]", &v[2], d)?,
                ])
            }
        };
        if let Some(step) = self.fd.step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(invalid("fd.step", format!("must be positive, got {step}")));
            }
        }
        if let Some(order) = self.fd.order {
            if order != 2 && order != 4 {
                return Err(invalid("fd.order", format!("must be 2 or 4, got {order}")));
            }
        }
        for (name, v) in [("tolerances.algebraic", self.tolerances.algebraic), ("tolerances.fd", self.tolerances.fd)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(name, format!("must be positive, got {v}")));
                }
            }
        }
        match &self.sample {
            Some(SampleSpec::PerAxis(0)) | Some(SampleSpec::Random(0)) => {
                return Err(invalid("sample", "needs at least one point"));
            }
            Some(SampleSpec::Points(pts)) => {
                if pts.is_empty() {
                    return Err(invalid("sample.points", "needs at least one point"));
                }
                for (k, p) in pts.iter().enumerate() {
                    if p.len() != d {
                        return Err(invalid(format!("sample.points[{k}]"), format!("needs {d} coordinates")));
                    }
                }
            }
            _ => {}
        }
        Ok(ParsedManifest {
            manifest: self,
            domain,
            metric,
            j,
        })
    }
}

fn eval_matrix(m: &[Vec<Expr>], p: &[f64], what: &str) -> nhk_core::Result<DMatrix<f64>> {
    let d = m.len();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = m[i][j]
                .eval(p)
                .map_err(|e| nhk_core::Error::Field(format!("{what}[{i}][{j}] at {p:?}: {e}")))?;
        }
    }
    Ok(out)
}

impl ParsedManifest {
    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn chart(&self) -> nhk_core::Result<ChartManifold> {
        let d = self.dim();
        let g = self.metric.clone();
        let metric: MetricField = Arc::new(move |p: &[f64]| eval_matrix(&g, p, "metric"));
        let triple: TripleField = match self.j.clone() {
            None => {
                let h = flat_triple(d / 4);
                Arc::new(move |_| Ok(h.clone()))
            }
            Some(j) => Arc::new(move |p: &[f64]| {
                HTriple::new(
                    eval_matrix(&j[0], p, "j_fields[0]")?,
                    eval_matrix(&j[1], p, "j_fields[1]")?,
                    eval_matrix(&j[2], p, "j_fields[2]")?,
                )
            }),
        };
        ChartManifold::new(d, self.domain.clone(), metric, triple)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat4() -> String {
        r#"{
            "dim": 4,
            "domain": [[-1, 1], [-1, 1], [-1, 1], [-1, 1]],
            "metric": [["1","0","0","0"],["0","1","0","0"],["0","0","-1","0"],["0","0","0","-1"]],
            "j_fields": "flat-standard",
            "sample": {"per_axis": 2}
        }"#
        .to_string()
    }

    #[test]
    fn flat_manifest_builds_a_compatible_chart() {
        let pm = Manifest::from_json(&flat4()).unwrap().validate().unwrap();
        let m = pm.chart().unwrap();
        let p = m.domain().center();
        m.validate(&[p]).unwrap();
    }

    #[test]
    fn rejects_bad_manifests() {
        let cases = [
            (flat4().replace("\"dim\": 4", "\"dim\": 6"), "dim"),
            (flat4().replace("[-1, 1], [-1, 1], [-1, 1], [-1, 1]", "[-1, 1], [-1, 1], [-1, 1], [1, 1]"), "domain[3]"),
            (flat4().replace("\"-1\",\"0\"]", "\"-1 +\",\"0\"]"), "metric[2][2]"),
            (flat4().replace("\"0\",\"1\",\"0\",\"0\"", "\"0\",\"x5\",\"0\",\"0\""), "metric[1][1]"),
            (flat4().replace("flat-standard", "round"), "j_fields"),
            (flat4().replace("{\"per_axis\": 2}", "{\"per_axis\": 0}"), "sample"),
        ];
        for (text, field) in cases {
            match Manifest::from_json(&text).unwrap().validate() {
                Err(ManifestError::Invalid { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
        assert!(matches!(Manifest::from_json("{"), Err(ManifestError::Json(_))));
        assert!(matches!(
            Manifest::from_json(&flat4().replace("\"seed\"", "\"sed\"").replace("\"sample\"", "\"extra\": 1, \"sample\"")),
            Err(ManifestError::Json(_))
        ));
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = flat4().replace("\"-1\",\"0\"]", "\"-1 +\",\"0\"]");
        let e = Manifest::from_json(&text).unwrap().validate().unwrap_err().to_string();
        assert!(e.contains("column 5"), "{e}");
    }

    #[test]
    fn evaluation_domain_errors_are_field_errors() {
        let text = flat4().replace("[\"1\",\"0\",\"0\",\"0\"]", "[\"log(x1)\",\"0\",\"0\",\"0\"]");
        let m = Manifest::from_json(&text).unwrap().validate().unwrap().chart().unwrap();
        assert!(matches!(m.metric_at(&[-0.5, 0.0, 0.0, 0.0]), Err(nhk_core::Error::Field(_))));
    }
}
