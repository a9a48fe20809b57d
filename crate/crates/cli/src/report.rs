//! The report envelope shared by every command. The JSON file and the text
//! printed to stdout are both rendered from [`Report`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nhk_core::chart::FdConfig;
use serde::Serialize;

pub const SCHEMA: &str = "nhk-report-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub algebraic: f64,
    pub fd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            algebraic: 1e-9,
            fd: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputInfo {
    /// `fixture`, `manifest`, `suite` or `catalog`.
    pub kind: String,
    pub name: String,
    pub dim: Option<usize>,
    pub points: usize,
}

/// A verdict the exit code depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Requirement {
    pub expected: bool,
    pub observed: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub input: InputInfo,
    pub tolerances: Tolerances,
    pub fd: Option<FdConfig>,
    pub seed: u64,
    pub pass: bool,
    pub verdicts: BTreeMap<String, bool>,
    pub requirements: BTreeMap<String, Requirement>,
    pub residuals: BTreeMap<String, f64>,
    /// Labels reported without entering pass/fail.
    pub informational: Vec<String>,
    pub summary: Vec<String>,
    pub diagnostics: Vec<String>,
    pub result: serde_json::Value,
}

impl Report {
    pub fn new(command: &str, input: InputInfo, tolerances: Tolerances, fd: Option<FdConfig>, seed: u64) -> Self {
        Self {
            schema: SCHEMA,
            command: command.to_string(),
            input,
            tolerances,
            fd,
            seed,
            pass: true,
            verdicts: BTreeMap::new(),
            requirements: BTreeMap::new(),
            residuals: BTreeMap::new(),
            informational: Vec::new(),
            summary: Vec::new(),
            diagnostics: Vec::new(),
            result: serde_json::Value::Null,
        }
    }

    pub fn verdict(&mut self, key: impl Into<String>, pass: bool) {
        self.verdicts.insert(key.into(), pass);
    }

    pub fn residual(&mut self, key: impl Into<String>, value: f64) {
        self.residuals.insert(key.into(), value);
    }

    /// Records `key` as a verdict and requires it to equal `expected`.
    pub fn require(&mut self, key: impl Into<String>, observed: bool, expected: bool) {
        let key = key.into();
        self.verdicts.insert(key.clone(), observed);
        self.requirements.insert(
            key,
            Requirement {
                expected,
                observed,
                ok: observed == expected,
            },
        );
    }

    /// Sets `pass` from the requirements. Call once, after every verdict is in.
    pub fn finish(&mut self) {
        self.pass = self.requirements.values().all(|r| r.ok);
    }

    pub fn set_result<T: Serialize>(&mut self, value: &T) -> serde_json::Result<()> {
        self.result = serde_json::to_value(value)?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let status = if self.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "nhk-lab {}: {status}", self.command);
        let dim = self.input.dim.map(|d| format!(", dim {d}")).unwrap_or_default();
        let _ = writeln!(out, "input: {} {}{dim}, {} point(s), seed {}", self.input.kind, self.input.name, self.input.points, self.seed);
        let _ = writeln!(out, "tolerances: algebraic {:e}, fd {:e}", self.tolerances.algebraic, self.tolerances.fd);
        if let Some(fd) = &self.fd {
            let _ = writeln!(
                out,
                "fd: order {}, steps {:e} / {:e} / {:e}",
                fd.order.as_int(),
                fd.step,
                fd.nested_step,
                fd.outer_step
            );
        }
        for line in &self.summary {
            let _ = writeln!(out, "  {line}");
        }
        if !self.verdicts.is_empty() {
            let _ = writeln!(out, "verdicts:");
            let width = self.verdicts.keys().map(|k| k.chars().count()).max().unwrap_or(0);
            for (k, v) in &self.verdicts {
                let mark = match self.requirements.get(k) {
                    Some(r) if r.ok => "  [required, ok]".to_string(),
                    Some(r) => format!("  [required {}, FAILED]", r.expected),
                    None => String::new(),
                };
                let _ = writeln!(out, "  {k:<width$}  {v}{mark}");
            }
        }
        if !self.residuals.is_empty() {
            let _ = writeln!(out, "residuals:");
            let width = self.residuals.keys().map(|k| k.chars().count()).max().unwrap_or(0);
            for (k, v) in &self.residuals {
                let info = if self.informational.contains(k) { "  (informational)" } else { "" };
                let _ = writeln!(out, "  {k:<width$}  {v:.3e}{info}");
            }
        }
        for d in &self.diagnostics {
            let _ = writeln!(out, "note: {d}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let input = InputInfo {
            kind: "fixture".into(),
            name: "FLAT4".into(),
            dim: Some(4),
            points: 2,
        };
        let mut r = Report::new("classify", input, Tolerances::default(), None, 0);
        r.require("W0(J1)", true, true);
        r.verdict("hyper-Kahler", true);
        r.residual("Eq-qK", 0.0);
        r.finish();
        r
    }

    #[test]
    fn pass_follows_requirements_only() {
        let mut r = sample();
        assert!(r.pass);
        r.verdict("W3(J2)", false);
        r.finish();
        assert!(r.pass);
        r.require("W0(J2)", false, true);
        r.finish();
        assert!(!r.pass);
    }

    #[test]
    fn text_and_json_agree_on_verdicts() {
        let mut r = sample();
        r.require("W0(J2)", false, true);
        r.finish();
        let text = r.to_text();
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(text.starts_with("nhk-lab classify: FAIL"));
        assert_eq!(json["pass"], false);
        assert_eq!(json["schema"], SCHEMA);
        for (k, v) in &r.verdicts {
            assert_eq!(json["verdicts"][k], *v);
            assert!(text.lines().any(|l| l.trim_start().starts_with(k.as_str()) && l.contains(&v.to_string())));
        }
    }
}
