//! Run configuration: TOML sections, `section.key=value` overrides and
//! conversion into the problem types.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::DEFAULT_QUANTIZATION;
use crate::discretization::{CellGrid, MacroGrid};
use crate::effective::{Ansatz, MacroConfig};
use crate::epsilon::{EpsilonTemplate, DEFAULT_ELEMENTS_PER_PERIOD};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::{PeriodicField, PotentialField, DEFAULT_MEAN_TOL};
use crate::harness::{parabola, ReferenceSpec, StudyKind, StudySpec, Thresholds};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldsSection {
    /// Preset, expression, or `csv:<path>` for the coefficient a(y).
    pub a: String,
    /// Same forms for the potential V(y).
    pub v: String,
    pub mean_tol: f64,
    pub sample_cells: usize,
}

impl Default for FieldsSection {
    fn default() -> Self {
        Self {
            a: "trig(2, 1, 1)".into(),
            v: "trig(0, 1, 1)".into(),
            mean_tol: DEFAULT_MEAN_TOL,
            sample_cells: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub dim: usize,
    pub p: f64,
    pub f: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            dim: 1,
            p: 2.0,
            f: "1".into(),
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridsSection {
    /// Macro elements per axis for the effective problems.
    pub n: usize,
    /// Cell elements per axis.
    pub m: usize,
    /// Reciprocals of the ε values, increasing.
    pub eps_inv: Vec<u32>,
    pub elements_per_period: usize,
}

impl Default for GridsSection {
    fn default() -> Self {
        Self {
            n: 16,
            m: 64,
            eps_inv: vec![8, 16, 32, 64],
            elements_per_period: DEFAULT_ELEMENTS_PER_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub theta: f64,
    pub xi: Vec<f64>,
    /// Key spacing of the memo table; 0 disables it.
    pub quantization: f64,
    /// Sample points per axis of the flux table written by `solve-cell`.
    pub table: Vec<f64>,
}

impl Default for CellSection {
    fn default() -> Self {
        Self {
            theta: 1.0,
            xi: vec![1.0, 0.0],
            quantization: DEFAULT_QUANTIZATION,
            table: vec![-1.0, -0.5, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub kinds: Vec<StudyKind>,
    /// Smooth factor; defaults to x(1-x) per coordinate.
    pub phi1: Option<String>,
    pub phi2: String,
    pub psi: Vec<String>,
    pub alpha: f64,
    pub strict: bool,
    pub final_max: Option<f64>,
    pub secondary_alpha: f64,
    pub ansatz: Ansatz,
    pub reference_n: usize,
    pub reference_m: usize,
    pub linear_at_p2: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            kinds: vec![
                StudyKind::Convergence,
                StudyKind::ScaledPairing,
                StudyKind::PotentialPairing,
            ],
            phi1: None,
            phi2: "sin(2*pi*y)".into(),
            psi: vec!["sin(2*pi*y)".into(), "cos(2*pi*y)".into()],
            alpha: 0.5,
            strict: false,
            final_max: None,
            secondary_alpha: 0.5,
            ansatz: Ansatz::Split,
            reference_n: 256,
            reference_m: 256,
            linear_at_p2: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fields: FieldsSection,
    pub problem: ProblemSection,
    pub grids: GridsSection,
    pub solver: SolverConfig,
    #[serde(rename = "macro")]
    pub macro_solver: MacroConfig,
    pub cell: CellSection,
    pub study: StudySection,
    pub output: OutputSection,
}

/// Sets `section.key` (dotted path) in a TOML table; the value is parsed as a
/// TOML value and kept as a string when that fails.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override '{assignment}' has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = table;
    for k in parents {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{assignment}': '{k}' is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML, applies overrides and validates. Errors in the file carry
    /// its line and column; errors from overrides name the offending field.
    pub fn parse(src: &str, overrides: &[String]) -> Result<Self> {
        toml::from_str::<RunConfig>(src).map_err(|e| Error::Config(e.to_string()))?;
        let mut table: toml::Table = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML of the fully resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let pr = &self.problem;
        if pr.dim != 1 && pr.dim != 2 {
            return cfg(format!("problem.dim must be 1 or 2, got {}", pr.dim));
        }
        if !(pr.p >= 2.0 && pr.p.is_finite()) {
            return cfg(format!("problem.p must be at least 2, got {}", pr.p));
        }
        if pr.lower.len() < pr.dim || pr.upper.len() < pr.dim {
            return cfg(format!("problem.lower and problem.upper need {} entries", pr.dim));
        }
        let g = &self.grids;
        if g.n == 0 || g.m == 0 || g.elements_per_period == 0 {
            return cfg("grids.n, grids.m and grids.elements_per_period must be positive".into());
        }
        if g.eps_inv.is_empty() || g.eps_inv.contains(&0) {
            return cfg("grids.eps_inv must list positive integers".into());
        }
        if g.eps_inv.windows(2).any(|w| w[1] <= w[0]) {
            return cfg("grids.eps_inv must be strictly increasing".into());
        }
        if self.cell.xi.len() < pr.dim {
            return cfg(format!("cell.xi needs {} entries", pr.dim));
        }
        if !(self.cell.quantization >= 0.0) {
            return cfg("cell.quantization must be non-negative".into());
        }
        if !(self.fields.mean_tol >= 0.0) || self.fields.sample_cells == 0 {
            return cfg("fields.mean_tol must be non-negative and fields.sample_cells positive".into());
        }
        let st = &self.study;
        if !(st.alpha > 0.0) || !(st.secondary_alpha > 0.0) {
            return cfg("study.alpha and study.secondary_alpha must be positive".into());
        }
        if st.reference_n == 0 || st.reference_m == 0 {
            return cfg("study.reference_n and study.reference_m must be positive".into());
        }
        if self.output.dir.is_empty() {
            return cfg("output.dir must not be empty".into());
        }
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        self.macro_solver
            .validate()
            .map_err(|e| Error::Config(format!("macro: {e}")))?;
        self.load_expr().map(|_| ())
    }

    fn field(&self, src: &str) -> Result<PeriodicField> {
        match src.strip_prefix("csv:") {
            Some(path) => PeriodicField::from_csv(self.problem.dim, Path::new(path.trim())),
            None => PeriodicField::from_preset(self.problem.dim, src),
        }
    }

    pub fn coefficient(&self) -> Result<PeriodicField> {
        self.field(&self.fields.a)
    }

    /// The potential as given, before the zero-mean check.
    pub fn potential_field(&self) -> Result<PeriodicField> {
        self.field(&self.fields.v)
    }

    pub fn potential(&self) -> Result<PotentialField> {
        PotentialField::new(self.potential_field()?, self.fields.mean_tol)
    }

    pub fn load_expr(&self) -> Result<Expr> {
        Expr::parse(&self.problem.f)
    }

    pub fn eps_list(&self) -> Vec<f64> {
        self.grids.eps_inv.iter().map(|k| 1.0 / *k as f64).collect()
    }

    fn corners(&self) -> ([f64; 2], [f64; 2]) {
        let pr = &self.problem;
        let mut lo = [0.0; 2];
        let mut hi = [1.0; 2];
        lo[..pr.dim].copy_from_slice(&pr.lower[..pr.dim]);
        hi[..pr.dim].copy_from_slice(&pr.upper[..pr.dim]);
        (lo, hi)
    }

    pub fn macro_grid(&self) -> Result<MacroGrid> {
        let (lo, hi) = self.corners();
        MacroGrid::new(self.problem.dim, lo, hi, [self.grids.n, self.grids.n])
    }

    pub fn cell_grid(&self) -> Result<CellGrid> {
        CellGrid::new(self.problem.dim, self.grids.m)
    }

    pub fn xi(&self) -> [f64; 2] {
        let mut xi = [0.0; 2];
        xi[..self.problem.dim].copy_from_slice(&self.cell.xi[..self.problem.dim]);
        xi
    }

    pub fn quantization(&self) -> Option<f64> {
        (self.cell.quantization > 0.0).then_some(self.cell.quantization)
    }

    pub fn template(&self) -> Result<EpsilonTemplate> {
        let (lower, upper) = self.corners();
        Ok(EpsilonTemplate {
            lower,
            upper,
            elements_per_period: self.grids.elements_per_period,
            ..EpsilonTemplate::unit_box(
                self.coefficient()?,
                self.potential()?,
                self.load_expr()?,
                self.problem.p,
            )
        })
    }

    pub fn study_spec(&self) -> Result<StudySpec> {
        let dim = self.problem.dim;
        let st = &self.study;
        let mut spec = StudySpec::new(self.template()?, self.eps_list())?;
        spec.phi1 = match &st.phi1 {
            Some(src) => Expr::parse(src)?,
            None => parabola(dim),
        };
        spec.phi2 = PeriodicField::from_preset(dim, &st.phi2)?;
        spec.psi = st
            .psi
            .iter()
            .map(|s| PeriodicField::from_preset(dim, s))
            .collect::<Result<_>>()?;
        spec.mean_tol = self.fields.mean_tol;
        spec.solver = self.solver.clone();
        spec.reference = ReferenceSpec {
            n: st.reference_n,
            m: st.reference_m,
            linear_at_p2: st.linear_at_p2,
            ansatz: st.ansatz,
            macro_config: self.macro_solver.clone(),
            quantization: self.quantization(),
        };
        spec.thresholds = Thresholds {
            alpha: st.alpha,
            strict: st.strict,
            final_max: st.final_max,
        };
        spec.secondary = Thresholds {
            alpha: st.secondary_alpha,
            ..Default::default()
        };
        spec.validate()?;
        Ok(spec)
    }
}
