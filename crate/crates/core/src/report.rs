//! Atomic, byte-stable report output and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::epsilon::AprioriScan;
use crate::error::{Error, Result};
use crate::harness::{ReportRow, Series, CSV_HEADER};

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_ROOT_ENV: &str = "HOMOG_OUTPUT_ROOT";

/// Anything with a CSV rendering.
pub trait Tabular {
    fn to_csv(&self) -> String;
}

impl Tabular for Series {
    fn to_csv(&self) -> String {
        Series::to_csv(self)
    }
}

impl Tabular for AprioriScan {
    fn to_csv(&self) -> String {
        AprioriScan::to_csv(self)
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("'{}' has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn render<R: Serialize + Tabular + ?Sized>(report: &R, format: Format) -> String {
    match format {
        Format::Csv => report.to_csv(),
        Format::Json => to_json(report),
    }
}

pub fn write_report<R: Serialize + Tabular + ?Sized>(report: &R, format: Format, path: &Path) -> Result<()> {
    write_atomic(path, render(report, format).as_bytes())
}

/// Parses the rows of a study CSV back.
pub fn parse_series_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid("missing or unexpected CSV header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("malformed CSV row {}: '{line}'", i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| cols[k].parse::<f64>().map_err(|_| bad());
            Ok(ReportRow {
                eps: num(0)?,
                value: num(1)?,
                limit: num(2)?,
                gap: num(3)?,
                quad_stability: num(4)?,
                pass: cols[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Record of one run: the resolved configuration, overrides and artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub overrides: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub passed: bool,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects artifacts under one output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    formats: Vec<Format>,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn new(configured: &str, formats: &[Format]) -> Self {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(configured));
        Self {
            root,
            formats: formats.to_vec(),
            artifacts: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, bytes)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, stem: &str, value: &T) -> Result<()> {
        if self.formats.contains(&Format::Json) {
            self.write_bytes(&format!("{stem}.json"), to_json(value).as_bytes())?;
        }
        Ok(())
    }

    /// Writes the report in every configured format.
    pub fn write_report<R: Serialize + Tabular + ?Sized>(&mut self, stem: &str, report: &R) -> Result<()> {
        for f in self.formats.clone() {
            let ext = match f {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            self.write_bytes(&format!("{stem}.{ext}"), render(report, f).as_bytes())?;
        }
        Ok(())
    }

    pub fn write_csv(&mut self, stem: &str, csv: &str) -> Result<()> {
        if self.formats.contains(&Format::Csv) {
            self.write_bytes(&format!("{stem}.csv"), csv.as_bytes())?;
        }
        Ok(())
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes `manifest.json`; the manifest lists every artifact written before it.
    pub fn finish(&mut self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.artifacts = self.artifacts.clone();
        let path = self.root.join("manifest.json");
        write_atomic(&path, to_json(&manifest).as_bytes())?;
        Ok(path)
    }
}
