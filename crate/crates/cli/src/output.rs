//! Artifacts written by every subcommand: frame dumps, force fields, the
//! text report and the JSON summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ddft_core::{BoundaryKind, Grid1D, Quantity, ScalarField, TimeSeries, VectorField};
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const FRAMES_SCHEMA: &str = "# ddft-forge frames v1";
pub const FRAMES_COLUMNS: &str = "t,x,rho,j,V";
pub const FORCE_SCHEMA: &str = "# ddft-forge force v1";
pub const FORCE_COLUMNS: &str = "t,x,force";
pub const SUMMARY_SCHEMA: &str = "ddft-forge/summary/v1";

/// One declared tolerance and how the run measured against it.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    /// `"<="` or `">="`
    pub relation: &'static str,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, relation: "<=", passed: value <= limit }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, relation: ">=", passed: value >= limit }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(ok)), limit: 1.0, relation: ">=", passed: ok }
    }
}

/// Everything a subcommand reports.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub schema: &'static str,
    pub command: String,
    pub scenario: String,
    pub passed: bool,
    pub metrics: serde_json::Map<String, Value>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    order: Vec<String>,
}

impl Outcome {
    pub fn new(command: &str, scenario: &str) -> Self {
        Self {
            schema: SUMMARY_SCHEMA,
            command: command.into(),
            scenario: scenario.into(),
            passed: true,
            metrics: serde_json::Map::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            error: None,
            order: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Value>) {
        if self.metrics.insert(key.into(), value.into()).is_none() {
            self.order.push(key.into());
        }
    }

    pub fn check(&mut self, c: Check) {
        self.passed &= c.passed;
        self.checks.push(c);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn fail_with(&mut self, message: String) {
        self.passed = false;
        self.error = Some(message);
    }

    pub fn report(&self) -> String {
        let mut s = format!("ddft-forge {} {}\n", self.command, self.scenario);
        s += &format!("verdict: {}\n", if self.passed { "PASS" } else { "FAIL" });
        if let Some(e) = &self.error {
            s += &format!("error: {e}\n");
        }
        for k in &self.order {
            s += &format!("{k}: {}\n", display(&self.metrics[k]));
        }
        if !self.checks.is_empty() {
            s += "checks:\n";
            for c in &self.checks {
                let mark = if c.passed { "ok" } else { "VIOLATED" };
                s += &format!("  {} {:.6e} {} {:.6e} {mark}\n", c.name, c.value, c.relation, c.limit);
            }
        }
        if !self.notes.is_empty() {
            s += "notes:\n";
            for n in &self.notes {
                s += &format!("  {n}\n");
            }
        }
        s
    }

    pub fn write(&self, out: &Path) -> Result<(), CliError> {
        std::fs::write(out.join("report.txt"), self.report())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        std::fs::write(out.join("summary.json"), json + "\n")?;
        Ok(())
    }
}

fn display(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.6e}"),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes `t,x,rho,j,V` rows, one per frame and cell. `j` is the current
/// through the right face of the cell, so that face currents survive the
/// round trip (the left wall face follows from the boundary condition).
pub fn write_frames(
    path: &Path,
    rho: &TimeSeries<ScalarField>,
    j: &TimeSeries<VectorField>,
    v: &TimeSeries<ScalarField>,
) -> Result<(), CliError> {
    if rho.len() != j.len() || rho.len() != v.len() {
        return Err(CliError::Usage("frame series of different lengths".into()));
    }
    write_frame_rows(path, rho.iter().zip(j.frames().iter().zip(v.frames())).map(|((t, r), (j, v))| (t, r, j, v)))
}

/// Same layout as [`write_frames`] for frames that are not a time series
/// starting at zero.
pub fn write_frame_rows<'a>(
    path: &Path,
    frames: impl Iterator<Item = (f64, &'a ScalarField, &'a VectorField, &'a ScalarField)>,
) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{FRAMES_SCHEMA}")?;
    writeln!(w, "{FRAMES_COLUMNS}")?;
    for (t, r, jf, vf) in frames {
        for (i, x) in r.grid().cell_centers().iter().enumerate() {
            writeln!(w, "{t:e},{x:e},{:e},{:e},{:e}", r.values()[i], jf.values()[i + 1], vf.values()[i])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes face forces as `t,x,force` with `x` the face position.
pub fn write_force(path: &Path, force: &TimeSeries<VectorField>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{FORCE_SCHEMA}")?;
    writeln!(w, "{FORCE_COLUMNS}")?;
    for (t, f) in force.iter() {
        for (k, v) in f.values().iter().enumerate() {
            writeln!(w, "{t:e},{:e},{v:e}", f.grid().face(k))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a frame dump written by [`write_frames`] back onto `grid`.
pub fn read_frames(path: &Path, grid: &Grid1D) -> Result<(TimeSeries<ScalarField>, TimeSeries<VectorField>), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    if lines.next() != Some(FRAMES_SCHEMA) {
        return Err(bad(format!("missing schema line '{FRAMES_SCHEMA}'")));
    }
    if lines.next() != Some(FRAMES_COLUMNS) {
        return Err(bad(format!("expected columns '{FRAMES_COLUMNS}'")));
    }
    let n = grid.n_cells();
    let body = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
    let mut rows: Vec<[f64; 5]> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(format!("row with {} fields", rec.len())));
        }
        let mut row = [0.0; 5];
        for (k, f) in rec.iter().enumerate() {
            row[k] = f.trim().parse().map_err(|_| bad(format!("not a number: '{f}'")))?;
        }
        rows.push(row);
    }
    if rows.is_empty() || !rows.len().is_multiple_of(n) {
        return Err(bad(format!("{} rows do not fill whole frames of {n} cells", rows.len())));
    }
    let (mut rho, mut j) = (TimeSeries::new(), TimeSeries::new());
    for frame in rows.chunks(n) {
        let t = frame[0][0];
        for (i, row) in frame.iter().enumerate() {
            if row[0] != t {
                return Err(bad(format!("frame at t = {t} has a row at t = {}", row[0])));
            }
            if (row[1] - grid.cell_center(i)).abs() > 1e-9 * grid.dx() {
                return Err(bad(format!("x = {} does not match cell center {}", row[1], grid.cell_center(i))));
            }
        }
        let mut faces = vec![0.0; n + 1];
        for (i, row) in frame.iter().enumerate() {
            faces[i + 1] = row[3];
        }
        faces[0] = match grid.bc() {
            BoundaryKind::Periodic => faces[n],
            BoundaryKind::PrescribedNormalFlux { left, .. } => left.value(t),
            _ => 0.0,
        };
        rho.push(t, ScalarField::new(*grid, Quantity::Density, frame.iter().map(|r| r[2]).collect())?)?;
        j.push(t, VectorField::new(*grid, Quantity::Current, faces)?)?;
    }
    Ok((rho, j))
}
