//! Experiment files and result serialization.
//!
//! Experiment files are flat `key = value` text with `#` comments and
//! comma-separated lists:
//!
//! ```text
//! kind = noise_collapse
//! seed = 7
//! q = 0.005, 0.01, 0.02
//! q_mh = 0.5, 1, 2, 3
//! trials = 10000
//! ```
//!
//! A JSON result file is also accepted: its `"spec"` object reproduces the run.
//! Machine-readable floats are written with 17 significant digits in CSV and
//! the shortest round-trip representation in JSON.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Result, SsmlError};
use crate::learner::SsmlConfig;
use crate::montecarlo::{
    loglog_slope, noise_collapse_table, run_experiment, CellSummary, CollapseRow, ExperimentKind,
    ExperimentSpec, NGrid, Quantile, RunOptions, SlopeFit,
};
use crate::noise::NoiseModel;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const KNOWN_KEYS: &[&str] = &[
    "kind",
    "seed",
    "trials",
    "d",
    "mh",
    "alpha",
    "beta",
    "noise",
    "max_shots",
    "multi_failure",
    "q",
    "q_mh",
    "p",
    "n_grid",
    "delta",
    "budget",
];

struct Entry {
    line: usize,
    col: usize,
    value: String,
}

fn located(line: usize, col: usize, msg: impl std::fmt::Display) -> SsmlError {
    SsmlError::Config(format!("line {line}, column {col}: {msg}"))
}

fn parse_list<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in e.value.split(',') {
        let lead = piece.len() - piece.trim_start().len();
        let item = piece.trim();
        let v = item.parse::<T>().map_err(|_| {
            located(e.line, e.col + offset + lead, format!("invalid {what} '{item}'"))
        })?;
        out.push(v);
        offset += piece.len() + 1;
    }
    Ok(out)
}

fn parse_one<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<T> {
    e.value
        .parse::<T>()
        .map_err(|_| located(e.line, e.col, format!("invalid {what} '{}'", e.value)))
}

/// Parses a key-value experiment file.
pub fn parse_experiment_text(text: &str) -> Result<ExperimentSpec> {
    let mut entries: Vec<(String, Entry)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let Some(eq) = content.find('=') else {
            let col = content.len() - content.trim_start().len() + 1;
            return Err(located(line_no, col, "expected 'key = value'"));
        };
        let key_part = &content[..eq];
        let key = key_part.trim().to_string();
        let key_col = key_part.len() - key_part.trim_start().len() + 1;
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(located(line_no, key_col, format!("unknown key '{key}'")));
        }
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(located(line_no, key_col, format!("duplicate key '{key}'")));
        }
        let value_part = &content[eq + 1..];
        let value = value_part.trim().to_string();
        let col = eq + 2 + (value_part.len() - value_part.trim_start().len());
        if value.is_empty() {
            return Err(located(line_no, col, format!("missing value for '{key}'")));
        }
        entries.push((key, Entry { line: line_no, col, value }));
    }
    let get = |k: &str| entries.iter().find(|(key, _)| key == k).map(|(_, e)| e);

    let kind_entry = get("kind").ok_or_else(|| SsmlError::Config("missing required key 'kind'".into()))?;
    let kind = ExperimentKind::parse(&kind_entry.value).ok_or_else(|| {
        located(
            kind_entry.line,
            kind_entry.col,
            format!("unknown experiment kind '{}'", kind_entry.value),
        )
    })?;
    let seed_entry = get("seed").ok_or_else(|| SsmlError::Config("missing required key 'seed'".into()))?;
    let seed: u64 = parse_one(seed_entry, "seed")?;

    let d: Vec<usize> = match get("d") {
        Some(e) => parse_list(e, "dimension")?,
        None => vec![2],
    };
    let mh: Vec<u64> = match get("mh") {
        Some(e) => parse_list(e, "halting threshold")?,
        None => vec![1],
    };
    let mut base = SsmlConfig::new(d[0], mh[0], seed);
    if let Some(e) = get("alpha") {
        base.alpha = parse_one(e, "alpha")?;
    }
    if let Some(e) = get("beta") {
        base.beta = parse_one(e, "beta")?;
    }
    if let Some(e) = get("noise") {
        base.noise = e
            .value
            .parse::<NoiseModel>()
            .map_err(|err| located(e.line, e.col, err))?;
    }
    if let Some(e) = get("max_shots") {
        base.max_shots = parse_one(e, "max_shots")?;
    }
    if let Some(e) = get("multi_failure") {
        base.multi_failure = parse_one(e, "boolean")?;
    }

    let mut spec = ExperimentSpec::new(kind, base);
    spec.d = d;
    spec.mh = mh;
    if let Some(e) = get("trials") {
        spec.trials = parse_one(e, "trial count")?;
    }
    if let Some(e) = get("q") {
        spec.q = parse_list(e, "probability")?;
    }
    if let Some(e) = get("q_mh") {
        spec.q_mh = parse_list(e, "noise load")?;
    }
    if let Some(e) = get("p") {
        spec.p = parse_list(e, "probability")?;
    }
    if let Some(e) = get("delta") {
        spec.delta = parse_one(e, "delta")?;
    }
    if let Some(e) = get("budget") {
        spec.budget = parse_one(e, "budget")?;
    }
    if let Some(e) = get("n_grid") {
        spec.n_grid = if e.value == "auto" {
            NGrid::Auto { points: 64 }
        } else if let Some(points) = e.value.strip_prefix("auto:") {
            NGrid::Auto {
                points: points
                    .trim()
                    .parse()
                    .map_err(|_| located(e.line, e.col, format!("invalid grid size '{points}'")))?,
            }
        } else {
            NGrid::Explicit(parse_list(e, "grid point")?)
        };
    }
    spec.cells()?;
    Ok(spec)
}

/// Parses either a key-value file or the JSON written by [`write_outputs`].
pub fn parse_experiment(text: &str) -> Result<ExperimentSpec> {
    if text.trim_start().starts_with('{') {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            SsmlError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        let spec_value = value.get("spec").cloned().unwrap_or(value);
        let spec: ExperimentSpec = serde_json::from_value(spec_value)
            .map_err(|e| SsmlError::Config(format!("invalid spec object: {e}")))?;
        spec.cells()?;
        Ok(spec)
    } else {
        parse_experiment_text(text)
    }
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SsmlError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_experiment(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub d: usize,
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellSummary>,
    pub collapse: Vec<CollapseRow>,
    pub slopes: Vec<SlopeRow>,
}

/// Runs the experiment and derives the kind-specific tables.
pub fn execute(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentOutput> {
    if spec.kind == ExperimentKind::NoiseCollapse {
        let collapse = noise_collapse_table(spec, opts)?;
        return Ok(ExperimentOutput {
            spec: spec.clone(),
            cells: Vec::new(),
            collapse,
            slopes: Vec::new(),
        });
    }
    let cells = run_experiment(spec, opts)?;
    let mut slopes = Vec::new();
    if spec.kind == ExperimentKind::AccuracyScaling {
        for &d in &spec.d {
            let pairs: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.params.d == Some(d))
                .filter_map(|c| Some((c.mean_t?.mean, c.mean_epsilon_t?.mean)))
                .collect();
            if let Ok(fit) = loglog_slope(&pairs) {
                slopes.push(SlopeRow { d, fit });
            }
        }
    }
    Ok(ExperimentOutput {
        spec: spec.clone(),
        cells,
        collapse: Vec::new(),
        slopes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Bool(bool),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Missing => Value::Null,
        }
    }

    fn console(&self) -> String {
        match self {
            Cell::Float(v) => sig_digits(*v, 6),
            Cell::Missing => "-".into(),
            other => other.csv(),
        }
    }
}

fn opt_float(v: Option<f64>) -> Cell {
    v.map_or(Cell::Missing, Cell::Float)
}

/// A header plus rows, rendered as CSV, JSON objects or a console table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json_rows(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (col, cell) in self.columns.iter().zip(row) {
                        obj.insert((*col).to_string(), cell.json());
                    }
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn to_console(&self) -> String {
        let rendered: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Cell::console).collect())
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| rendered.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let header: Vec<String> = self
            .columns
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", header.join("  "));
        for r in &rendered {
            let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// `x` with `digits` significant digits, switching to exponent form for very
/// large or small magnitudes.
pub fn sig_digits(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if exp < -4 || exp >= digits as i32 {
        format!("{:.*e}", digits - 1, x)
    } else {
        format!("{:.*}", (digits as i32 - 1 - exp).max(0) as usize, x)
    }
}

const SUMMARY_COLUMNS: &[&str] = &[
    "cell",
    "d",
    "mh",
    "p",
    "trials",
    "halted",
    "censored_fraction",
    "mean_t",
    "mean_t_se",
    "mean_epsilon_t",
    "mean_epsilon_t_se",
    "mean_hit",
    "mean_hit_se",
    "delta",
    "quantile_t",
    "fit_nc",
    "fit_rms",
];

pub fn summary_table(cells: &[CellSummary]) -> Table {
    let rows = cells
        .iter()
        .map(|c| {
            vec![
                Cell::Int(c.cell as u64),
                c.params.d.map_or(Cell::Missing, |d| Cell::Int(d as u64)),
                Cell::Int(c.params.mh),
                opt_float(c.params.p),
                Cell::Int(c.trials as u64),
                Cell::Int(c.halted as u64),
                Cell::Float(c.censored_fraction),
                opt_float(c.mean_t.map(|e| e.mean)),
                opt_float(c.mean_t.map(|e| e.se)),
                opt_float(c.mean_epsilon_t.map(|e| e.mean)),
                opt_float(c.mean_epsilon_t.map(|e| e.se)),
                opt_float(c.mean_hit.map(|e| e.mean)),
                opt_float(c.mean_hit.map(|e| e.se)),
                Cell::Float(c.delta),
                match c.quantile {
                    Quantile::Identified(t) => Cell::Int(t),
                    Quantile::NotIdentifiable => Cell::Missing,
                },
                opt_float(c.fit.map(|f| f.nc)),
                opt_float(c.fit.map(|f| f.rms_residual)),
            ]
        })
        .collect();
    Table {
        columns: SUMMARY_COLUMNS.to_vec(),
        rows,
    }
}

pub fn collapse_table(rows: &[CollapseRow]) -> Table {
    Table {
        columns: vec![
            "q",
            "mh",
            "q_mh",
            "scaled_mean_mc",
            "scaled_mean_mc_se",
            "scaled_mean_exact",
            "asymptote",
            "censored_fraction",
            "skipped",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Float(r.q),
                    Cell::Int(r.mh),
                    Cell::Float(r.q_mh),
                    opt_float(r.scaled_mean_mc.map(|e| e.mean)),
                    opt_float(r.scaled_mean_mc.map(|e| e.se)),
                    Cell::Float(r.scaled_mean_exact),
                    Cell::Float(r.asymptote),
                    Cell::Float(r.censored_fraction),
                    Cell::Bool(r.skipped),
                ]
            })
            .collect(),
    }
}

pub fn cdf_table(cells: &[CellSummary]) -> Table {
    Table {
        columns: vec!["cell", "n", "p"],
        rows: cells
            .iter()
            .flat_map(|c| {
                c.cdf
                    .iter()
                    .map(move |pt| vec![Cell::Int(c.cell as u64), Cell::Int(pt.n), Cell::Float(pt.p)])
            })
            .collect(),
    }
}

pub fn histogram_table(cells: &[CellSummary]) -> Table {
    Table {
        columns: vec!["cell", "length", "count", "frequency", "pmf"],
        rows: cells
            .iter()
            .filter_map(|c| c.run_lengths.as_ref().map(|rl| (c.cell, rl)))
            .flat_map(|(cell, rl)| {
                rl.bins.iter().map(move |b| {
                    vec![
                        Cell::Int(cell as u64),
                        Cell::Int(b.length),
                        Cell::Int(b.count),
                        Cell::Float(b.frequency),
                        Cell::Float(b.pmf),
                    ]
                })
            })
            .collect(),
    }
}

pub fn slope_table(slopes: &[SlopeRow]) -> Table {
    Table {
        columns: vec!["d", "slope", "slope_se", "intercept", "intercept_se"],
        rows: slopes
            .iter()
            .map(|s| {
                vec![
                    Cell::Int(s.d as u64),
                    Cell::Float(s.fit.slope),
                    Cell::Float(s.fit.slope_se),
                    Cell::Float(s.fit.intercept),
                    Cell::Float(s.fit.intercept_se),
                ]
            })
            .collect(),
    }
}

impl ExperimentOutput {
    /// The main table: collapse rows for `noise_collapse`, cell summaries otherwise.
    pub fn primary_table(&self) -> Table {
        if self.spec.kind == ExperimentKind::NoiseCollapse {
            collapse_table(&self.collapse)
        } else {
            summary_table(&self.cells)
        }
    }

    /// Secondary CSV files as `(suffix, table)`.
    pub fn extra_tables(&self) -> Vec<(&'static str, Table)> {
        let mut out = Vec::new();
        if !self.cells.is_empty() {
            out.push(("cdf", cdf_table(&self.cells)));
        }
        if self.cells.iter().any(|c| c.run_lengths.is_some()) {
            out.push(("hist", histogram_table(&self.cells)));
        }
        if !self.slopes.is_empty() {
            out.push(("slope", slope_table(&self.slopes)));
        }
        out
    }

    /// Result envelope. `timing` is included only when given, so files stay
    /// byte-reproducible by default.
    pub fn envelope(&self, timing: Option<Value>) -> Result<Value> {
        let mut obj = Map::new();
        obj.insert("tool_version".into(), Value::from(TOOL_VERSION));
        obj.insert("spec".into(), to_value(&self.spec)?);
        obj.insert("rows".into(), self.primary_table().to_json_rows());
        if !self.cells.is_empty() {
            obj.insert("cells".into(), to_value(&self.cells)?);
        }
        if !self.slopes.is_empty() {
            obj.insert("slopes".into(), to_value(&self.slopes)?);
        }
        if let Some(t) = timing {
            obj.insert("timing".into(), t);
        }
        Ok(Value::Object(obj))
    }

    pub fn console_summary(&self) -> String {
        let mut out = format!(
            "experiment {} (seed {}, {} trials per cell)\n",
            self.spec.kind.name(),
            self.spec.base.seed,
            self.spec.trials
        );
        out.push_str(&self.primary_table().to_console());
        if !self.slopes.is_empty() {
            out.push_str("\nlog-log slope of mean infidelity against mean stopping time\n");
            out.push_str(&slope_table(&self.slopes).to_console());
        }
        out
    }
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| SsmlError::NumericIntegrity(format!("serialization failed: {e}")))
}

/// Pretty JSON terminated by a newline.
pub fn json_text(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)
        .map_err(|e| SsmlError::NumericIntegrity(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes `<prefix>.csv`, `<prefix>.json` and any `<prefix>_<suffix>.csv` tables.
pub fn write_outputs(output: &ExperimentOutput, prefix: &Path, timing: Option<Value>) -> Result<Vec<PathBuf>> {
    let with_suffix = |suffix: &str| {
        let mut name = prefix.as_os_str().to_os_string();
        name.push(suffix);
        PathBuf::from(name)
    };
    let write = |path: &Path, contents: &str| {
        std::fs::write(path, contents)
            .map_err(|e| SsmlError::Config(format!("cannot write {}: {e}", path.display())))
    };
    let mut written = Vec::new();
    let csv = with_suffix(".csv");
    write(&csv, &output.primary_table().to_csv())?;
    written.push(csv);
    for (suffix, table) in output.extra_tables() {
        let path = with_suffix(&format!("_{suffix}.csv"));
        write(&path, &table.to_csv())?;
        written.push(path);
    }
    let json = with_suffix(".json");
    write(&json, &json_text(&output.envelope(timing)?)?)?;
    written.push(json);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COLLAPSE: &str = "\
# noise collapse smoke config
kind = noise_collapse
seed = 11
q = 0.01
mh = 50
trials = 2000
";

    #[test]
    fn parses_key_value_file() {
        let spec = parse_experiment(COLLAPSE).unwrap();
        assert_eq!(spec.kind, ExperimentKind::NoiseCollapse);
        assert_eq!(spec.base.seed, 11);
        assert_eq!(spec.q, vec![0.01]);
        assert_eq!(spec.mh, vec![50]);
        assert_eq!(spec.trials, 2000);
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_experiment("kind = cert_bernoulli\nseed = 1\np = 0.5, x\n").unwrap_err();
        assert_eq!(
            err,
            SsmlError::Config("line 3, column 10: invalid probability 'x'".into())
        );
        let err = parse_experiment("kind = cert_bernoulli\n  colour = red\n").unwrap_err();
        assert_eq!(err, SsmlError::Config("line 2, column 3: unknown key 'colour'".into()));
        let err = parse_experiment("kind = learning_prob\nd = 2\n").unwrap_err();
        assert!(err.to_string().contains("seed"));
        let err = parse_experiment("kind = nope\nseed = 1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1, column 8"));
        let err = parse_experiment("kind = learning_prob\nseed = 1\nnoise = bsc:0.6\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3"));
        let err = parse_experiment("kind = learning_prob\nseed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert!(parse_experiment("kind learning_prob\n").is_err());
    }

    #[test]
    fn collapse_csv_schema_and_determinism() {
        let spec = parse_experiment(COLLAPSE).unwrap();
        let a = execute(&spec, &RunOptions { workers: Some(1) }).unwrap();
        let b = execute(&spec, &RunOptions { workers: Some(3) }).unwrap();
        let csv = a.primary_table().to_csv();
        assert!(csv.starts_with(
            "q,mh,q_mh,scaled_mean_mc,scaled_mean_mc_se,scaled_mean_exact,asymptote,censored_fraction,skipped\n"
        ));
        assert_eq!(csv, b.primary_table().to_csv());
        assert_eq!(
            json_text(&a.envelope(None).unwrap()).unwrap(),
            json_text(&b.envelope(None).unwrap()).unwrap()
        );
    }

    #[test]
    fn envelope_spec_round_trips() {
        let text = "kind = cert_bernoulli\nseed = 4\np = 0.5, 0.9\nmh = 2, 3\ntrials = 300\nn_grid = 0, 5, 10, 20, 40\n";
        let spec = parse_experiment(text).unwrap();
        let out = execute(&spec, &RunOptions::default()).unwrap();
        let json = json_text(&out.envelope(None).unwrap()).unwrap();
        let again = parse_experiment(&json).unwrap();
        assert_eq!(again, spec);
        let out2 = execute(&again, &RunOptions::default()).unwrap();
        assert_eq!(out.primary_table().to_csv(), out2.primary_table().to_csv());
        let rows = out.envelope(None).unwrap()["rows"].as_array().unwrap().len();
        assert_eq!(rows, 4);
    }

    #[test]
    fn float_formats() {
        assert_eq!(Cell::Float(6.0).csv(), "6.0000000000000000e0");
        assert_eq!(Cell::Float(0.1).csv().parse::<f64>().unwrap(), 0.1);
        assert_eq!(sig_digits(6.0, 6), "6.00000");
        assert_eq!(sig_digits(0.0295130496, 6), "0.0295130");
        assert_eq!(sig_digits(1234567.0, 6), "1.23457e6");
        assert_eq!(sig_digits(-0.5, 6), "-0.500000");
        assert_eq!(Cell::Float(f64::NAN).json(), Value::Null);
    }
}
