//! The `fedsim` command verbs as library functions.
//!
//! Each verb returns `Ok(output)` or a [`CliError`] carrying the process
//! exit code: 1 for unparsable input, 2 for invalid input or missing
//! artifacts, 3 for runtime and integrity failures.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Error;
use crate::model_mgmt::CoVersionRegistry;
use crate::simulator::{run_scenario, RunOutput, Scenario, Summary};

pub use crate::simulator::MetricsRecord;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const COVERSION_FILE: &str = "coversion.log";
pub const SUMMARY_FILE: &str = "summary.json";

pub const EXIT_PARSE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Decode(_) => EXIT_PARSE,
            Error::Validation(_) | Error::Config(_) | Error::NotFound(_) => EXIT_INVALID,
            _ => EXIT_RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

/// Configure logging from `FEDSIM_LOG` (`error`, `info`, `debug`, or any
/// env_logger filter). Defaults to warnings.
pub fn init_logging() {
    let filter = std::env::var("FEDSIM_LOG").unwrap_or_else(|_| "warn".into());
    let _ = env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).try_init();
}

/// Write `bytes` to a sibling temp file, sync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Read and parse a scenario file without validating it.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_PARSE, format!("cannot read {}: {e}", path.display())))?;
    Ok(Scenario::from_json(&text)?)
}

/// Parse and validate; returns the scenario on success.
pub fn cmd_validate(path: &Path) -> Result<Scenario, CliError> {
    let scenario = load_scenario(path)?;
    scenario.validate()?;
    Ok(scenario)
}

/// One JSON object per line.
pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::new(EXIT_PARSE, format!("metrics line {}: {e}", i + 1)))
        })
        .collect()
}

/// Run a scenario and write `metrics.jsonl`, `coversion.log` and
/// `summary.json` into `out`. Nothing is written unless the run succeeds.
pub fn cmd_run(scenario_path: &Path, seed: Option<u64>, out: &Path) -> Result<RunOutput, CliError> {
    let mut scenario = load_scenario(scenario_path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    scenario.validate()?;
    let output = run_scenario(&scenario)?;
    write_run(&output, out)?;
    Ok(output)
}

pub fn write_run(output: &RunOutput, out: &Path) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::new(EXIT_RUNTIME, format!("writing {}: {e}", out.display()));
    fs::create_dir_all(out).map_err(io)?;
    write_atomic(&out.join(METRICS_FILE), metrics_jsonl(&output.records).as_bytes()).map_err(io)?;
    write_atomic(&out.join(COVERSION_FILE), &output.coversion.to_bytes()).map_err(io)?;
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    write_atomic(&out.join(SUMMARY_FILE), format!("{summary}\n").as_bytes()).map_err(io)?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<Summary, CliError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunColumn {
    pub run: String,
    pub path: PathBuf,
    pub summary: Summary,
    /// Differences against the first run, in the same units.
    pub delta: CompareDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CompareDelta {
    pub final_loss: f64,
    pub total_bytes_up: i128,
    pub total_bytes_down: i128,
    pub total_virtual_time_ms: f64,
    pub rounds_to_convergence: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub runs: Vec<RunColumn>,
}

/// Side-by-side summaries of two or more run directories, in argument order.
pub fn cmd_compare(dirs: &[PathBuf]) -> Result<Comparison, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::new(EXIT_INVALID, "compare needs at least two run directories"));
    }
    let summaries = dirs.iter().map(|d| read_summary(d)).collect::<Result<Vec<_>, _>>()?;
    let base = summaries[0].clone();
    let runs = dirs
        .iter()
        .zip(summaries)
        .map(|(dir, summary)| {
            let delta = CompareDelta {
                final_loss: summary.final_loss - base.final_loss,
                total_bytes_up: summary.total_bytes_up as i128 - base.total_bytes_up as i128,
                total_bytes_down: summary.total_bytes_down as i128 - base.total_bytes_down as i128,
                total_virtual_time_ms: summary.total_virtual_time_ms - base.total_virtual_time_ms,
                rounds_to_convergence: summary
                    .rounds_to_convergence
                    .zip(base.rounds_to_convergence)
                    .map(|(a, b)| a as i64 - b as i64),
            };
            RunColumn { run: run_label(dir), path: dir.clone(), summary, delta }
        })
        .collect();
    Ok(Comparison { runs })
}

fn run_label(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn render_table(&self) -> String {
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |v| v.to_string());
        let rows: Vec<(&str, Vec<String>)> = vec![
            ("aggregator", self.runs.iter().map(|r| r.summary.aggregator.clone()).collect()),
            ("final_loss", self.runs.iter().map(|r| format!("{:.6}", r.summary.final_loss)).collect()),
            (
                "final_accuracy",
                self.runs.iter().map(|r| r.summary.final_accuracy.map_or("-".into(), |a| format!("{a:.4}"))).collect(),
            ),
            ("bytes_up", self.runs.iter().map(|r| r.summary.total_bytes_up.to_string()).collect()),
            ("bytes_down", self.runs.iter().map(|r| r.summary.total_bytes_down.to_string()).collect()),
            ("virtual_time_ms", self.runs.iter().map(|r| format!("{:.1}", r.summary.total_virtual_time_ms)).collect()),
            ("rounds_run", self.runs.iter().map(|r| r.summary.rounds_run.to_string()).collect()),
            ("rounds_to_convergence", self.runs.iter().map(|r| opt(r.summary.rounds_to_convergence)).collect()),
            ("d_final_loss", self.runs.iter().map(|r| format!("{:+.6}", r.delta.final_loss)).collect()),
            ("d_bytes_up", self.runs.iter().map(|r| format!("{:+}", r.delta.total_bytes_up)).collect()),
            ("d_bytes_down", self.runs.iter().map(|r| format!("{:+}", r.delta.total_bytes_down)).collect()),
            ("d_virtual_time_ms", self.runs.iter().map(|r| format!("{:+.1}", r.delta.total_virtual_time_ms)).collect()),
        ];
        let header: Vec<String> = self.runs.iter().map(|r| r.run.clone()).collect();
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|(_, v)| v[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, label: &str, cells: &[String]| {
            let _ = write!(out, "{label:<label_w$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        };
        line(&mut out, "metric", &header);
        for (label, cells) in &rows {
            line(&mut out, label, cells);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineageRow {
    pub client_id: String,
    pub local_version: u64,
    pub digest: String,
}

/// Contributors to `version`, after verifying the whole chain.
pub fn cmd_lineage(out: &Path, version: u64) -> Result<Vec<LineageRow>, CliError> {
    let path = out.join(COVERSION_FILE);
    let bytes =
        fs::read(&path).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    // Any decoding failure here means a damaged chain.
    let registry = CoVersionRegistry::from_bytes(&bytes).map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?;
    registry.verify().map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?;
    let record = registry
        .find(version)
        .map_err(|_| CliError::new(EXIT_INVALID, format!("version not found: {version}")))?;
    Ok(record
        .body
        .contributing
        .iter()
        .map(|c| LineageRow {
            client_id: c.client_id.clone(),
            local_version: c.local_version,
            digest: hex::encode(c.update_digest),
        })
        .collect())
}

pub fn render_lineage(rows: &[LineageRow]) -> String {
    let w = rows.iter().map(|r| r.client_id.len()).max().unwrap_or(0).max("client_id".len());
    let mut out = format!("{:<w$}  {:>13}  digest\n", "client_id", "local_version");
    for r in rows {
        let _ = writeln!(out, "{:<w$}  {:>13}  {}", r.client_id, r.local_version, r.digest);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TaskKind;

    fn scenario_file(dir: &Path, s: &Scenario) -> PathBuf {
        let path = dir.join("scenario.json");
        fs::write(&path, serde_json::to_string_pretty(s).unwrap()).unwrap();
        path
    }

    #[test]
    fn run_writes_three_files_and_summary_folds() {
        let tmp = tempfile::tempdir().unwrap();
        let path = scenario_file(tmp.path(), &Scenario::minimal(TaskKind::BinaryLogistic, 2, 2, 1));
        let out = tmp.path().join("out");
        cmd_run(&path, None, &out).unwrap();
        for f in [METRICS_FILE, COVERSION_FILE, SUMMARY_FILE] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let records = parse_metrics(&fs::read_to_string(out.join(METRICS_FILE)).unwrap()).unwrap();
        assert_eq!(read_summary(&out).unwrap(), Summary::fold(&records));
        let rows = cmd_lineage(&out, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(render_lineage(&rows).starts_with("client_id"));
    }

    #[test]
    fn malformed_scenario_exits_one_without_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.json");
        fs::write(&path, "{\"version\": 1,\n \"seed\": }").unwrap();
        let out = tmp.path().join("out");
        let err = cmd_run(&path, None, &out).unwrap_err();
        assert_eq!(err.code, EXIT_PARSE);
        assert!(err.message.contains("line 2"), "{}", err.message);
        assert!(!out.exists());
    }

    #[test]
    fn invalid_scenario_exits_two() {
        let tmp = tempfile::tempdir().unwrap();
        let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 2, 2, 1);
        s.training.batch_size = 0;
        let path = scenario_file(tmp.path(), &s);
        let err = cmd_validate(&path).unwrap_err();
        assert_eq!(err.code, EXIT_INVALID);
        assert!(err.message.contains("training.batch_size"));
        assert_eq!(cmd_run(&path, None, &tmp.path().join("o")).unwrap_err().code, EXIT_INVALID);
    }

    #[test]
    fn seed_override_changes_the_run() {
        let tmp = tempfile::tempdir().unwrap();
        let path = scenario_file(tmp.path(), &Scenario::minimal(TaskKind::BinaryLogistic, 3, 2, 1));
        let a = cmd_run(&path, Some(5), &tmp.path().join("a")).unwrap();
        let b = cmd_run(&path, Some(6), &tmp.path().join("b")).unwrap();
        assert_ne!(a.records, b.records);
    }

    #[test]
    fn compare_needs_two_runs_and_summaries() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(cmd_compare(&[tmp.path().to_path_buf()]).unwrap_err().code, EXIT_INVALID);
        let err = cmd_compare(&[tmp.path().join("x"), tmp.path().join("y")]).unwrap_err();
        assert_eq!(err.code, EXIT_INVALID);
    }

    #[test]
    fn lineage_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = scenario_file(tmp.path(), &Scenario::minimal(TaskKind::BinaryLogistic, 2, 2, 1));
        let out = tmp.path().join("out");
        cmd_run(&path, None, &out).unwrap();
        let err = cmd_lineage(&out, 99).unwrap_err();
        assert_eq!(err.code, EXIT_INVALID);
        assert!(err.message.contains("version not found"));

        let log = out.join(COVERSION_FILE);
        let mut bytes = fs::read(&log).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&log, bytes).unwrap();
        let err = cmd_lineage(&out, 1).unwrap_err();
        assert_eq!(err.code, EXIT_RUNTIME);
        assert!(err.message.contains("record 1"), "{}", err.message);
    }
}
