//! CSV artifacts: per-run logs, the run manifest, comparison tables and
//! plot series.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::config::Algorithm;
use super::runner::{Row, RunRecord, Status};

pub const RUN_HEADER: &str = "t,sqrt_mspbe,sqrt_mse,gamma_t,T_t,sigma_fro";
pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "env,instance,alg,seed,status,rows,file";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("no records")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

/// Formats with 9 significant digits in the style of C's `%.9g`.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub fn render_run(rec: &RunRecord) -> String {
    let mut s = String::with_capacity(64 * (rec.rows.len() + 1));
    s.push_str(RUN_HEADER);
    s.push('\n');
    for r in &rec.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            fmt_sig(r.sqrt_mspbe),
            opt(r.sqrt_mse),
            opt(r.gamma),
            opt(r.gate),
            opt(r.sigma_fro)
        ));
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), OutputError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Writes one CSV per record plus the manifest, serially and in record
/// order. Returns the written run files.
pub fn write_records(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut files = Vec::with_capacity(records.len());
    for rec in records {
        let name = rec.file_name();
        let path = dir.join(&name);
        write_file(&path, &render_run(rec))?;
        manifest.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.env,
            rec.instance,
            rec.alg,
            rec.seed,
            rec.status,
            rec.rows.len(),
            name
        ));
        files.push(path);
    }
    write_file(&dir.join(MANIFEST), &manifest)?;
    Ok(files)
}

fn parse_field(path: &Path, line: usize, v: &str) -> Result<Option<f64>, OutputError> {
    if v.is_empty() {
        return Ok(None);
    }
    v.parse::<f64>()
        .map(Some)
        .map_err(|_| OutputError::Parse { path: path.to_path_buf(), line, msg: format!("bad number `{v}`") })
}

pub fn read_run(path: &Path) -> Result<Vec<Row>, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RUN_HEADER => {}
        _ => return Err(OutputError::Parse { path: path.to_path_buf(), line: 1, msg: "unexpected header".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(OutputError::Parse { path: path.to_path_buf(), line: n, msg: "expected 6 fields".into() });
        }
        let t = f[0]
            .parse()
            .map_err(|_| OutputError::Parse { path: path.to_path_buf(), line: n, msg: "bad t".into() })?;
        let sqrt_mspbe = parse_field(path, n, f[1])?
            .ok_or_else(|| OutputError::Parse { path: path.to_path_buf(), line: n, msg: "missing sqrt_mspbe".into() })?;
        rows.push(Row {
            t,
            sqrt_mspbe,
            sqrt_mse: parse_field(path, n, f[2])?,
            gamma: parse_field(path, n, f[3])?,
            gate: parse_field(path, n, f[4])?,
            sigma_fro: parse_field(path, n, f[5])?,
        });
    }
    Ok(rows)
}

/// Reloads every record listed in a result directory's manifest.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, OutputError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let perr = |line: usize, msg: &str| OutputError::Parse { path: path.clone(), line, msg: msg.to_string() };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(perr(i + 1, "expected 7 fields"));
        }
        let alg: Algorithm = f[2].parse().map_err(|_| perr(i + 1, "bad algorithm"))?;
        let status: Status = f[4].parse().map_err(|_| perr(i + 1, "bad status"))?;
        out.push(RunRecord {
            env: f[0].to_string(),
            instance: f[1].parse().map_err(|_| perr(i + 1, "bad instance"))?,
            alg,
            seed: f[3].parse().map_err(|_| perr(i + 1, "bad seed"))?,
            status,
            rows: read_run(&dir.join(f[6]))?,
            estimate: Vec::new(),
        });
    }
    Ok(out)
}

/// Mean final √MSE per (instance, algorithm). Records without an MSE
/// column fall back to √MSPBE.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub algorithms: Vec<Algorithm>,
    /// (environment label, one mean per algorithm).
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

fn final_error(r: &RunRecord) -> Option<f64> {
    r.last().map(|row| row.sqrt_mse.unwrap_or(row.sqrt_mspbe))
}

pub fn compare(records: &[RunRecord]) -> Result<CompareTable, OutputError> {
    if records.is_empty() {
        return Err(OutputError::Empty);
    }
    let mut algorithms: Vec<Algorithm> = records.iter().map(|r| r.alg).collect();
    algorithms.sort();
    algorithms.dedup();
    let mut cells: BTreeMap<(usize, String), BTreeMap<Algorithm, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let e = cells.entry((r.instance, r.env.clone())).or_default().entry(r.alg).or_default();
        if let Some(v) = final_error(r) {
            e.push(v);
        }
    }
    let rows = cells
        .into_iter()
        .map(|((_, env), by_alg)| {
            let means = algorithms
                .iter()
                .map(|a| {
                    by_alg.get(a).filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            (env, means)
        })
        .collect();
    Ok(CompareTable { algorithms, rows })
}

impl CompareTable {
    /// Plain-text table with one column per algorithm.
    pub fn render(&self) -> String {
        let mut s = format!("{:<24}", "instance");
        for a in &self.algorithms {
            s.push_str(&format!(" {:>16}", a.name()));
        }
        s.push('\n');
        for (env, vals) in &self.rows {
            s.push_str(&format!("{env:<24}"));
            for v in vals {
                s.push_str(&format!(" {:>16}", v.map(fmt_sig).unwrap_or_else(|| "-".into())));
            }
            s.push('\n');
        }
        s
    }
}

pub const PLOT_METRICS: [&str; 5] = ["sqrt_mspbe", "sqrt_mse", "gamma_t", "T_t", "sigma_fro"];

fn metric(row: &Row, m: &str) -> Option<f64> {
    match m {
        "sqrt_mspbe" => Some(row.sqrt_mspbe),
        "sqrt_mse" => row.sqrt_mse,
        "gamma_t" => row.gamma,
        "T_t" => row.gate,
        "sigma_fro" => row.sigma_fro,
        _ => None,
    }
}

/// Writes `{env}-{metric}-{alg}.csv` series with columns x = t/1000, the
/// mean over seeds and the number of seeds contributing. Metrics absent for
/// an algorithm are skipped.
pub fn emit_plot_data(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    if records.is_empty() {
        return Err(OutputError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut groups: BTreeMap<(String, Algorithm), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.env.clone(), r.alg)).or_default().push(r);
    }
    let mut files = Vec::new();
    for ((env, alg), recs) in groups {
        for m in PLOT_METRICS {
            let mut by_t: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
            for r in &recs {
                for row in &r.rows {
                    if let Some(v) = metric(row, m) {
                        let e = by_t.entry(row.t).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                }
            }
            if by_t.is_empty() {
                continue;
            }
            let mut s = String::from("x,mean,n\n");
            for (t, (sum, n)) in by_t {
                s.push_str(&format!("{},{},{}\n", fmt_sig(t as f64 / 1000.0), fmt_sig(sum / n as f64), n));
            }
            let path = dir.join(format!("{env}-{m}-{alg}.csv"));
            write_file(&path, &s)?;
            files.push(path);
        }
    }
    Ok(files)
}
