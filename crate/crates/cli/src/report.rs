//! Loss curves, error tables and a markdown summary across runs.

use crate::run::{read_run, METRICS};
use aet_core::eval::EvalRow;
use aet_core::train::StepRecord;
use aet_core::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct RunData {
    pub label: String,
    pub mode: String,
    pub seed: u64,
    /// Mean total loss per epoch.
    pub curve: Vec<f64>,
    pub rows: Vec<EvalRow>,
}

fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        if !line.trim().is_empty() {
            let rec: StepRecord =
                serde_json::from_str(line).map_err(|e| Error::format(offset, format!("{}: {e}", path.display())))?;
            out.push(rec);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

fn epoch_curve(records: &[StepRecord]) -> Vec<f64> {
    let mut by_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = by_epoch.entry(r.epoch).or_default();
        e.0 += r.total;
        e.1 += 1;
    }
    by_epoch.values().map(|(s, n)| s / *n as f64).collect()
}

/// Parses an error table written by the eval command.
pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<EvalRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("protocol,setting,seed,error_rate") {
        return Err(Error::format(0, format!("{}: missing error-table header", path.display())));
    }
    let mut offset = "protocol,setting,seed,error_rate\n".len() as u64;
    let mut rows = Vec::new();
    for line in lines {
        let bad = || Error::format(offset, format!("{}: malformed row '{line}'", path.display()));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push(EvalRow {
            protocol: f[0].to_owned(),
            setting: f[1].to_owned(),
            seed: f[2].parse().map_err(|_| bad())?,
            error_rate: f[3].parse().map_err(|_| bad())?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(rows)
}

fn eval_tables(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let dir = run_dir.join("eval");
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut stack = vec![dir];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let (cfg, _, _) = read_run(dir)?;
    let records = read_metrics(&dir.join(METRICS))?;
    if records.is_empty() {
        return Err(Error::Input(format!("{} has no metrics records", dir.join(METRICS).display())));
    }
    let mut rows = Vec::new();
    for p in eval_tables(dir)? {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        rows.extend(parse_csv(&text, &p)?);
    }
    let mode = cfg.train.mode.to_string();
    Ok(RunData {
        label: format!("{mode} seed {}", cfg.train.seed),
        mode,
        seed: cfg.train.seed,
        curve: epoch_curve(&records),
        rows,
    })
}

/// Mean and sample standard deviation; zero deviation for one value.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// (mode, protocol, setting) → error rates over runs.
fn grouped(runs: &[RunData]) -> BTreeMap<(String, String, String), Vec<f64>> {
    let mut g: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for row in &r.rows {
            g.entry((r.mode.clone(), row.protocol.clone(), row.setting.clone())).or_default().push(row.error_rate);
        }
    }
    g
}

pub fn summary_markdown(runs: &[RunData]) -> String {
    let mut s = String::from("# Run summary\n\n| run | epochs | final loss |\n|---|---|---|\n");
    for r in runs {
        let _ = writeln!(s, "| {} | {} | {:.4} |", r.label, r.curve.len(), r.curve.last().copied().unwrap_or(f64::NAN));
    }
    let g = grouped(runs);
    if !g.is_empty() {
        s.push_str(
            "\n## Test error\n\n| mode | protocol | setting | runs | error (mean ± std) |\n|---|---|---|---|---|\n",
        );
        for ((mode, protocol, setting), v) in &g {
            let (m, sd) = mean_std(v);
            let _ = writeln!(s, "| {mode} | {protocol} | {setting} | {} | {m:.4} ± {sd:.4} |", v.len());
        }
    }
    s
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

pub fn loss_svg(runs: &[RunData]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_len = runs.iter().map(|r| r.curve.len()).max().unwrap_or(1).max(2) as f64;
    let vals = runs.iter().flat_map(|r| r.curve.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (max_len - 1.0);
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch</text>\n\
         <text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">mean training loss</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.3}</text>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w / 2.0,
        h - 15.0,
        h / 2.0,
        h / 2.0,
        pad - 4.0,
        pad + 4.0,
        pad - 4.0,
        h - pad,
    );
    for (i, r) in runs.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r
            .curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(j, v)| format!("{:.2},{:.2}", x(j), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            w - pad - 120.0,
            pad + 14.0 * i as f64,
            r.label
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn errors_svg(runs: &[RunData]) -> String {
    let g = grouped(runs);
    let bar = 18.0;
    let (w, left) = (640.0, 260.0);
    let h = 40.0 + bar * 1.4 * g.len() as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, ((mode, protocol, setting), v)) in g.iter().enumerate() {
        let (m, sd) = mean_std(v);
        let y = 20.0 + bar * 1.4 * i as f64;
        let span = w - left - 60.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{mode} {protocol} {setting}</text>\n\
             <rect x=\"{left}\" y=\"{y}\" width=\"{:.2}\" height=\"{bar}\" fill=\"{}\"/>\n\
             <line x1=\"{:.2}\" y1=\"{}\" x2=\"{:.2}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{:.2}\" y=\"{}\">{m:.3}</text>",
            left - 6.0,
            y + 13.0,
            span * m.clamp(0.0, 1.0),
            COLORS[i % COLORS.len()],
            left + span * (m - sd).clamp(0.0, 1.0),
            y + bar / 2.0,
            left + span * (m + sd).clamp(0.0, 1.0),
            y + bar / 2.0,
            left + span * m.clamp(0.0, 1.0) + 6.0,
            y + 13.0,
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `loss_curves.svg`, `errors.svg` (when any run was evaluated) and
/// `summary.md` into `out`.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("loss_curves.svg", loss_svg(&runs))?;
    if runs.iter().any(|r| !r.rows.is_empty()) {
        write("errors.svg", errors_svg(&runs))?;
    }
    write("summary.md", summary_markdown(&runs))
}
