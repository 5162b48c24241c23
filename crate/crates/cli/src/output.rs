//! Run artifacts: `trajectory.csv`, `summary.json`, `trajectory.svg` and
//! the `sweep.csv` table written next to a set of runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use smpc_core::{DMatrix, DVector, Trajectory};

use crate::config::{config_error, ExperimentConfig};
use crate::experiment::{RunOutput, Summary};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| config_error(format!("{what}: cannot parse {field:?} as a number")))
}

/// Writes `step,time,agent,x0..,u0..`; input columns are empty on the final state.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let n_x = traj.states.first().and_then(|s| s.first()).map_or(0, |x| x.len());
    let n_u = traj.inputs.first().and_then(|s| s.first()).map_or(0, |u| u.len());
    let mut header = vec!["step".to_string(), "time".into(), "agent".into()];
    header.extend((0..n_x).map(|k| format!("x{k}")));
    header.extend((0..n_u).map(|k| format!("u{k}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (k, states) in traj.states.iter().enumerate() {
        for (i, x) in states.iter().enumerate() {
            row.clear();
            row.push(k.to_string());
            row.push(fmt_f64(traj.times[k]));
            row.push(i.to_string());
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            match traj.inputs.get(k) {
                Some(u) => row.extend(u[i].iter().map(|v| fmt_f64(*v))),
                None => row.extend((0..n_u).map(|_| String::new())),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads states, inputs and times back from [`write_trajectory_csv`] output.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let n_x = header.iter().filter(|h| h.starts_with('x')).count();
    let n_u = header.iter().filter(|h| h.starts_with('u')).count();
    let mut traj = Trajectory::default();
    for rec in r.records() {
        let rec = rec?;
        let step: usize = rec[0]
            .parse()
            .map_err(|_| config_error(format!("bad step index {:?}", &rec[0])))?;
        let agent: usize = rec[2]
            .parse()
            .map_err(|_| config_error(format!("bad agent index {:?}", &rec[2])))?;
        if step == traj.states.len() {
            traj.times.push(parse_f64(&rec[1], "time")?);
            traj.states.push(Vec::new());
        }
        if step + 1 != traj.states.len() || agent != traj.states[step].len() {
            return Err(config_error(format!("rows out of order at step {step}, agent {agent}")));
        }
        let x = (0..n_x)
            .map(|k| parse_f64(&rec[3 + k], "state"))
            .collect::<Result<Vec<_>>>()?;
        traj.states[step].push(DVector::from_vec(x));
        if n_u > 0 && !rec[3 + n_x].is_empty() {
            let u = (0..n_u)
                .map(|k| parse_f64(&rec[3 + n_x + k], "input"))
                .collect::<Result<Vec<_>>>()?;
            if traj.inputs.len() == step {
                traj.inputs.push(Vec::new());
            }
            traj.inputs[step].push(DVector::from_vec(u));
        }
    }
    if traj.times.len() > 1 {
        traj.dt = traj.times[1] - traj.times[0];
    }
    Ok(traj)
}

/// Square matrix from a header-less CSV of numbers.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|f| parse_f64(f, "cost entry")).collect::<Result<_>>()?);
    }
    let n = rows.len();
    if n == 0 {
        return Err(config_error(format!("{} is empty", path.display())));
    }
    if let Some(k) = rows.iter().position(|r| r.len() != n) {
        return Err(config_error(format!(
            "{}: row {k} has {} entries, expected {n} for a square matrix",
            path.display(),
            rows[k].len()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 720.0;
const PANEL: f64 = 260.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One panel per state component against time. Initial states are filled
/// circles on the left edge, targets open circles on the right edge.
pub fn trajectory_svg(traj: &Trajectory, targets: &[DVector<f64>]) -> String {
    let n_x = traj.states.first().and_then(|s| s.first()).map_or(0, |x| x.len());
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let t1 = traj.times.last().copied().unwrap_or(1.0).max(t0 + f64::MIN_POSITIVE);
    let height = MARGIN + n_x as f64 * (PANEL + MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let plot_w = WIDTH - 2.0 * MARGIN;
    for d in 0..n_x {
        let top = MARGIN + d as f64 * (PANEL + MARGIN);
        let values = traj
            .states
            .iter()
            .flatten()
            .map(|x| x[d])
            .chain(targets.iter().map(|t| t[d]));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let (lo, hi) = if hi - lo < 1e-12 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
        let px = |t: f64| MARGIN + (t - t0) / (t1 - t0) * plot_w;
        let py = |v: f64| top + PANEL - (v - lo) / (hi - lo) * PANEL;
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{top}" width="{plot_w}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">x{d}</text>"#, MARGIN, top - 8.0);
        let _ = writeln!(s, r#"<text x="5" y="{:.1}">{hi:.3}</text>"#, top + 10.0);
        let _ = writeln!(s, r#"<text x="5" y="{:.1}">{lo:.3}</text>"#, top + PANEL);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">t = {t1:.3}</text>"#,
            WIDTH - MARGIN,
            top + PANEL + 15.0
        );
        for i in 0..traj.n_agents() {
            let colour = PALETTE[i % PALETTE.len()];
            let mut pts = String::new();
            for (k, states) in traj.states.iter().enumerate() {
                let _ = write!(pts, "{:.2},{:.2} ", px(traj.times[k]), py(states[i][d]));
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1" points="{}"/>"#,
                pts.trim_end()
            );
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                px(t0),
                py(traj.states[0][i][d])
            );
        }
        for t in targets {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="black"/>"#,
                px(t1),
                py(t[d])
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the artifacts of each run. A single run goes straight into the
/// output directory; several runs get one subdirectory each plus `sweep.csv`.
/// Returns the run directories.
pub fn write_runs(cfg: &ExperimentConfig, targets: &[DVector<f64>], runs: &[RunOutput]) -> Result<Vec<PathBuf>> {
    let root = &cfg.output.dir;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    fs::write(root.join("config.json"), cfg.to_json() + "\n")?;
    let mut dirs = Vec::with_capacity(runs.len());
    for run in runs {
        let dir = if runs.len() == 1 {
            root.clone()
        } else {
            root.join(&run.summary.label)
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        if cfg.output.csv {
            write_trajectory_csv(&dir.join("trajectory.csv"), &run.trajectory)?;
        }
        if cfg.output.summary {
            write_summary(&dir.join("summary.json"), &run.summary)?;
        }
        if cfg.output.svg {
            fs::write(dir.join("trajectory.svg"), trajectory_svg(&run.trajectory, targets))?;
        }
        dirs.push(dir);
    }
    if runs.len() > 1 {
        write_sweep(&root.join("sweep.csv"), runs)?;
    }
    Ok(dirs)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn write_sweep(path: &Path, runs: &[RunOutput]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "label",
        "accumulated_cost",
        "final_target_gap",
        "final_residual",
        "bound_holds",
        "sinkhorn_iterations_total",
    ])?;
    for r in runs {
        let s = &r.summary;
        w.write_record([
            s.label.clone(),
            fmt_f64(s.accumulated_cost),
            fmt_f64(s.final_target_gap),
            fmt_f64(s.final_residual),
            opt(s.bound_holds),
            s.sinkhorn_iterations_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of the runs for the terminal.
pub fn summary_table(runs: &[RunOutput]) -> String {
    let mut s = format!(
        "{:<12} {:>18} {:>12} {:>12} {:>8}\n",
        "run", "accumulated_cost", "target_gap", "residual", "bound"
    );
    for r in runs {
        let m = &r.summary;
        let bound = m.bound_holds.map_or("-", |b| if b { "holds" } else { "fails" });
        let _ = writeln!(
            s,
            "{:<12} {:>18.10} {:>12.3e} {:>12.3e} {:>8}",
            m.label, m.accumulated_cost, m.final_target_gap, m.final_residual, bound
        );
    }
    s
}
