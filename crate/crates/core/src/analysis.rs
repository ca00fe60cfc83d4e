//! Experiment drivers and report files: convergence of the training trace,
//! in/out-of-sample comparison, the wait-and-see benchmark, the
//! deterministic cross-check and the inflow-term ablation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adp::{evaluate_online, train_offline, OnlineEvaluation, TrainConfig, TrainTrace, ValueApproximation};
use crate::error::{ensure_contract, Error, Result};
use crate::lp::solve_full_horizon;
use crate::model::ReservoirSystem;
use crate::scenario::ScenarioSet;

pub const REPORT_HEADER: &str =
    "sweep_samples,case,in_sample,out_sample,diff_pct,ws_mean,ws_gap_pct,std_last5_pct,runtime_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    E,
    I,
}

impl CaseLabel {
    pub fn of(cfg: &TrainConfig) -> Self {
        if cfg.include_inflow_term {
            CaseLabel::I
        } else {
            CaseLabel::E
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::E => "E",
            CaseLabel::I => "I",
        }
    }
}

/// One sweep point. Metrics that were not computed are `None` and written
/// as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sweep_samples: usize,
    pub case: CaseLabel,
    pub in_sample: Option<f64>,
    pub out_sample: Option<f64>,
    pub diff_pct: Option<f64>,
    pub ws_mean: Option<f64>,
    pub ws_gap_pct: Option<f64>,
    pub std_last5_pct: Option<f64>,
    pub runtime_s: Option<f64>,
}

impl ReportRow {
    pub fn new(sweep_samples: usize, case: CaseLabel) -> Self {
        Self {
            sweep_samples,
            case,
            in_sample: None,
            out_sample: None,
            diff_pct: None,
            ws_mean: None,
            ws_gap_pct: None,
            std_last5_pct: None,
            runtime_s: None,
        }
    }

    /// Fills `diff_pct` and `ws_gap_pct` from the means present.
    pub fn derive(&mut self) {
        if let (Some(i), Some(o)) = (self.in_sample, self.out_sample) {
            self.diff_pct = Some(diff_pct(i, o));
        }
        if let (Some(w), Some(o)) = (self.ws_mean, self.out_sample) {
            self.ws_gap_pct = Some((w - o) / w * 100.0);
        }
    }
}

/// `|in - out| / in * 100`.
pub fn diff_pct(in_sample: f64, out_sample: f64) -> f64 {
    (in_sample - out_sample).abs() / in_sample * 100.0
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    /// Copy with the timing column cleared, for byte-level comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.runtime_s = None;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceStats {
    pub std: f64,
    pub mean: f64,
    pub std_pct: f64,
}

/// Sample standard deviation (n - 1) and mean of the last `k` time-0 values.
pub fn convergence_stats(trace: &TrainTrace, k: usize) -> Result<ConvergenceStats> {
    ensure_contract!(
        k >= 2 && k <= trace.len(),
        "k = {k} must lie in 2..={} (trace length)",
        trace.len()
    );
    let tail = &trace.v0[trace.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let std = var.sqrt();
    Ok(ConvergenceStats {
        std,
        mean,
        std_pct: std / mean.abs() * 100.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaitAndSee {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// Mean of the perfect-information optimum over all samples.
pub fn wait_and_see(system: &ReservoirSystem, scenarios: &ScenarioSet) -> Result<WaitAndSee> {
    ensure_contract!(scenarios.n_samples >= 1, "empty scenario set");
    let per_sample: Vec<f64> = (0..scenarios.n_samples)
        .into_par_iter()
        .map(|s| {
            let p = scenarios.path(s)?;
            solve_full_horizon(system, p.prices, p.inflows, p.terminal_price).map(|f| f.value())
        })
        .collect::<Result<_>>()?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(WaitAndSee { per_sample, mean })
}

/// Everything produced by one train-and-evaluate run.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub approx: ValueApproximation,
    pub trace: TrainTrace,
    pub in_sample: OnlineEvaluation,
    pub out_sample: OnlineEvaluation,
    pub row: ReportRow,
}

/// Trains on `training` with `cfg`, evaluates on both sets and fills a
/// report row; `ws` is the wait-and-see result on `test` if available.
pub fn run_experiment(
    system: &ReservoirSystem,
    training: &ScenarioSet,
    test: &ScenarioSet,
    cfg: &TrainConfig,
    k_last: usize,
    ws: Option<&WaitAndSee>,
) -> Result<ExperimentRun> {
    let start = Instant::now();
    let (approx, trace) = train_offline(system, training, cfg)?;
    let runtime = start.elapsed().as_secs_f64();
    let in_sample = evaluate_online(system, &approx, training)?;
    let out_sample = evaluate_online(system, &approx, test)?;
    let mut row = ReportRow::new(cfg.n_samples, CaseLabel::of(cfg));
    row.in_sample = Some(in_sample.mean_v0);
    row.out_sample = Some(out_sample.mean_v0);
    row.ws_mean = ws.map(|w| w.mean);
    if trace.len() >= k_last && k_last >= 2 {
        row.std_last5_pct = Some(convergence_stats(&trace, k_last)?.std_pct);
    }
    row.runtime_s = Some(runtime);
    row.derive();
    Ok(ExperimentRun {
        approx,
        trace,
        in_sample,
        out_sample,
        row,
    })
}

/// One report row per training-sample count. Sweep point `n` trains on the
/// first `n` training scenarios for `n` iterations.
pub fn sweep(
    system: &ReservoirSystem,
    training: &ScenarioSet,
    test: &ScenarioSet,
    counts: &[usize],
    cfg: &TrainConfig,
    k_last: usize,
    ws: Option<&WaitAndSee>,
) -> Result<RunReport> {
    let mut report = RunReport::default();
    for &n in counts {
        let subset = training.take(n.min(training.n_samples))?;
        let point = TrainConfig {
            n_samples: n,
            ..cfg.clone()
        };
        report.rows.push(run_experiment(system, &subset, test, &point, k_last, ws)?.row);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct CaseComparison {
    pub excluded: ExperimentRun,
    pub included: ExperimentRun,
    /// `(V_I - V_E) / V_E * 100` on out-of-sample means.
    pub improvement_pct: f64,
}

/// Runs case E and case I on the same data and seeds.
pub fn compare_cases(
    system: &ReservoirSystem,
    training: &ScenarioSet,
    test: &ScenarioSet,
    cfg: &TrainConfig,
    k_last: usize,
    ws: Option<&WaitAndSee>,
) -> Result<CaseComparison> {
    let e_cfg = TrainConfig {
        include_inflow_term: false,
        ..cfg.clone()
    };
    let i_cfg = TrainConfig {
        include_inflow_term: true,
        ..cfg.clone()
    };
    let excluded = run_experiment(system, training, test, &e_cfg, k_last, ws)?;
    let included = run_experiment(system, training, test, &i_cfg, k_last, ws)?;
    let ve = excluded.out_sample.mean_v0;
    let vi = included.out_sample.mean_v0;
    Ok(CaseComparison {
        excluded,
        included,
        improvement_pct: (vi - ve) / ve * 100.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crosscheck {
    pub adp: Vec<f64>,
    pub lp: Vec<f64>,
    /// Signed `(adp - lp) / lp` per path.
    pub gaps: Vec<f64>,
    pub mean_abs_gap: f64,
}

/// Trains on each path alone for `iterations` iterations and compares the
/// final time-0 estimate with the path's full-horizon LP optimum.
pub fn deterministic_crosscheck(
    system: &ReservoirSystem,
    paths: &ScenarioSet,
    iterations: usize,
    cfg: &TrainConfig,
) -> Result<Crosscheck> {
    ensure_contract!(iterations >= 1, "iterations must be >= 1");
    ensure_contract!(paths.n_samples >= 1, "no paths");
    let cfg = TrainConfig {
        n_samples: iterations,
        ..cfg.clone()
    };
    let pairs: Vec<(f64, f64)> = (0..paths.n_samples)
        .into_par_iter()
        .map(|s| {
            let one = paths.single(s)?;
            let (_, trace) = train_offline(system, &one, &cfg)?;
            let p = one.path(0)?;
            let lp = solve_full_horizon(system, p.prices, p.inflows, p.terminal_price)?.value();
            Ok((*trace.v0.last().expect("iterations >= 1"), lp))
        })
        .collect::<Result<_>>()?;
    let (adp, lp): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let gaps: Vec<f64> = adp.iter().zip(&lp).map(|(a, l)| (a - l) / l).collect();
    let mean_abs_gap = gaps.iter().map(|g| g.abs()).sum::<f64>() / gaps.len() as f64;
    Ok(Crosscheck {
        adp,
        lp,
        gaps,
        mean_abs_gap,
    })
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_meta<W: Write>(w: &mut W, meta: &[(&str, String)]) -> std::io::Result<()> {
    if meta.is_empty() {
        return Ok(());
    }
    let parts: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(w, "# {}", parts.join(" "))
}

/// Writes the report CSV. `meta` becomes a leading `#` line when nonempty.
pub fn emit_report(report: &RunReport, path: impl AsRef<Path>, meta: &[(&str, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write_meta(&mut w, meta).map_err(io)?;
    writeln!(w, "{REPORT_HEADER}").map_err(io)?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.sweep_samples,
            r.case.as_str(),
            opt(r.in_sample),
            opt(r.out_sample),
            opt(r.diff_pct),
            opt(r.ws_mean),
            opt(r.ws_gap_pct),
            opt(r.std_last5_pct),
            opt(r.runtime_s)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parses a file written by [`emit_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let perr = |row: usize, column: &str, message: String| Error::Parse {
        path: pstr.clone(),
        row,
        column: column.into(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| perr(0, "", e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| perr(1, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != REPORT_HEADER {
        return Err(perr(1, "", format!("unexpected header `{}`", header.join(","))));
    }
    let mut report = RunReport::default();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| perr(row, "", e.to_string()))?;
        let cell = |k: usize| -> Result<Option<f64>> {
            let s = rec.get(k).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|e| perr(row, &header[k], format!("{e}")))
        };
        let sweep_samples = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| perr(row, "sweep_samples", format!("{e}")))?;
        let case = match rec.get(1) {
            Some("E") => CaseLabel::E,
            Some("I") => CaseLabel::I,
            other => return Err(perr(row, "case", format!("unknown case {other:?}"))),
        };
        report.rows.push(ReportRow {
            sweep_samples,
            case,
            in_sample: cell(2)?,
            out_sample: cell(3)?,
            diff_pct: cell(4)?,
            ws_mean: cell(5)?,
            ws_gap_pct: cell(6)?,
            std_last5_pct: cell(7)?,
            runtime_s: cell(8)?,
        });
    }
    Ok(report)
}

/// Per-iteration trace: `iteration,sample,lp_solves,v_0,...,v_{T-1}`.
pub fn write_trace_csv(trace: &TrainTrace, path: impl AsRef<Path>, meta: &[(&str, String)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write_meta(&mut w, meta).map_err(io)?;
    let horizon = trace.stage_values.first().map_or(0, Vec::len);
    let mut header = String::from("iteration,sample,lp_solves");
    for t in 0..horizon {
        header.push_str(&format!(",v_{t}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (n, values) in trace.stage_values.iter().enumerate() {
        let mut line = format!("{},{},{}", n + 1, trace.sample_index[n], trace.lp_solves[n]);
        for v in values {
            line.push(',');
            line.push_str(&num(*v));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Per-sample results: `sample,v0,realized[,ws]`.
pub fn write_evaluation_csv(
    eval: &OnlineEvaluation,
    ws: Option<&WaitAndSee>,
    path: impl AsRef<Path>,
    meta: &[(&str, String)],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write_meta(&mut w, meta).map_err(io)?;
    writeln!(w, "sample,v0,realized{}", if ws.is_some() { ",ws" } else { "" }).map_err(io)?;
    for s in 0..eval.v0.len() {
        let mut line = format!("{s},{},{}", num(eval.v0[s]), num(eval.realized[s]));
        if let Some(ws) = ws {
            line.push(',');
            line.push_str(&num(ws.per_sample[s]));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Hourly decisions, levels and spills of every evaluated sample.
pub fn write_trajectories_csv(
    system: &ReservoirSystem,
    eval: &OnlineEvaluation,
    scenarios: &ScenarioSet,
    path: impl AsRef<Path>,
    meta: &[(&str, String)],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write_meta(&mut w, meta).map_err(io)?;
    let nres = system.n_reservoirs();
    let mut header = String::from("sample,t,price");
    for j in 1..=nres {
        header.push_str(&format!(",inflow_{j}"));
    }
    for c in 1..=system.n_controls() {
        header.push_str(&format!(",u_{c}"));
    }
    for j in 1..=nres {
        header.push_str(&format!(",level_{j}"));
    }
    for j in 1..=nres {
        header.push_str(&format!(",spill_{j}"));
    }
    header.push_str(",stage_value");
    writeln!(w, "{header}").map_err(io)?;
    for (s, tr) in eval.trajectories.iter().enumerate() {
        let p = scenarios.path(s)?;
        for t in 0..tr.decisions.len() {
            let mut line = format!("{s},{},{}", t + 1, num(p.prices[t]));
            let cells = p
                .inflow(t + 1)
                .iter()
                .chain(tr.decisions[t].controls())
                .chain(&tr.levels[t])
                .chain(&tr.spills[t])
                .chain(std::iter::once(&tr.stage_values[t]));
            for v in cells {
                line.push(',');
                line.push_str(&num(*v));
            }
            writeln!(w, "{line}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
