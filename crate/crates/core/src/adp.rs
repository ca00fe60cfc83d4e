//! Offline training of the affine post-decision value approximation and
//! the online policy that uses it.
//!
//! The value of being at post-decision level `l` after inflow `v` has been
//! observed at stage `t` is approximated by `a_t . l + b_t . v + const_t`.
//! Stage `t` (0-based, hour `t + 1`) solves one LP whose continuation is the
//! approximation at `t + 1`, or the terminal water value at `t = T - 1`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_contract, Error, Result};
use crate::lp::solve;
use crate::model::{build_stage_lp, build_stage_lp_with_spill, stage_profit, ReservoirSystem, StageDecision, StageExogenous};
use crate::scenario::{SamplePath, ScenarioRole, ScenarioSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Training iterations `N`; iteration `n` uses one scenario.
    pub n_samples: usize,
    pub alpha_initial: f64,
    pub alpha_damping: f64,
    /// Finite-difference step, 10^3 m^3.
    pub fd_step: f64,
    pub include_inflow_term: bool,
    /// Seeds the order in which training scenarios are visited.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            alpha_initial: 0.5,
            alpha_damping: 100.0,
            fd_step: 1.0,
            include_inflow_term: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if !(self.alpha_initial > 0.0 && self.alpha_initial <= 1.0) {
            return Err(Error::Config(format!(
                "alpha_initial must lie in (0, 1], got {}",
                self.alpha_initial
            )));
        }
        if !(self.alpha_damping > 0.0 && self.alpha_damping.is_finite()) {
            return Err(Error::Config("alpha_damping must be > 0".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config("fd_step must be > 0".into()));
        }
        Ok(())
    }

    /// `alpha_n = alpha_1 * n0 / (n0 + n - 1)` for `n >= 1`.
    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha_initial * self.alpha_damping / (self.alpha_damping + n as f64 - 1.0)
    }
}

/// Per-stage coefficients for stages `1..T-1`; index `t - 1` holds stage `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueApproximation {
    pub horizon: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "const")]
    pub constant: Vec<f64>,
    pub anchor_level: Vec<Vec<f64>>,
    pub anchor_inflow: Vec<Vec<f64>>,
    pub system_hash: String,
    pub config: Option<TrainConfig>,
}

impl ValueApproximation {
    /// All coefficients zero, anchors at the initial state.
    pub fn zeros(system: &ReservoirSystem, horizon: usize) -> Self {
        let nres = system.n_reservoirs();
        let stages = horizon.saturating_sub(1);
        Self {
            horizon,
            a: vec![vec![0.0; nres]; stages],
            b: vec![vec![0.0; nres]; stages],
            constant: vec![0.0; stages],
            anchor_level: vec![system.initial_levels(); stages],
            anchor_inflow: vec![vec![0.0; nres]; stages],
            system_hash: system.fingerprint(),
            config: None,
        }
    }

    fn index(&self, t: usize) -> Result<usize> {
        ensure_contract!(
            t >= 1 && t < self.horizon,
            "approximation stage {t} outside 1..{}",
            self.horizon
        );
        Ok(t - 1)
    }

    pub fn a(&self, t: usize) -> Result<&[f64]> {
        Ok(&self.a[self.index(t)?])
    }

    pub fn b(&self, t: usize) -> Result<&[f64]> {
        Ok(&self.b[self.index(t)?])
    }

    pub fn constant(&self, t: usize) -> Result<f64> {
        Ok(self.constant[self.index(t)?])
    }

    /// `a_t . level + b_t . inflow + const_t`.
    pub fn value_at(&self, t: usize, level: &[f64], inflow: &[f64]) -> Result<f64> {
        let i = self.index(t)?;
        Ok(dot(&self.a[i], level) + dot(&self.b[i], inflow) + self.constant[i])
    }

    /// Rejects an approximation trained for another system or horizon.
    pub fn check_compatible(&self, system: &ReservoirSystem, horizon: usize) -> Result<()> {
        ensure_contract!(
            self.horizon == horizon,
            "approximation horizon {} does not match scenario horizon {horizon}",
            self.horizon
        );
        ensure_contract!(
            self.system_hash == system.fingerprint(),
            "approximation was trained for a different system"
        );
        let stages = horizon.saturating_sub(1);
        let nres = system.n_reservoirs();
        let ok = [&self.a, &self.b, &self.anchor_level, &self.anchor_inflow]
            .iter()
            .all(|v| v.len() == stages && v.iter().all(|r| r.len() == nres))
            && self.constant.len() == stages;
        ensure_contract!(ok, "approximation arrays have inconsistent shapes");
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: e.line(),
            column: e.column().to_string(),
            message: e.to_string(),
        })
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSample {
    pub value: f64,
    pub decision: StageDecision,
    pub level_post_next: Vec<f64>,
    /// Nonzero only when the reservoirs could not hold the inflow.
    pub spill: Vec<f64>,
}

/// Solves stage `t` from `level_post_prev` once `inflow_now` has arrived.
///
/// The continuation is `a_{t+1} . l + b_{t+1} . v_{t+1} + const_{t+1}` with
/// `v_{t+1} = exo_next.inflows`, or the stored water valued at
/// `terminal_price` when `t = T - 1`.
pub fn sample_stage_value(
    system: &ReservoirSystem,
    approx: &ValueApproximation,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    exo_next: &StageExogenous,
    t: usize,
    terminal_price: f64,
) -> Result<StageSample> {
    match try_stage(system, approx, level_post_prev, inflow_now, exo_next, t, terminal_price)? {
        Some(s) => Ok(s),
        None => Err(Error::Infeasible { stage: t }),
    }
}

fn try_stage(
    system: &ReservoirSystem,
    approx: &ValueApproximation,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    exo_next: &StageExogenous,
    t: usize,
    terminal_price: f64,
) -> Result<Option<StageSample>> {
    ensure_contract!(t < approx.horizon, "stage {t} outside 0..{}", approx.horizon);
    let (a, affine, terminal) = if t + 1 == approx.horizon {
        (&[][..], 0.0, Some(terminal_price))
    } else {
        (&approx.a[t][..], approx.constant[t] + dot(&approx.b[t], &exo_next.inflows), None)
    };
    for builder in [build_stage_lp, build_stage_lp_with_spill] {
        let lp = builder(system, level_post_prev, inflow_now, exo_next, a, affine, terminal)?;
        let sol = solve(&lp.problem)?;
        if sol.is_optimal() {
            return Ok(Some(StageSample {
                value: sol.value,
                decision: lp.decision(&sol),
                level_post_next: lp.next_level(&sol),
                spill: lp.spill(&sol),
            }));
        }
    }
    Ok(None)
}

/// `a_t <- (1 - alpha) a_t + alpha (perturbed - base) / h`; anchors move to
/// `anchor_level`.
pub fn update_a(
    approx: &mut ValueApproximation,
    t: usize,
    anchor_level: &[f64],
    base_value: f64,
    perturbed_values: &[f64],
    fd_step: f64,
    alpha: f64,
) -> Result<()> {
    let i = approx.index(t)?;
    smooth(&mut approx.a[i], base_value, perturbed_values, fd_step, alpha)?;
    approx.anchor_level[i] = anchor_level.to_vec();
    Ok(())
}

/// Same as [`update_a`] for the inflow coefficients.
pub fn update_b(
    approx: &mut ValueApproximation,
    t: usize,
    anchor_inflow: &[f64],
    base_value: f64,
    inflow_perturbed_values: &[f64],
    fd_step: f64,
    alpha: f64,
) -> Result<()> {
    let i = approx.index(t)?;
    smooth(&mut approx.b[i], base_value, inflow_perturbed_values, fd_step, alpha)?;
    approx.anchor_inflow[i] = anchor_inflow.to_vec();
    Ok(())
}

fn smooth(coef: &mut [f64], base: f64, perturbed: &[f64], h: f64, alpha: f64) -> Result<()> {
    ensure_contract!(
        perturbed.len() == coef.len(),
        "{} perturbed values for {} reservoirs",
        perturbed.len(),
        coef.len()
    );
    ensure_contract!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0, 1]");
    ensure_contract!(h > 0.0, "fd_step must be > 0");
    for (c, p) in coef.iter_mut().zip(perturbed) {
        *c = (1.0 - alpha) * *c + alpha * (p - base) / h;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Sampled time-0 value per iteration.
    pub v0: Vec<f64>,
    /// Sampled value of every stage per iteration.
    pub stage_values: Vec<Vec<f64>>,
    /// Training scenario used by each iteration.
    pub sample_index: Vec<usize>,
    /// LP solves per iteration.
    pub lp_solves: Vec<usize>,
    /// Euclidean norm of each `a_t` after each iteration.
    pub a_norms: Vec<Vec<f64>>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.v0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v0.is_empty()
    }
}

fn exo(path: &SamplePath<'_>, t: usize) -> StageExogenous {
    StageExogenous {
        t: t + 1,
        price: path.prices[t],
        inflows: path.inflow(t + 1).to_vec(),
    }
}

/// Finite difference of stage `t` along each coordinate of `base_point`.
///
/// A perturbation that makes the LP infeasible falls back to a backward
/// step, then to zero.
#[allow(clippy::too_many_arguments)]
fn fd_values(
    system: &ReservoirSystem,
    approx: &ValueApproximation,
    level: &[f64],
    inflow_now: &[f64],
    exo_next: &StageExogenous,
    t: usize,
    terminal_price: f64,
    base: f64,
    h: f64,
    perturb_inflow: bool,
    solves: &mut usize,
) -> Result<Vec<f64>> {
    let n = level.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut value = None;
        for step in [h, -h] {
            let mut l = level.to_vec();
            let mut v = inflow_now.to_vec();
            if perturb_inflow {
                v[j] += step;
            } else {
                l[j] += step;
            }
            *solves += 1;
            if let Some(s) = try_stage(system, approx, &l, &v, exo_next, t, terminal_price)? {
                // Report as a forward-difference value so the caller divides by +h.
                value = Some(if step > 0.0 { s.value } else { 2.0 * base - s.value });
                break;
            }
        }
        out.push(value.unwrap_or(base));
    }
    Ok(out)
}

/// Algorithm loop: for `n = 1..N` pick a training scenario, sweep the stages
/// forward, sample each stage value, update `a_t` (and `b_t` in case I) from
/// finite differences and reset `const_t` so the affine surface passes
/// through the sampled value at the current point.
pub fn train_offline(
    system: &ReservoirSystem,
    training: &ScenarioSet,
    cfg: &TrainConfig,
) -> Result<(ValueApproximation, TrainTrace)> {
    cfg.validate()?;
    ensure_contract!(training.role == ScenarioRole::Training, "train_offline needs a training scenario set");
    ensure_contract!(training.n_samples >= 1, "empty training set");
    ensure_contract!(
        training.n_reservoirs == system.n_reservoirs(),
        "scenario set has {} reservoirs, system has {}",
        training.n_reservoirs,
        system.n_reservoirs()
    );
    let horizon = training.horizon;
    let nres = system.n_reservoirs();
    let mut approx = ValueApproximation::zeros(system, horizon);
    approx.config = Some(cfg.clone());

    let mut order: Vec<usize> = (0..training.n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut trace = TrainTrace {
        v0: Vec::with_capacity(cfg.n_samples),
        stage_values: Vec::with_capacity(cfg.n_samples),
        sample_index: Vec::with_capacity(cfg.n_samples),
        lp_solves: Vec::with_capacity(cfg.n_samples),
        a_norms: Vec::with_capacity(cfg.n_samples),
    };

    for n in 1..=cfg.n_samples {
        let s = order[(n - 1) % order.len()];
        let path = training.path(s)?;
        let alpha = cfg.alpha(n);
        let mut level = system.initial_levels();
        let mut inflow_now = vec![0.0; nres];
        let mut values = Vec::with_capacity(horizon);
        let mut solves = 0usize;

        for t in 0..horizon {
            let exo_next = exo(&path, t);
            let term = path.terminal_price;
            solves += 1;
            let base = sample_stage_value(system, &approx, &level, &inflow_now, &exo_next, t, term)?;
            let h = cfg.fd_step;
            let dl = fd_values(system, &approx, &level, &inflow_now, &exo_next, t, term, base.value, h, false, &mut solves)?;
            let dv = if cfg.include_inflow_term {
                Some(fd_values(system, &approx, &level, &inflow_now, &exo_next, t, term, base.value, h, true, &mut solves)?)
            } else {
                None
            };
            if t >= 1 {
                update_a(&mut approx, t, &level, base.value, &dl, h, alpha)?;
                if let Some(dv) = &dv {
                    update_b(&mut approx, t, &inflow_now, base.value, dv, h, alpha)?;
                } else {
                    approx.anchor_inflow[t - 1] = inflow_now.clone();
                }
                let i = t - 1;
                approx.constant[i] = base.value - dot(&approx.a[i], &level) - dot(&approx.b[i], &inflow_now);
            }
            values.push(base.value);
            level = base.level_post_next;
            inflow_now = exo_next.inflows;
        }

        trace.v0.push(values[0]);
        trace.stage_values.push(values);
        trace.sample_index.push(s);
        trace.lp_solves.push(solves);
        trace
            .a_norms
            .push(approx.a.iter().map(|a| dot(a, a).sqrt()).collect());
    }
    Ok((approx, trace))
}

/// Decisions and physical levels of one online run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub decisions: Vec<StageDecision>,
    /// Level after each hour's decision and the following inflow, i.e. the
    /// level the next hour starts from.
    pub levels: Vec<Vec<f64>>,
    pub spills: Vec<Vec<f64>>,
    pub stage_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineEvaluation {
    pub v0: Vec<f64>,
    pub mean_v0: f64,
    /// Market revenue along the path plus the terminal water value.
    pub realized: Vec<f64>,
    pub mean_realized: f64,
    pub trajectories: Vec<Trajectory>,
}

fn run_policy(system: &ReservoirSystem, approx: &ValueApproximation, path: &SamplePath<'_>) -> Result<(f64, f64, Trajectory)> {
    let nres = system.n_reservoirs();
    let mut level = system.initial_levels();
    let mut inflow_now = vec![0.0; nres];
    let mut traj = Trajectory {
        decisions: Vec::with_capacity(path.horizon()),
        levels: Vec::with_capacity(path.horizon()),
        spills: Vec::with_capacity(path.horizon()),
        stage_values: Vec::with_capacity(path.horizon()),
    };
    let mut profit = 0.0;
    for t in 0..path.horizon() {
        let exo_next = exo(path, t);
        let s = sample_stage_value(system, approx, &level, &inflow_now, &exo_next, t, path.terminal_price)?;
        profit += stage_profit(system, &exo_next, &s.decision);
        traj.levels
            .push(s.level_post_next.iter().zip(&exo_next.inflows).map(|(l, v)| l + v).collect());
        traj.decisions.push(s.decision);
        traj.spills.push(s.spill);
        traj.stage_values.push(s.value);
        level = s.level_post_next;
        inflow_now = exo_next.inflows;
    }
    let last = traj.levels.last().expect("horizon >= 1");
    profit += dot(&system.terminal_water_values(path.terminal_price), last);
    Ok((traj.stage_values[0], profit, traj))
}

/// Runs the frozen policy on every scenario; samples are independent and
/// evaluated in parallel.
pub fn evaluate_online(
    system: &ReservoirSystem,
    approx: &ValueApproximation,
    scenarios: &ScenarioSet,
) -> Result<OnlineEvaluation> {
    ensure_contract!(scenarios.n_samples >= 1, "empty scenario set");
    approx.check_compatible(system, scenarios.horizon)?;
    let runs: Vec<(f64, f64, Trajectory)> = (0..scenarios.n_samples)
        .into_par_iter()
        .map(|s| run_policy(system, approx, &scenarios.path(s)?))
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let mut out = OnlineEvaluation {
        v0: Vec::with_capacity(runs.len()),
        mean_v0: 0.0,
        realized: Vec::with_capacity(runs.len()),
        mean_realized: 0.0,
        trajectories: Vec::with_capacity(runs.len()),
    };
    for (v, p, tr) in runs {
        out.v0.push(v);
        out.realized.push(p);
        out.trajectories.push(tr);
    }
    out.mean_v0 = out.v0.iter().sum::<f64>() / n;
    out.mean_realized = out.realized.iter().sum::<f64>() / n;
    Ok(out)
}
