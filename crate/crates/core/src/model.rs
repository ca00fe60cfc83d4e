//! Reservoir systems, stage feasibility, stage profit and the stage LP.
//!
//! A stage starts from the post-decision level of the previous stage, adds the
//! inflow that arrived since, applies the decision and must keep the next
//! pre-decision level (post-decision level plus the next inflow) inside the
//! reservoir bounds.
//!
//! Two topologies are supported:
//!
//! - **cascade**: one discharge per reservoir, released water enters the
//!   reservoir immediately downstream in the same hour;
//! - **network**: directed tunnels. A release tunnel `j -> k` moves `f` from
//!   `j` to `k` and sells `g f` MWh; a pump tunnel `k -> j` takes `f` from `k`,
//!   delivers `eta f` to `j` and buys `g f` MWh.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_contract, Error, Result};
use crate::lp::{LpBuilder, LpProblem, LpSolution};

const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Cascade,
    Network,
}

/// Volumes in 10^3 m^3, discharges in 10^3 m^3/h, conversion in MWh / 10^3 m^3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub id: usize,
    pub level_min: f64,
    pub level_max: f64,
    #[serde(default)]
    pub discharge_min: f64,
    pub discharge_max: f64,
    pub level_initial: f64,
    /// Own-station rate for cascades; for networks only the terminal water
    /// value reads it.
    #[serde(default)]
    pub conversion_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunnelDirection {
    Release,
    Pump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelSpec {
    pub from_reservoir: usize,
    pub to_reservoir: usize,
    pub direction: TunnelDirection,
    pub conversion_rate: f64,
    pub flow_max: f64,
}

/// On-disk form of a system. Reservoir references use reservoir ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub reservoirs: Vec<ReservoirSpec>,
    /// `[downstream, upstream]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade_topology: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tunnels: Option<Vec<TunnelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_efficiency: Option<f64>,
}

/// A validated reservoir system with its derived incidence data.
///
/// Decisions are a vector of "controls": reservoir discharges for cascades,
/// tunnel flows for networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirSystem {
    config: SystemConfig,
    /// `balance[j][c]`: change of reservoir `j` per unit of control `c`.
    balance: Vec<Vec<f64>>,
    /// Signed MWh per unit of control.
    revenue: Vec<f64>,
    control_lower: Vec<f64>,
    control_upper: Vec<f64>,
    /// Network only: `release_incidence[j][g] = 1` if tunnel `g` releases from `j`.
    release_incidence: Vec<Vec<f64>>,
    /// Network only: `pump_incidence[j][g] = 1` if tunnel `g` pumps into `j`.
    pump_incidence: Vec<Vec<f64>>,
}

impl ReservoirSystem {
    pub fn from_config(config: SystemConfig) -> Result<Self> {
        let nres = config.reservoirs.len();
        if nres == 0 {
            return Err(Error::Config("reservoirs: at least one reservoir required".into()));
        }
        let mut ids: Vec<usize> = config.reservoirs.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != nres {
            return Err(Error::Config("reservoirs: duplicate id".into()));
        }
        for r in &config.reservoirs {
            let finite = [
                r.level_min,
                r.level_max,
                r.discharge_min,
                r.discharge_max,
                r.level_initial,
                r.conversion_rate,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite {
                return Err(Error::Config(format!("reservoirs[id={}]: non-finite field", r.id)));
            }
            if !(0.0 <= r.level_min && r.level_min <= r.level_initial && r.level_initial <= r.level_max) {
                return Err(Error::Config(format!(
                    "reservoirs[id={}]: need 0 <= level_min <= level_initial <= level_max",
                    r.id
                )));
            }
            if !(0.0 <= r.discharge_min && r.discharge_min <= r.discharge_max) {
                return Err(Error::Config(format!(
                    "reservoirs[id={}]: need 0 <= discharge_min <= discharge_max",
                    r.id
                )));
            }
            if r.conversion_rate < 0.0 {
                return Err(Error::Config(format!(
                    "reservoirs[id={}]: conversion_rate must be >= 0",
                    r.id
                )));
            }
        }
        let index_of = |id: usize, field: &str| -> Result<usize> {
            config
                .reservoirs
                .iter()
                .position(|r| r.id == id)
                .ok_or_else(|| Error::Config(format!("{field}: unknown reservoir id {id}")))
        };

        match config.kind {
            SystemKind::Cascade => {
                if config.tunnels.is_some() {
                    return Err(Error::Config("tunnels: not allowed for a cascade".into()));
                }
                let mut balance = vec![vec![0.0; nres]; nres];
                for (j, row) in balance.iter_mut().enumerate() {
                    row[j] = -1.0;
                }
                let mut has_downstream = vec![false; nres];
                for pair in config.cascade_topology.iter().flatten() {
                    let down = index_of(pair[0], "cascade_topology")?;
                    let up = index_of(pair[1], "cascade_topology")?;
                    if down == up {
                        return Err(Error::Config(format!(
                            "cascade_topology: reservoir {} cannot feed itself",
                            pair[0]
                        )));
                    }
                    if has_downstream[up] {
                        return Err(Error::Config(format!(
                            "cascade_topology: reservoir {} has more than one downstream reservoir",
                            pair[1]
                        )));
                    }
                    has_downstream[up] = true;
                    balance[down][up] = 1.0;
                }
                let revenue = config.reservoirs.iter().map(|r| r.conversion_rate).collect();
                let control_lower = config.reservoirs.iter().map(|r| r.discharge_min).collect();
                let control_upper = config.reservoirs.iter().map(|r| r.discharge_max).collect();
                Ok(Self {
                    config,
                    balance,
                    revenue,
                    control_lower,
                    control_upper,
                    release_incidence: Vec::new(),
                    pump_incidence: Vec::new(),
                })
            }
            SystemKind::Network => {
                if config.cascade_topology.is_some() {
                    return Err(Error::Config("cascade_topology: not allowed for a network".into()));
                }
                let tunnels = config
                    .tunnels
                    .as_ref()
                    .ok_or_else(|| Error::Config("tunnels: required for a network".into()))?;
                let eta = config
                    .pump_efficiency
                    .ok_or_else(|| Error::Config("pump_efficiency: required for a network".into()))?;
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(Error::Config("pump_efficiency: must lie in (0, 1]".into()));
                }
                let ng = tunnels.len();
                let mut balance = vec![vec![0.0; ng]; nres];
                let mut release_incidence = vec![vec![0.0; ng]; nres];
                let mut pump_incidence = vec![vec![0.0; ng]; nres];
                let mut revenue = Vec::with_capacity(ng);
                for (g, t) in tunnels.iter().enumerate() {
                    let field = format!("tunnels[{g}]");
                    let from = index_of(t.from_reservoir, &field)?;
                    let to = index_of(t.to_reservoir, &field)?;
                    if from == to {
                        return Err(Error::Config(format!("{field}: from_reservoir equals to_reservoir")));
                    }
                    if !(t.flow_max > 0.0 && t.flow_max.is_finite()) {
                        return Err(Error::Config(format!("{field}: flow_max must be positive")));
                    }
                    if !(t.conversion_rate >= 0.0 && t.conversion_rate.is_finite()) {
                        return Err(Error::Config(format!("{field}: conversion_rate must be >= 0")));
                    }
                    balance[from][g] -= 1.0;
                    match t.direction {
                        TunnelDirection::Release => {
                            balance[to][g] += 1.0;
                            release_incidence[from][g] = 1.0;
                            revenue.push(t.conversion_rate);
                        }
                        TunnelDirection::Pump => {
                            balance[to][g] += eta;
                            pump_incidence[to][g] = 1.0;
                            revenue.push(-t.conversion_rate);
                        }
                    }
                }
                let control_lower = vec![0.0; ng];
                let control_upper = tunnels.iter().map(|t| t.flow_max).collect();
                Ok(Self {
                    config,
                    balance,
                    revenue,
                    control_lower,
                    control_upper,
                    release_incidence,
                    pump_incidence,
                })
            }
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: SystemConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("system JSON: {e}")))?;
        Self::from_config(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SystemConfig = serde_json::from_str(&s)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_config(config)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn kind(&self) -> SystemKind {
        self.config.kind
    }

    pub fn reservoirs(&self) -> &[ReservoirSpec] {
        &self.config.reservoirs
    }

    pub fn tunnels(&self) -> &[TunnelSpec] {
        self.config.tunnels.as_deref().unwrap_or(&[])
    }

    pub fn pump_efficiency(&self) -> Option<f64> {
        self.config.pump_efficiency
    }

    pub fn n_reservoirs(&self) -> usize {
        self.config.reservoirs.len()
    }

    /// Discharges (cascade) or tunnel flows (network).
    pub fn n_controls(&self) -> usize {
        self.revenue.len()
    }

    pub fn initial_levels(&self) -> Vec<f64> {
        self.reservoirs().iter().map(|r| r.level_initial).collect()
    }

    pub fn level_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.reservoirs().iter().map(|r| r.level_min).collect(),
            self.reservoirs().iter().map(|r| r.level_max).collect(),
        )
    }

    /// `balance[j][c]`; for a cascade this is the connection matrix `R`.
    pub fn balance_matrix(&self) -> &[Vec<f64>] {
        &self.balance
    }

    /// Signed conversion rate per control: positive for generation, negative
    /// for pumping.
    pub fn revenue_rates(&self) -> &[f64] {
        &self.revenue
    }

    pub fn control_bounds(&self) -> (&[f64], &[f64]) {
        (&self.control_lower, &self.control_upper)
    }

    /// Per-reservoir value of stored water at the given price.
    pub fn terminal_water_values(&self, price: f64) -> Vec<f64> {
        self.reservoirs().iter().map(|r| price * r.conversion_rate).collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("system config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Induced per-reservoir releases (`R^d f`) and pumped-in volumes (`R^c f`).
    pub fn induced_release_pump(&self, decision: &StageDecision) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.kind() != SystemKind::Network {
            return None;
        }
        let f = decision.controls();
        let mul = |m: &[Vec<f64>]| -> Vec<f64> {
            m.iter().map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum()).collect()
        };
        Some((mul(&self.release_incidence), mul(&self.pump_incidence)))
    }

    pub(crate) fn check_dims(&self, name: &str, v: &[f64], want: usize) -> Result<()> {
        ensure_contract!(v.len() == want, "{name} has length {}, expected {want}", v.len());
        Ok(())
    }

    fn check_decision(&self, decision: &StageDecision) -> Result<()> {
        let ok = matches!(
            (self.kind(), decision),
            (SystemKind::Cascade, StageDecision::Discharge(_)) | (SystemKind::Network, StageDecision::Flows(_))
        );
        ensure_contract!(ok, "decision variant does not match the system kind");
        self.check_dims("decision", decision.controls(), self.n_controls())
    }

    fn decision_from(&self, controls: Vec<f64>) -> StageDecision {
        match self.kind() {
            SystemKind::Cascade => StageDecision::Discharge(controls),
            SystemKind::Network => StageDecision::Flows(controls),
        }
    }
}

/// Price ($/MWh) and inflows (10^3 m^3/h per reservoir) of one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct StageExogenous {
    pub t: usize,
    pub price: f64,
    pub inflows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageDecision {
    /// Per-reservoir discharge of a cascade.
    Discharge(Vec<f64>),
    /// Per-tunnel flow of a network.
    Flows(Vec<f64>),
}

impl StageDecision {
    pub fn controls(&self) -> &[f64] {
        match self {
            StageDecision::Discharge(v) | StageDecision::Flows(v) => v,
        }
    }

    pub fn zero(system: &ReservoirSystem) -> Self {
        system.decision_from(vec![0.0; system.n_controls()])
    }
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    let eps = FEAS_EPS * (1.0 + v.abs().max(lo.abs()).max(hi.abs()));
    v >= lo - eps && v <= hi + eps
}

/// Whether `decision` is admissible from `level_post_prev + inflow_now` when
/// `next_inflow` arrives afterwards.
pub fn feasible(
    system: &ReservoirSystem,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    next_inflow: &[f64],
    decision: &StageDecision,
) -> Result<bool> {
    let nres = system.n_reservoirs();
    system.check_dims("level_post_prev", level_post_prev, nres)?;
    system.check_dims("inflow_now", inflow_now, nres)?;
    system.check_dims("next_inflow", next_inflow, nres)?;
    system.check_decision(decision)?;

    let (clo, chi) = system.control_bounds();
    let u = decision.controls();
    if !(0..u.len()).all(|c| within(u[c], clo[c], chi[c])) {
        return Ok(false);
    }
    if let Some((rel, pump)) = system.induced_release_pump(decision) {
        for (j, r) in system.reservoirs().iter().enumerate() {
            if !within(rel[j], r.discharge_min, r.discharge_max)
                || !within(pump[j], r.discharge_min, r.discharge_max)
            {
                return Ok(false);
            }
        }
    }
    let next = advance_level(system, level_post_prev, inflow_now, decision)?;
    Ok(system
        .reservoirs()
        .iter()
        .enumerate()
        .all(|(j, r)| within(next[j] + next_inflow[j], r.level_min, r.level_max)))
}

/// Post-decision level after applying `decision`.
pub fn advance_level(
    system: &ReservoirSystem,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    decision: &StageDecision,
) -> Result<Vec<f64>> {
    let nres = system.n_reservoirs();
    system.check_dims("level_post_prev", level_post_prev, nres)?;
    system.check_dims("inflow_now", inflow_now, nres)?;
    system.check_decision(decision)?;
    let u = decision.controls();
    Ok((0..nres)
        .map(|j| {
            let moved: f64 = system.balance[j].iter().zip(u).map(|(b, x)| b * x).sum();
            level_post_prev[j] + inflow_now[j] + moved
        })
        .collect())
}

/// Market revenue of one hour: generation sold minus pumping bought.
pub fn stage_profit(system: &ReservoirSystem, exo: &StageExogenous, decision: &StageDecision) -> f64 {
    exo.price
        * system
            .revenue
            .iter()
            .zip(decision.controls())
            .map(|(g, u)| g * u)
            .sum::<f64>()
}

/// Column indices of one stage's variables inside an LP.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StageVars {
    pub controls: Vec<usize>,
    pub next_level: Vec<usize>,
    pub spill: Vec<usize>,
}

/// Adds one hour's controls, the network coupling rows and the next-level
/// variables. `prev_level` is either fixed data or earlier level columns.
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_stage_block(
    b: &mut LpBuilder,
    system: &ReservoirSystem,
    price: f64,
    prev_level: PrevLevel<'_>,
    inflow_now: &[f64],
    next_inflow: &[f64],
    level_values: &[f64],
    spill_max: Option<&[f64]>,
) -> StageVars {
    let nres = system.n_reservoirs();
    let (clo, chi) = system.control_bounds();
    let controls: Vec<usize> = (0..system.n_controls())
        .map(|c| b.add_var(price * system.revenue[c], clo[c], chi[c]))
        .collect();

    if system.kind() == SystemKind::Network {
        for inc in [&system.release_incidence, &system.pump_incidence] {
            for (j, r) in system.reservoirs().iter().enumerate() {
                let v = b.add_var(0.0, r.discharge_min, r.discharge_max);
                let mut row = vec![(v, 1.0)];
                row.extend(
                    inc[j]
                        .iter()
                        .enumerate()
                        .filter(|(_, a)| **a != 0.0)
                        .map(|(g, a)| (controls[g], -a)),
                );
                b.add_eq(row, 0.0);
            }
        }
    }

    let next_level: Vec<usize> = system
        .reservoirs()
        .iter()
        .enumerate()
        .map(|(j, r)| b.add_var(level_values[j], r.level_min - next_inflow[j], r.level_max - next_inflow[j]))
        .collect();

    let spill: Vec<usize> = spill_max
        .map(|cap| cap.iter().map(|&c| b.add_var(0.0, 0.0, c)).collect())
        .unwrap_or_default();

    for j in 0..nres {
        let mut row = vec![(next_level[j], 1.0)];
        if let Some(&s) = spill.get(j) {
            row.push((s, 1.0));
        }
        row.extend(
            system.balance[j]
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(c, a)| (controls[c], -a)),
        );
        let rhs = match prev_level {
            PrevLevel::Fixed(l) => l[j] + inflow_now[j],
            PrevLevel::Vars(cols) => {
                row.push((cols[j], -1.0));
                inflow_now[j]
            }
        };
        b.add_eq(row, rhs);
    }
    StageVars {
        controls,
        next_level,
        spill,
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum PrevLevel<'a> {
    Fixed(&'a [f64]),
    Vars(&'a [usize]),
}

/// A stage LP together with the mapping from its columns to the decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLp {
    pub problem: LpProblem,
    vars: StageVars,
    kind: SystemKind,
}

impl StageLp {
    pub fn decision(&self, sol: &LpSolution) -> StageDecision {
        let controls = self.vars.controls.iter().map(|&c| sol.x[c]).collect();
        match self.kind {
            SystemKind::Cascade => StageDecision::Discharge(controls),
            SystemKind::Network => StageDecision::Flows(controls),
        }
    }

    /// Post-decision level reached by the solution.
    pub fn next_level(&self, sol: &LpSolution) -> Vec<f64> {
        self.vars.next_level.iter().map(|&c| sol.x[c]).collect()
    }

    /// Column of the next post-decision level of reservoir `j`.
    pub fn next_level_column(&self, j: usize) -> usize {
        self.vars.next_level[j]
    }

    /// Spilled volume per reservoir; zeros unless built with spill allowed.
    pub fn spill(&self, sol: &LpSolution) -> Vec<f64> {
        if self.vars.spill.is_empty() {
            return vec![0.0; self.vars.next_level.len()];
        }
        self.vars.spill.iter().map(|&c| sol.x[c]).collect()
    }
}

/// Builds the LP that maximizes this hour's revenue plus the affine
/// continuation `a_next . level_post_next + affine_const`.
///
/// With `terminal = Some(price)` the continuation is the stored water valued
/// at `price` times each reservoir's conversion rate after the next inflow has
/// arrived, and `a_next` is ignored.
pub fn build_stage_lp(
    system: &ReservoirSystem,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    exo_next: &StageExogenous,
    a_next: &[f64],
    affine_const: f64,
    terminal: Option<f64>,
) -> Result<StageLp> {
    stage_lp(system, level_post_prev, inflow_now, exo_next, a_next, affine_const, terminal, false)
}

/// [`build_stage_lp`] with an extra zero-value spill per reservoir that
/// leaves the system. Used only when the plain stage LP is infeasible, i.e.
/// a full reservoir receives more inflow than it can release.
pub fn build_stage_lp_with_spill(
    system: &ReservoirSystem,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    exo_next: &StageExogenous,
    a_next: &[f64],
    affine_const: f64,
    terminal: Option<f64>,
) -> Result<StageLp> {
    stage_lp(system, level_post_prev, inflow_now, exo_next, a_next, affine_const, terminal, true)
}

#[allow(clippy::too_many_arguments)]
fn stage_lp(
    system: &ReservoirSystem,
    level_post_prev: &[f64],
    inflow_now: &[f64],
    exo_next: &StageExogenous,
    a_next: &[f64],
    affine_const: f64,
    terminal: Option<f64>,
    allow_spill: bool,
) -> Result<StageLp> {
    let nres = system.n_reservoirs();
    system.check_dims("level_post_prev", level_post_prev, nres)?;
    system.check_dims("inflow_now", inflow_now, nres)?;
    system.check_dims("exo_next.inflows", &exo_next.inflows, nres)?;
    let (water, offset) = match terminal {
        Some(price) => {
            let w = system.terminal_water_values(price);
            let extra: f64 = w.iter().zip(&exo_next.inflows).map(|(a, v)| a * v).sum();
            (w, affine_const + extra)
        }
        None => {
            system.check_dims("a_next", a_next, nres)?;
            (a_next.to_vec(), affine_const)
        }
    };
    ensure_contract!(
        exo_next.price.is_finite() && water.iter().all(|v| v.is_finite()) && offset.is_finite(),
        "non-finite stage data"
    );
    let spill_max: Option<Vec<f64>> = allow_spill.then(|| {
        let (_, chi) = system.control_bounds();
        (0..nres)
            .map(|j| {
                let gain: f64 = system.balance[j].iter().zip(chi).map(|(a, h)| a.max(0.0) * h).sum();
                (level_post_prev[j] + inflow_now[j] + gain).max(0.0)
            })
            .collect()
    });
    let mut b = LpBuilder::new();
    let vars = add_stage_block(
        &mut b,
        system,
        exo_next.price,
        PrevLevel::Fixed(level_post_prev),
        inflow_now,
        &exo_next.inflows,
        &water,
        spill_max.as_deref(),
    );
    b.add_offset(offset);
    Ok(StageLp {
        problem: b.build(),
        vars,
        kind: system.kind(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lp::solve;

    pub(crate) fn table1() -> ReservoirSystem {
        ReservoirSystem::from_json_str(
            r#"{
              "kind": "cascade",
              "reservoirs": [
                {"id": 1, "level_min": 113, "level_max": 1130, "discharge_max": 57.96, "level_initial": 124.3, "conversion_rate": 0.1101},
                {"id": 2, "level_min": 100, "level_max": 1000, "discharge_max": 121.36, "level_initial": 110, "conversion_rate": 0.5051}
              ],
              "cascade_topology": [[2, 1]]
            }"#,
        )
        .unwrap()
    }

    fn single() -> ReservoirSystem {
        ReservoirSystem::from_json_str(
            r#"{"kind": "cascade", "reservoirs": [
                {"id": 1, "level_min": 10, "level_max": 100, "discharge_max": 5, "level_initial": 10, "conversion_rate": 0.5}
            ]}"#,
        )
        .unwrap()
    }

    fn pump_only() -> ReservoirSystem {
        ReservoirSystem::from_json_str(
            r#"{"kind": "network", "pump_efficiency": 0.6, "reservoirs": [
                {"id": 1, "level_min": 0, "level_max": 100, "discharge_max": 10, "level_initial": 50},
                {"id": 2, "level_min": 0, "level_max": 100, "discharge_max": 10, "level_initial": 50}
              ],
              "tunnels": [{"from_reservoir": 2, "to_reservoir": 1, "direction": "pump", "conversion_rate": 0.1, "flow_max": 5}]
            }"#,
        )
        .unwrap()
    }

    fn exo(price: f64, inflows: Vec<f64>) -> StageExogenous {
        StageExogenous { t: 1, price, inflows }
    }

    #[test]
    fn connection_matrix_of_table1() {
        let s = table1();
        assert_eq!(s.balance_matrix(), &[vec![-1.0, 0.0], vec![1.0, -1.0]]);
    }

    #[test]
    fn zero_action_is_feasible() {
        let s = table1();
        let ok = feasible(&s, &[500.0, 500.0], &[0.0, 0.0], &[0.0, 0.0], &StageDecision::zero(&s)).unwrap();
        assert!(ok);
    }

    #[test]
    fn discharge_above_max_is_infeasible() {
        let s = table1();
        let d = StageDecision::Discharge(vec![57.97, 0.0]);
        assert!(!feasible(&s, &[500.0, 500.0], &[0.0, 0.0], &[0.0, 0.0], &d).unwrap());
        let d = StageDecision::Discharge(vec![57.96, 0.0]);
        assert!(feasible(&s, &[500.0, 500.0], &[0.0, 0.0], &[0.0, 0.0], &d).unwrap());
    }

    #[test]
    fn draining_below_minimum_is_infeasible() {
        let s = single();
        let d = StageDecision::Discharge(vec![1.0]);
        assert!(!feasible(&s, &[10.0], &[0.0], &[0.0], &d).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let s = table1();
        let err = feasible(&s, &[1.0], &[0.0, 0.0], &[0.0, 0.0], &StageDecision::zero(&s)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = feasible(&s, &[500.0, 500.0], &[0.0, 0.0], &[0.0, 0.0], &StageDecision::Flows(vec![0.0, 0.0]))
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn stage_profit_examples() {
        let s = table1();
        let d = StageDecision::Discharge(vec![1.0, 1.0]);
        assert_eq!(stage_profit(&s, &exo(0.0, vec![0.0; 2]), &d), 0.0);
        let v = stage_profit(&s, &exo(20.0, vec![0.0; 2]), &d);
        assert!((v - 12.304).abs() < 1e-12);
    }

    #[test]
    fn network_release_profit() {
        let s = ReservoirSystem::from_json_str(
            r#"{"kind": "network", "pump_efficiency": 0.6, "reservoirs": [
                {"id": 1, "level_min": 0, "level_max": 100, "discharge_max": 10, "level_initial": 50},
                {"id": 4, "level_min": 0, "level_max": 100, "discharge_max": 10, "level_initial": 50}
              ],
              "tunnels": [{"from_reservoir": 1, "to_reservoir": 4, "direction": "release", "conversion_rate": 0.1, "flow_max": 5}]
            }"#,
        )
        .unwrap();
        let d = StageDecision::Flows(vec![1.0]);
        assert!((stage_profit(&s, &exo(10.0, vec![0.0; 2]), &d) - 1.0).abs() < 1e-12);
        let next = advance_level(&s, &[50.0, 50.0], &[0.0, 0.0], &d).unwrap();
        assert_eq!(next, vec![49.0, 51.0]);
    }

    #[test]
    fn advance_level_examples() {
        let s = table1();
        let l = advance_level(&s, &[300.0, 200.0], &[0.0, 0.0], &StageDecision::zero(&s)).unwrap();
        assert_eq!(l, vec![300.0, 200.0]);
        let l = advance_level(&s, &[300.0, 200.0], &[1.0, 2.0], &StageDecision::Discharge(vec![10.0, 0.0])).unwrap();
        assert_eq!(l, vec![291.0, 212.0]);

        let p = pump_only();
        let l = advance_level(&p, &[50.0, 50.0], &[0.0, 0.0], &StageDecision::Flows(vec![2.0])).unwrap();
        assert!((l[0] - 51.2).abs() < 1e-12);
        assert!((l[1] - 48.0).abs() < 1e-12);
        let lost = (100.0 - l[0] - l[1]) / 2.0;
        assert!((lost - 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_objective_stage_lp() {
        let s = single();
        let lp = build_stage_lp(&s, &[50.0], &[0.0], &exo(0.0, vec![0.0]), &[0.0], 0.0, None).unwrap();
        let sol = solve(&lp.problem).unwrap();
        assert!(sol.is_optimal());
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn pumping_alone_is_never_optimal() {
        let s = pump_only();
        let lp = build_stage_lp(&s, &[50.0, 50.0], &[0.0, 0.0], &exo(30.0, vec![0.0; 2]), &[0.0, 0.0], 0.0, None)
            .unwrap();
        let sol = solve(&lp.problem).unwrap();
        assert_eq!(lp.decision(&sol).controls(), &[0.0]);
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn terminal_stage_values_water_after_inflow() {
        let s = single();
        // Hold everything: 50 + 1 (now) + 2 (next) units valued at 4 * 0.5.
        let lp = build_stage_lp(&s, &[50.0], &[1.0], &exo(0.0, vec![2.0]), &[], 0.0, Some(4.0)).unwrap();
        let sol = solve(&lp.problem).unwrap();
        assert!((sol.value - 53.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ReservoirSystem::from_json_str(
            r#"{"kind": "cascade", "reservoirs": [
                {"id": 1, "level_min": 10, "level_max": 5, "discharge_max": 5, "level_initial": 7}
            ]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("reservoirs[id=1]"), "{err}");
        let err = ReservoirSystem::from_json_str(
            r#"{"kind": "network", "reservoirs": [
                {"id": 1, "level_min": 0, "level_max": 5, "discharge_max": 5, "level_initial": 1}
            ], "tunnels": []}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("pump_efficiency"), "{err}");
    }
}
