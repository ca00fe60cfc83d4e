//! The perfect-information LP over a whole sample path.

use crate::error::{ensure_contract, Error, Result};
use crate::lp::{solve, LpBuilder, LpProblem, LpSolution};
use crate::model::{add_stage_block, PrevLevel, ReservoirSystem, StageDecision, StageVars};

#[derive(Debug, Clone)]
pub struct FullHorizonSolution {
    pub solution: LpSolution,
    /// One decision per hour `1..=T`.
    pub decisions: Vec<StageDecision>,
    /// Pre-decision levels `l_2..l_{T+1}`.
    pub levels: Vec<Vec<f64>>,
}

impl FullHorizonSolution {
    pub fn value(&self) -> f64 {
        self.solution.value
    }
}

/// Stacks `T` hourly balances; `inflows` is row-major `T x |J|`.
pub fn build_full_horizon(
    system: &ReservoirSystem,
    prices: &[f64],
    inflows: &[f64],
    terminal_price: f64,
) -> Result<LpProblem> {
    build_with_vars(system, prices, inflows, terminal_price).map(|(p, _)| p)
}

fn build_with_vars(
    system: &ReservoirSystem,
    prices: &[f64],
    inflows: &[f64],
    terminal_price: f64,
) -> Result<(LpProblem, Vec<StageVars>)> {
    let horizon = prices.len();
    let nres = system.n_reservoirs();
    ensure_contract!(horizon >= 1, "empty sample path");
    ensure_contract!(
        inflows.len() == horizon * nres,
        "inflows has length {}, expected {}",
        inflows.len(),
        horizon * nres
    );
    let initial = system.initial_levels();
    let zero_water = vec![0.0; nres];
    let terminal_water = system.terminal_water_values(terminal_price);
    // Bounds apply to the level itself, so the "next inflow" shift is zero.
    let no_shift = vec![0.0; nres];

    let mut b = LpBuilder::new();
    let mut stages: Vec<StageVars> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let inflow = &inflows[t * nres..(t + 1) * nres];
        let water = if t + 1 == horizon { &terminal_water } else { &zero_water };
        let prev_cols = stages.last().map(|s| s.next_level.clone());
        let prev = match &prev_cols {
            Some(cols) => PrevLevel::Vars(cols),
            None => PrevLevel::Fixed(&initial),
        };
        let vars = add_stage_block(&mut b, system, prices[t], prev, inflow, &no_shift, water, None);
        stages.push(vars);
    }
    Ok((b.build(), stages))
}

/// Solves the deterministic problem for one price/inflow path with the
/// terminal water valued at `terminal_price`. An infeasible path is reported
/// as [`Error::Infeasible`] with `stage` equal to the horizon.
pub fn solve_full_horizon(
    system: &ReservoirSystem,
    prices: &[f64],
    inflows: &[f64],
    terminal_price: f64,
) -> Result<FullHorizonSolution> {
    let (problem, stages) = build_with_vars(system, prices, inflows, terminal_price)?;
    let solution = solve(&problem)?;
    if !solution.is_optimal() {
        return Err(Error::Infeasible { stage: stages.len() });
    }
    let decisions = stages
        .iter()
        .map(|s| {
            let u: Vec<f64> = s.controls.iter().map(|&c| solution.x[c]).collect();
            match system.kind() {
                crate::model::SystemKind::Cascade => StageDecision::Discharge(u),
                crate::model::SystemKind::Network => StageDecision::Flows(u),
            }
        })
        .collect();
    let levels = stages
        .iter()
        .map(|s| s.next_level.iter().map(|&c| solution.x[c]).collect())
        .collect();
    Ok(FullHorizonSolution {
        solution,
        decisions,
        levels,
    })
}
