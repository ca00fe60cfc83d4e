//! Independent oracles shared by the property and acceptance suites.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hydro_adp::lp::LpProblem;
use hydro_adp::model::{ReservoirSystem, SystemKind, TunnelDirection};
use hydro_adp::scenario::{
    simulate, substream_seed, ArmaSpec, LagPolynomial, ScenarioModel, ScenarioRole, ScenarioSet,
};

pub fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn cascade() -> ReservoirSystem {
    ReservoirSystem::load(config("norwegian_cascade.json")).unwrap()
}

pub fn network() -> ReservoirSystem {
    ReservoirSystem::load(config("kwo_network.json")).unwrap()
}

/// Training and test sets derived from `seed` the same way the CLI does.
pub fn shipped_sets(system: &ReservoirSystem, horizon: usize, n_train: usize, n_test: usize, seed: u64) -> (ScenarioSet, ScenarioSet) {
    let model = ScenarioModel::shipped_for(system).unwrap();
    let tr = simulate(&model, horizon, n_train, substream_seed(seed, "scenario-train"), ScenarioRole::Training).unwrap();
    let te = simulate(&model, horizon, n_test, substream_seed(seed, "scenario-test"), ScenarioRole::Test).unwrap();
    (tr, te)
}

/// Solves `M x = r` by Gaussian elimination with partial pivoting; `None`
/// when `M` is (numerically) singular.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Best objective over all basic solutions of a full-row-rank boxed LP:
/// every choice of `m` basic columns with every nonbasic at a bound.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let m = p.eq_rhs.len();
    let n = p.objective.len();
    let mut best: Option<f64> = None;
    for basis in subsets(n, m) {
        let nonbasic: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
        for mask in 0..(1u64 << nonbasic.len()) {
            let mut x = vec![0.0; n];
            for (k, &j) in nonbasic.iter().enumerate() {
                x[j] = if mask >> k & 1 == 1 { p.upper[j] } else { p.lower[j] };
            }
            let r: Vec<f64> = (0..m)
                .map(|i| p.eq_rhs[i] - nonbasic.iter().map(|&j| p.eq_matrix[(i, j)] * x[j]).sum::<f64>())
                .collect();
            let bm: Vec<Vec<f64>> = (0..m).map(|i| basis.iter().map(|&j| p.eq_matrix[(i, j)]).collect()).collect();
            let Some(xb) = gauss_solve(bm, r) else { continue };
            if basis
                .iter()
                .zip(&xb)
                .any(|(&j, v)| *v < p.lower[j] - 1e-9 || *v > p.upper[j] + 1e-9)
            {
                continue;
            }
            for (&j, v) in basis.iter().zip(&xb) {
                x[j] = *v;
            }
            let val = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>() + p.objective_offset;
            best = Some(best.map_or(val, |b: f64| b.max(val)));
        }
    }
    best
}

/// `prod_f (1 + sum c z^lag)` evaluated directly.
pub fn eval_factors(factors: &[LagPolynomial], z: f64) -> f64 {
    factors
        .iter()
        .map(|f| 1.0 + f.0.iter().map(|(l, c)| c * z.powi(*l as i32)).sum::<f64>())
        .product()
}

pub fn eval_dense(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

/// Rebuilds a path from innovations by filtering one factor at a time:
/// the MA factors in sequence, then the inverse AR factors in sequence.
/// Pre-sample innovations are zero and pre-sample values equal the
/// initial level, as in the simulator.
pub fn filter_by_factors(spec: &ArmaSpec, innovations: &[f64], pad: usize) -> Vec<f64> {
    let len = pad + innovations.len();
    let mut y = vec![0.0; len];
    y[pad..].copy_from_slice(innovations);
    for f in &spec.ma_factors {
        let prev = y.clone();
        for t in pad..len {
            y[t] = prev[t] + f.0.iter().map(|&(l, c)| c * prev[t - l]).sum::<f64>();
        }
    }
    let n = spec.ar_factors.len();
    for k in 0..n {
        // Pre-sample level of the k-th partially inverted series.
        let level: f64 = spec.initial_level
            * spec.ar_factors[k + 1..]
                .iter()
                .map(|f| 1.0 + f.0.iter().map(|(_, c)| c).sum::<f64>())
                .product::<f64>();
        let input = y.clone();
        for v in y.iter_mut().take(pad) {
            *v = level;
        }
        let f = &spec.ar_factors[k];
        for t in pad..len {
            y[t] = input[t] - f.0.iter().map(|&(l, c)| c * y[t - l]).sum::<f64>();
        }
    }
    y.split_off(pad)
}

/// Expected mass change of the whole system for one hour:
/// inflows, minus releases leaving the system, minus pumping losses.
/// Derived from the configuration, not from the balance matrix.
pub fn expected_total_change(system: &ReservoirSystem, inflow: &[f64], controls: &[f64]) -> f64 {
    let cfg = system.config();
    let mut change: f64 = inflow.iter().sum();
    match system.kind() {
        SystemKind::Cascade => {
            let topo = cfg.cascade_topology.clone().unwrap_or_default();
            for (j, r) in cfg.reservoirs.iter().enumerate() {
                let has_downstream = topo.iter().any(|[_, up]| *up == r.id);
                if !has_downstream {
                    change -= controls[j];
                }
            }
        }
        SystemKind::Network => {
            let eta = system.pump_efficiency().unwrap_or(1.0);
            for (g, t) in system.tunnels().iter().enumerate() {
                if t.direction == TunnelDirection::Pump {
                    change -= (1.0 - eta) * controls[g];
                }
            }
        }
    }
    change
}

/// Optimal value of one cascade stage with two reservoirs by enumerating
/// every breakpoint of the piecewise-linear stage problem.
///
/// Reservoir 1 releases into reservoir 2. For fixed `u1` the problem is
/// linear in `u2` over an interval, so its optimum sits at an interval end;
/// the optimum over `u1` is at a point where one of those ends switches.
#[allow(clippy::too_many_arguments)]
pub fn two_reservoir_stage_oracle(
    system: &ReservoirSystem,
    level: &[f64],
    inflow_now: &[f64],
    next_inflow: &[f64],
    price: f64,
    a: &[f64],
    constant: f64,
) -> Option<f64> {
    let r = system.reservoirs();
    let (g1, g2) = (r[0].conversion_rate, r[1].conversion_rate);
    let (m1, m2) = (r[0].discharge_max, r[1].discharge_max);
    let base1 = level[0] + inflow_now[0];
    let base2 = level[1] + inflow_now[1];
    let lo1 = r[0].level_min - next_inflow[0];
    let hi1 = r[0].level_max - next_inflow[0];
    let lo2 = r[1].level_min - next_inflow[1];
    let hi2 = r[1].level_max - next_inflow[1];

    // u2 range for a given u1 from the reservoir-2 bounds and the box.
    let u2_range = |u1: f64| -> Option<(f64, f64)> {
        let lo = (base2 + u1 - hi2).max(0.0);
        let hi = (base2 + u1 - lo2).min(m2);
        (lo <= hi + 1e-12).then_some((lo, hi.max(lo)))
    };
    let mut cands = vec![0.0, m1, base1 - lo1, base1 - hi1];
    for u2 in [0.0, m2] {
        for b in [lo2, hi2] {
            cands.push(u2 + b - base2);
        }
    }
    let mut best: Option<f64> = None;
    for u1 in cands {
        if u1 < -1e-12 || u1 > m1 + 1e-12 {
            continue;
        }
        let u1 = u1.clamp(0.0, m1);
        let l1 = base1 - u1;
        if l1 < lo1 - 1e-9 || l1 > hi1 + 1e-9 {
            continue;
        }
        let Some((ulo, uhi)) = u2_range(u1) else { continue };
        for u2 in [ulo, uhi] {
            let l2 = base2 + u1 - u2;
            let v = price * (g1 * u1 + g2 * u2) + a[0] * l1 + a[1] * l2 + constant;
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}
