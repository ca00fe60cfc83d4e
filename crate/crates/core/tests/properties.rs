mod common;

use common::*;
use hydro_adp::adp::{evaluate_online, sample_stage_value, train_offline, update_a, TrainConfig, TrainTrace, ValueApproximation};
use hydro_adp::analysis::{convergence_stats, diff_pct, wait_and_see, ReportRow, CaseLabel};
use hydro_adp::lp::{primal_residual, solve, solve_full_horizon, LpBuilder};

use hydro_adp::model::{advance_level, ReservoirSystem, StageDecision, StageExogenous};
use hydro_adp::scenario::{
    expand_polynomial, load_scenarios, reconstruct_innovations, save_scenarios, simulate, ArmaSpec, LagPolynomial,
    ScenarioModel, ScenarioRole, ScenarioSet,
};
use proptest::prelude::*;

fn factor() -> impl Strategy<Value = LagPolynomial> {
    prop::collection::vec((1usize..40, -0.95f64..0.95), 1..3).prop_map(LagPolynomial)
}

fn zero_inflow_set(prices: Vec<f64>, n_samples: usize, nres: usize, role: ScenarioRole) -> ScenarioSet {
    let horizon = prices.len() / n_samples;
    ScenarioSet {
        horizon,
        n_samples,
        n_reservoirs: nres,
        inflows: vec![0.0; prices.len() * nres],
        prices,
        seed: 0,
        role,
        terminal_prices: Some(vec![30.0; n_samples]),
    }
}

fn with_initial(system: &ReservoirSystem, j: usize, level: f64) -> ReservoirSystem {
    let mut cfg = system.config().clone();
    cfg.reservoirs[j].level_initial = level;
    ReservoirSystem::from_config(cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_matches_vertex_enumeration(
        m in 1usize..=3,
        extra in 1usize..=3,
        seed_vals in prop::collection::vec(-3.0f64..3.0, 36),
        costs in prop::collection::vec(-5.0f64..5.0, 6),
        lows in prop::collection::vec(-5.0f64..0.0, 6),
        widths in prop::collection::vec(0.5f64..5.0, 6),
        fracs in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let n = m + extra;
        let mut b = LpBuilder::new();
        let x0: Vec<f64> = (0..n).map(|j| lows[j] + fracs[j] * widths[j]).collect();
        for j in 0..n {
            b.add_var(costs[j], lows[j], lows[j] + widths[j]);
        }
        for i in 0..m {
            let row: Vec<(usize, f64)> = (0..n).map(|j| (j, seed_vals[i * n + j])).collect();
            let rhs = row.iter().map(|(j, a)| a * x0[*j]).sum();
            b.add_eq(row, rhs);
        }
        let p = b.build();
        let oracle = vertex_enumeration(&p);
        prop_assume!(oracle.is_some());
        let sol = solve(&p).unwrap();
        prop_assert!(sol.is_optimal());
        let o = oracle.unwrap();
        prop_assert!((sol.value - o).abs() <= 1e-8 * (1.0 + o.abs()), "simplex {} oracle {}", sol.value, o);
        prop_assert!(primal_residual(&p, &sol.x) <= 1e-8);
    }

    #[test]
    fn expansion_matches_factor_product(factors in prop::collection::vec(factor(), 1..4)) {
        let dense = expand_polynomial(&factors);
        prop_assert_eq!(dense[0], 1.0);
        for z in [-1.0, -0.7, 0.3, 0.9, 1.0] {
            let want = eval_factors(&factors, z);
            let got = eval_dense(&dense, z);
            prop_assert!((want - got).abs() <= 1e-9 * (1.0 + want.abs()), "z={} {} vs {}", z, got, want);
        }
    }

    #[test]
    fn alpha_schedule_is_monotone(a1 in 0.01f64..1.0, n0 in 1.0f64..500.0, n in 1usize..5000) {
        let cfg = TrainConfig { alpha_initial: a1, alpha_damping: n0, ..TrainConfig::default() };
        prop_assert!((cfg.alpha(1) - a1).abs() <= 1e-15);
        prop_assert!(cfg.alpha(n) > 0.0 && cfg.alpha(n) <= a1);
        prop_assert!(cfg.alpha(n + 1) <= cfg.alpha(n));
    }

    #[test]
    fn smoothing_is_a_contraction_towards_the_slope(
        old in -100.0f64..100.0,
        base in -1e4f64..1e4,
        bump in -500.0f64..500.0,
        h in 0.1f64..10.0,
        alpha in 0.0f64..=1.0,
    ) {
        let sys = cascade();
        let mut ap = ValueApproximation::zeros(&sys, 4);
        ap.a[0] = vec![old, old];
        update_a(&mut ap, 1, &[200.0, 200.0], base, &[base + bump, base], h, alpha).unwrap();
        let slope = bump / h;
        prop_assert!((ap.a[0][0] - slope).abs() <= (1.0 - alpha) * (old - slope).abs() + 1e-9 * (1.0 + slope.abs()));
        let lo = old.min(slope) - 1e-9 * (1.0 + slope.abs());
        let hi = old.max(slope) + 1e-9 * (1.0 + slope.abs());
        prop_assert!(ap.a[0][0] >= lo && ap.a[0][0] <= hi);
    }

    #[test]
    fn diff_pct_is_exact(ins in 1.0f64..1e6, out in 0.0f64..1e6) {
        let mut row = ReportRow::new(10, CaseLabel::I);
        row.in_sample = Some(ins);
        row.out_sample = Some(out);
        row.derive();
        prop_assert_eq!(row.diff_pct, Some((ins - out).abs() / ins * 100.0));
        prop_assert_eq!(diff_pct(ins, out), (ins - out).abs() / ins * 100.0);
    }

    #[test]
    fn mass_balance_of_random_decisions(
        fracs in prop::collection::vec(0.0f64..1.0, 16),
        inflow in prop::collection::vec(0.0f64..30.0, 6),
        net in any::<bool>(),
    ) {
        let sys = if net { network() } else { cascade() };
        let nres = sys.n_reservoirs();
        let (lo, hi) = sys.level_bounds();
        let (clo, chi) = sys.control_bounds();
        let level: Vec<f64> = (0..nres).map(|j| lo[j] + fracs[j] * (hi[j] - lo[j])).collect();
        let u: Vec<f64> = (0..sys.n_controls()).map(|c| clo[c] + fracs[(c + 6) % 16] * (chi[c] - clo[c])).collect();
        let dec = if net { StageDecision::Flows(u.clone()) } else { StageDecision::Discharge(u.clone()) };
        let next = advance_level(&sys, &level, &inflow[..nres], &dec).unwrap();
        let total = next.iter().sum::<f64>() - level.iter().sum::<f64>();
        let want = expected_total_change(&sys, &inflow[..nres], &u);
        prop_assert!((total - want).abs() <= 1e-9 * (1.0 + level.iter().sum::<f64>()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_prices_refilter_factor_by_factor(seed in any::<u64>()) {
        let sys = cascade();
        let model = ScenarioModel::shipped_for(&sys).unwrap();
        let set = simulate(&model, 48, 1, seed, ScenarioRole::Test).unwrap();
        let path = &set.prices[..48];
        let w = reconstruct_innovations(&model.price, path);
        let pad = model.price.expanded().max_lag;
        let rebuilt = filter_by_factors(&model.price, &w, pad);
        for (a, b) in path.iter().zip(&rebuilt) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn stage_value_matches_breakpoint_oracle(
        f1 in 0.0f64..1.0,
        f2 in 0.0f64..1.0,
        now in prop::collection::vec(0.0f64..20.0, 2),
        next in prop::collection::vec(0.0f64..20.0, 2),
        price in 0.0f64..100.0,
        a in prop::collection::vec(0.0f64..60.0, 2),
        constant in -100.0f64..100.0,
    ) {
        let sys = cascade();
        let (lo, hi) = sys.level_bounds();
        let level = [lo[0] + f1 * (hi[0] - lo[0]), lo[1] + f2 * (hi[1] - lo[1])];
        let mut ap = ValueApproximation::zeros(&sys, 4);
        ap.a[1] = a.clone();
        ap.constant[1] = constant;
        let exo = StageExogenous { t: 2, price, inflows: next.clone() };
        let oracle = two_reservoir_stage_oracle(&sys, &level, &now, &next, price, &a, constant);
        prop_assume!(oracle.is_some());
        let got = sample_stage_value(&sys, &ap, &level, &now, &exo, 1, 30.0).unwrap();
        let o = oracle.unwrap();
        prop_assert!(got.spill.iter().all(|s| *s == 0.0));
        prop_assert!((got.value - o).abs() <= 1e-6 * (1.0 + o.abs()), "lp {} oracle {}", got.value, o);
    }

    #[test]
    fn deterministic_value_is_concave_in_initial_level(seed in any::<u64>(), j in 0usize..2) {
        let sys = cascade();
        let model = ScenarioModel::shipped_for(&sys).unwrap();
        let set = simulate(&model, 24, 1, seed, ScenarioRole::Test).unwrap();
        let path = set.path(0).unwrap();
        let (lo, hi) = sys.level_bounds();
        let top = lo[j] + 0.6 * (hi[j] - lo[j]);
        let vals: Vec<f64> = (0..11)
            .map(|k| {
                let s = with_initial(&sys, j, lo[j] + (top - lo[j]) * k as f64 / 10.0);
                solve_full_horizon(&s, path.prices, path.inflows, path.terminal_price).unwrap().value()
            })
            .collect();
        for k in 1..10 {
            let mid = 0.5 * (vals[k - 1] + vals[k + 1]);
            prop_assert!(vals[k] >= mid - 1e-6 * (1.0 + vals[k].abs()), "k={} {:?}", k, vals);
        }
    }

    #[test]
    fn scenario_files_round_trip(seed in any::<u64>(), n in 1usize..4, h in 1usize..30) {
        let sys = network();
        let model = ScenarioModel::shipped_for(&sys).unwrap();
        let set = simulate(&model, h, n, seed, ScenarioRole::Training).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        save_scenarios(&set, &p).unwrap();
        let mut back = load_scenarios(&p).unwrap();
        back.attach_terminal_forecasts(&model.price);
        prop_assert_eq!(back, set);
    }

    #[test]
    fn simulation_is_deterministic_in_the_seed(seed in any::<u64>()) {
        let sys = cascade();
        let model = ScenarioModel::shipped_for(&sys).unwrap();
        let a = simulate(&model, 12, 3, seed, ScenarioRole::Training).unwrap();
        let b = simulate(&model, 12, 3, seed, ScenarioRole::Training).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_is_deterministic_and_counts_solves(seed in any::<u64>(), include in any::<bool>(), h in 2usize..10) {
        let sys = cascade();
        let model = ScenarioModel::shipped_for(&sys).unwrap();
        let set = simulate(&model, h, 4, seed, ScenarioRole::Training).unwrap();
        let cfg = TrainConfig { n_samples: 6, include_inflow_term: include, seed, ..TrainConfig::default() };
        let (a1, t1) = train_offline(&sys, &set, &cfg).unwrap();
        let (a2, t2) = train_offline(&sys, &set, &cfg).unwrap();
        prop_assert_eq!(&a1, &a2);
        prop_assert_eq!(&t1, &t2);
        let per_stage = 1 + 2 + if include { 2 } else { 0 };
        for &s in &t1.lp_solves {
            prop_assert!(s >= h * per_stage && s <= h * (1 + 2 * (per_stage - 1)));
        }
    }

    #[test]
    fn cases_coincide_without_inflows(prices in prop::collection::vec(5.0f64..80.0, 3 * 8)) {
        let sys = cascade();
        let set = zero_inflow_set(prices, 3, 2, ScenarioRole::Training);
        let e = TrainConfig { n_samples: 9, include_inflow_term: false, ..TrainConfig::default() };
        let i = TrainConfig { include_inflow_term: true, ..e.clone() };
        let (ae, te) = train_offline(&sys, &set, &e).unwrap();
        let (ai, ti) = train_offline(&sys, &set, &i).unwrap();
        prop_assert_eq!(&te.v0, &ti.v0);
        prop_assert_eq!(&te.stage_values, &ti.stage_values);
        prop_assert_eq!(&ae.a, &ai.a);
    }

    #[test]
    fn wait_and_see_dominates_the_policy(seed in any::<u64>()) {
        let sys = cascade();
        let model = ScenarioModel::shipped_for(&sys).unwrap();
        let train = simulate(&model, 12, 8, seed, ScenarioRole::Training).unwrap();
        let test = simulate(&model, 12, 8, seed ^ 1, ScenarioRole::Test).unwrap();
        let cfg = TrainConfig { n_samples: 16, ..TrainConfig::default() };
        let (ap, _) = train_offline(&sys, &train, &cfg).unwrap();
        let ev = evaluate_online(&sys, &ap, &test).unwrap();
        let ws = wait_and_see(&sys, &test).unwrap();
        for (w, r) in ws.per_sample.iter().zip(&ev.realized) {
            prop_assert!(*w >= r - 1e-6 * w.abs().max(1.0), "ws {} realized {}", w, r);
        }
        // Pre-decision levels follow the balance with the recorded spills.
        for (s, tr) in ev.trajectories.iter().enumerate() {
            let path = test.path(s).unwrap();
            let mut prev = sys.initial_levels();
            for t in 0..tr.levels.len() {
                let inflow = path.inflow(t + 1);
                let spilled: f64 = tr.spills[t].iter().sum();
                let change = tr.levels[t].iter().sum::<f64>() - prev.iter().sum::<f64>();
                let want = expected_total_change(&sys, inflow, tr.decisions[t].controls()) - spilled;
                prop_assert!((change - want).abs() <= 1e-9 * (1.0 + prev.iter().sum::<f64>()));
                prev = tr.levels[t].clone();
            }
        }
    }
}

#[test]
fn constant_trace_has_zero_spread() {
    let trace = TrainTrace {
        v0: vec![1234.5; 7],
        stage_values: vec![vec![1234.5]; 7],
        sample_index: vec![0; 7],
        lp_solves: vec![3; 7],
        a_norms: vec![vec![]; 7],
    };
    let st = convergence_stats(&trace, 5).unwrap();
    assert_eq!(st.std, 0.0);
    assert!(convergence_stats(&trace, 1).is_err());
}

#[test]
fn noise_free_model_stays_at_initial_levels() {
    let sys = cascade();
    let shipped = ScenarioModel::shipped_for(&sys).unwrap();
    let quiet = |s: &ArmaSpec| ArmaSpec { noise_std: 0.0, ..s.clone() };
    let model =
        ScenarioModel::from_specs(quiet(&shipped.price), shipped.inflows.iter().map(quiet).collect(), 0.0417).unwrap();
    let set = simulate(&model, 10, 2, 3, ScenarioRole::Test).unwrap();
    assert!(set.prices.iter().all(|p| (p - shipped.price.initial_level).abs() <= 1e-9));
}
