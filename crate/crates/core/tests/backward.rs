use orthres::bsde::*;
use orthres::forward::CoeffSpec;
use orthres::ftree::{predictable_bracket, AdaptedProcess, ClockAndFactor, ScenarioTree};
use orthres::gkw::{gkw_decompose, martingale_from_terminal};
use orthres::models::{build, Model, ModelConfig, ModelKind, ModelParams};
use orthres::mollify::MapSpec;
use proptest::prelude::*;

fn setup(kind: ModelKind, steps: usize) -> (Model, ClockAndFactor) {
    let model = build(&ModelConfig::new(kind, steps)).unwrap();
    let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
    (model, clock)
}

fn terminal(model: &Model, f: impl Fn(f64) -> f64) -> Vec<f64> {
    model.martingale.terminal(&model.tree).iter().map(|&m| f(m)).collect()
}

fn expectation(tree: &ScenarioTree, zeta: &[f64]) -> f64 {
    tree.leaves().zip(zeta).map(|(i, z)| tree.prob(i) * z).sum()
}

#[test]
fn zero_driver_reduces_to_the_projection() {
    let (model, clock) = setup(ModelKind::Trinomial, 12);
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let zeta = terminal(&model, |m| (m > 0.0) as u8 as f64);
    let sol = solve_lipschitz(&ctx, &zeta, &DriverConfig::Zero.build().unwrap()).unwrap();
    let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
    let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
    for (a, b) in sol.y.values().iter().zip(y.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in sol.dn.iter().zip(&g.dn) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!((sol.bracket_nn() - g.bracket_nn()).abs() <= 1e-12);
}

#[test]
fn identical_data_compare_equal() {
    let (model, clock) = setup(ModelKind::Trinomial, 10);
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let zeta = terminal(&model, |m| m.sin());
    let f = DriverConfig::Truncated { gamma: 1.0, b: 0.4, eta: 0.1, p: 1.0 }.build().unwrap();
    let s = solve_lipschitz(&ctx, &zeta, &f).unwrap();
    let side = ComparisonSide { zeta: &zeta, driver: &f, solution: &s };
    match compare(&ctx, side, side) {
        ComparisonVerdict::Holds { worst } => assert!(worst.abs() <= 1e-11),
        other => panic!("{other:?}"),
    }
}

#[test]
fn shifted_terminal_gap_is_the_discrete_discount() {
    let (model, clock) = setup(ModelKind::Binary, 16);
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let b = 0.7;
    let f = DriverConfig::LinearY { b }.build().unwrap();
    let z2 = terminal(&model, |m| m.cos());
    let z1: Vec<f64> = z2.iter().map(|v| v + 1.0).collect();
    let (s1, s2) = (solve_lipschitz(&ctx, &z1, &f).unwrap(), solve_lipschitz(&ctx, &z2, &f).unwrap());
    let verdict = compare(
        &ctx,
        ComparisonSide { zeta: &z1, driver: &f, solution: &s1 },
        ComparisonSide { zeta: &z2, driver: &f, solution: &s2 },
    );
    assert!(matches!(verdict, ComparisonVerdict::Holds { .. }));
    let discount: f64 =
        (0..16).map(|k| 1.0 / (1.0 + b * clock.dc.value(model.tree.level(k).start))).product();
    assert!((s1.y0() - s2.y0() - discount).abs() < 1e-12);
}

#[test]
fn dual_without_controls_is_an_expectation() {
    let (model, clock) = setup(ModelKind::Binary, 8);
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let zeta = terminal(&model, |m| m * m);
    let eta = 0.3;
    let growth = Growth::new(eta, 0.0, 1.0).unwrap();
    let controls = DualControls { beta: vec![0.0], nu: vec![vec![0.0]] };
    // the projected maximizer is also offered, so restrict to a tiny ball
    let dual = dual_value(&ctx, &zeta, growth, 1e-300, &controls).unwrap();
    let c_k = clock.terminal_max(&model.tree);
    assert!((dual.v0() - (expectation(&model.tree, &zeta) + eta * c_k)).abs() < 1e-12);
}

#[test]
fn dual_value_grows_with_the_control_set() {
    let (model, clock) = setup(ModelKind::Binary, 16);
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let zeta = terminal(&model, |m| (3.0 * m).sin());
    let growth = Growth::new(0.1, 0.5, 1.0).unwrap();
    let mut last = f64::NEG_INFINITY;
    for p in [0.5, 1.0, 2.0] {
        let v = dual_value(&ctx, &zeta, growth, p, &DualControls::uniform(0.5, p, 5, 9, 1)).unwrap().v0();
        assert!(v >= last - 1e-12, "p={p}: {v} < {last}");
        last = v;
    }
}

#[test]
fn product_noise_markov_arms() {
    let mut config = ModelConfig::new(ModelKind::ProductNoise, 6);
    config.params = ModelParams { base: Some(ModelKind::Binary), ..Default::default() };
    let model = build(&config).unwrap();
    let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let f = DriverConfig::Truncated { gamma: 1.0, b: 0.5, eta: 0.1, p: 2.0 }.build().unwrap();

    let markov = terminal(&model, |m| m.sin());
    let s = solve_lipschitz(&ctx, &markov, &f).unwrap();
    assert!(markov_grouping_check(&model.tree, None, &model.martingale, &s.y, 1e-10).holds());

    let aux = model.aux.as_ref().unwrap().terminal(&model.tree);
    let s = solve_lipschitz(&ctx, &aux, &f).unwrap();
    let report = markov_grouping_check(&model.tree, None, &model.martingale, &s.y, 1e-10);
    assert!(report.spread >= 0.5);
    assert!(!report.holds());
}

#[test]
fn non_markov_terminal_keeps_a_residual() {
    let mut config = ModelConfig::new(ModelKind::ProductNoise, 4);
    config.params = ModelParams { base: Some(ModelKind::Binary), ..Default::default() };
    for steps in [4, 6, 8] {
        let model = build(&config.with_steps(steps)).unwrap();
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
        let aux = model.aux.as_ref().unwrap().terminal(&model.tree);
        let s = solve_lipschitz(&ctx, &aux, &DriverConfig::Zero.build().unwrap()).unwrap();
        // the last coin is independent of M: its whole variance is orthogonal
        assert!((s.bracket_nn() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn clipped_map_regularity() {
    let model = build(&ModelConfig::new(ModelKind::Binary, 16)).unwrap();
    let coeffs = CoeffSpec::Identity.build(1).unwrap();
    let f = MapSpec::ClippedLinear { lo: -1.0, hi: 1.0 }.build(2).unwrap();
    let driver = DriverConfig::Zero.build().unwrap();
    for h in [0.2, 0.1, 0.05] {
        let x: Vec<f64> = (-4..=4).map(|k| 0.3 + h * k as f64).collect();
        let grid = RegularityGrid { level: 8, node: None, x, m: vec![0.0] };
        let r = regularity_scan(&model, &coeffs, &f, &driver, &CascadeOptions::default(), &grid).unwrap();
        assert!(r.max_dx <= 1.0 + 1e-12);
        assert!(r.sup <= r.unit_bound && r.inf >= -r.unit_bound);
        // oracle: u(x) = E[clip(x + W)] over the 8 remaining binary steps
        let hstep = (1.0f64 / 16.0).sqrt();
        for (i, &xi) in r.x.iter().enumerate() {
            let oracle: f64 = (0..=8)
                .map(|j| {
                    let w = hstep * (2 * j - 8) as f64;
                    let binom = (0..j).fold(1.0, |acc, t| acc * (8 - t) as f64 / (t + 1) as f64);
                    binom / 256.0 * (xi + w).clamp(-1.0, 1.0)
                })
                .sum();
            assert!((r.at(i, 0) - oracle).abs() < 1e-12);
        }
    }
}

#[test]
fn mixed_driver_cascade_is_monotone_and_bounded() {
    let (model, clock) = setup(ModelKind::Trinomial, 16);
    let ctx = BsdeContext::new(&model.tree, &model.martingale, &clock, None).unwrap();
    let zeta = terminal(&model, |m| if m > 0.0 { 1.0 } else { -0.5 });
    for cfg in [
        DriverConfig::QuadraticMixed { gamma: 1.0, b: 0.5, eta: 0.1 },
        DriverConfig::PureQuadratic { gamma: -1.0 },
    ] {
        let q = solve_quadratic(&ctx, &zeta, &cfg.build().unwrap(), &CascadeOptions::default()).unwrap();
        assert!(q.converged);
        assert!(q.n_violation <= 1e-8 && q.p_violation <= 1e-8);
        assert!(q.bound.holds());
        assert!(q.solution.diagnostics.backward_residual < 1e-10);
    }
}

fn random_model(seed: u64, steps: usize, branches: usize) -> (ScenarioTree, AdaptedProcess) {
    use orthres::ftree::{EdgeSpec, TimeGrid};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let mut edges = Vec::new();
    let mut values = vec![0.0];
    let mut level = vec![0usize];
    let mut next_id = 1;
    for _ in 0..steps {
        let mut next = Vec::new();
        for &node in &level {
            // zero-mean increments: pick values, then recentre
            let raw: Vec<f64> = (0..branches).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean: f64 = raw.iter().sum::<f64>() / branches as f64;
            let mut out = Vec::new();
            for r in &raw {
                values.push(values[node] + 0.3 * (r - mean));
                out.push(EdgeSpec { child: next_id, prob: 1.0 / branches as f64 });
                next.push(next_id);
                next_id += 1;
            }
            edges.push(out);
        }
        level = next;
    }
    let sizes: Vec<usize> = (0..=steps).map(|k| branches.pow(k as u32)).collect();
    let tree = ScenarioTree::new(grid, 1, &sizes, edges).unwrap();
    let m = AdaptedProcess::scalar(&tree, values).unwrap();
    (tree, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backward_identity_and_orthogonality_on_random_trees(seed in 0u64..10_000, branches in 2usize..4) {
        let (tree, m) = random_model(seed, 4, branches);
        let clock = predictable_bracket(&tree, &m).unwrap();
        let ctx = BsdeContext::new(&tree, &m, &clock, None).unwrap();
        let zeta: Vec<f64> = m.terminal(&tree).iter().map(|v| (2.0 * v).tanh()).collect();
        let f = DriverConfig::Truncated { gamma: 1.0, b: 0.5, eta: 0.1, p: 1.5 }.build().unwrap();
        let s = solve_lipschitz(&ctx, &zeta, &f).unwrap();
        prop_assert!(s.diagnostics.backward_residual <= 1e-10);
        prop_assert!(s.diagnostics.orthogonality.mean <= 1e-11);
        prop_assert!(s.diagnostics.orthogonality.covariance <= 1e-11);
        let bound = a_priori_bound(1.0, 0.1, 0.5, clock.terminal_max(&tree));
        prop_assert!(s.diagnostics.y_sup <= bound + 1e-8);
    }
}
