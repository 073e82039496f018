use orthres::ftree::{io, is_martingale, predictable_bracket};
use orthres::gkw::{gkw_decompose, martingale_from_terminal, terminal_values};
use orthres::models::{build, ModelConfig, ModelKind};
use orthres::mollify::{lipschitz_scan, mollify, MapSpec, ScanGrid, StateMap};
use orthres::numeric::normal_cdf;

fn maps() -> Vec<MapSpec> {
    vec![
        MapSpec::indicator(),
        MapSpec::Square,
        MapSpec::Sine { frequency: 2.0 },
        MapSpec::DigitalBox { lo: vec![-0.3], hi: vec![0.4] },
        MapSpec::ClippedLinear { lo: -0.5, hi: 0.5 },
    ]
}

#[test]
fn every_model_is_a_martingale_with_a_consistent_clock() {
    for kind in ModelKind::ALL {
        let model = build(&ModelConfig::new(kind, 6)).unwrap();
        assert!(is_martingale(&model.tree, &model.martingale, 1e-12).is_martingale, "{kind:?}");
        let clock = predictable_bracket(&model.tree, &model.martingale).unwrap();
        assert!(clock.factor_residual(&model.tree) <= 1e-12, "{kind:?}");
        for i in 0..model.tree.n_internal() {
            let (c, dc) = (clock.c.value(i), clock.dc.value(i));
            for e in model.tree.edges(i) {
                assert!((clock.c.value(model.tree.child(e)) - c - dc).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn projection_is_orthogonal_and_reconstructs_the_terminal() {
    for kind in ModelKind::ALL {
        let model = build(&ModelConfig::new(kind, 5)).unwrap();
        let tree = &model.tree;
        for spec in maps() {
            let f = spec.build(1).unwrap();
            let zeta = terminal_values(tree, &model.martingale, &f).unwrap();
            let y = martingale_from_terminal(tree, &zeta).unwrap();
            let g = gkw_decompose(tree, &model.martingale, &y).unwrap();
            assert!(g.orthogonality.mean <= 1e-11 && g.orthogonality.covariance <= 1e-11);
            for e in 0..tree.n_edges() {
                let parent = tree.edge_parent(e);
                let child = tree.child(e);
                let dm = model.martingale.value(child) - model.martingale.value(parent);
                let dy = y.value(child) - y.value(parent);
                assert!((dy - g.z.value(parent) * dm - g.dn[e]).abs() <= 1e-12);
            }
            if kind == ModelKind::Binary {
                assert!(g.bracket_nn() <= 1e-12, "{}", spec.id());
            }
        }
    }
}

#[test]
fn one_trinomial_step_by_hand() {
    let model = build(&ModelConfig::new(ModelKind::Trinomial, 1)).unwrap();
    let h = model.terminal_states().iter().copied().fold(0.0, f64::max);
    let p = 0.25;
    let zeta = terminal_values(&model.tree, &model.martingale, &MapSpec::Square.build(1).unwrap()).unwrap();
    let y = martingale_from_terminal(&model.tree, &zeta).unwrap();
    let g = gkw_decompose(&model.tree, &model.martingale, &y).unwrap();
    let mean = 2.0 * p * h * h;
    assert!((g.y0 - mean).abs() < 1e-15);
    assert!(g.z.value(0).abs() < 1e-15);
    assert!((g.bracket_nn() - (2.0 * p * h.powi(4) - mean * mean)).abs() < 1e-14);
}

#[test]
fn tree_documents_round_trip() {
    let model = build(&ModelConfig::new(ModelKind::CompensatedJump, 4)).unwrap();
    let text = io::to_json(&model.tree, &model.martingale).unwrap();
    let (tree, m) = io::from_json(&text).unwrap();
    assert_eq!(tree.n_nodes(), model.tree.n_nodes());
    assert_eq!(m.values(), model.martingale.values());
    for e in 0..tree.n_edges() {
        assert_eq!(tree.edge_prob(e), model.tree.edge_prob(e));
        assert_eq!(tree.child(e), model.tree.child(e));
    }
}

#[test]
fn mollified_indicator_matches_the_gaussian_cdf() {
    let f = MapSpec::indicator().build(1).unwrap();
    for eps in [0.1, 0.01, 0.001] {
        let g = mollify(&f, eps, 64).unwrap();
        for x in [-0.3, -0.05, 0.0, 0.02, 0.4] {
            assert!((g.eval(&[x]) - normal_cdf(x / eps.sqrt())).abs() < 1e-11);
        }
        let slope = lipschitz_scan(&g, &ScanGrid::interval(-0.5, 0.5, 1e-4)).unwrap();
        let exact = 1.0 / (2.0 * std::f64::consts::PI * eps).sqrt();
        assert!((slope / exact - 1.0).abs() < 1e-3, "eps={eps}: {slope} vs {exact}");
    }
}

#[test]
fn sine_quadrature_matches_the_damped_sine() {
    let f = MapSpec::Sine { frequency: 3.0 }.build(1).unwrap();
    let eps = 0.05;
    let g = mollify(&f, eps, 48).unwrap();
    for x in [-1.0, 0.1, 0.7] {
        let exact = (3.0f64 * x).sin() * (-4.5 * eps).exp();
        assert!((g.quadrature_value(&[x]).unwrap() - exact).abs() < 1e-12);
    }
}
