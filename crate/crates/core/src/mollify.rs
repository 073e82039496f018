//! Terminal maps and their regularizations: Gaussian mollification
//! `F_eps = E[F(x - sqrt(eps) G)]`, pointwise clamping, and the scans used to
//! measure how the Lipschitz constant of `F_eps` blows up as `eps -> 0`.

use std::fmt;
use std::sync::Arc;

use gauss_quad::GaussHermite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ftree::{AdaptedProcess, ScenarioTree};
use crate::numeric::{compensated_sum, normal_cdf};
use crate::{Error, Result};

/// Anything that maps a state vector to a real number.
pub trait StateMap: Send + Sync {
    fn arity(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapClass {
    BoundedBorelian,
    Lipschitz,
    Smooth,
}

fn one() -> f64 {
    1.0
}

/// Catalog entry of a terminal map, as written in experiment configs.
///
/// Scalar maps (`sine`, `custom_polynomial`, `clipped_linear`) act on the
/// first coordinate of the state; `square` is the squared Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// `1{a.x > c}` (or `>=` when `inclusive`); `a` defaults to the first
    /// unit vector.
    IndicatorHalfspace {
        #[serde(default)]
        normal: Option<Vec<f64>>,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        inclusive: bool,
    },
    Square,
    Sine {
        #[serde(default = "one")]
        frequency: f64,
    },
    /// Indicator of the closed box `[lo, hi]`.
    DigitalBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `sum_j coeffs[j] x^j`.
    CustomPolynomial {
        coeffs: Vec<f64>,
    },
    /// `min(max(x, lo), hi)`.
    ClippedLinear {
        lo: f64,
        hi: f64,
    },
    /// Pointwise clamp of another map to `[-n, n]`.
    Clamped {
        base: Box<MapSpec>,
        n: u32,
    },
}

impl MapSpec {
    pub fn id(&self) -> &'static str {
        match self {
            MapSpec::IndicatorHalfspace { .. } => "indicator_halfspace",
            MapSpec::Square => "square",
            MapSpec::Sine { .. } => "sine",
            MapSpec::DigitalBox { .. } => "digital_box",
            MapSpec::CustomPolynomial { .. } => "custom_polynomial",
            MapSpec::ClippedLinear { .. } => "clipped_linear",
            MapSpec::Clamped { .. } => "clamped",
        }
    }

    pub fn indicator() -> Self {
        MapSpec::IndicatorHalfspace { normal: None, offset: 0.0, inclusive: false }
    }

    pub fn build(&self, arity: usize) -> Result<TerminalMap> {
        if arity == 0 {
            return Err(Error::InvalidParameter("terminal map arity must be positive".into()));
        }
        let kind = match self {
            MapSpec::IndicatorHalfspace { normal, offset, inclusive } => {
                let normal = match normal {
                    Some(a) => {
                        check_len(a.len(), arity, "half-space normal")?;
                        if a.iter().all(|v| *v == 0.0) {
                            return Err(Error::InvalidParameter("half-space normal is zero".into()));
                        }
                        a.clone()
                    }
                    None => {
                        let mut a = vec![0.0; arity];
                        a[0] = 1.0;
                        a
                    }
                };
                Kind::Halfspace { normal, offset: *offset, inclusive: *inclusive }
            }
            MapSpec::Square => Kind::Square,
            MapSpec::Sine { frequency } => Kind::Sine { frequency: *frequency },
            MapSpec::DigitalBox { lo, hi } => {
                check_len(lo.len(), arity, "box lower corner")?;
                check_len(hi.len(), arity, "box upper corner")?;
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::InvalidParameter("box corners are not ordered".into()));
                }
                Kind::Box { lo: lo.clone(), hi: hi.clone() }
            }
            MapSpec::CustomPolynomial { coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::InvalidParameter("polynomial without coefficients".into()));
                }
                Kind::Poly { coeffs: coeffs.clone() }
            }
            MapSpec::ClippedLinear { lo, hi } => {
                if lo > hi {
                    return Err(Error::InvalidParameter("clip bounds are not ordered".into()));
                }
                Kind::Clip { lo: *lo, hi: *hi }
            }
            MapSpec::Clamped { base, n } => return clamp(&base.build(arity)?, *n),
        };
        let (class, bound) = match &kind {
            Kind::Halfspace { .. } | Kind::Box { .. } => (MapClass::BoundedBorelian, Some(1.0)),
            Kind::Square | Kind::Poly { .. } => (MapClass::Smooth, None),
            Kind::Sine { .. } => (MapClass::Smooth, Some(1.0)),
            Kind::Clip { lo, hi } => (MapClass::Lipschitz, Some(lo.abs().max(hi.abs()))),
            Kind::Clamp { .. } | Kind::Custom(_) => unreachable!(),
        };
        Ok(TerminalMap { id: self.id().to_string(), arity, class, bound, kind })
    }
}

fn check_len(got: usize, expected: usize, context: &'static str) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got, context })
    }
}

/// `(id, description)` for every catalog map.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("indicator_halfspace", "1{a.x > c}; bounded Borelian, closed-form mollification"),
        ("square", "|x|^2; smooth, unbounded"),
        ("sine", "sin(w x_0); smooth, bounded"),
        ("digital_box", "1{lo <= x <= hi}; bounded Borelian, closed-form mollification"),
        ("custom_polynomial", "sum c_j x_0^j"),
        ("clipped_linear", "min(max(x_0, lo), hi); Lipschitz with constant 1"),
        ("clamped", "max(-n, min(F, n)) of another catalog map"),
    ]
}

type CustomFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Halfspace { normal: Vec<f64>, offset: f64, inclusive: bool },
    Square,
    Sine { frequency: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Poly { coeffs: Vec<f64> },
    Clip { lo: f64, hi: f64 },
    Clamp { base: Box<TerminalMap>, n: f64 },
    Custom(CustomFn),
}

/// A deterministic map on states of a fixed arity.
#[derive(Clone)]
pub struct TerminalMap {
    id: String,
    arity: usize,
    class: MapClass,
    bound: Option<f64>,
    kind: Kind,
}

impl fmt::Debug for TerminalMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalMap")
            .field("id", &self.id)
            .field("arity", &self.arity)
            .field("class", &self.class)
            .field("bound", &self.bound)
            .finish()
    }
}

impl TerminalMap {
    /// Wrap an arbitrary function. `bound` should be a true sup bound if given.
    pub fn custom<F>(id: &str, arity: usize, class: MapClass, bound: Option<f64>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { id: id.to_string(), arity, class, bound, kind: Kind::Custom(Arc::new(f)) }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn class(&self) -> MapClass {
        self.class
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }
}

impl StateMap for TerminalMap {
    fn arity(&self) -> usize {
        self.arity
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Halfspace { normal, offset, inclusive } => {
                let s: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
                let inside = if *inclusive { s >= *offset } else { s > *offset };
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Square => x.iter().map(|v| v * v).sum(),
            Kind::Sine { frequency } => (frequency * x[0]).sin(),
            Kind::Box { lo, hi } => {
                let inside = x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v <= *b);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x[0] + c),
            Kind::Clip { lo, hi } => x[0].clamp(*lo, *hi),
            Kind::Clamp { base, n } => base.eval(x).clamp(-n, *n),
            Kind::Custom(f) => f(x),
        }
    }
}

/// `F^n = max(-n, min(F, n))`.
pub fn clamp(f: &TerminalMap, n: u32) -> Result<TerminalMap> {
    if n == 0 {
        return Err(Error::InvalidParameter("clamp level must be at least 1".into()));
    }
    let n = n as f64;
    Ok(TerminalMap {
        id: format!("clamp({},{})", f.id, n),
        arity: f.arity,
        class: f.class,
        bound: Some(f.bound.map_or(n, |b| b.min(n))),
        kind: Kind::Clamp { base: Box::new(f.clone()), n },
    })
}

/// Probabilists' Gauss-Hermite rule: `E[g(G)] ~ sum_i w_i g(x_i)` for a
/// standard normal `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(n: usize) -> Result<Self> {
        let deg = std::num::NonZeroUsize::new(n)
            .ok_or_else(|| Error::InvalidParameter("quadrature needs at least one node".into()))?;
        let rule = GaussHermite::new(deg);
        let scale = std::f64::consts::PI.sqrt();
        let (nodes, weights) = rule.iter().map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / scale)).unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

const MAX_QUADRATURE_ARITY: usize = 3;

#[derive(Debug, Clone)]
enum Method {
    ClosedForm,
    Quadrature(Arc<NormalRule>),
    MonteCarlo(Arc<Vec<f64>>),
}

/// `F_eps(x) = E[F(x - sqrt(eps) G)]` for a standard normal `G`.
#[derive(Debug, Clone)]
pub struct MollifiedMap {
    base: TerminalMap,
    epsilon: f64,
    quad_nodes: usize,
    method: Method,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("mollification width must lie in (0, 1), got {epsilon}")))
    }
}

/// Mollify with closed forms for half-space and box indicators and
/// tensorized Gauss-Hermite quadrature otherwise (arity at most 3).
pub fn mollify(f: &TerminalMap, epsilon: f64, quad_nodes: usize) -> Result<MollifiedMap> {
    check_epsilon(epsilon)?;
    if quad_nodes < 8 {
        return Err(Error::InvalidParameter(format!(
            "at least 8 quadrature nodes are required, got {quad_nodes}"
        )));
    }
    let method = match f.kind {
        Kind::Halfspace { .. } | Kind::Box { .. } => Method::ClosedForm,
        _ if f.arity > MAX_QUADRATURE_ARITY => {
            return Err(Error::Unsupported(format!(
                "tensor quadrature for arity {} (use the Monte Carlo evaluator)",
                f.arity
            )))
        }
        _ => Method::Quadrature(Arc::new(NormalRule::new(quad_nodes)?)),
    };
    Ok(MollifiedMap { base: f.clone(), epsilon, quad_nodes, method })
}

/// Mollify by a fixed seeded sample of `samples` Gaussian vectors, for maps
/// of any arity.
pub fn mollify_monte_carlo(f: &TerminalMap, epsilon: f64, samples: usize, seed: u64) -> Result<MollifiedMap> {
    check_epsilon(epsilon)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("Monte Carlo mollification needs samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..samples * f.arity).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(MollifiedMap { base: f.clone(), epsilon, quad_nodes: 0, method: Method::MonteCarlo(Arc::new(draws)) })
}

impl MollifiedMap {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn base(&self) -> &TerminalMap {
        &self.base
    }

    pub fn quad_nodes(&self) -> usize {
        self.quad_nodes
    }

    pub fn uses_closed_form(&self) -> bool {
        matches!(self.method, Method::ClosedForm)
    }

    /// Evaluate by tensor quadrature even when a closed form exists.
    pub fn quadrature_value(&self, x: &[f64]) -> Result<f64> {
        if self.base.arity > MAX_QUADRATURE_ARITY {
            return Err(Error::Unsupported(format!("tensor quadrature for arity {}", self.base.arity)));
        }
        let rule = NormalRule::new(self.quad_nodes.max(8))?;
        Ok(self.tensor(&rule, x))
    }

    /// Total weight the quadrature assigns to the constant 1.
    pub fn kernel_mass(&self) -> f64 {
        match &self.method {
            Method::Quadrature(rule) => {
                compensated_sum(rule.weights.iter().copied()).powi(self.base.arity as i32)
            }
            _ => 1.0,
        }
    }

    fn tensor(&self, rule: &NormalRule, x: &[f64]) -> f64 {
        let d = self.base.arity;
        let s = self.epsilon.sqrt();
        let n = rule.len();
        let mut idx = vec![0usize; d];
        let mut point = vec![0.0; d];
        let mut terms = Vec::with_capacity(n.pow(d as u32));
        loop {
            let mut w = 1.0;
            for a in 0..d {
                point[a] = x[a] - s * rule.nodes[idx[a]];
                w *= rule.weights[idx[a]];
            }
            terms.push(w * self.base.eval(&point));
            let mut a = 0;
            loop {
                if a == d {
                    return compensated_sum(terms);
                }
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    fn closed_form(&self, x: &[f64]) -> f64 {
        let s = self.epsilon.sqrt();
        match &self.base.kind {
            Kind::Halfspace { normal, offset, .. } => {
                let dot: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
                let len = normal.iter().map(|a| a * a).sum::<f64>().sqrt();
                normal_cdf((dot - offset) / (s * len))
            }
            Kind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| normal_cdf((v - a) / s) - normal_cdf((v - b) / s))
                .product(),
            _ => unreachable!("closed form requested for a map without one"),
        }
    }
}

impl StateMap for MollifiedMap {
    fn arity(&self) -> usize {
        self.base.arity
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.method {
            Method::ClosedForm => self.closed_form(x),
            Method::Quadrature(rule) => self.tensor(rule, x),
            Method::MonteCarlo(draws) => {
                let d = self.base.arity;
                let s = self.epsilon.sqrt();
                let mut point = vec![0.0; d];
                let n = draws.len() / d;
                let total = compensated_sum(draws.chunks(d).map(|g| {
                    for a in 0..d {
                        point[a] = x[a] - s * g[a];
                    }
                    self.base.eval(&point)
                }));
                total / n as f64
            }
        }
    }
}

/// Axis-aligned grid `lo + j * spacing` (per axis, up to `hi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub spacing: f64,
}

impl ScanGrid {
    pub fn interval(lo: f64, hi: f64, spacing: f64) -> Self {
        Self { lo: vec![lo], hi: vec![hi], spacing }
    }

    fn counts(&self) -> Result<Vec<usize>> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::InvalidGrid("scan box corners disagree in dimension".into()));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("scan spacing {}", self.spacing)));
        }
        let counts: Vec<usize> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| if b < a { 0 } else { ((b - a) / self.spacing + 1e-9).floor() as usize + 1 })
            .collect();
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidGrid("scan grid has no adjacent points".into()));
        }
        Ok(counts)
    }
}

/// Largest finite-difference slope between axis-adjacent grid points.
pub fn lipschitz_scan(f: &dyn StateMap, grid: &ScanGrid) -> Result<f64> {
    let counts = grid.counts()?;
    let d = counts.len();
    check_len(f.arity(), d, "scan grid dimension")?;
    let total: usize = counts.iter().product();
    let point = |flat: usize| -> Vec<f64> {
        let mut rem = flat;
        (0..d)
            .map(|a| {
                let j = rem % counts[a];
                rem /= counts[a];
                grid.lo[a] + j as f64 * grid.spacing
            })
            .collect()
    };
    let values: Vec<f64> = (0..total).map(|i| f.eval(&point(i))).collect();
    let mut worst: f64 = 0.0;
    let mut stride = 1;
    for &count in &counts {
        for i in 0..total {
            if (i / stride) % count + 1 < count {
                worst = worst.max((values[i + stride] - values[i]).abs() / grid.spacing);
            }
        }
        stride *= count;
    }
    Ok(worst)
}

/// `E[(F - G)^2]` of two maps evaluated at the terminal states.
pub fn l2_gap(
    tree: &ScenarioTree,
    states: &AdaptedProcess,
    f: &dyn StateMap,
    g: &dyn StateMap,
) -> Result<f64> {
    check_len(states.dim(), f.arity(), "terminal state dimension")?;
    check_len(states.dim(), g.arity(), "terminal state dimension")?;
    Ok(compensated_sum(tree.leaves().map(|i| {
        let x = states.get(i);
        tree.prob(i) * (f.eval(x) - g.eval(x)).powi(2)
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_pdf;
    use proptest::prelude::*;

    fn step(inclusive: bool) -> TerminalMap {
        MapSpec::IndicatorHalfspace { normal: None, offset: 0.0, inclusive }.build(1).unwrap()
    }

    #[test]
    fn strict_and_inclusive_indicators_differ_at_zero() {
        assert_eq!(step(true).eval(&[0.0]), 1.0);
        assert_eq!(step(false).eval(&[0.0]), 0.0);
        let fe = mollify(&step(true), 0.1, 64).unwrap();
        assert_eq!(fe.eval(&[0.0]), 0.5);
        assert!((fe.quadrature_value(&[0.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn indicator_matches_normal_cdf() {
        let eps = 0.04;
        let fe = mollify(&step(true), eps, 64).unwrap();
        for x in [-0.3, -0.05, 0.02, 0.2] {
            let expected = normal_cdf(x / eps.sqrt());
            assert!((fe.eval(&[x]) - expected).abs() < 1e-15);
            // quadrature of a discontinuous integrand only converges slowly
            assert!((fe.quadrature_value(&[x]).unwrap() - expected).abs() < 0.1);
        }
    }

    #[test]
    fn quadrature_is_exact_on_smooth_maps() {
        let eps = 0.3;
        let sine = MapSpec::Sine { frequency: 2.0 }.build(1).unwrap();
        let fe = mollify(&sine, eps, 64).unwrap();
        for x in [-1.0, 0.1, 0.7] {
            let expected = (2.0f64 * x).sin() * (-2.0 * eps).exp();
            assert!((fe.eval(&[x]) - expected).abs() < 1e-13);
        }
        let sq = MapSpec::Square.build(2).unwrap();
        let fe = mollify(&sq, eps, 16).unwrap();
        assert!((fe.eval(&[1.0, 2.0]) - (5.0 + 2.0 * eps)).abs() < 1e-12);
        assert!((fe.kernel_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_closed_form_is_a_product() {
        let f = MapSpec::DigitalBox { lo: vec![-1.0, 0.0], hi: vec![1.0, 2.0] }.build(2).unwrap();
        let fe = mollify(&f, 0.25, 32).unwrap();
        let v = fe.eval(&[0.0, 1.0]);
        let one = normal_cdf(2.0) - normal_cdf(-2.0);
        assert!((v - one * one).abs() < 1e-15);
        assert!((fe.quadrature_value(&[0.0, 1.0]).unwrap() - v).abs() < 0.05);
    }

    #[test]
    fn constant_maps_are_fixed_points() {
        let c = MapSpec::CustomPolynomial { coeffs: vec![2.5] }.build(1).unwrap();
        for eps in [0.5, 0.01] {
            let fe = mollify(&c, eps, 64).unwrap();
            assert!((fe.eval(&[0.3]) - 2.5).abs() < 1e-13);
        }
        assert_eq!(lipschitz_scan(&c, &ScanGrid::interval(-1.0, 1.0, 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(mollify(&step(true), 1.0, 64).is_err());
        assert!(mollify(&step(true), 0.0, 64).is_err());
        assert!(mollify(&step(true), 0.1, 4).is_err());
        let sq = MapSpec::Square.build(4).unwrap();
        assert!(matches!(mollify(&sq, 0.1, 16), Err(Error::Unsupported(_))));
        let mc = mollify_monte_carlo(&sq, 0.1, 20_000, 7).unwrap();
        let v = mc.eval(&[0.0; 4]);
        assert!((v - 0.4).abs() < 0.02);
        assert!(clamp(&sq, 0).is_err());
        assert!(lipschitz_scan(&sq, &ScanGrid::interval(1.0, 0.0, 0.1)).is_err());
    }

    #[test]
    fn clamp_examples() {
        let sq = MapSpec::Square.build(1).unwrap();
        let c4 = clamp(&sq, 4).unwrap();
        assert_eq!(c4.eval(&[3.0]), 4.0);
        assert_eq!(c4.bound(), Some(4.0));
        let sine = MapSpec::Sine { frequency: 1.0 }.build(1).unwrap();
        let c = clamp(&sine, 1).unwrap();
        for x in [-2.0, 0.4, 3.0] {
            assert_eq!(c.eval(&[x]), sine.eval(&[x]));
        }
        let mut prev = f64::INFINITY;
        for n in [1, 2, 4] {
            let cn = clamp(&sq, n).unwrap();
            let err = (0..=60)
                .map(|j| -3.0 + 0.1 * j as f64)
                .map(|x| (cn.eval(&[x]) - sq.eval(&[x])).abs())
                .fold(0.0, f64::max);
            assert!(err <= prev);
            prev = err;
        }
    }

    #[test]
    fn lipschitz_of_mollified_step() {
        for eps in [0.1, 0.01] {
            let fe = mollify(&step(false), eps, 64).unwrap();
            let l = lipschitz_scan(&fe, &ScanGrid::interval(-1.0, 1.0, 1e-4)).unwrap();
            let peak = normal_pdf(0.0) / eps.sqrt();
            assert!((l - peak).abs() / peak < 1e-3, "{l} vs {peak}");
        }
        let clip = MapSpec::ClippedLinear { lo: -1.0, hi: 1.0 }.build(1).unwrap();
        let l = lipschitz_scan(&clip, &ScanGrid::interval(-2.0, 2.0, 0.25)).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = MapSpec::Clamped { base: Box::new(MapSpec::Square), n: 3 };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<MapSpec>(&text).unwrap(), spec);
        let parsed: MapSpec = serde_json::from_str(r#"{"id":"indicator_halfspace"}"#).unwrap();
        assert_eq!(parsed, MapSpec::indicator());
        assert!(serde_json::from_str::<MapSpec>(r#"{"id":"nope"}"#).is_err());
    }

    proptest! {
        #[test]
        fn mollification_respects_sup_bound(x in -3.0f64..3.0, eps in 0.001f64..0.9) {
            let sine = MapSpec::Sine { frequency: 3.0 }.build(1).unwrap();
            let fe = mollify(&sine, eps, 32).unwrap();
            prop_assert!(fe.eval(&[x]).abs() <= 1.0 + 1e-12);
            let fe = mollify(&step(false), eps, 32).unwrap();
            let v = fe.eval(&[x]);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
