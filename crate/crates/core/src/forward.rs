//! Explicit Euler scheme for `dX = sigma(t, X, M) dM + b(t, X, M) dC` on a
//! tree, and restarts of `(M, X)` from an interior node.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ftree::{predictable_bracket_from, AdaptedProcess, ClockAndFactor, ScenarioTree};
use crate::{Error, Result};

/// Catalog entry of SDE coefficients, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoeffSpec {
    /// `sigma = I`, `b = 0`: `X = x0 + M - M_0`.
    Identity,
    /// `sigma = 0`, `b = drift` (one-dimensional `X`).
    ConstantDrift { drift: f64 },
    /// `sigma(x) = a x`, `b = 0` (`n = d = 1`).
    LinearSigma { a: f64 },
    /// `sigma(x) = s0 + s1 x`, `b(x) = b0 + b1 x` (`n = d = 1`).
    Affine { s0: f64, s1: f64, b0: f64, b1: f64 },
}

impl CoeffSpec {
    pub fn id(&self) -> &'static str {
        match self {
            CoeffSpec::Identity => "identity",
            CoeffSpec::ConstantDrift { .. } => "constant_drift",
            CoeffSpec::LinearSigma { .. } => "linear_sigma",
            CoeffSpec::Affine { .. } => "affine",
        }
    }

    pub fn build(&self, d: usize) -> Result<SdeCoeffs> {
        let scalar_only = |what: &str| -> Result<()> {
            if d == 1 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{what} coefficients need a one-dimensional martingale")))
            }
        };
        let (n, k) = match self {
            CoeffSpec::Identity => (d, 0.0),
            CoeffSpec::ConstantDrift { .. } => (1, 0.0),
            CoeffSpec::LinearSigma { a } => {
                scalar_only("linear_sigma")?;
                (1, a.abs())
            }
            CoeffSpec::Affine { s1, b1, .. } => {
                scalar_only("affine")?;
                (1, s1.abs().max(b1.abs()))
            }
        };
        Ok(SdeCoeffs {
            id: self.id().to_string(),
            n,
            d,
            lipschitz_k: k,
            custom: false,
            kind: Kind::Catalog(self.clone()),
        })
    }
}

pub fn catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("identity", "sigma = I, b = 0; X tracks M"),
        ("constant_drift", "sigma = 0, b = c; X = x0 + c C"),
        ("linear_sigma", "sigma(x) = a x; discrete stochastic exponential"),
        ("affine", "sigma(x) = s0 + s1 x, b(x) = b0 + b1 x"),
    ]
}

type SigmaFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Catalog(CoeffSpec),
    Custom { sigma: SigmaFn, drift: DriftFn },
}

/// Coefficients `sigma: (t, x, m) -> R^{n x d}` (row-major) and
/// `b: (t, x, m) -> R^n` with a declared Lipschitz constant.
#[derive(Clone)]
pub struct SdeCoeffs {
    id: String,
    n: usize,
    d: usize,
    lipschitz_k: f64,
    custom: bool,
    kind: Kind,
}

impl fmt::Debug for SdeCoeffs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeCoeffs")
            .field("id", &self.id)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("lipschitz_k", &self.lipschitz_k)
            .finish()
    }
}

impl SdeCoeffs {
    /// User-supplied coefficients. Their regularity is not checked, which
    /// [`SdeCoeffs::is_custom`] reports.
    pub fn custom<S, B>(id: &str, n: usize, d: usize, lipschitz_k: f64, sigma: S, drift: B) -> Self
    where
        S: Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        B: Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            id: id.to_string(),
            n,
            d,
            lipschitz_k,
            custom: true,
            kind: Kind::Custom { sigma: Arc::new(sigma), drift: Arc::new(drift) },
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn lipschitz_k(&self) -> f64 {
        self.lipschitz_k
    }

    pub fn is_custom(&self) -> bool {
        self.custom
    }

    /// `X` depends only on `M` (and the clock), so it can live on a lattice.
    pub fn is_state_free(&self) -> bool {
        matches!(
            self.kind,
            Kind::Catalog(CoeffSpec::Identity) | Kind::Catalog(CoeffSpec::ConstantDrift { .. })
        )
    }

    pub fn sigma(&self, t: f64, x: &[f64], m: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Catalog(CoeffSpec::Identity) => {
                let mut s = vec![0.0; self.n * self.d];
                for a in 0..self.n {
                    s[a * self.d + a] = 1.0;
                }
                s
            }
            Kind::Catalog(CoeffSpec::ConstantDrift { .. }) => vec![0.0; self.d],
            Kind::Catalog(CoeffSpec::LinearSigma { a }) => vec![a * x[0]],
            Kind::Catalog(CoeffSpec::Affine { s0, s1, .. }) => vec![s0 + s1 * x[0]],
            Kind::Custom { sigma, .. } => sigma(t, x, m),
        }
    }

    pub fn drift(&self, t: f64, x: &[f64], m: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Catalog(CoeffSpec::ConstantDrift { drift }) => vec![*drift],
            Kind::Catalog(CoeffSpec::Affine { b0, b1, .. }) => vec![b0 + b1 * x[0]],
            Kind::Catalog(_) => vec![0.0; self.n],
            Kind::Custom { drift, .. } => drift(t, x, m),
        }
    }
}

/// `X_{k+1} = X_k + sigma(t_k, X_k, M_k) dM + b(t_k, X_k, M_k) dC_k` from
/// `X_0 = x0`. On a lattice the result must not depend on the parent.
pub fn euler_forward(
    tree: &ScenarioTree,
    m: &AdaptedProcess,
    clock: &ClockAndFactor,
    coeffs: &SdeCoeffs,
    x0: &[f64],
) -> Result<AdaptedProcess> {
    m.check(tree, "forward martingale")?;
    let (n, d) = (coeffs.n, coeffs.d);
    if m.dim() != d || x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: if m.dim() != d { d } else { n },
            got: if m.dim() != d { m.dim() } else { x0.len() },
            context: "forward SDE dimensions",
        });
    }
    let mut x = vec![f64::NAN; tree.n_nodes() * n];
    let mut seen = vec![false; tree.n_nodes()];
    x[..n].copy_from_slice(x0);
    seen[0] = true;
    let mut next = vec![0.0; n];
    for i in 0..tree.n_internal() {
        let t = tree.time_of(i);
        let xi = x[i * n..(i + 1) * n].to_vec();
        let mi = m.get(i);
        let sigma = coeffs.sigma(t, &xi, mi);
        let drift = coeffs.drift(t, &xi, mi);
        if sigma.len() != n * d || drift.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: sigma.len(),
                context: "coefficient output",
            });
        }
        let dc = clock.dc.value(i);
        for e in tree.edges(i) {
            let c = tree.child(e);
            let mc = m.get(c);
            for a in 0..n {
                let diffusion: f64 = (0..d).map(|b| sigma[a * d + b] * (mc[b] - mi[b])).sum();
                next[a] = xi[a] + diffusion + drift[a] * dc;
            }
            if let Some(j) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "coefficients produced a non-finite state at node {c} (component {j})"
                )));
            }
            let slot = &mut x[c * n..(c + 1) * n];
            if seen[c] {
                let worst =
                    slot.iter().zip(&next).map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max);
                if worst > 1e-12 {
                    return Err(Error::NotRecombining(format!(
                        "forward state at node {c} depends on the path; build the model as a full tree"
                    )));
                }
            } else {
                slot.copy_from_slice(&next);
                seen[c] = true;
            }
        }
    }
    AdaptedProcess::new(tree, n, x)
}

/// `M^{t,m}` and `X^{t,x,m}` started at an interior node, with their clock.
#[derive(Debug, Clone)]
pub struct Restart {
    pub tree: ScenarioTree,
    pub m: AdaptedProcess,
    pub x: AdaptedProcess,
    pub clock: ClockAndFactor,
    /// Index in the original tree of every restarted node.
    pub node_map: Vec<usize>,
}

/// Restart at `node` (which must lie on `level`) from the state `(x, m0)`:
/// `M^{t,m}_s = m0 + M_s - M_t` and `X` re-run by [`euler_forward`]. The
/// clock continues from the bracket accumulated before `node`.
#[allow(clippy::too_many_arguments)]
pub fn shift_start(
    tree: &ScenarioTree,
    m: &AdaptedProcess,
    clock: &ClockAndFactor,
    level: usize,
    node: usize,
    x: &[f64],
    m0: &[f64],
    coeffs: &SdeCoeffs,
) -> Result<Restart> {
    if node >= tree.n_nodes() || tree.node_level(node) != level {
        return Err(Error::InvalidParameter(format!("node {node} does not lie on level {level}")));
    }
    if m0.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: m0.len(),
            context: "restart martingale state",
        });
    }
    let (sub, node_map) = tree.subtree(node)?;
    let base = m.get(node).to_vec();
    let d = m.dim();
    let mut values = Vec::with_capacity(node_map.len() * d);
    for &orig in &node_map {
        let v = m.get(orig);
        values.extend((0..d).map(|a| m0[a] + v[a] - base[a]));
    }
    let shifted = AdaptedProcess::new(&sub, d, values)?;
    let sub_clock = predictable_bracket_from(&sub, &shifted, clock.trace.value(node))?;
    let xs = euler_forward(&sub, &shifted, &sub_clock, coeffs, x)?;
    Ok(Restart { tree: sub, m: shifted, x: xs, clock: sub_clock, node_map })
}
