//! Generators `f(t, x, m, y, z)` for the backward equation.
//!
//! Catalog drivers are autonomous and radial: they depend on `(y, |z|)`
//! only. That is what makes the two regularizations used by the quadratic
//! solver computable: the inf-convolution with `n|y - u| + n|z - w|` of a
//! radial function reduces to the half-plane `(y, r)`, `r = |z|`, with an
//! L1 penalty, which separates into two one-dimensional distance
//! transforms on a grid.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numeric::norm;
use crate::{Error, Result};

/// Constants of the growth bound `|f| <= a + b|y| + (gamma/2)|z|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

impl Growth {
    pub fn new(a: f64, b: f64, gamma: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && gamma >= 0.0) || !(a + b + gamma).is_finite() {
            return Err(Error::InvalidParameter(format!(
                "growth constants must be finite and non-negative, got a={a}, b={b}, gamma={gamma}"
            )));
        }
        Ok(Self { a, b, gamma })
    }

    pub fn bound(&self, y: f64, r: f64) -> f64 {
        self.a + self.b * y.abs() + 0.5 * self.gamma * r * r
    }
}

/// Serializable description of a catalog driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    /// `f = 0`.
    Zero,
    /// `f = c`.
    Constant { c: f64 },
    /// `f = -b y`, a discount at rate `b`.
    LinearY { b: f64 },
    /// `f = (gamma/2)|z|^2`; a negative `gamma` gives the concave case.
    PureQuadratic { gamma: f64 },
    /// `f = (gamma/2)|z|^2 - b|y| + eta`.
    QuadraticMixed { gamma: f64, b: f64, eta: f64 },
    /// The Lipschitz majorant `b|y| + eta + q_p(z)`.
    Truncated { gamma: f64, b: f64, eta: f64, p: f64 },
}

impl DriverConfig {
    pub fn id(&self) -> &'static str {
        match self {
            DriverConfig::Zero => "zero",
            DriverConfig::Constant { .. } => "constant",
            DriverConfig::LinearY { .. } => "linear_y",
            DriverConfig::PureQuadratic { .. } => "pure_quadratic",
            DriverConfig::QuadraticMixed { .. } => "quadratic_mixed",
            DriverConfig::Truncated { .. } => "truncated",
        }
    }

    pub fn build(&self) -> Result<DriverSpec> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidParameter(format!("driver parameter {name} must be finite")))
            }
        };
        let spec = match *self {
            DriverConfig::Zero => DriverSpec::radial("zero", Radial::poly(0.0, 0.0, 0.0, 0.0)),
            DriverConfig::Constant { c } => {
                DriverSpec::radial("constant", Radial::poly(0.0, 0.0, 0.0, finite("c", c)?))
            }
            DriverConfig::LinearY { b } => {
                DriverSpec::radial("linear_y", Radial::poly(0.0, 0.0, -finite("b", b)?, 0.0))
            }
            DriverConfig::PureQuadratic { gamma } => {
                DriverSpec::radial("pure_quadratic", Radial::poly(finite("gamma", gamma)?, 0.0, 0.0, 0.0))
            }
            DriverConfig::QuadraticMixed { gamma, b, eta } => {
                if b < 0.0 {
                    return Err(Error::InvalidParameter("quadratic_mixed needs b >= 0".into()));
                }
                DriverSpec::radial(
                    "quadratic_mixed",
                    Radial::poly(finite("gamma", gamma)?, -finite("b", b)?, 0.0, finite("eta", eta)?),
                )
            }
            DriverConfig::Truncated { gamma, b, eta, p } => {
                let growth = Growth::new(eta, b, gamma)?;
                return truncated_driver(p, growth);
            }
        };
        Ok(spec)
    }
}

/// Identifiers and one-line descriptions of the catalog drivers.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("zero", "f = 0"),
        ("constant", "f = c"),
        ("linear_y", "f = -b y"),
        ("pure_quadratic", "f = (gamma/2)|z|^2"),
        ("quadratic_mixed", "f = (gamma/2)|z|^2 - b|y| + eta"),
        ("truncated", "f = b|y| + eta + q_p(z), q_p the Huber truncation of (gamma/2)|z|^2"),
    ]
}

/// Closed-form radial drivers `g(y) + h(|z|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Radial {
    /// `(gamma/2) r^2 + y_abs |y| + y_lin y + eta`.
    Poly { gamma: f64, y_abs: f64, y_lin: f64, eta: f64 },
    /// `huber(r) + y_abs |y| + y_lin y + eta` where `huber` equals
    /// `(gamma/2) r^2` up to `r = cap` and continues linearly.
    Huber { gamma: f64, cap: f64, y_abs: f64, y_lin: f64, eta: f64 },
}

impl Radial {
    fn poly(gamma: f64, y_abs: f64, y_lin: f64, eta: f64) -> Self {
        Radial::Poly { gamma, y_abs, y_lin, eta }
    }

    fn y_part(&self) -> (f64, f64, f64) {
        match *self {
            Radial::Poly { y_abs, y_lin, eta, .. } | Radial::Huber { y_abs, y_lin, eta, .. } => {
                (y_abs, y_lin, eta)
            }
        }
    }

    fn eval(&self, y: f64, r: f64) -> f64 {
        let (y_abs, y_lin, eta) = self.y_part();
        let zpart = match *self {
            Radial::Poly { gamma, .. } => 0.5 * gamma * r * r,
            Radial::Huber { gamma, cap, .. } => huber(gamma, cap, r),
        };
        zpart + y_abs * y.abs() + y_lin * y + eta
    }

    fn lipschitz_y(&self) -> f64 {
        let (y_abs, y_lin, _) = self.y_part();
        y_abs.abs() + y_lin.abs()
    }

    fn lipschitz_z(&self) -> f64 {
        match *self {
            Radial::Poly { gamma: 0.0, .. } => 0.0,
            Radial::Poly { .. } => f64::INFINITY,
            Radial::Huber { gamma, cap, .. } => gamma.abs() * cap,
        }
    }

    /// True when the driver is non-negative everywhere.
    fn is_nonnegative(&self) -> bool {
        let (y_abs, y_lin, eta) = self.y_part();
        let gamma = match *self {
            Radial::Poly { gamma, .. } | Radial::Huber { gamma, .. } => gamma,
        };
        gamma >= 0.0 && y_abs >= y_lin.abs() && eta >= 0.0
    }

    /// Closed-form inf-convolution with `n|y - u| + n|z - w|`, when the
    /// `y` part is already `n`-Lipschitz and the `z` part is convex.
    fn inf_convolve(&self, n: f64) -> Option<Radial> {
        if self.lipschitz_y() > n {
            return None;
        }
        let (y_abs, y_lin, eta) = self.y_part();
        match *self {
            Radial::Poly { gamma: 0.0, .. } => Some(*self),
            Radial::Poly { gamma, .. } if gamma > 0.0 => {
                Some(Radial::Huber { gamma, cap: n / gamma, y_abs, y_lin, eta })
            }
            Radial::Poly { .. } => None,
            Radial::Huber { gamma, cap, .. } if gamma > 0.0 => {
                Some(Radial::Huber { gamma, cap: cap.min(n / gamma), y_abs, y_lin, eta })
            }
            Radial::Huber { .. } if self.lipschitz_z() <= n => Some(*self),
            Radial::Huber { .. } => None,
        }
    }

    /// Closed form of `f^+ - f^{-,p}` for `f = (gamma/2) r^2 + eta` with
    /// `gamma <= 0`, `eta <= 0`: the quadratic part of `f^-` is truncated at
    /// `r = p / |gamma|` and the constant is kept.
    fn negative_regularized(&self, p: f64) -> Option<Radial> {
        match *self {
            Radial::Poly { gamma, y_abs, y_lin, eta }
                if gamma < 0.0 && y_abs == 0.0 && y_lin == 0.0 && eta <= 0.0 =>
            {
                Some(Radial::Huber { gamma, cap: p / gamma.abs(), y_abs, y_lin, eta })
            }
            _ => None,
        }
    }
}

/// `(gamma/2) r^2` for `r <= cap`, `gamma cap r - gamma cap^2 / 2` beyond.
pub fn huber(gamma: f64, cap: f64, r: f64) -> f64 {
    if r <= cap {
        0.5 * gamma * r * r
    } else {
        gamma * cap * r - 0.5 * gamma * cap * cap
    }
}

type DriverFn = dyn Fn(f64, &[f64], &[f64], f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum Form {
    Radial(Radial),
    Table(Arc<Envelope>),
    Custom(Arc<DriverFn>),
}

/// A driver together with its growth constants and Lipschitz constants.
#[derive(Clone)]
pub struct DriverSpec {
    id: String,
    growth: Growth,
    lipschitz_y: f64,
    lipschitz_z: f64,
    form: Form,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("id", &self.id)
            .field("growth", &self.growth)
            .field("lipschitz_y", &self.lipschitz_y)
            .field("lipschitz_z", &self.lipschitz_z)
            .finish()
    }
}

impl DriverSpec {
    fn radial(id: &str, r: Radial) -> Self {
        let (y_abs, y_lin, eta) = r.y_part();
        let gamma = match r {
            Radial::Poly { gamma, .. } | Radial::Huber { gamma, .. } => gamma,
        };
        DriverSpec {
            id: id.to_string(),
            growth: Growth { a: eta.abs(), b: y_abs.abs() + y_lin.abs(), gamma: gamma.abs() },
            lipschitz_y: r.lipschitz_y(),
            lipschitz_z: r.lipschitz_z(),
            form: Form::Radial(r),
        }
    }

    /// A user-supplied driver `f(t, x, m, y, z)`. The caller vouches for
    /// the growth constants and for the Lipschitz constants (pass
    /// `f64::INFINITY` when not Lipschitz).
    pub fn custom<F>(id: &str, growth: Growth, lipschitz_y: f64, lipschitz_z: f64, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        DriverSpec {
            id: format!("custom:{id}"),
            growth,
            lipschitz_y,
            lipschitz_z,
            form: Form::Custom(Arc::new(f)),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn lipschitz_y(&self) -> f64 {
        self.lipschitz_y
    }

    pub fn lipschitz_z(&self) -> f64 {
        self.lipschitz_z
    }

    pub fn is_lipschitz(&self) -> bool {
        self.lipschitz_y.is_finite() && self.lipschitz_z.is_finite()
    }

    pub fn is_custom(&self) -> bool {
        matches!(self.form, Form::Custom(_))
    }

    /// True when the driver only depends on `(y, |z|)`.
    pub fn is_radial(&self) -> bool {
        !self.is_custom()
    }

    /// True when the driver is known to be non-negative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        match &self.form {
            Form::Radial(r) => r.is_nonnegative(),
            Form::Table(t) => t.min >= 0.0,
            Form::Custom(_) => false,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], m: &[f64], y: f64, z: &[f64]) -> f64 {
        match &self.form {
            Form::Radial(r) => r.eval(y, norm(z)),
            Form::Table(tab) => tab.eval(y, norm(z)),
            Form::Custom(f) => f(t, x, m, y, z),
        }
    }

    /// Value at `(y, |z| = r)` for radial drivers.
    pub fn eval_radial(&self, y: f64, r: f64) -> Option<f64> {
        match &self.form {
            Form::Radial(rad) => Some(rad.eval(y, r)),
            Form::Table(tab) => Some(tab.eval(y, r)),
            Form::Custom(_) => None,
        }
    }

    /// Largest `|f| - (a + b|y| + (gamma/2)|z|^2)` over a grid of
    /// `(y, |z|)` points; non-positive when the growth bound holds there.
    pub fn growth_excess(&self, ys: &[f64], rs: &[f64]) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for &y in ys {
            for &r in rs {
                let v = match self.eval_radial(y, r) {
                    Some(v) => v,
                    None => self.eval(0.0, &[], &[], y, &[r]),
                };
                worst = worst.max(v.abs() - self.growth.bound(y, r));
            }
        }
        Ok(worst)
    }

    fn radial_form(&self) -> Option<Radial> {
        match &self.form {
            Form::Radial(r) => Some(*r),
            _ => None,
        }
    }
}

/// `q_p(z) + b|y| + eta` with `q_p` the Huber truncation of
/// `(gamma/2)|z|^2` at radius `p`, taken from the growth constants
/// (`eta = a`). Lipschitz with constants `b` in `y` and `gamma p` in `z`.
pub fn truncated_driver(p: f64, growth: Growth) -> Result<DriverSpec> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("truncation radius must be positive, got {p}")));
    }
    let mut spec = DriverSpec::radial(
        "truncated",
        Radial::Huber { gamma: growth.gamma, cap: p, y_abs: growth.b, y_lin: 0.0, eta: growth.a },
    );
    spec.growth = growth;
    Ok(spec)
}

/// Grid parameters for tabulated inf-convolutions on the half-plane
/// `(y, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeOptions {
    /// Half-width of the `y` range where the result is queried.
    pub y_radius: f64,
    /// Upper end of the `r = |z|` range where the result is queried.
    pub r_radius: f64,
    /// Grid spacing in both directions.
    pub delta: f64,
    /// Number of times the search box may be doubled when an infimum
    /// lands on its boundary.
    pub max_enlargements: usize,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { y_radius: 4.0, r_radius: 8.0, delta: 0.01, max_enlargements: 4 }
    }
}

/// A function of `(y, r)` tabulated on a uniform grid, evaluated by
/// bilinear interpolation (linear extrapolation outside the grid).
#[derive(Debug, Clone)]
pub struct Envelope {
    y0: f64,
    ny: usize,
    nr: usize,
    delta: f64,
    values: Vec<f64>,
    min: f64,
}

impl Envelope {
    fn sample<F: Fn(f64, f64) -> f64>(y_half: f64, r_max: f64, delta: f64, f: F) -> Self {
        let ny = (2.0 * y_half / delta).ceil() as usize + 1;
        let nr = (r_max / delta).ceil() as usize + 1;
        let y0 = -delta * ((ny - 1) as f64) / 2.0;
        let mut values = vec![0.0; ny * nr];
        for j in 0..ny {
            let y = y0 + j as f64 * delta;
            for i in 0..nr {
                values[j * nr + i] = f(y, i as f64 * delta);
            }
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        Envelope { y0, ny, nr, delta, values, min }
    }

    fn y_at(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.delta
    }

    pub fn eval(&self, y: f64, r: f64) -> f64 {
        let locate = |s: f64, n: usize| {
            let j = (s.floor().max(0.0) as usize).min(n - 2);
            (j, s - j as f64)
        };
        let (j, fy) = locate((y - self.y0) / self.delta, self.ny);
        let (i, fr) = locate(r / self.delta, self.nr);
        let v = |jj: usize, ii: usize| self.values[jj * self.nr + ii];
        let lo = v(j, i) + fr * (v(j, i + 1) - v(j, i));
        let hi = v(j + 1, i) + fr * (v(j + 1, i + 1) - v(j + 1, i));
        lo + fy * (hi - lo)
    }

    /// Largest difference quotients along `y` and `r`.
    fn lipschitz(&self) -> (f64, f64) {
        let (mut ly, mut lr) = (0.0f64, 0.0f64);
        for j in 0..self.ny {
            for i in 0..self.nr {
                let v = self.values[j * self.nr + i];
                if j + 1 < self.ny {
                    ly = ly.max((self.values[(j + 1) * self.nr + i] - v).abs());
                }
                if i + 1 < self.nr {
                    lr = lr.max((self.values[j * self.nr + i + 1] - v).abs());
                }
            }
        }
        (ly / self.delta, lr / self.delta)
    }

    /// In-place `inf_{u, rho} v(u, rho) + n|y - u| + n|r - rho|` over the
    /// grid. Returns true when some node with `|y| <= y_query` and
    /// `r <= r_query` takes its infimum from the outer boundary of the
    /// grid (`r = 0` is part of the domain, not a boundary).
    fn distance_transform(&mut self, n: f64, y_query: f64, r_query: f64) -> bool {
        let step = n * self.delta;
        let (ny, nr) = (self.ny, self.nr);
        let mut src_y: Vec<u32> = (0..ny * nr).map(|k| (k / nr) as u32).collect();
        let mut src_r: Vec<u32> = (0..ny * nr).map(|k| (k % nr) as u32).collect();
        for i in 0..nr {
            for j in 1..ny {
                let (a, b) = ((j - 1) * nr + i, j * nr + i);
                if self.values[a] + step < self.values[b] {
                    self.values[b] = self.values[a] + step;
                    src_y[b] = src_y[a];
                }
            }
            for j in (0..ny - 1).rev() {
                let (a, b) = ((j + 1) * nr + i, j * nr + i);
                if self.values[a] + step < self.values[b] {
                    self.values[b] = self.values[a] + step;
                    src_y[b] = src_y[a];
                }
            }
        }
        for j in 0..ny {
            let row = j * nr;
            for i in 1..nr {
                let (a, b) = (row + i - 1, row + i);
                if self.values[a] + step < self.values[b] {
                    self.values[b] = self.values[a] + step;
                    src_y[b] = src_y[a];
                    src_r[b] = src_r[a];
                }
            }
            for i in (0..nr - 1).rev() {
                let (a, b) = (row + i + 1, row + i);
                if self.values[a] + step < self.values[b] {
                    self.values[b] = self.values[a] + step;
                    src_y[b] = src_y[a];
                    src_r[b] = src_r[a];
                }
            }
        }
        self.min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let last_y = (ny - 1) as u32;
        let last_r = (nr - 1) as u32;
        for j in 0..ny {
            if self.y_at(j).abs() > y_query + 1e-12 {
                continue;
            }
            for i in 0..nr {
                if i as f64 * self.delta > r_query + 1e-12 {
                    break;
                }
                let k = j * nr + i;
                if src_y[k] == 0 || src_y[k] == last_y || src_r[k] == last_r {
                    return true;
                }
            }
        }
        false
    }
}

fn require_radial(f: &DriverSpec, what: &str) -> Result<()> {
    if f.is_radial() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "{what} needs a driver depending on (y, |z|) only; {} is a custom driver",
            f.id
        )))
    }
}

fn from_table(id: String, growth: Growth, table: Envelope) -> DriverSpec {
    let (ly, lz) = table.lipschitz();
    DriverSpec { id, growth, lipschitz_y: ly, lipschitz_z: lz, form: Form::Table(Arc::new(table)) }
}

/// `f_n(y, z) = inf_{u, w} f(u, w) + n|y - u| + n|z - w|`.
///
/// Convex quadratic drivers use the closed form (a Huber function in
/// `|z|`); other radial drivers are tabulated over a box which is doubled
/// whenever an infimum for a queried point is attained on its boundary.
pub fn inf_convolve(f: &DriverSpec, n: f64, options: &EnvelopeOptions) -> Result<DriverSpec> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("inf-convolution index must be positive, got {n}")));
    }
    require_radial(f, "inf-convolution")?;
    let id = format!("{}~n{}", f.id, n);
    if let Some(closed) = f.radial_form().and_then(|r| r.inf_convolve(n)) {
        let mut spec = DriverSpec::radial(&id, closed);
        spec.growth = f.growth;
        return Ok(spec);
    }
    inf_convolve_grid(f, n, options)
}

/// [`inf_convolve`] by grid search only, without closed forms: the
/// infimum is taken over the grid points of the search box.
pub fn inf_convolve_grid(f: &DriverSpec, n: f64, options: &EnvelopeOptions) -> Result<DriverSpec> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("inf-convolution index must be positive, got {n}")));
    }
    require_radial(f, "inf-convolution")?;
    let id = format!("{}~n{}", f.id, n);
    let table = tabulate(options, |yh, rh| {
        let mut t = Envelope::sample(yh, rh, options.delta, |y, r| f.eval_radial(y, r).unwrap_or(f64::NAN));
        let hit = t.distance_transform(n, options.y_radius, options.r_radius);
        (t, hit)
    })?;
    Ok(from_table(id, f.growth, table))
}

/// The regularized cascade driver `(f^+ - f^{-,p})_n`, with
/// `f^{-,p} = inf_{u,w} f^-(u, w) + p|y - u| + p|z - w|`.
pub fn cascade_driver(f: &DriverSpec, p: f64, n: f64, options: &EnvelopeOptions) -> Result<DriverSpec> {
    require_radial(f, "the quadratic cascade")?;
    if !(p > 0.0 && n >= p) {
        return Err(Error::InvalidParameter(format!("cascade needs 0 < p <= n, got p={p}, n={n}")));
    }
    if f.is_nonnegative() {
        return inf_convolve(f, n, options);
    }
    let id = format!("{}~p{}~n{}", f.id, p, n);
    if let Some(closed) =
        f.radial_form().and_then(|r| r.negative_regularized(p)).and_then(|r| r.inf_convolve(n))
    {
        let mut spec = DriverSpec::radial(&id, closed);
        spec.growth = f.growth;
        return Ok(spec);
    }
    let table = tabulate(options, |yh, rh| {
        let delta = options.delta;
        let mut minus =
            Envelope::sample(yh, rh, delta, |y, r| (-f.eval_radial(y, r).unwrap_or(f64::NAN)).max(0.0));
        let hit_p = minus.distance_transform(p, yh * 0.75, rh * 0.75);
        let mut g = Envelope::sample(yh, rh, delta, |y, r| f.eval_radial(y, r).unwrap_or(f64::NAN).max(0.0));
        for (gv, mv) in g.values.iter_mut().zip(&minus.values) {
            *gv -= mv;
        }
        let hit_n = g.distance_transform(n, options.y_radius, options.r_radius);
        (g, hit_p || hit_n)
    })?;
    Ok(from_table(id, f.growth, table))
}

/// Builds a table over a box that starts at twice the query region and
/// doubles while `build` reports boundary infima.
fn tabulate<B>(options: &EnvelopeOptions, build: B) -> Result<Envelope>
where
    B: Fn(f64, f64) -> (Envelope, bool),
{
    if !(options.delta > 0.0 && options.y_radius > 0.0 && options.r_radius > 0.0) {
        return Err(Error::InvalidParameter("envelope grid needs positive radii and spacing".into()));
    }
    let mut scale = 1.25;
    for _ in 0..=options.max_enlargements {
        let (yh, rh) = (options.y_radius * scale + options.delta, options.r_radius * scale + options.delta);
        let (table, hit) = build(yh, rh);
        if table.values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("driver produced NaN on the envelope grid".into()));
        }
        if !hit {
            return Ok(table);
        }
        scale *= 2.0;
    }
    Err(Error::BoxTooSmall { radius: options.r_radius.max(options.y_radius) * scale / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(gamma: f64) -> DriverSpec {
        DriverConfig::PureQuadratic { gamma }.build().unwrap()
    }

    #[test]
    fn truncated_driver_matches_huber_and_constants() {
        let g = Growth::new(0.3, 0.5, 2.0).unwrap();
        let f = truncated_driver(1.5, g).unwrap();
        assert_eq!(f.lipschitz_y(), 0.5);
        assert_eq!(f.lipschitz_z(), 3.0);
        assert!((f.eval(0.0, &[], &[], -2.0, &[1.0]) - (1.0 + 1.0 + 0.3)).abs() < 1e-15);
        // beyond the cap: gamma p |z| - gamma p^2 / 2
        let v = f.eval(0.0, &[], &[], 0.0, &[3.0, 4.0]);
        assert!((v - (2.0 * 1.5 * 5.0 - 2.25 + 0.3)).abs() < 1e-13);
    }

    #[test]
    fn closed_form_inf_convolution_of_quadratic() {
        let f = quad(2.0);
        let fn_ = inf_convolve(&f, 3.0, &EnvelopeOptions::default()).unwrap();
        assert!(fn_.is_lipschitz());
        for &z in &[0.0, 0.5, 1.5, 2.0, 7.0] {
            // brute force over w
            let brute = (0..=200_000)
                .map(|k| -10.0 + k as f64 * 1e-4)
                .map(|w| w * w + 3.0 * (z - w).abs())
                .fold(f64::INFINITY, f64::min);
            assert!((fn_.eval(0.0, &[], &[], 0.0, &[z]) - brute).abs() < 1e-6, "z={z}");
        }
    }

    #[test]
    fn grid_search_matches_huber_within_grid_tolerance() {
        let f = quad(1.5);
        let opts = EnvelopeOptions { y_radius: 0.5, r_radius: 5.0, delta: 0.005, max_enlargements: 4 };
        let n = 3.0;
        let grid = inf_convolve_grid(&f, n, &opts).unwrap();
        for k in 0..=500 {
            let r = 5.0 * k as f64 / 500.0;
            let exact = huber(1.5, n / 1.5, r);
            assert!((grid.eval_radial(0.1, r).unwrap() - exact).abs() <= opts.delta * n, "r={r}");
        }
    }

    #[test]
    fn tabulated_envelope_agrees_with_closed_form() {
        // a concave y part forces the tabulated path
        let f = DriverConfig::QuadraticMixed { gamma: 1.0, b: 4.0, eta: 0.0 }.build().unwrap();
        let opts = EnvelopeOptions { y_radius: 1.0, r_radius: 3.0, delta: 0.01, max_enlargements: 4 };
        let tab = inf_convolve(&f, 2.0, &opts);
        // -4|u| with slope 4 > 2 is unbounded below after inf-convolution
        assert!(matches!(tab, Err(Error::BoxTooSmall { .. })));

        // b|y| with b = 4 > n = 2 has no closed form here; the envelope is 2|y|
        let g = DriverConfig::Truncated { gamma: 1.0, b: 4.0, eta: 0.5, p: 5.0 }.build().unwrap();
        let t = inf_convolve(&g, 2.0, &opts).unwrap();
        assert!((t.lipschitz_y() - 2.0).abs() < 1e-9);
        for &(y, r) in &[(0.0f64, 0.0f64), (0.3, 1.0), (-0.7, 2.5), (0.5, 1.97)] {
            let exact = 2.0 * y.abs() + 0.5 + huber(1.0, 2.0, r);
            assert!((t.eval_radial(y, r).unwrap() - exact).abs() < 2e-3, "({y},{r})");
        }
    }

    #[test]
    fn cascade_driver_dominates_and_orders() {
        let f = DriverConfig::QuadraticMixed { gamma: 1.0, b: 1.0, eta: 0.2 }.build().unwrap();
        let opts = EnvelopeOptions { y_radius: 2.0, r_radius: 3.0, delta: 0.02, max_enlargements: 4 };
        let g11 = cascade_driver(&f, 1.0, 1.0, &opts).unwrap();
        let g12 = cascade_driver(&f, 1.0, 2.0, &opts).unwrap();
        let g22 = cascade_driver(&f, 2.0, 2.0, &opts).unwrap();
        for j in 0..=20 {
            for i in 0..=15 {
                let (y, r) = (-2.0 + 0.2 * j as f64, 0.2 * i as f64);
                let (a, b, c) = (
                    g11.eval_radial(y, r).unwrap(),
                    g12.eval_radial(y, r).unwrap(),
                    g22.eval_radial(y, r).unwrap(),
                );
                assert!(a <= b + 1e-12, "n-monotone at ({y},{r})");
                assert!(c <= b + 1e-12, "p-monotone at ({y},{r})");
            }
        }
        assert!(g12.lipschitz_z() <= 2.0 + 1e-9);
    }

    #[test]
    fn growth_bound_holds_on_catalog() {
        let ys: Vec<f64> = (-10..=10).map(|k| k as f64 * 0.5).collect();
        let rs: Vec<f64> = (0..=10).map(|k| k as f64 * 0.7).collect();
        for cfg in [
            DriverConfig::Zero,
            DriverConfig::Constant { c: -0.4 },
            DriverConfig::LinearY { b: 0.7 },
            DriverConfig::PureQuadratic { gamma: -1.5 },
            DriverConfig::QuadraticMixed { gamma: 1.0, b: 0.5, eta: 0.1 },
            DriverConfig::Truncated { gamma: 1.0, b: 0.5, eta: 0.1, p: 2.0 },
        ] {
            let f = cfg.build().unwrap();
            assert!(f.growth_excess(&ys, &rs).unwrap() <= 1e-12, "{}", cfg.id());
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = DriverConfig::QuadraticMixed { gamma: 1.0, b: 0.5, eta: 0.1 };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"id\":\"quadratic_mixed\""));
        let back: DriverConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
