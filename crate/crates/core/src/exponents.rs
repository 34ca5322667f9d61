//! Exponent bookkeeping for the anisotropic operator.
//!
//! Everything here is closed-form arithmetic on the anisotropy vector
//! `p = (p_1, ..., p_N)` and the nonlinearity parameters: harmonic mean,
//! Sobolev exponent, arithmetic mean `q`, the window `(l1, l2)` / `(l1, l3)`
//! for the Caccioppoli parameter `beta`, the parameter regions `A, B, C, I, J`
//! and the decay exponents that drive the radius-sweep contradiction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative margin used when testing membership in an open interval.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Anisotropy exponents together with their derived means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentData {
    p: Vec<f64>,
    n: usize,
    pbar: f64,
    pstar: Option<f64>,
    q: f64,
}

impl ExponentData {
    /// Builds the exponent data. `p` must be sorted ascending with every entry `>= 2`.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidInput("empty exponent vector".into()));
        }
        if let Some(bad) = p.iter().find(|v| !v.is_finite() || **v < 2.0) {
            return Err(Error::InvalidExponents(format!(
                "every p_i must be finite and >= 2, got {bad}"
            )));
        }
        if p.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidExponents(format!(
                "exponents must be sorted ascending, got {p:?}"
            )));
        }
        let n = p.len();
        let pbar = harmonic_mean(&p, n)?;
        let q = p.iter().sum::<f64>() / n as f64;
        let pstar = if pbar < n as f64 {
            Some(n as f64 * pbar / (n as f64 - pbar))
        } else {
            None
        };
        Ok(Self {
            p,
            n,
            pbar,
            pstar,
            q,
        })
    }

    /// Exponents with all axes equal to `p`.
    pub fn isotropic(p: f64, n: usize) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pbar(&self) -> f64 {
        self.pbar
    }

    pub fn pstar(&self) -> Option<f64> {
        self.pstar
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Largest exponent `p_N`.
    pub fn p_max(&self) -> f64 {
        self.p[self.n - 1]
    }

    /// True when `p_1 > 2`, the standing assumption of the nonexistence results.
    pub fn strictly_above_two(&self) -> bool {
        self.p[0] > 2.0
    }
}

/// Harmonic mean `pbar` with `1/pbar = (1/N) sum 1/p_i`.
pub fn harmonic_mean(p: &[f64], n: usize) -> Result<f64> {
    if p.is_empty() || n == 0 {
        return Err(Error::InvalidInput("empty exponent vector".into()));
    }
    if n != p.len() {
        return Err(Error::InvalidInput(format!(
            "dimension {n} does not match {} exponents",
            p.len()
        )));
    }
    if let Some(bad) = p.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "exponents must be positive, got {bad}"
        )));
    }
    let inv: f64 = p.iter().map(|v| 1.0 / v).sum::<f64>() / n as f64;
    Ok(1.0 / inv)
}

/// Sobolev exponent `pbar* = N pbar / (N - pbar)`, defined only for `pbar < N`.
pub fn sobolev_exponent(e: &ExponentData) -> Result<f64> {
    e.pstar.ok_or(Error::UndefinedExponent {
        pbar: e.pbar,
        n: e.n,
    })
}

/// The singular nonlinearity of the whole-space problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Nonlinearity {
    /// `f(u) = -(u^-delta + u^-gamma)` with `0 < delta <= gamma`.
    MixedPower { delta: f64, gamma: f64 },
    /// `f(u) = -exp(1/u)` for solutions capped by `0 < u <= cap`.
    ExpSingular { cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProblemSpec {
    pub kind: Nonlinearity,
    /// Positive lower bound `c` of the weight `g`.
    pub weight_floor: f64,
    pub exponents: ExponentData,
}

impl ProblemSpec {
    pub fn new(kind: Nonlinearity, weight_floor: f64, exponents: ExponentData) -> Result<Self> {
        match kind {
            Nonlinearity::MixedPower { delta, gamma } => {
                if !(delta > 0.0 && delta.is_finite() && gamma.is_finite()) || delta > gamma {
                    return Err(Error::InvalidParameters(format!(
                        "mixed power requires 0 < delta <= gamma, got delta={delta}, gamma={gamma}"
                    )));
                }
            }
            Nonlinearity::ExpSingular { cap } => {
                if !(cap > 0.0 && cap.is_finite()) {
                    return Err(Error::InvalidParameters(format!(
                        "exponential case requires a positive cap M, got {cap}"
                    )));
                }
            }
        }
        if !(weight_floor > 0.0 && weight_floor.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "weight floor must be positive, got {weight_floor}"
            )));
        }
        Ok(Self {
            kind,
            weight_floor,
            exponents,
        })
    }

    pub fn mixed_power(p: Vec<f64>, delta: f64, gamma: f64) -> Result<Self> {
        Self::new(
            Nonlinearity::MixedPower { delta, gamma },
            1.0,
            ExponentData::new(p)?,
        )
    }

    pub fn exp_singular(p: Vec<f64>, cap: f64) -> Result<Self> {
        Self::new(Nonlinearity::ExpSingular { cap }, 1.0, ExponentData::new(p)?)
    }
}

/// Open interval `(lo, hi)`; `hi` may be `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenInterval {
    pub lo: f64,
    pub hi: f64,
}

impl OpenInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn unbounded_above(lo: f64) -> Self {
        Self { lo, hi: f64::INFINITY }
    }

    pub fn is_empty(&self) -> bool {
        !(self.hi > self.lo)
    }

    /// Strict membership with a relative margin of [`MEMBERSHIP_TOL`] at each
    /// finite endpoint. Points on (or numerically at) an endpoint are excluded.
    pub fn contains(&self, x: f64) -> bool {
        let margin = |e: f64| MEMBERSHIP_TOL * e.abs().max(1.0);
        let above = x > self.lo + margin(self.lo);
        let below = if self.hi.is_finite() {
            x < self.hi - margin(self.hi)
        } else {
            x.is_finite()
        };
        above && below
    }

    pub fn intersect(&self, other: &OpenInterval) -> OpenInterval {
        OpenInterval::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Which whole-space nonexistence result applies to a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    /// `0 < u <= 1`, `1 <= delta < gamma`, `delta` in `A ∩ I`.
    #[serde(rename = "Thm3_2")]
    SmallSolutions,
    /// `u >= 1`, `0 < delta < gamma`, `delta` in `A`, `gamma` in `I ∩ [1, inf)`.
    #[serde(rename = "Thm3_3")]
    LargeSolutions,
    /// `u > 0`, `1 <= delta = gamma` in `A ∩ I`.
    #[serde(rename = "Thm3_4")]
    EqualExponents,
    /// `0 < u <= M` with `M` in `J`, exponential nonlinearity.
    #[serde(rename = "Thm3_5")]
    ExpCapped,
    #[serde(rename = "None")]
    None,
}

impl Theorem {
    pub fn label(&self) -> &'static str {
        match self {
            Theorem::SmallSolutions => "Thm3_2",
            Theorem::LargeSolutions => "Thm3_3",
            Theorem::EqualExponents => "Thm3_4",
            Theorem::ExpCapped => "Thm3_5",
            Theorem::None => "None",
        }
    }
}

/// `l1 = (p_N - q) / 2`.
pub fn l1(e: &ExponentData) -> f64 {
    (e.p_max() - e.q) / 2.0
}

/// `l2 = 2 delta / (N (q - 1)) - (q - 1) / 2`.
pub fn l2(e: &ExponentData, delta: f64) -> f64 {
    let qm1 = e.q - 1.0;
    2.0 * delta / (e.n as f64 * qm1) - qm1 / 2.0
}

/// `l3 = 2 / (M N (q - 1)) - (q - 1) / 2`.
pub fn l3(e: &ExponentData, cap: f64) -> f64 {
    let qm1 = e.q - 1.0;
    2.0 / (cap * e.n as f64 * qm1) - qm1 / 2.0
}

/// Returns `(l1, l2)` for the mixed power case and `(l1, l3)` for the
/// exponential case. An empty window is reported, not rejected.
pub fn beta_window(spec: &ProblemSpec) -> Result<(f64, f64)> {
    let e = &spec.exponents;
    if !(e.q > 1.0) {
        return Err(Error::InvalidExponents(format!("q = {} must exceed 1", e.q)));
    }
    let upper = match spec.kind {
        Nonlinearity::MixedPower { delta, .. } => l2(e, delta),
        Nonlinearity::ExpSingular { cap } => l3(e, cap),
    };
    Ok((l1(e), upper))
}

/// `A = (N (q-1)(p_N - 1) / 4, inf)`.
pub fn region_a(e: &ExponentData) -> OpenInterval {
    OpenInterval::unbounded_above(e.n as f64 * (e.q - 1.0) * (e.p_max() - 1.0) / 4.0)
}

/// `B = (0, 4 / (N (q-1)(p_N - 1)))`.
pub fn region_b(e: &ExponentData) -> OpenInterval {
    OpenInterval::new(0.0, 4.0 / (e.n as f64 * (e.q - 1.0) * (e.p_max() - 1.0)))
}

/// `C = (0, 4 / (N (N-1)(q-1)))`; unbounded when `N = 1`.
pub fn region_c(e: &ExponentData) -> OpenInterval {
    let n = e.n as f64;
    if e.n == 1 {
        OpenInterval::unbounded_above(0.0)
    } else {
        OpenInterval::new(0.0, 4.0 / (n * (n - 1.0) * (e.q - 1.0)))
    }
}

/// `J = B ∩ C`.
pub fn region_j(e: &ExponentData) -> OpenInterval {
    region_b(e).intersect(&region_c(e))
}

/// Lower endpoint of `I_i`, or `None` when its denominator
/// `p_i (N(q-1) + 4) - N^2 (q-1)` is not positive.
pub fn region_i_bound(e: &ExponentData, i: usize) -> Option<f64> {
    let n = e.n as f64;
    let qm1 = e.q - 1.0;
    let pi = e.p[i];
    let denom = pi * (n * qm1 + 4.0) - n * n * qm1;
    if denom > 0.0 {
        Some(n * n * qm1 * (pi - 1.0) / denom)
    } else {
        None
    }
}

/// `I = ∩ I_i`; `None` when any `I_i` is undefined.
pub fn region_i(e: &ExponentData) -> Option<OpenInterval> {
    let mut lo = f64::NEG_INFINITY;
    for i in 0..e.n {
        lo = lo.max(region_i_bound(e, i)?);
    }
    Some(OpenInterval::unbounded_above(lo))
}

/// Conjugate Young exponents `(theta, theta')` with
/// `theta = (2b + s + q - 1) / (2b + q - p_i)` and
/// `theta' = (2b + s + q - 1) / (s + p_i - 1)`, where `s` is `delta` or `gamma`.
pub fn conjugate_pair(beta: f64, s: f64, q: f64, p_i: f64) -> (f64, f64) {
    let top = 2.0 * beta + s + q - 1.0;
    (top / (2.0 * beta + q - p_i), top / (s + p_i - 1.0))
}

/// `(theta_i, theta_i')` built from `delta` (mixed power) or, in the
/// exponential case, the pair `((2b+q)/(2b+q-p_i), (2b+q)/p_i)`.
pub fn theta_exponents(beta: f64, spec: &ProblemSpec, i: usize) -> Result<(f64, f64)> {
    let e = &spec.exponents;
    check_axis(e, i)?;
    check_beta(beta, spec)?;
    Ok(match spec.kind {
        Nonlinearity::MixedPower { delta, .. } => conjugate_pair(beta, delta, e.q, e.p[i]),
        Nonlinearity::ExpSingular { .. } => exp_pair(beta, e.q, e.p[i]),
    })
}

/// `(zeta_i, zeta_i')`: the same pair built from `gamma`.
pub fn zeta_exponents(beta: f64, spec: &ProblemSpec, i: usize) -> Result<(f64, f64)> {
    let e = &spec.exponents;
    check_axis(e, i)?;
    check_beta(beta, spec)?;
    match spec.kind {
        Nonlinearity::MixedPower { gamma, .. } => Ok(conjugate_pair(beta, gamma, e.q, e.p[i])),
        Nonlinearity::ExpSingular { .. } => Err(Error::InvalidParameters(
            "zeta exponents need the mixed power nonlinearity".into(),
        )),
    }
}

fn exp_pair(beta: f64, q: f64, p_i: f64) -> (f64, f64) {
    let top = 2.0 * beta + q;
    (top / (top - p_i), top / p_i)
}

fn check_axis(e: &ExponentData, i: usize) -> Result<()> {
    if i >= e.n {
        return Err(Error::InvalidInput(format!(
            "axis {i} out of range for dimension {}",
            e.n
        )));
    }
    Ok(())
}

fn check_beta(beta: f64, spec: &ProblemSpec) -> Result<()> {
    let (lo, hi) = beta_window(spec)?;
    if !(beta > lo) || !beta.is_finite() {
        return Err(Error::OutOfWindow {
            beta,
            lower: lo,
            upper: hi,
        });
    }
    Ok(())
}

/// Exponent of the Caccioppoli left-hand side `(psi/u)^E` for a theorem.
pub fn lhs_power(beta: f64, spec: &ProblemSpec, theorem: Theorem) -> Result<f64> {
    let q = spec.exponents.q;
    match (spec.kind, theorem) {
        (Nonlinearity::MixedPower { delta, .. }, Theorem::SmallSolutions | Theorem::EqualExponents) => {
            Ok(2.0 * beta + delta + q - 1.0)
        }
        (Nonlinearity::MixedPower { gamma, .. }, Theorem::LargeSolutions) => {
            Ok(2.0 * beta + gamma + q - 1.0)
        }
        (Nonlinearity::ExpSingular { .. }, Theorem::ExpCapped) => Ok(2.0 * beta + q),
        _ => Err(Error::NotApplicable(format!(
            "theorem {} does not match the nonlinearity",
            theorem.label()
        ))),
    }
}

/// Per-axis gradient exponents `p_i theta_i'` (or `p_i zeta_i'`, or `2b + q`)
/// appearing on the right-hand side of the Caccioppoli consequence.
pub fn gradient_powers(beta: f64, spec: &ProblemSpec, theorem: Theorem) -> Result<Vec<f64>> {
    let e = &spec.exponents;
    check_beta(beta, spec)?;
    let q = e.q;
    match (spec.kind, theorem) {
        (Nonlinearity::MixedPower { delta, .. }, Theorem::SmallSolutions | Theorem::EqualExponents) => {
            Ok(e.p.iter().map(|&pi| pi * conjugate_pair(beta, delta, q, pi).1).collect())
        }
        (Nonlinearity::MixedPower { gamma, .. }, Theorem::LargeSolutions) => {
            Ok(e.p.iter().map(|&pi| pi * conjugate_pair(beta, gamma, q, pi).1).collect())
        }
        (Nonlinearity::ExpSingular { .. }, Theorem::ExpCapped) => Ok(vec![2.0 * beta + q; e.n]),
        _ => Err(Error::NotApplicable(format!(
            "theorem {} does not match the nonlinearity",
            theorem.label()
        ))),
    }
}

/// Decay exponents `N - p_i theta_i'` (resp. `N - 2b - q`) at a given `beta`.
pub fn decay_exponents(beta: f64, spec: &ProblemSpec, theorem: Theorem) -> Result<Vec<f64>> {
    let n = spec.exponents.n as f64;
    Ok(gradient_powers(beta, spec, theorem)?
        .into_iter()
        .map(|g| n - g)
        .collect())
}

/// Limit of the decay exponents as `beta` approaches the upper window endpoint.
fn limit_decay(spec: &ProblemSpec, theorem: Theorem) -> Result<Vec<f64>> {
    let (_, upper) = beta_window(spec)?;
    let e = &spec.exponents;
    let n = e.n as f64;
    let q = e.q;
    Ok(match (spec.kind, theorem) {
        (Nonlinearity::MixedPower { gamma, .. }, Theorem::LargeSolutions) => e
            .p
            .iter()
            .map(|&pi| n - pi * conjugate_pair(upper, gamma, q, pi).1)
            .collect(),
        (Nonlinearity::MixedPower { delta, .. }, _) => e
            .p
            .iter()
            .map(|&pi| n - pi * conjugate_pair(upper, delta, q, pi).1)
            .collect(),
        (Nonlinearity::ExpSingular { .. }, _) => vec![n - 2.0 * upper - q; e.n],
    })
}

/// Outcome of checking every threshold and theorem hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThresholdReport {
    pub n: usize,
    pub p: Vec<f64>,
    pub q: f64,
    pub pbar: f64,
    pub pstar: Option<f64>,
    pub l1: f64,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub region_a: OpenInterval,
    pub region_b: OpenInterval,
    pub region_c: OpenInterval,
    pub region_j: OpenInterval,
    /// Lower endpoints of each `I_i` (`None` where undefined).
    pub region_i_bounds: Vec<Option<f64>>,
    /// `None` when `I` is empty because some `I_i` is undefined.
    pub region_i: Option<OpenInterval>,
    pub delta_in_a: bool,
    pub delta_in_i: bool,
    pub gamma_in_i: bool,
    pub cap_in_b: bool,
    pub cap_in_c: bool,
    pub cap_in_j: bool,
    pub beta_window: OpenInterval,
    pub beta_window_nonempty: bool,
    pub selected_beta: Option<f64>,
    pub decay_exponents: Vec<f64>,
    /// Every theorem whose hypotheses hold, in order of preference.
    pub applicable: Vec<Theorem>,
    pub theorem_applicable: Theorem,
    pub strict_anisotropy: bool,
    pub notes: Vec<String>,
}

/// Evaluates the regions `A, B, C, I, J`, the `beta` window and the
/// hypotheses of each nonexistence theorem.
pub fn region_memberships(spec: &ProblemSpec) -> ThresholdReport {
    let e = &spec.exponents;
    let a = region_a(e);
    let b = region_b(e);
    let c = region_c(e);
    let j = region_j(e);
    let bounds: Vec<Option<f64>> = (0..e.n).map(|i| region_i_bound(e, i)).collect();
    let i_region = region_i(e);
    let in_i = |x: f64| i_region.map(|r| r.contains(x)).unwrap_or(false);

    let mut notes = Vec::new();
    if !e.strictly_above_two() {
        notes.push(format!(
            "p_1 = {} is not strictly above 2; nonexistence hypotheses are evaluated anyway",
            e.p[0]
        ));
    }
    if i_region.is_none() {
        notes.push("some I_i denominator is not positive; I is empty".into());
    }

    let window = beta_window(spec).ok();
    let (l1v, upper) = window.unwrap_or((l1(e), f64::NAN));
    let beta_window = OpenInterval::new(l1v, upper);

    let mut report = ThresholdReport {
        n: e.n,
        p: e.p.clone(),
        q: e.q,
        pbar: e.pbar,
        pstar: e.pstar,
        l1: l1v,
        l2: None,
        l3: None,
        region_a: a,
        region_b: b,
        region_c: c,
        region_j: j,
        region_i_bounds: bounds,
        region_i: i_region,
        delta_in_a: false,
        delta_in_i: false,
        gamma_in_i: false,
        cap_in_b: false,
        cap_in_c: false,
        cap_in_j: false,
        beta_window,
        beta_window_nonempty: !beta_window.is_empty(),
        selected_beta: None,
        decay_exponents: Vec::new(),
        applicable: Vec::new(),
        theorem_applicable: Theorem::None,
        strict_anisotropy: e.strictly_above_two(),
        notes,
    };
    if window.is_none() {
        report.notes.push("q <= 1: beta window undefined".into());
        return report;
    }

    match spec.kind {
        Nonlinearity::MixedPower { delta, gamma } => {
            report.l2 = Some(upper);
            report.delta_in_a = a.contains(delta);
            report.delta_in_i = in_i(delta);
            report.gamma_in_i = in_i(gamma);
            let equal = (delta - gamma).abs() <= 1e-12 * gamma.abs().max(1.0);
            if !equal && delta >= 1.0 && delta < gamma && report.delta_in_a && report.delta_in_i {
                report.applicable.push(Theorem::SmallSolutions);
            }
            if !equal
                && delta > 0.0
                && delta < gamma
                && report.delta_in_a
                && report.gamma_in_i
                && gamma >= 1.0
            {
                // gamma in I controls the decay at the gamma-window endpoint, but the
                // window itself is set by delta; require the limit decay to be negative.
                let limit = limit_decay(spec, Theorem::LargeSolutions).unwrap_or_default();
                if limit.iter().all(|d| *d < 0.0) {
                    report.applicable.push(Theorem::LargeSolutions);
                } else {
                    report.notes.push(format!(
                        "u >= 1 hypotheses hold literally but the decay limit at beta -> l2 is {limit:?}; not certified"
                    ));
                }
            }
            if equal && delta >= 1.0 && report.delta_in_a && report.delta_in_i {
                report.applicable.push(Theorem::EqualExponents);
            }
        }
        Nonlinearity::ExpSingular { cap } => {
            report.l3 = Some(upper);
            report.cap_in_b = b.contains(cap);
            report.cap_in_c = c.contains(cap);
            report.cap_in_j = j.contains(cap);
            if report.cap_in_j {
                report.applicable.push(Theorem::ExpCapped);
            }
        }
    }

    if let Some(&first) = report.applicable.first() {
        report.theorem_applicable = first;
        if let Ok(choice) = select_beta_for(spec, first) {
            report.selected_beta = Some(choice.beta);
            report.decay_exponents = choice.decay;
        }
    }
    report
}

/// An admissible Caccioppoli parameter together with its decay exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BetaChoice {
    pub beta: f64,
    pub decay: Vec<f64>,
    pub theorem: Theorem,
}

/// Picks `beta` inside the window with every decay exponent negative, for the
/// first applicable theorem.
pub fn select_beta(spec: &ProblemSpec) -> Result<BetaChoice> {
    let report = region_memberships(spec);
    match report.theorem_applicable {
        Theorem::None => Err(Error::NotApplicable(
            "no theorem hypothesis holds for these parameters".into(),
        )),
        t => select_beta_for(spec, t),
    }
}

/// Same as [`select_beta`] for an explicitly chosen theorem.
///
/// The decay exponents decrease in `beta`, so candidates start at
/// `upper - 1e-6 (upper - l1)` and move toward the upper endpoint, halving the
/// gap each step, until every exponent is negative.
pub fn select_beta_for(spec: &ProblemSpec, theorem: Theorem) -> Result<BetaChoice> {
    let (lo, hi) = beta_window(spec)?;
    if !(hi > lo) {
        return Err(Error::HypothesisViolated(format!(
            "beta window ({lo}, {hi}) is empty"
        )));
    }
    let width = hi - lo;
    let mut gap = 1e-6 * width;
    let mut last = Vec::new();
    for _ in 0..64 {
        let beta = hi - gap;
        if !(beta > lo && beta < hi) {
            break;
        }
        let decay = decay_exponents(beta, spec, theorem)?;
        if decay.iter().all(|d| *d < 0.0) {
            return Ok(BetaChoice {
                beta,
                decay,
                theorem,
            });
        }
        last = decay;
        gap *= 0.5;
    }
    Err(Error::HypothesisViolated(format!(
        "no beta in ({lo}, {hi}) gives negative decay exponents (closest: {last:?})"
    )))
}

/// Integrability thresholds for the weight in the existence problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntegrabilityThresholds {
    /// `(pbar*)' = pbar* / (pbar* - 1)` when `pbar < N`; otherwise any `m > 1` works.
    pub m_exist: Option<f64>,
    /// `pbar* / (pbar* - pbar)` when `pbar < N`.
    pub m_bounded: Option<f64>,
    /// Whether `pbar* >= p_N` (needed for the existence statement when `pbar < N`).
    pub sobolev_dominates: bool,
    pub p_max: f64,
}

impl IntegrabilityThresholds {
    /// Boundedness threshold `r / (r - p_N)` for the `pbar >= N` branch.
    pub fn bounded_threshold_for(&self, r: f64) -> Result<f64> {
        if !(r > self.p_max) {
            return Err(Error::InvalidParameters(format!(
                "r = {r} must exceed p_N = {}",
                self.p_max
            )));
        }
        Ok(r / (r - self.p_max))
    }

    /// Whether a weight in `L^m` meets the uniform-bound hypothesis. In the
    /// `pbar >= N` branch `r` can be taken arbitrarily large, so any `m > 1` does.
    pub fn bounded_for(&self, m: f64) -> bool {
        match self.m_bounded {
            Some(t) => m > t,
            None => m > 1.0,
        }
    }
}

pub fn integrability_thresholds(e: &ExponentData) -> IntegrabilityThresholds {
    match e.pstar {
        Some(ps) => IntegrabilityThresholds {
            m_exist: Some(ps / (ps - 1.0)),
            m_bounded: Some(ps / (ps - e.pbar)),
            sobolev_dominates: ps >= e.p_max(),
            p_max: e.p_max(),
        },
        None => IntegrabilityThresholds {
            m_exist: None,
            m_bounded: None,
            sobolev_dominates: true,
            p_max: e.p_max(),
        },
    }
}

/// Coefficient `(alpha-1)^2 (N(q-1) + eps) / (4 alpha (1 - eps))` of the
/// a priori estimate, for `eps` in `(0, 1)`.
pub fn apriori_coefficient(alpha: f64, eps: f64, n: usize, q: f64) -> f64 {
    (alpha - 1.0).powi(2) * (n as f64 * (q - 1.0) + eps) / (4.0 * alpha * (1.0 - eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!(close(harmonic_mean(&[2.0, 2.0, 2.0], 3).unwrap(), 2.0, 1e-12));
        assert!(close(harmonic_mean(&[2.0, 3.0, 4.0], 3).unwrap(), 36.0 / 13.0, 1e-12));
        assert!(close(harmonic_mean(&[2.0, 2.0], 2).unwrap(), 2.0, 1e-12));
        assert!(harmonic_mean(&[], 0).is_err());
        assert!(harmonic_mean(&[2.0, 0.0], 2).is_err());
        assert!(harmonic_mean(&[2.0, -1.0], 2).is_err());
    }

    #[test]
    fn sobolev_examples() {
        let e = ExponentData::new(vec![2.0, 3.0, 4.0]).unwrap();
        assert!(close(sobolev_exponent(&e).unwrap(), 36.0, 1e-12));
        let e = ExponentData::isotropic(2.0, 3).unwrap();
        assert!(close(sobolev_exponent(&e).unwrap(), 6.0, 1e-12));
        let e = ExponentData::new(vec![3.0, 3.0]).unwrap();
        assert!(matches!(
            sobolev_exponent(&e),
            Err(Error::UndefinedExponent { .. })
        ));
    }

    #[test]
    fn exponent_data_rejects_bad_vectors() {
        assert!(ExponentData::new(vec![]).is_err());
        assert!(ExponentData::new(vec![1.5, 3.0]).is_err());
        assert!(ExponentData::new(vec![4.0, 3.0]).is_err());
        assert!(ExponentData::new(vec![2.0, f64::NAN]).is_err());
    }

    #[test]
    fn window_examples() {
        let s = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 10.0, 10.0).unwrap();
        let (a, b) = beta_window(&s).unwrap();
        assert!(close(a, 0.5, 1e-12) && close(b, 7.0 / 3.0, 1e-12));

        let s = ProblemSpec::exp_singular(vec![2.0, 3.0, 4.0], 0.2).unwrap();
        let (a, b) = beta_window(&s).unwrap();
        assert!(close(a, 0.5, 1e-12) && close(b, 2.0 / 3.0, 1e-12));

        let s = ProblemSpec::mixed_power(vec![3.0, 3.0, 3.0], 3.0, 3.0).unwrap();
        let (a, b) = beta_window(&s).unwrap();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        assert!(!region_memberships(&s).beta_window_nonempty);
    }

    #[test]
    fn theta_examples_and_conjugacy() {
        let s = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 10.0, 10.0).unwrap();
        let beta = 7.0 / 3.0;
        let (t0, t0p) = theta_exponents(beta, &s, 0).unwrap();
        assert!(close(t0p, 50.0 / 33.0, 1e-12));
        assert!(close(1.0 / t0 + 1.0 / t0p, 1.0, 1e-12));
        let (t2, t2p) = theta_exponents(beta, &s, 2).unwrap();
        assert!(close(t2p, 50.0 / 39.0, 1e-12));
        assert!(close(1.0 / t2 + 1.0 / t2p, 1.0, 1e-12));
        let d = decay_exponents(beta, &s, Theorem::EqualExponents).unwrap();
        for (got, want) in d.iter().zip([-1.0 / 33.0, -7.0 / 6.0, -83.0 / 39.0]) {
            assert!(close(*got, want, 1e-12), "{d:?}");
        }
        assert!(matches!(
            theta_exponents(0.5, &s, 0),
            Err(Error::OutOfWindow { .. })
        ));
        assert!(theta_exponents(1.0, &s, 3).is_err());
    }

    #[test]
    fn symmetric_pair_is_two_two() {
        // 2b + q - p_i = s + p_i - 1 gives theta = theta' = 2.
        let (q, pi, s) = (3.0, 3.0, 4.0);
        let beta = (s + 2.0 * pi - 1.0 - q) / 2.0;
        let (t, tp) = conjugate_pair(beta, s, q, pi);
        assert!(close(t, 2.0, 1e-12) && close(tp, 2.0, 1e-12));
    }

    #[test]
    fn boundary_is_not_member() {
        let e = ExponentData::new(vec![2.0, 3.0, 4.0]).unwrap();
        let a = region_a(&e);
        assert!(!a.contains(4.5));
        assert!(a.contains(4.5 + 1e-6));
        let i = region_i(&e).unwrap();
        assert!(!i.contains(9.0));
        assert!(i.contains(9.001));
    }

    #[test]
    fn empty_i_when_denominator_nonpositive() {
        // N = 4, p = 2: p_i(N(q-1)+4) - N^2(q-1) = 2*8 - 16 = 0.
        let e = ExponentData::isotropic(2.0, 4).unwrap();
        assert_eq!(region_i_bound(&e, 0), None);
        assert!(region_i(&e).is_none());
        let s = ProblemSpec::new(Nonlinearity::MixedPower { delta: 50.0, gamma: 50.0 }, 1.0, e)
            .unwrap();
        let r = region_memberships(&s);
        assert_eq!(r.theorem_applicable, Theorem::None);
    }

    #[test]
    fn large_solution_theorem_needs_decay_limit() {
        // delta in A, gamma in I, but the window is set by delta = 5 and the
        // decay for p_1 = 2 stays positive there.
        let s = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 5.0, 10.0).unwrap();
        let r = region_memberships(&s);
        assert!(r.delta_in_a && r.gamma_in_i);
        assert!(!r.applicable.contains(&Theorem::LargeSolutions));
        assert!(!r.notes.is_empty());

        let s = ProblemSpec::mixed_power(vec![2.0, 3.0, 4.0], 10.0, 10.1).unwrap();
        let r = region_memberships(&s);
        assert_eq!(
            r.applicable,
            vec![Theorem::SmallSolutions, Theorem::LargeSolutions]
        );
        assert!(select_beta_for(&s, Theorem::LargeSolutions).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::mixed_power(vec![2.0, 3.0], -1.0, 2.0).is_err());
        assert!(ProblemSpec::mixed_power(vec![2.0, 3.0], 3.0, 2.0).is_err());
        assert!(ProblemSpec::exp_singular(vec![2.0, 3.0], 0.0).is_err());
        let e = ExponentData::new(vec![2.0]).unwrap();
        assert!(ProblemSpec::new(Nonlinearity::ExpSingular { cap: 1.0 }, 0.0, e).is_err());
    }

    #[test]
    fn integrability_examples() {
        let t = integrability_thresholds(&ExponentData::new(vec![2.0, 3.0, 4.0]).unwrap());
        assert!(close(t.m_exist.unwrap(), 36.0 / 35.0, 1e-12));
        assert!(close(t.m_bounded.unwrap(), 13.0 / 12.0, 1e-12));
        assert!(t.sobolev_dominates);
        let t = integrability_thresholds(&ExponentData::isotropic(2.0, 3).unwrap());
        assert!(close(t.m_exist.unwrap(), 1.2, 1e-12));
        assert!(close(t.m_bounded.unwrap(), 1.5, 1e-12));
        let t = integrability_thresholds(&ExponentData::new(vec![3.0, 4.0]).unwrap());
        assert!(t.m_exist.is_none());
        assert!(close(t.bounded_threshold_for(8.0).unwrap(), 2.0, 1e-12));
        assert!(t.bounded_threshold_for(4.0).is_err());
        assert!(t.bounded_for(1.01));
    }

    #[test]
    fn apriori_coefficient_limit() {
        let (alpha, n, q) = (5.0, 3, 3.0);
        let limit = n as f64 * (q - 1.0) * (alpha - 1.0f64).powi(2) / (4.0 * alpha);
        assert!(close(apriori_coefficient(alpha, 1e-12, n, q), limit, 1e-10));
        let mut prev = apriori_coefficient(alpha, 1e-6, n, q);
        for k in 1..100 {
            let c = apriori_coefficient(alpha, k as f64 / 100.0, n, q);
            assert!(c > prev);
            prev = c;
        }
    }
}
