//! Hybrid stochastic-volatility model family.
//!
//! The asset, variance and short rate follow
//!
//! ```text
//! dS = r S dt + S sigma(V) dZ1
//! dV = u(V) dt + v(V) dZ2
//! dr = f(r) dt + g(r) dZ3
//! ```
//!
//! with correlated drivers `Z` written as a lower-triangular combination of
//! three independent Brownian motions `W` (see [`MixingCoefficients`]).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairwise correlations of the drivers `(Z1, Z2, Z3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTriple {
    pub rho12: f64,
    pub rho13: f64,
    pub rho23: f64,
}

impl CorrelationTriple {
    pub fn new(rho12: f64, rho13: f64, rho23: f64) -> Result<Self> {
        let c = Self { rho12, rho13, rho23 };
        c.check_bounds()?;
        Ok(c)
    }

    pub const fn zero() -> Self {
        Self { rho12: 0.0, rho13: 0.0, rho23: 0.0 }
    }

    fn check_bounds(&self) -> Result<()> {
        for (name, x) in [("rho12", self.rho12), ("rho13", self.rho13), ("rho23", self.rho23)] {
            if !(x > -1.0 && x < 1.0) {
                return Err(Error::params(format!("{name} must lie in (-1, 1), got {x}")));
            }
        }
        Ok(())
    }

    /// Radicand of the third loading; negative means the matrix is not PSD.
    pub fn radicand(&self) -> f64 {
        let (a, b, c) = (self.rho12, self.rho13, self.rho23);
        1.0 - a * a - b * b - c * c + 2.0 * a * b * c
    }
}

/// Loadings of `W2`, `W3` in
///
/// ```text
/// dZ2 = rho12 dW1 + mu1 dW2
/// dZ3 = rho13 dW1 + mu2 dW2 + mu3 dW3
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingCoefficients {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

/// Sign branch of `rho13`, which the loadings alone only fix up to sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rho13Sign {
    NonNegative,
    Negative,
}

impl Rho13Sign {
    pub fn of(rho13: f64) -> Self {
        if rho13 < 0.0 {
            Rho13Sign::Negative
        } else {
            Rho13Sign::NonNegative
        }
    }
}

/// Decomposes correlated drivers onto independent ones.
///
/// Fails with [`Error::NonPositiveSemiDefinite`] unless `mu3` is real and
/// strictly positive.
pub fn mixing_from_correlations(rho: &CorrelationTriple) -> Result<MixingCoefficients> {
    rho.check_bounds()?;
    let radicand = rho.radicand();
    if !(radicand > 0.0) {
        return Err(Error::NonPositiveSemiDefinite { radicand });
    }
    let mu1 = (1.0 - rho.rho12 * rho.rho12).sqrt();
    let mu2 = (rho.rho23 - rho.rho12 * rho.rho13) / mu1;
    let mu3 = radicand.sqrt() / mu1;
    Ok(MixingCoefficients { mu1, mu2, mu3 })
}

/// Inverse of [`mixing_from_correlations`] on the given `rho13` sign branch.
pub fn reconstruct_correlations(
    mu: &MixingCoefficients,
    rho12: f64,
    rho13_sign: Rho13Sign,
) -> CorrelationTriple {
    let magnitude = (1.0 - mu.mu2 * mu.mu2 - mu.mu3 * mu.mu3).max(0.0).sqrt();
    let rho13 = match rho13_sign {
        Rho13Sign::NonNegative => magnitude,
        Rho13Sign::Negative => -magnitude,
    };
    CorrelationTriple { rho12, rho13, rho23: rho12 * rho13 + mu.mu1 * mu.mu2 }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar coefficient function together with its first derivative.
#[derive(Clone)]
pub struct Coefficient {
    value: ScalarFn,
    derivative: ScalarFn,
}

impl Coefficient {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), derivative: Arc::new(derivative) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// Relative error between the supplied derivative and a central
    /// difference with step `1e-6 * max(1, |x|)`.
    pub fn derivative_error(&self, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        let fd = (self.eval(x + h) - self.eval(x - h)) / (2.0 * h);
        let exact = self.deriv(x);
        (fd - exact).abs() / exact.abs().max(1.0)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Coefficient(..)")
    }
}

/// Heston variance with Vasicek short rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonVasicekParams {
    /// Mean-reversion speed of the variance.
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Volatility of variance.
    pub sigma_vol: f64,
    /// Mean-reversion speed of the rate.
    pub a: f64,
    /// Long-run rate.
    pub b: f64,
    /// Rate volatility.
    pub k: f64,
}

/// Which positivity inequality guards the variance process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityCondition {
    /// `kappa * theta >= sigma_vol^2`
    #[default]
    Novikov,
    /// `2 * kappa * theta >= sigma_vol^2`
    Feller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityCheck {
    pub condition: PositivityCondition,
    /// Reject the model on violation; otherwise log a warning.
    pub strict: bool,
}

impl Default for PositivityCheck {
    fn default() -> Self {
        Self { condition: PositivityCondition::Novikov, strict: true }
    }
}

impl HestonVasicekParams {
    pub fn validate(&self, check: PositivityCheck) -> Result<()> {
        for (name, x) in [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("sigma_vol", self.sigma_vol),
            ("a", self.a),
            ("b", self.b),
            ("k", self.k),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::params(format!("{name} must be positive, got {x}")));
            }
        }
        let lhs = match check.condition {
            PositivityCondition::Novikov => self.kappa * self.theta,
            PositivityCondition::Feller => 2.0 * self.kappa * self.theta,
        };
        let rhs = self.sigma_vol * self.sigma_vol;
        if lhs < rhs {
            let msg = format!("{:?} positivity condition violated: {lhs} < {rhs}", check.condition);
            if check.strict {
                return Err(Error::params(msg));
            }
            log::warn!("{msg}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub s0: f64,
    pub v0: f64,
    pub r0: f64,
}

impl InitialState {
    pub fn new(s0: f64, v0: f64, r0: f64) -> Result<Self> {
        let init = Self { s0, v0, r0 };
        init.validate()?;
        Ok(init)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::params(format!("s0 must be positive, got {}", self.s0)));
        }
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return Err(Error::params(format!("v0 must be positive, got {}", self.v0)));
        }
        if !self.r0.is_finite() {
            return Err(Error::params("r0 must be finite"));
        }
        Ok(())
    }
}

/// Concrete instance a [`ModelSpec`] was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelInstance {
    HestonVasicek(HestonVasicekParams),
    BlackScholes { sigma: f64, rate: f64 },
    Custom,
}

/// Components whose diffusion coefficient vanishes identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Degeneracy {
    pub variance: bool,
    pub rate: bool,
}

impl Degeneracy {
    pub fn any(&self) -> bool {
        self.variance || self.rate
    }
}

/// Coefficient functions, correlations and derived loadings of one model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    /// Stock volatility as a function of variance.
    pub sigma: Coefficient,
    /// Variance drift.
    pub variance_drift: Coefficient,
    /// Variance diffusion.
    pub variance_diffusion: Coefficient,
    /// Rate drift.
    pub rate_drift: Coefficient,
    /// Rate diffusion.
    pub rate_diffusion: Coefficient,
    pub correlations: CorrelationTriple,
    pub mixing: MixingCoefficients,
    pub degeneracy: Degeneracy,
    pub instance: ModelInstance,
}

impl ModelSpec {
    /// Builds a custom model. `probes` are points in the model's domain where
    /// every supplied derivative is checked against central differences.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        sigma: Coefficient,
        variance_drift: Coefficient,
        variance_diffusion: Coefficient,
        rate_drift: Coefficient,
        rate_diffusion: Coefficient,
        correlations: CorrelationTriple,
        degeneracy: Degeneracy,
        probes: &[f64],
    ) -> Result<Self> {
        let mixing = mixing_from_correlations(&correlations)?;
        let spec = Self {
            sigma,
            variance_drift,
            variance_diffusion,
            rate_drift,
            rate_diffusion,
            correlations,
            mixing,
            degeneracy,
            instance: ModelInstance::Custom,
        };
        spec.check_derivatives(probes, 1e-6)?;
        spec.check_ellipticity(probes);
        Ok(spec)
    }

    /// Verifies every derivative against central differences at `probes`.
    pub fn check_derivatives(&self, probes: &[f64], tol: f64) -> Result<()> {
        let named = [
            ("sigma", &self.sigma),
            ("variance_drift", &self.variance_drift),
            ("variance_diffusion", &self.variance_diffusion),
            ("rate_drift", &self.rate_drift),
            ("rate_diffusion", &self.rate_diffusion),
        ];
        for (name, c) in named {
            for &x in probes {
                let err = c.derivative_error(x);
                if !(err <= tol) {
                    return Err(Error::params(format!(
                        "{name} derivative inconsistent at {x} (relative error {err:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Logs a warning for every probe point where the diffusion matrix loses
    /// rank. The check is advisory; degenerate specs always warn.
    pub fn check_ellipticity(&self, probes: &[f64]) -> bool {
        let mut ok = true;
        for &x in probes {
            let diag = [
                self.sigma.eval(x),
                self.mixing.mu1 * self.variance_diffusion.eval(x),
                self.mixing.mu3 * self.rate_diffusion.eval(x),
            ];
            if diag.iter().any(|d| *d == 0.0 || !d.is_finite()) {
                ok = false;
                log::warn!("diffusion matrix is singular at probe {x}: diagonal {diag:?}");
            }
        }
        ok
    }

    pub fn heston_vasicek_params(&self) -> Option<HestonVasicekParams> {
        match self.instance {
            ModelInstance::HestonVasicek(p) => Some(p),
            _ => None,
        }
    }
}

/// Heston variance with a Vasicek short rate.
pub fn heston_vasicek_model(
    p: &HestonVasicekParams,
    rho: &CorrelationTriple,
    check: PositivityCheck,
) -> Result<ModelSpec> {
    p.validate(check)?;
    let mixing = mixing_from_correlations(rho)?;
    let HestonVasicekParams { kappa, theta, sigma_vol, a, b, k } = *p;
    Ok(ModelSpec {
        sigma: Coefficient::new(|v| v.max(0.0).sqrt(), |v| 0.5 / v.max(f64::MIN_POSITIVE).sqrt()),
        variance_drift: Coefficient::new(move |v| kappa * (theta - v), move |_| -kappa),
        variance_diffusion: Coefficient::new(
            move |v| sigma_vol * v.max(0.0).sqrt(),
            move |v| 0.5 * sigma_vol / v.max(f64::MIN_POSITIVE).sqrt(),
        ),
        rate_drift: Coefficient::new(move |r| a * (b - r), move |_| -a),
        rate_diffusion: Coefficient::constant(k),
        correlations: *rho,
        mixing,
        degeneracy: Degeneracy::default(),
        instance: ModelInstance::HestonVasicek(*p),
    })
}

/// Geometric Brownian motion with constant rate, embedded in the hybrid
/// family with vanishing variance and rate dynamics.
///
/// The simulated rate is the initial rate, which must equal `rate`.
pub fn black_scholes_degenerate(sigma: f64, rate: f64) -> Result<ModelSpec> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::params(format!("sigma must be positive, got {sigma}")));
    }
    if !rate.is_finite() {
        return Err(Error::params("rate must be finite"));
    }
    let correlations = CorrelationTriple::zero();
    Ok(ModelSpec {
        sigma: Coefficient::constant(sigma),
        variance_drift: Coefficient::constant(0.0),
        variance_diffusion: Coefficient::constant(0.0),
        rate_drift: Coefficient::constant(0.0),
        rate_diffusion: Coefficient::constant(0.0),
        correlations,
        mixing: mixing_from_correlations(&correlations)?,
        degeneracy: Degeneracy { variance: true, rate: true },
        instance: ModelInstance::BlackScholes { sigma, rate },
    })
}

/// European payoff evaluated on the terminal asset price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    /// Pays 1 when `s_T > strike`; the kink itself pays 0.
    DigitalCall { strike: f64 },
    Constant { level: f64 },
    Identity,
}

impl Payoff {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Payoff::Call { strike } | Payoff::Put { strike } | Payoff::DigitalCall { strike } => {
                if !(strike >= 0.0 && strike.is_finite()) {
                    return Err(Error::params(format!("strike must be >= 0, got {strike}")));
                }
            }
            Payoff::Constant { level } if !level.is_finite() => {
                return Err(Error::params("constant payoff level must be finite"));
            }
            _ => {}
        }
        Ok(())
    }

    #[inline]
    pub fn evaluate(&self, s_t: f64) -> f64 {
        evaluate_payoff(self, s_t)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payoff::Call { .. } => "call",
            Payoff::Put { .. } => "put",
            Payoff::DigitalCall { .. } => "digital_call",
            Payoff::Constant { .. } => "constant",
            Payoff::Identity => "identity",
        }
    }
}

#[inline]
pub fn evaluate_payoff(p: &Payoff, s_t: f64) -> f64 {
    match *p {
        Payoff::Call { strike } => (s_t - strike).max(0.0),
        Payoff::Put { strike } => (strike - s_t).max(0.0),
        Payoff::DigitalCall { strike } => {
            if s_t > strike {
                1.0
            } else {
                0.0
            }
        }
        Payoff::Constant { level } => level,
        Payoff::Identity => s_t,
    }
}
