//! Malliavin-weighted Greek estimators.
//!
//! Every Greek is `E[Φ(S_T) · weight]`, where the weight is a payoff-free
//! functional of the path accumulators (discount included). With
//!
//! ```text
//! C = ∫dW1/σ − (ρ12/μ1)∫dW2/σ + ((ρ12μ2 − ρ13μ1)/(μ1μ3))∫dW3/σ
//! ```
//!
//! the weights are
//!
//! ```text
//! delta   = e^{−D} C / (S0 T)
//! rho     = e^{−D} (C − T)
//! vega    = e^{−D} ((W1_T − ∫σ dt) C − ∫dt/σ) / T
//! vega_v0 = e^{−D} P2 / T
//! rho_r0  = e^{−D} (P3 / T − ∫(1 − t/T) Y33 dt)
//! ```
//!
//! `rho` is the sensitivity to a parallel shift of the asset drift and the
//! discount rate; `vega` to an additive shift of `σ(V)` in the asset
//! diffusion.

use serde::Serialize;

use crate::engine::{PathAccumulators, PathContext, PathSet};
use crate::error::{Error, Result};
use crate::model::{ModelInstance, Payoff};
use crate::stats::SampleStats;

/// Clamp fraction above which an estimate is flagged as unreliable.
pub const DEGENERATE_CLAMP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Malliavin,
    FdForward,
    FdBackward,
    FdCentral,
    Analytic,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Malliavin => "malliavin",
            Estimator::FdForward => "fd_forward",
            Estimator::FdBackward => "fd_backward",
            Estimator::FdCentral => "fd_central",
            Estimator::Analytic => "analytic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Greek {
    Price,
    Delta,
    Rho,
    Vega,
    /// Sensitivity to the initial variance.
    VegaV0,
    /// Sensitivity to the initial short rate.
    RhoR0,
    /// Variance drift shifted by `ε κ`.
    Kappa,
    /// Rate drift shifted by `ε a`.
    ReversionSpeed,
}

impl Greek {
    pub const ALL: [Greek; 8] = [
        Greek::Price,
        Greek::Delta,
        Greek::Rho,
        Greek::Vega,
        Greek::VegaV0,
        Greek::RhoR0,
        Greek::Kappa,
        Greek::ReversionSpeed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Greek::Price => "price",
            Greek::Delta => "delta",
            Greek::Rho => "rho",
            Greek::Vega => "vega",
            Greek::VegaV0 => "vega_v0",
            Greek::RhoR0 => "rho_r0",
            Greek::Kappa => "kappa",
            Greek::ReversionSpeed => "reversion_speed",
        }
    }

    pub fn parse(s: &str) -> Option<Greek> {
        Greek::ALL.into_iter().find(|g| g.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreekEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub estimator: Estimator,
    /// Finite-difference runs that shared random numbers.
    pub crn: bool,
    pub clamp_count: u64,
    /// More than 1% of divisor evaluations were floored.
    pub degenerate_weight: bool,
}

/// Payoff evaluated on the terminal asset price.
pub trait TerminalPayoff: Sync {
    fn value(&self, s_t: f64) -> f64;
}

impl TerminalPayoff for Payoff {
    #[inline]
    fn value(&self, s_t: f64) -> f64 {
        self.evaluate(s_t)
    }
}

/// Adapts a closure into a [`TerminalPayoff`].
pub struct FnPayoff<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> TerminalPayoff for FnPayoff<F> {
    #[inline]
    fn value(&self, s_t: f64) -> f64 {
        (self.0)(s_t)
    }
}

/// Per-path Malliavin weights, discount included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightBundle {
    pub discount: f64,
    pub combination: f64,
    pub delta: f64,
    pub rho: f64,
    pub vega: f64,
    pub vega_v0: f64,
    pub rho_r0: f64,
}

#[inline]
fn combination(p: &PathAccumulators, ctx: &PathContext) -> f64 {
    let rho = ctx.correlations;
    let mu = ctx.mixing;
    p.inv_vol_w1 - rho.rho12 / mu.mu1 * p.inv_vol_w2
        + (rho.rho12 * mu.mu2 - rho.rho13 * mu.mu1) / (mu.mu1 * mu.mu3) * p.inv_vol_w3
}

impl WeightBundle {
    pub fn new(p: &PathAccumulators, ctx: &PathContext) -> Self {
        let t = ctx.maturity;
        let discount = p.discount();
        let c = combination(p, ctx);
        Self {
            discount,
            combination: c,
            delta: discount * c / (ctx.s0 * t),
            rho: discount * (c - t),
            vega: discount * ((p.w1_t - p.vol_integral) * c - p.inv_vol_integral) / t,
            vega_v0: discount * p.bismut_v0 / t,
            rho_r0: discount * (p.bismut_r0 / t - p.rate_adjustment),
        }
    }
}

pub fn weight_bundles(paths: &PathSet) -> Vec<WeightBundle> {
    paths.paths.iter().map(|p| WeightBundle::new(p, &paths.context)).collect()
}

fn estimate<P, W>(paths: &PathSet, payoff: &P, weight: W) -> Result<GreekEstimate>
where
    P: TerminalPayoff + ?Sized,
    W: Fn(&PathAccumulators) -> f64,
{
    let samples: Vec<f64> = paths.paths.iter().map(|p| payoff.value(p.s_t) * weight(p)).collect();
    let stats = SampleStats::from_samples(&samples)?;
    Ok(GreekEstimate {
        value: stats.mean,
        std_error: stats.std_error,
        n_paths: stats.n,
        estimator: Estimator::Malliavin,
        crn: false,
        clamp_count: paths.total_clamps(),
        degenerate_weight: paths.clamp_fraction() > DEGENERATE_CLAMP_FRACTION,
    })
}

/// Discounted payoff mean.
pub fn price<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<GreekEstimate> {
    estimate(paths, payoff, PathAccumulators::discount)
}

pub fn delta<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<GreekEstimate> {
    let ctx = paths.context;
    estimate(paths, payoff, |p| WeightBundle::new(p, &ctx).delta)
}

/// Sensitivity to a shift `ε` added to both the asset drift and the
/// discount rate.
pub fn rho<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<GreekEstimate> {
    let ctx = paths.context;
    estimate(paths, payoff, |p| WeightBundle::new(p, &ctx).rho)
}

/// Sensitivity to `σ(V) → σ(V) + ε` in the asset diffusion.
pub fn vega<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<GreekEstimate> {
    let ctx = paths.context;
    estimate(paths, payoff, |p| WeightBundle::new(p, &ctx).vega)
}

/// Gradient of the price in `(S0, V0, r0)` from the Bismut weight vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BismutGradient {
    pub delta: GreekEstimate,
    pub vega_v0: GreekEstimate,
    pub rho_r0: GreekEstimate,
}

pub fn bismut_vector<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<BismutGradient> {
    Ok(BismutGradient {
        delta: delta(paths, payoff)?,
        vega_v0: vega_v0(paths, payoff)?,
        rho_r0: rho_r0(paths, payoff)?,
    })
}

pub fn vega_v0<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<GreekEstimate> {
    if paths.context.degeneracy.variance {
        return Err(Error::DegenerateModel("initial-variance weight needs 1/v(V)".into()));
    }
    let ctx = paths.context;
    estimate(paths, payoff, |p| WeightBundle::new(p, &ctx).vega_v0)
}

pub fn rho_r0<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P) -> Result<GreekEstimate> {
    if paths.context.degeneracy.rate {
        return Err(Error::DegenerateModel("initial-rate weight needs 1/g(r)".into()));
    }
    let ctx = paths.context;
    estimate(paths, payoff, |p| WeightBundle::new(p, &ctx).rho_r0)
}

/// Direction of a drift perturbation `β → β + ε γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    /// `γ = (S, 0, 0)`, discount shifted alongside; same as [`rho`].
    StockShift,
    /// `γ = (0, κ, 0)`
    Kappa,
    /// `γ = (0, 0, a)`
    ReversionSpeed,
}

/// Sensitivity to a drift perturbation, weighted by `∫ (a⁻¹γ)ᵀ dW`.
///
/// For the variance and rate directions the discount follows the perturbed
/// rate path, so the Girsanov weight already carries its response.
pub fn drift_sensitivity<P: TerminalPayoff + ?Sized>(
    paths: &PathSet,
    payoff: &P,
    kind: DriftKind,
) -> Result<GreekEstimate> {
    let ctx = paths.context;
    let params = match (kind, ctx.instance) {
        (DriftKind::StockShift, _) => return rho(paths, payoff),
        (_, ModelInstance::HestonVasicek(p)) => p,
        (DriftKind::Kappa, _) => return Err(Error::UnsupportedModel("kappa sensitivity".into())),
        (DriftKind::ReversionSpeed, _) => {
            return Err(Error::UnsupportedModel("reversion-speed sensitivity".into()))
        }
    };
    let mu = ctx.mixing;
    match kind {
        DriftKind::Kappa => {
            let w3 = mu.mu2 / (mu.mu1 * mu.mu3);
            estimate(paths, payoff, |p| {
                p.discount() * params.kappa * (p.inv_vdiff_w2 / mu.mu1 - w3 * p.inv_vdiff_w3)
            })
        }
        DriftKind::ReversionSpeed => {
            estimate(paths, payoff, |p| p.discount() * params.a / mu.mu3 * p.inv_rdiff_w3)
        }
        DriftKind::StockShift => unreachable!(),
    }
}

/// Dispatches a Malliavin estimator by Greek.
pub fn malliavin<P: TerminalPayoff + ?Sized>(paths: &PathSet, payoff: &P, greek: Greek) -> Result<GreekEstimate> {
    match greek {
        Greek::Price => price(paths, payoff),
        Greek::Delta => delta(paths, payoff),
        Greek::Rho => rho(paths, payoff),
        Greek::Vega => vega(paths, payoff),
        Greek::VegaV0 => vega_v0(paths, payoff),
        Greek::RhoR0 => rho_r0(paths, payoff),
        Greek::Kappa => drift_sensitivity(paths, payoff, DriftKind::Kappa),
        Greek::ReversionSpeed => drift_sensitivity(paths, payoff, DriftKind::ReversionSpeed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate_paths, SimConfig};
    use crate::model::{black_scholes_degenerate, InitialState};

    fn bs_paths(n: usize) -> PathSet {
        let m = black_scholes_degenerate(0.2, 0.05).unwrap();
        let init = InitialState::new(100.0, 0.04, 0.05).unwrap();
        simulate_paths(&m, &init, &SimConfig { n_paths: n, n_steps: 16, ..SimConfig::default() }).unwrap()
    }

    #[test]
    fn constant_payoff_price_is_deterministic_discount() {
        let paths = bs_paths(200);
        let est = price(&paths, &Payoff::Constant { level: 1.0 }).unwrap();
        assert!((est.value - 0.951_229_424_500_714).abs() < 1e-14);
        assert!(est.std_error < 1e-15);
        assert_eq!(est.estimator, Estimator::Malliavin);
    }

    #[test]
    fn empty_input() {
        let paths = bs_paths(10).prefix(0);
        assert_eq!(price(&paths, &Payoff::Identity), Err(Error::EmptyInput));
        assert_eq!(delta(&paths, &Payoff::Identity), Err(Error::EmptyInput));
    }

    #[test]
    fn degenerate_refusals() {
        let paths = bs_paths(10);
        let call = Payoff::Call { strike: 100.0 };
        assert!(matches!(vega_v0(&paths, &call), Err(Error::DegenerateModel(_))));
        assert!(matches!(rho_r0(&paths, &call), Err(Error::DegenerateModel(_))));
        assert!(matches!(bismut_vector(&paths, &call), Err(Error::DegenerateModel(_))));
        assert!(matches!(
            drift_sensitivity(&paths, &call, DriftKind::Kappa),
            Err(Error::UnsupportedModel(_))
        ));
        assert!(delta(&paths, &call).is_ok() && rho(&paths, &call).is_ok() && vega(&paths, &call).is_ok());
    }

    #[test]
    fn stock_shift_is_rho() {
        let paths = bs_paths(100);
        let call = Payoff::Call { strike: 95.0 };
        assert_eq!(drift_sensitivity(&paths, &call, DriftKind::StockShift), rho(&paths, &call));
    }

    #[test]
    fn rho_weight_identity() {
        let paths = bs_paths(100);
        for w in weight_bundles(&paths) {
            let rhs = paths.context.maturity * (paths.context.s0 * w.delta - w.discount);
            assert!((w.rho - rhs).abs() <= 1e-12 * w.rho.abs().max(1.0));
        }
    }

    #[test]
    fn greek_names_round_trip() {
        for g in Greek::ALL {
            assert_eq!(Greek::parse(g.name()), Some(g));
        }
        assert_eq!(Greek::parse("gamma"), None);
    }
}
