//! Finite-difference Greeks and the closed-form Black-Scholes oracle.

use std::f64::consts::{PI, SQRT_2};

use crate::engine::{simulate_paths_with, Perturbation, SimConfig};
use crate::error::{Error, Result};
use crate::greeks::{Estimator, Greek, GreekEstimate, TerminalPayoff};
use crate::model::{black_scholes_degenerate, InitialState, ModelInstance, ModelSpec};
use crate::rng::PhiloxNormals;
use crate::stats::SampleStats;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsCall {
    pub price: f64,
    pub delta: f64,
    pub vega: f64,
    pub rho: f64,
    /// Delta of a unit digital call.
    pub digital_delta: f64,
}

/// Black-Scholes European call and its first-order sensitivities.
pub fn bs_closed_form(s0: f64, strike: f64, rate: f64, sigma: f64, maturity: f64) -> Result<BsCall> {
    for (name, x) in [("s0", s0), ("strike", strike), ("sigma", sigma), ("maturity", maturity)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::params(format!("{name} must be positive, got {x}")));
        }
    }
    if !rate.is_finite() {
        return Err(Error::params("rate must be finite"));
    }
    let sqrt_t = maturity.sqrt();
    let d1 = ((s0 / strike).ln() + (rate + 0.5 * sigma * sigma) * maturity) / (sigma * sqrt_t);
    let d2 = d1 - sigma * sqrt_t;
    let df = (-rate * maturity).exp();
    Ok(BsCall {
        price: s0 * norm_cdf(d1) - strike * df * norm_cdf(d2),
        delta: norm_cdf(d1),
        vega: s0 * sqrt_t * norm_pdf(d1),
        rho: strike * maturity * df * norm_cdf(d2),
        digital_delta: df * norm_pdf(d2) / (s0 * sigma * sqrt_t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BumpTarget {
    S0,
    V0,
    R0,
    /// Parallel shift of the asset drift and the discount rate.
    RhoShiftEpsilon,
    /// Additive shift of `σ(V)` in the asset diffusion.
    VegaShiftEpsilon,
    /// Variance drift shifted by `ε κ`.
    KappaEpsilon,
    /// Rate drift shifted by `ε a`.
    ReversionEpsilon,
}

impl BumpTarget {
    pub const ALL: [BumpTarget; 7] = [
        BumpTarget::S0,
        BumpTarget::V0,
        BumpTarget::R0,
        BumpTarget::RhoShiftEpsilon,
        BumpTarget::VegaShiftEpsilon,
        BumpTarget::KappaEpsilon,
        BumpTarget::ReversionEpsilon,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BumpTarget::S0 => "s0",
            BumpTarget::V0 => "v0",
            BumpTarget::R0 => "r0",
            BumpTarget::RhoShiftEpsilon => "rho_shift_epsilon",
            BumpTarget::VegaShiftEpsilon => "vega_shift_epsilon",
            BumpTarget::KappaEpsilon => "kappa_epsilon",
            BumpTarget::ReversionEpsilon => "reversion_epsilon",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// The Greek this bump estimates.
    pub fn greek(&self) -> Greek {
        match self {
            BumpTarget::S0 => Greek::Delta,
            BumpTarget::V0 => Greek::VegaV0,
            BumpTarget::R0 => Greek::RhoR0,
            BumpTarget::RhoShiftEpsilon => Greek::Rho,
            BumpTarget::VegaShiftEpsilon => Greek::Vega,
            BumpTarget::KappaEpsilon => Greek::Kappa,
            BumpTarget::ReversionEpsilon => Greek::ReversionSpeed,
        }
    }

    pub fn for_greek(greek: Greek) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.greek() == greek)
    }

    fn base_value(&self, init: &InitialState) -> f64 {
        match self {
            BumpTarget::S0 => init.s0,
            BumpTarget::V0 => init.v0,
            BumpTarget::R0 => init.r0,
            _ => 0.0,
        }
    }

    /// Default step: 1% of the base for `s0` and `v0`, `1e-4` otherwise.
    pub fn default_step(&self, init: &InitialState) -> f64 {
        match self {
            BumpTarget::S0 | BumpTarget::V0 => 0.01 * self.base_value(init),
            _ => 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FdScheme {
    Forward,
    Backward,
    Central,
}

impl FdScheme {
    pub fn name(&self) -> &'static str {
        match self {
            FdScheme::Forward => "forward",
            FdScheme::Backward => "backward",
            FdScheme::Central => "central",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [FdScheme::Forward, FdScheme::Backward, FdScheme::Central].into_iter().find(|x| x.name() == s)
    }

    pub fn estimator(&self) -> Estimator {
        match self {
            FdScheme::Forward => Estimator::FdForward,
            FdScheme::Backward => Estimator::FdBackward,
            FdScheme::Central => Estimator::FdCentral,
        }
    }

    /// Offsets (in units of `h`) and their difference coefficients.
    fn stencil(&self) -> [(f64, f64); 2] {
        match self {
            FdScheme::Forward => [(1.0, 1.0), (0.0, -1.0)],
            FdScheme::Backward => [(0.0, 1.0), (-1.0, -1.0)],
            FdScheme::Central => [(1.0, 0.5), (-1.0, -0.5)],
        }
    }

    /// Simulations a bump-and-revalue estimate of this scheme runs.
    pub fn simulations(&self) -> usize {
        2
    }
}

/// Difference quotient of an arbitrary evaluator.
pub fn finite_difference(scheme: FdScheme, x: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    scheme.stencil().iter().map(|&(off, coef)| coef * f(x + off * h)).sum::<f64>() / h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub target: BumpTarget,
    pub scheme: FdScheme,
    pub h: f64,
    /// Reuse identical random-number keys for every evaluation.
    pub crn: bool,
}

impl BumpSpec {
    pub fn validate(&self, init: &InitialState) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidBump(format!("step must be positive, got {}", self.h)));
        }
        let base = self.target.base_value(init);
        if base != 0.0 && self.h >= 0.5 * base.abs() {
            return Err(Error::InvalidBump(format!(
                "step {} too large for {} = {base}",
                self.h,
                self.target.name()
            )));
        }
        Ok(())
    }

    /// Label such as `fd_central_crn`.
    pub fn label(&self) -> String {
        let base = self.scheme.estimator().name();
        if self.crn {
            format!("{base}_crn")
        } else {
            base.to_string()
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Discounted payoff samples of every stencil evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSamples {
    pub bump: BumpSpec,
    /// `(coefficient / h, per-path discounted payoffs)` per evaluation.
    pub evaluations: Vec<(f64, Vec<f64>)>,
    pub clamp_count: u64,
}

impl FdSamples {
    pub fn n_paths(&self) -> usize {
        self.evaluations.first().map_or(0, |e| e.1.len())
    }

    /// Estimate from the first `n` paths of every evaluation.
    pub fn estimate(&self, n: usize) -> Result<GreekEstimate> {
        let n = n.min(self.n_paths());
        let (value, std_error) = if self.bump.crn {
            let diffs: Vec<f64> = (0..n)
                .map(|i| self.evaluations.iter().map(|(w, xs)| w * xs[i]).sum())
                .collect();
            let s = SampleStats::from_samples(&diffs)?;
            (s.mean, s.std_error)
        } else {
            let mut value = 0.0;
            let mut var = 0.0;
            for (w, xs) in &self.evaluations {
                let s = SampleStats::from_samples(&xs[..n])?;
                value += w * s.mean;
                var += (w * s.std_error).powi(2);
            }
            (value, var.sqrt())
        };
        Ok(GreekEstimate {
            value,
            std_error,
            n_paths: n,
            estimator: self.bump.scheme.estimator(),
            crn: self.bump.crn,
            clamp_count: self.clamp_count,
            degenerate_weight: false,
        })
    }
}

/// Runs the stencil simulations of a bump and keeps their samples.
pub fn fd_samples<P: TerminalPayoff + ?Sized>(
    model: &ModelSpec,
    init: &InitialState,
    cfg: &SimConfig,
    payoff: &P,
    bump: &BumpSpec,
) -> Result<FdSamples> {
    bump.validate(init)?;
    let needs_hv = matches!(bump.target, BumpTarget::KappaEpsilon | BumpTarget::ReversionEpsilon);
    let hv = model.heston_vasicek_params();
    if needs_hv && hv.is_none() {
        return Err(Error::UnsupportedModel(format!("{} bump", bump.target.name())));
    }
    let mut evaluations = Vec::with_capacity(2);
    let mut clamp_count = 0;
    for (k, (offset, coef)) in bump.scheme.stencil().into_iter().enumerate() {
        let eps = offset * bump.h;
        let mut bumped_init = *init;
        let mut pert = Perturbation::default();
        let mut bumped_model = None;
        match bump.target {
            BumpTarget::S0 => bumped_init.s0 += eps,
            BumpTarget::V0 => bumped_init.v0 += eps,
            BumpTarget::R0 => {
                bumped_init.r0 += eps;
                if let ModelInstance::BlackScholes { sigma, rate } = model.instance {
                    bumped_model = Some(black_scholes_degenerate(sigma, rate + eps)?);
                }
            }
            BumpTarget::RhoShiftEpsilon => pert.stock_drift = eps,
            BumpTarget::VegaShiftEpsilon => pert.stock_vol = eps,
            BumpTarget::KappaEpsilon => pert.variance_drift = eps * hv.map_or(0.0, |p| p.kappa),
            BumpTarget::ReversionEpsilon => pert.rate_drift = eps * hv.map_or(0.0, |p| p.a),
        }
        let seed = if bump.crn { cfg.seed } else { splitmix64(cfg.seed ^ splitmix64(k as u64 + 1)) };
        let run_cfg = SimConfig { seed, ..*cfg };
        let set = simulate_paths_with(
            bumped_model.as_ref().unwrap_or(model),
            &bumped_init,
            &run_cfg,
            &pert,
            &PhiloxNormals::new(seed),
        )?;
        clamp_count += set.total_clamps();
        let samples = set.paths.iter().map(|p| p.discount() * payoff.value(p.s_t)).collect();
        evaluations.push((coef / bump.h, samples));
    }
    Ok(FdSamples { bump: *bump, evaluations, clamp_count })
}

/// Bump-and-revalue Greek.
pub fn fd_greek<P: TerminalPayoff + ?Sized>(
    model: &ModelSpec,
    init: &InitialState,
    cfg: &SimConfig,
    payoff: &P,
    bump: &BumpSpec,
) -> Result<GreekEstimate> {
    fd_samples(model, init, cfg, payoff, bump)?.estimate(cfg.n_paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Payoff;

    #[test]
    fn central_exact_on_quadratic() {
        let d = finite_difference(FdScheme::Central, 3.0, 0.01, |x| x * x);
        assert!((d - 6.0).abs() < 1e-12);
        let f = finite_difference(FdScheme::Forward, 3.0, 0.01, |x| x * x);
        assert!((f - 6.01).abs() < 1e-10);
        let b = finite_difference(FdScheme::Backward, 3.0, 0.01, |x| x * x);
        assert!((b - 5.99).abs() < 1e-10);
    }

    #[test]
    fn norm_cdf_accuracy() {
        // 30-digit reference values
        let table = [
            (-8.0, 6.220_960_574_271_784e-16),
            (-3.5, 2.326_290_790_355_250_3e-4),
            (-1.0, 0.158_655_253_931_457_05),
            (-0.1, 0.460_172_162_722_971),
            (0.0, 0.5),
            (0.35, 0.636_830_651_175_619_1),
            (1.2, 0.884_930_329_778_291_7),
            (2.5, 0.993_790_334_674_223_8),
            (6.0, 0.999_999_999_013_412_4),
        ];
        for (x, want) in table {
            assert!((norm_cdf(x) - want).abs() <= 1e-12, "x = {x}: {}", norm_cdf(x) - want);
        }
    }

    #[test]
    fn reference_call() {
        let bs = bs_closed_form(100.0, 100.0, 0.05, 0.2, 1.0).unwrap();
        assert!((bs.price - 10.450_583_572_185_565).abs() < 1e-10);
        assert!((bs.delta - 0.636_830_651_175_619).abs() < 1e-12);
        assert!((bs.vega - 37.524_034_691_693_79).abs() < 1e-9);
        assert!((bs.rho - 53.232_481_545_376_345).abs() < 1e-9);
        assert!((bs.digital_delta - 0.018_762_017_345_846_89).abs() < 1e-13);
    }

    #[test]
    fn price_by_quadrature() {
        // trapezoid over the standard-normal driver of the terminal price
        let (s0, k, r, sig) = (100.0, 100.0, 0.05, 0.2);
        let n = 400_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / n as f64;
        let integrand = |z: f64| {
            let st = s0 * ((r - 0.5 * sig * sig) + sig * z).exp();
            (-r).exp() * (st - k).max(0.0) * norm_pdf(z)
        };
        let mut sum = 0.5 * (integrand(lo) + integrand(hi));
        for i in 1..n {
            sum += integrand(lo + i as f64 * h);
        }
        let bs = bs_closed_form(s0, k, r, sig, 1.0).unwrap();
        assert!((sum * h - bs.price).abs() < 1e-7);
    }

    #[test]
    fn forward_limit_and_parity() {
        let bs = bs_closed_form(100.0, 1e-12, 0.05, 0.2, 1.0).unwrap();
        assert!((bs.price - 100.0).abs() < 1e-9);
        assert!((bs.delta - 1.0).abs() < 1e-12);
        // put by parity vs put by direct formula
        let (s0, k, r, sig, t) = (100.0, 110.0, 0.03, 0.25, 2.0);
        let call = bs_closed_form(s0, k, r, sig, t).unwrap();
        let put_parity = call.price - (s0 - k * f64::exp(-r * t));
        let d1 = ((s0 / k).ln() + (r + 0.5 * sig * sig) * t) / (sig * t.sqrt());
        let d2 = d1 - sig * t.sqrt();
        let put_direct = k * (-r * t).exp() * norm_cdf(-d2) - s0 * norm_cdf(-d1);
        assert!((put_parity - put_direct).abs() < 1e-10);
    }

    #[test]
    fn central_fd_of_closed_form_matches_delta() {
        let h = 1e-4 * 100.0;
        let fd = finite_difference(FdScheme::Central, 100.0, h, |s| {
            bs_closed_form(s, 100.0, 0.05, 0.2, 1.0).unwrap().price
        });
        let delta = bs_closed_form(100.0, 100.0, 0.05, 0.2, 1.0).unwrap().delta;
        assert!((fd - delta).abs() <= 1e-6 * delta);
    }

    #[test]
    fn invalid_inputs() {
        assert!(bs_closed_form(100.0, 100.0, 0.05, 0.0, 1.0).is_err());
        let init = InitialState::new(100.0, 0.04, 0.02).unwrap();
        let bad = BumpSpec { target: BumpTarget::V0, scheme: FdScheme::Central, h: 0.03, crn: true };
        assert!(matches!(bad.validate(&init), Err(Error::InvalidBump(_))));
        let neg = BumpSpec { h: -1.0, ..bad };
        assert!(matches!(neg.validate(&init), Err(Error::InvalidBump(_))));
        let eps = BumpSpec { target: BumpTarget::RhoShiftEpsilon, h: 1e-4, ..bad };
        eps.validate(&init).unwrap();
    }

    #[test]
    fn kappa_bump_needs_heston_vasicek() {
        let m = black_scholes_degenerate(0.2, 0.05).unwrap();
        let init = InitialState::new(100.0, 0.04, 0.05).unwrap();
        let bump = BumpSpec { target: BumpTarget::KappaEpsilon, scheme: FdScheme::Central, h: 1e-4, crn: true };
        let cfg = SimConfig { n_paths: 10, n_steps: 4, ..SimConfig::default() };
        assert!(matches!(
            fd_greek(&m, &init, &cfg, &Payoff::Identity, &bump),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn names_round_trip() {
        for t in BumpTarget::ALL {
            assert_eq!(BumpTarget::parse(t.name()), Some(t));
            assert_eq!(BumpTarget::for_greek(t.greek()), Some(t));
        }
        assert_eq!(FdScheme::parse("central"), Some(FdScheme::Central));
    }
}
