//! Path simulation of the merged three-dimensional SDE and its first
//! variation, accumulating every integral the Malliavin weights consume.
//!
//! Discretization on the uniform grid `t_j = j T / N`:
//!
//! * log-Euler for the asset, so `S_t / S_0` coincides with the discrete
//!   exponential for `Y11`;
//! * full-truncation Euler for the variance: coefficients are evaluated at
//!   `max(V, variance_floor)`;
//! * plain Euler for the short rate;
//! * `Y22`, `Y33` as exponentials of left-Riemann drift sums and Itô sums;
//!   `Y12`, `Y13` by Euler from zero.
//!
//! Every `dt`-integral is left-Riemann and every `dW`-integral uses the same
//! increments that drive the state.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    CorrelationTriple, Degeneracy, InitialState, MixingCoefficients, ModelInstance, ModelSpec,
};
use crate::rng::{NormalSource, PhiloxNormals};

const BLOWUP_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub maturity: f64,
    pub seed: u64,
    /// Floor applied to the variance inside coefficient evaluations.
    pub variance_floor: f64,
    /// Floor applied to diffusion coefficients before they are inverted.
    pub sigma_floor: f64,
    /// Worker threads; 0 lets the runtime decide. Results never depend on it.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 252,
            maturity: 1.0,
            seed: 20_180_424,
            variance_floor: 0.0,
            sigma_floor: 1e-8,
            workers: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidConfig("n_paths must be >= 1".into()));
        }
        if self.n_steps < 1 {
            return Err(Error::InvalidConfig("n_steps must be >= 1".into()));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::InvalidConfig(format!("maturity must be positive, got {}", self.maturity)));
        }
        if !(self.variance_floor >= 0.0) {
            return Err(Error::InvalidConfig("variance_floor must be >= 0".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma_floor must be > 0".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }
}

/// Perturbed dynamics used by bump-and-revalue oracles.
///
/// `stock_drift` shifts both the asset drift rate and the discount rate;
/// `stock_vol` is added to `sigma(V)` in the asset diffusion;
/// `variance_drift` and `rate_drift` are added to the respective drifts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    pub stock_drift: f64,
    pub stock_vol: f64,
    pub variance_drift: f64,
    pub rate_drift: f64,
}

/// Per-path terminal state and running integrals.
///
/// Fields that need `1/v(V)` or `1/g(r)` hold `NaN` under a model that is
/// degenerate in that component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathAccumulators {
    pub s_t: f64,
    pub v_t: f64,
    pub r_t: f64,
    /// `∫ r dt`
    pub rate_integral: f64,
    /// `∫ dW1 / sigma(V)`
    pub inv_vol_w1: f64,
    /// `∫ dW2 / sigma(V)`
    pub inv_vol_w2: f64,
    /// `∫ dW3 / sigma(V)`
    pub inv_vol_w3: f64,
    /// `∫ sigma(V) dt`
    pub vol_integral: f64,
    /// `∫ dt / sigma(V)`
    pub inv_vol_integral: f64,
    pub w1_t: f64,
    /// Second component of `∫ (a⁻¹ Y)ᵀ dW`, before the `1/T` factor.
    pub bismut_v0: f64,
    /// Third component of `∫ (a⁻¹ Y)ᵀ dW`, before the `1/T` factor.
    pub bismut_r0: f64,
    pub y12_t: f64,
    pub y13_t: f64,
    pub y22_t: f64,
    pub y33_t: f64,
    /// `∫ (1 - t/T) Y33 dt`, the discount's response to `r0` not captured
    /// by the stochastic integral.
    pub rate_adjustment: f64,
    /// `∫ dW2 / v(V)`
    pub inv_vdiff_w2: f64,
    /// `∫ dW3 / v(V)`
    pub inv_vdiff_w3: f64,
    /// `∫ dW3 / g(r)`
    pub inv_rdiff_w3: f64,
    /// Number of floored divisor evaluations on this path.
    pub clamps: u32,
}

impl PathAccumulators {
    pub fn discount(&self) -> f64 {
        (-self.rate_integral).exp()
    }
}

/// Model facts the estimators need alongside the accumulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathContext {
    pub s0: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub correlations: CorrelationTriple,
    pub mixing: MixingCoefficients,
    pub degeneracy: Degeneracy,
    pub instance: ModelInstance,
    pub perturbation: Perturbation,
}

impl PathContext {
    pub fn new(model: &ModelSpec, init: &InitialState, cfg: &SimConfig, perturbation: Perturbation) -> Self {
        Self {
            s0: init.s0,
            maturity: cfg.maturity,
            n_steps: cfg.n_steps,
            correlations: model.correlations,
            mixing: model.mixing,
            degeneracy: model.degeneracy,
            instance: model.instance,
            perturbation,
        }
    }
}

/// Accumulators for a batch of paths, ordered by path index.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<PathAccumulators>,
    pub context: PathContext,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// The first `n` paths; identical to simulating `n` paths directly.
    pub fn prefix(&self, n: usize) -> PathSet {
        PathSet { paths: self.paths[..n.min(self.paths.len())].to_vec(), context: self.context }
    }

    pub fn total_clamps(&self) -> u64 {
        self.paths.iter().map(|p| p.clamps as u64).sum()
    }

    /// Fraction of divisor evaluations that hit a floor.
    pub fn clamp_fraction(&self) -> f64 {
        let evals = (self.paths.len() * self.context.n_steps) as f64;
        if evals == 0.0 {
            0.0
        } else {
            self.total_clamps() as f64 / evals
        }
    }
}

/// Full per-step record of one path, for diagnostics and replay checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathTrace {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
    pub y12: Vec<f64>,
    pub y13: Vec<f64>,
    pub y22: Vec<f64>,
    pub y33: Vec<f64>,
    /// Brownian increments `(dW1, dW2, dW3)` of each step.
    pub dw: Vec<[f64; 3]>,
}

impl PathTrace {
    fn push_state(&mut self, st: &State) {
        self.s.push(st.s);
        self.v.push(st.v);
        self.r.push(st.r);
        self.y12.push(st.y12);
        self.y13.push(st.y13);
        self.y22.push(st.y22);
        self.y33.push(st.y33);
    }
}

struct State {
    log_return: f64,
    s: f64,
    v: f64,
    r: f64,
    y12: f64,
    y13: f64,
    log_y22: f64,
    log_y33: f64,
    y22: f64,
    y33: f64,
}

#[inline]
fn floored(x: f64, floor: f64, clamps: &mut u32) -> f64 {
    if x.abs() < floor {
        *clamps += 1;
        floor.copysign(x)
    } else {
        x
    }
}

fn check_inputs(model: &ModelSpec, init: &InitialState, cfg: &SimConfig) -> Result<()> {
    cfg.validate()?;
    init.validate()?;
    if let ModelInstance::BlackScholes { rate, .. } = model.instance {
        if init.r0 != rate {
            return Err(Error::InvalidConfig(format!(
                "constant-rate model has rate {rate} but initial rate is {}",
                init.r0
            )));
        }
    }
    Ok(())
}

/// Simulates one path. Pure in `(model, init, cfg, pert, normals, path)`.
pub fn simulate_path<N: NormalSource>(
    model: &ModelSpec,
    init: &InitialState,
    cfg: &SimConfig,
    pert: &Perturbation,
    normals: &N,
    path: u64,
    mut trace: Option<&mut PathTrace>,
) -> Result<PathAccumulators> {
    let n = cfg.n_steps;
    let maturity = cfg.maturity;
    let dt = cfg.dt();
    let sqrt_dt = dt.sqrt();
    let CorrelationTriple { rho12, rho13, .. } = model.correlations;
    let MixingCoefficients { mu1, mu2, mu3 } = model.mixing;
    // first column of a⁻¹, scaled by S sigma
    let c2 = -rho12 / mu1;
    let c3 = (rho12 * mu2 - rho13 * mu1) / (mu1 * mu3);
    let deg = model.degeneracy;

    let mut st = State {
        log_return: 0.0,
        s: init.s0,
        v: init.v0,
        r: init.r0,
        y12: 0.0,
        y13: 0.0,
        log_y22: 0.0,
        log_y33: 0.0,
        y22: 1.0,
        y33: 1.0,
    };
    let mut acc = PathAccumulators::default();
    let mut clamps = 0u32;

    for j in 0..n {
        if let Some(tr) = trace.as_deref_mut() {
            tr.push_state(&st);
        }
        let t = j as f64 * dt;
        let z = normals.normals(path, j as u64);
        let dw = [z[0] * sqrt_dt, z[1] * sqrt_dt, z[2] * sqrt_dt];
        if let Some(tr) = trace.as_deref_mut() {
            tr.dw.push(dw);
        }
        let dz2 = rho12 * dw[0] + mu1 * dw[1];
        let dz3 = rho13 * dw[0] + mu2 * dw[1] + mu3 * dw[2];

        let vp = st.v.max(cfg.variance_floor);
        let sig = model.sigma.eval(vp) + pert.stock_vol;
        let inv_sig = 1.0 / floored(sig, cfg.sigma_floor, &mut clamps);
        let w_combo = dw[0] + c2 * dw[1] + c3 * dw[2];

        acc.rate_integral += st.r * dt;
        acc.inv_vol_w1 += dw[0] * inv_sig;
        acc.inv_vol_w2 += dw[1] * inv_sig;
        acc.inv_vol_w3 += dw[2] * inv_sig;
        acc.vol_integral += sig * dt;
        acc.inv_vol_integral += inv_sig * dt;
        acc.w1_t += dw[0];
        acc.rate_adjustment += (1.0 - t / maturity) * st.y33 * dt;

        let vdiff = model.variance_diffusion.eval(vp);
        let rdiff = model.rate_diffusion.eval(st.r);
        let first_col = inv_sig / st.s;
        if !deg.variance {
            let inv_vdiff = 1.0 / floored(vdiff, cfg.sigma_floor, &mut clamps);
            acc.inv_vdiff_w2 += dw[1] * inv_vdiff;
            acc.inv_vdiff_w3 += dw[2] * inv_vdiff;
            acc.bismut_v0 += st.y12 * first_col * w_combo
                + st.y22 * inv_vdiff / mu1 * (dw[1] - mu2 / mu3 * dw[2]);
        }
        if !deg.rate {
            let inv_rdiff = 1.0 / floored(rdiff, cfg.sigma_floor, &mut clamps);
            acc.inv_rdiff_w3 += dw[2] * inv_rdiff;
            acc.bismut_r0 += st.y13 * first_col * w_combo + st.y33 * inv_rdiff / mu3 * dw[2];
        }

        let sig_prime = model.sigma.deriv(vp);
        let vdrift = model.variance_drift.eval(vp) + pert.variance_drift;
        let vdrift_prime = model.variance_drift.deriv(vp);
        let vdiff_prime = model.variance_diffusion.deriv(vp);
        let rdrift = model.rate_drift.eval(st.r) + pert.rate_drift;
        let rdrift_prime = model.rate_drift.deriv(st.r);
        let rdiff_prime = model.rate_diffusion.deriv(st.r);
        let stock_rate = st.r + pert.stock_drift;

        let y12 = st.y12 + stock_rate * st.y12 * dt + (sig * st.y12 + st.s * sig_prime * st.y22) * dw[0];
        let y13 = st.y13 + (stock_rate * st.y13 + st.s * st.y33) * dt + sig * st.y13 * dw[0];
        st.log_return += (stock_rate - 0.5 * sig * sig) * dt + sig * dw[0];
        st.log_y22 += (vdrift_prime - 0.5 * vdiff_prime * vdiff_prime) * dt + vdiff_prime * dz2;
        st.log_y33 += (rdrift_prime - 0.5 * rdiff_prime * rdiff_prime) * dt + rdiff_prime * dz3;
        st.v += vdrift * dt + vdiff * dz2;
        st.r += rdrift * dt + rdiff * dz3;
        st.s = init.s0 * st.log_return.exp();
        st.y12 = y12;
        st.y13 = y13;
        st.y22 = st.log_y22.exp();
        st.y33 = st.log_y33.exp();

        let bounded = |x: f64| x.abs() <= BLOWUP_LIMIT;
        if !(bounded(st.s)
            && bounded(st.v)
            && bounded(st.r)
            && bounded(st.y12)
            && bounded(st.y13)
            && bounded(st.y22)
            && bounded(st.y33))
        {
            return Err(Error::NumericalBlowup { path, step: j + 1 });
        }
    }
    if let Some(tr) = trace {
        tr.push_state(&st);
    }

    acc.s_t = st.s;
    acc.v_t = st.v;
    acc.r_t = st.r;
    acc.y12_t = st.y12;
    acc.y13_t = st.y13;
    acc.y22_t = st.y22;
    acc.y33_t = st.y33;
    // a stock-drift shift moves the discount rate too
    acc.rate_integral += pert.stock_drift * maturity;
    if deg.variance {
        acc.bismut_v0 = f64::NAN;
        acc.inv_vdiff_w2 = f64::NAN;
        acc.inv_vdiff_w3 = f64::NAN;
    }
    if deg.rate {
        acc.bismut_r0 = f64::NAN;
        acc.inv_rdiff_w3 = f64::NAN;
    }
    acc.clamps = clamps;
    Ok(acc)
}

/// Simulates `cfg.n_paths` paths with the default counter-based generator.
pub fn simulate_paths(model: &ModelSpec, init: &InitialState, cfg: &SimConfig) -> Result<PathSet> {
    simulate_paths_with(model, init, cfg, &Perturbation::default(), &PhiloxNormals::new(cfg.seed))
}

/// Simulates `cfg.n_paths` paths of the (possibly perturbed) dynamics.
///
/// Output is bit-identical for any worker count: each path depends only on
/// its index, and the records are returned in index order.
pub fn simulate_paths_with<N: NormalSource>(
    model: &ModelSpec,
    init: &InitialState,
    cfg: &SimConfig,
    pert: &Perturbation,
    normals: &N,
) -> Result<PathSet> {
    check_inputs(model, init, cfg)?;
    let run = || {
        (0..cfg.n_paths as u64)
            .into_par_iter()
            .map(|p| simulate_path(model, init, cfg, pert, normals, p, None))
            .collect::<Vec<_>>()
    };
    let results = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    // first failure by path index, not by completion order
    let paths = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PathSet { paths, context: PathContext::new(model, init, cfg, *pert) })
}

/// Records every grid value of one path alongside its accumulators.
pub fn simulate_path_trace<N: NormalSource>(
    model: &ModelSpec,
    init: &InitialState,
    cfg: &SimConfig,
    normals: &N,
    path: u64,
) -> Result<(PathAccumulators, PathTrace)> {
    check_inputs(model, init, cfg)?;
    let mut trace = PathTrace::default();
    let acc = simulate_path(model, init, cfg, &Perturbation::default(), normals, path, Some(&mut trace))?;
    Ok((acc, trace))
}

/// `Y11` on every grid point plus terminal `Y22`, `Y33`, rebuilt from the
/// closed-form exponentials of a traced path.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstVariation {
    pub y11: Vec<f64>,
    pub y22_t: f64,
    pub y33_t: f64,
    /// `Y22` reduced to its drift-only exponential.
    pub variance_degenerate: bool,
    /// `Y33` reduced to its drift-only exponential.
    pub rate_degenerate: bool,
}

pub fn first_variation_closed_forms(trace: &PathTrace, model: &ModelSpec, cfg: &SimConfig) -> FirstVariation {
    let dt = cfg.dt();
    let MixingCoefficients { mu1, mu2, mu3 } = model.mixing;
    let CorrelationTriple { rho12, rho13, .. } = model.correlations;
    let mut y11 = Vec::with_capacity(trace.dw.len() + 1);
    let (mut drift11, mut ito11) = (0.0, 0.0);
    let (mut drift22, mut ito22) = (0.0, 0.0);
    let (mut drift33, mut ito33) = (0.0, 0.0);
    y11.push(1.0);
    for (j, dw) in trace.dw.iter().enumerate() {
        let vp = trace.v[j].max(cfg.variance_floor);
        let r = trace.r[j];
        let sig = model.sigma.eval(vp);
        drift11 += (r - 0.5 * sig * sig) * dt;
        ito11 += sig * dw[0];
        y11.push((drift11 + ito11).exp());

        let dz2 = rho12 * dw[0] + mu1 * dw[1];
        let dz3 = rho13 * dw[0] + mu2 * dw[1] + mu3 * dw[2];
        let vprime = model.variance_diffusion.deriv(vp);
        let gprime = model.rate_diffusion.deriv(r);
        drift22 += (model.variance_drift.deriv(vp) - 0.5 * vprime * vprime) * dt;
        ito22 += vprime * dz2;
        drift33 += (model.rate_drift.deriv(r) - 0.5 * gprime * gprime) * dt;
        ito33 += gprime * dz3;
    }
    FirstVariation {
        y11,
        y22_t: (drift22 + ito22).exp(),
        y33_t: (drift33 + ito33).exp(),
        variance_degenerate: model.degeneracy.variance,
        rate_degenerate: model.degeneracy.rate,
    }
}

/// Euler recursion of the `Y12` and `Y13` linear SDEs along a traced path.
pub fn simulate_y12_y13(trace: &PathTrace, model: &ModelSpec, cfg: &SimConfig) -> (f64, f64) {
    let dt = cfg.dt();
    let (mut y12, mut y13) = (0.0, 0.0);
    for (j, dw) in trace.dw.iter().enumerate() {
        let vp = trace.v[j].max(cfg.variance_floor);
        let (s, r) = (trace.s[j], trace.r[j]);
        let sig = model.sigma.eval(vp);
        let next12 = y12 + r * y12 * dt + (sig * y12 + s * model.sigma.deriv(vp) * trace.y22[j]) * dw[0];
        let next13 = y13 + (r * y13 + s * trace.y33[j]) * dt + sig * y13 * dw[0];
        y12 = next12;
        y13 = next13;
    }
    (y12, y13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{black_scholes_degenerate, heston_vasicek_model, HestonVasicekParams, PositivityCheck};

    struct Zeros;
    impl NormalSource for Zeros {
        fn normals(&self, _: u64, _: u64) -> [f64; 3] {
            [0.0; 3]
        }
    }

    fn bs() -> (ModelSpec, InitialState) {
        (black_scholes_degenerate(0.2, 0.05).unwrap(), InitialState::new(100.0, 0.04, 0.05).unwrap())
    }

    fn hv() -> (ModelSpec, InitialState) {
        let p = HestonVasicekParams { kappa: 2.0, theta: 0.04, sigma_vol: 0.04, a: 0.02, b: 0.08, k: 0.002 };
        let rho = CorrelationTriple::new(-0.8, 0.5, 0.02).unwrap();
        (
            heston_vasicek_model(&p, &rho, PositivityCheck::default()).unwrap(),
            InitialState::new(100.0, 0.04, 0.02).unwrap(),
        )
    }

    #[test]
    fn one_log_euler_step_with_zero_draw() {
        let (m, init) = bs();
        let cfg = SimConfig { n_steps: 1, ..SimConfig::default() };
        let acc = simulate_path(&m, &init, &cfg, &Perturbation::default(), &Zeros, 0, None).unwrap();
        // 100 exp(0.05 - 0.02)
        assert!((acc.s_t - 103.045_453_395_351_7).abs() < 1e-10);
        // one Euler step of dY13 = (r Y13 + S Y33) dt from zero
        assert_eq!(acc.y13_t, 100.0);
        assert_eq!(acc.y12_t, 0.0);
    }

    #[test]
    fn degenerate_integrals_are_deterministic() {
        let (m, init) = bs();
        let cfg = SimConfig { n_paths: 50, ..SimConfig::default() };
        let set = simulate_paths(&m, &init, &cfg).unwrap();
        for p in &set.paths {
            assert!((p.rate_integral - 0.05).abs() < 1e-14);
            assert!((p.vol_integral - 0.2).abs() < 1e-14);
            assert!((p.inv_vol_integral - 5.0).abs() < 1e-12);
            assert_eq!(p.y12_t, 0.0);
            assert!(p.y13_t > 0.0);
            assert_eq!(p.y22_t, 1.0);
            assert_eq!(p.y33_t, 1.0);
            assert!(p.bismut_v0.is_nan() && p.bismut_r0.is_nan());
        }
    }

    #[test]
    fn rate_mismatch_rejected() {
        let (m, _) = bs();
        let init = InitialState::new(100.0, 0.04, 0.03).unwrap();
        assert!(matches!(simulate_paths(&m, &init, &SimConfig::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn invalid_configs() {
        let (m, init) = hv();
        for cfg in [
            SimConfig { n_paths: 0, ..SimConfig::default() },
            SimConfig { n_steps: 0, ..SimConfig::default() },
            SimConfig { maturity: 0.0, ..SimConfig::default() },
            SimConfig { sigma_floor: 0.0, ..SimConfig::default() },
            SimConfig { variance_floor: -1.0, ..SimConfig::default() },
        ] {
            assert!(matches!(simulate_paths(&m, &init, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn blowup_detected() {
        let m = black_scholes_degenerate(0.2, 40.0).unwrap();
        let init = InitialState::new(100.0, 0.04, 40.0).unwrap();
        let cfg = SimConfig { n_paths: 4, n_steps: 50, ..SimConfig::default() };
        match simulate_paths(&m, &init, &cfg) {
            Err(Error::NumericalBlowup { path: 0, step }) => assert!(step < 50),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn trace_matches_batch_record() {
        let (m, init) = hv();
        let cfg = SimConfig { n_paths: 8, n_steps: 40, ..SimConfig::default() };
        let set = simulate_paths(&m, &init, &cfg).unwrap();
        let (acc, trace) = simulate_path_trace(&m, &init, &cfg, &PhiloxNormals::new(cfg.seed), 5).unwrap();
        assert_eq!(acc, set.paths[5]);
        assert_eq!(trace.s.len(), 41);
        assert_eq!(trace.dw.len(), 40);
        assert_eq!(*trace.s.last().unwrap(), acc.s_t);
    }

    #[test]
    fn closed_forms_match_recursion() {
        let (m, init) = hv();
        let cfg = SimConfig { n_steps: 252, ..SimConfig::default() };
        let (acc, trace) = simulate_path_trace(&m, &init, &cfg, &PhiloxNormals::new(9), 3).unwrap();
        let fv = first_variation_closed_forms(&trace, &m, &cfg);
        assert_eq!(fv.y11[0], 1.0);
        for (y, s) in fv.y11.iter().zip(&trace.s) {
            assert!((y - s / init.s0).abs() <= 1e-12 * y.abs());
        }
        assert!((fv.y22_t - acc.y22_t).abs() <= 1e-12 * acc.y22_t);
        assert!((fv.y33_t - acc.y33_t).abs() <= 1e-12 * acc.y33_t);
        // g' = 0 and f' = -a collapse Y33 to exp(-a T)
        assert!((acc.y33_t - (-0.02f64).exp()).abs() < 1e-14);
        let (y12, y13) = simulate_y12_y13(&trace, &m, &cfg);
        assert!((y12 - acc.y12_t).abs() <= 1e-12 * acc.y12_t.abs().max(1.0));
        assert!((y13 - acc.y13_t).abs() <= 1e-12 * acc.y13_t.abs());
        assert!(acc.y13_t > 0.0);
    }

    #[test]
    fn degenerate_closed_forms_flagged() {
        let (m, init) = bs();
        let cfg = SimConfig { n_steps: 12, ..SimConfig::default() };
        let (acc, trace) = simulate_path_trace(&m, &init, &cfg, &PhiloxNormals::new(1), 0).unwrap();
        let fv = first_variation_closed_forms(&trace, &m, &cfg);
        assert!(fv.variance_degenerate && fv.rate_degenerate);
        assert_eq!(fv.y22_t, 1.0);
        assert!((fv.y11.last().unwrap() - acc.s_t / 100.0).abs() < 1e-14);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let (m, init) = hv();
        let one = SimConfig { n_paths: 300, n_steps: 30, workers: 1, ..SimConfig::default() };
        let four = SimConfig { workers: 4, ..one };
        assert_eq!(simulate_paths(&m, &init, &one).unwrap(), simulate_paths(&m, &init, &four).unwrap());
    }

    #[test]
    fn prefix_equals_smaller_run() {
        let (m, init) = hv();
        let big = SimConfig { n_paths: 64, n_steps: 20, ..SimConfig::default() };
        let small = SimConfig { n_paths: 10, ..big };
        assert_eq!(simulate_paths(&m, &init, &big).unwrap().prefix(10), simulate_paths(&m, &init, &small).unwrap());
    }

    #[test]
    fn sigma_floor_counts_clamps() {
        let m = black_scholes_degenerate(1e-9, 0.0).unwrap();
        let init = InitialState::new(100.0, 0.04, 0.0).unwrap();
        let cfg = SimConfig { n_paths: 3, n_steps: 7, ..SimConfig::default() };
        let set = simulate_paths(&m, &init, &cfg).unwrap();
        assert_eq!(set.total_clamps(), 21);
        assert_eq!(set.clamp_fraction(), 1.0);
        assert!((set.paths[0].inv_vol_integral - 1e8).abs() < 1e-4);
    }
}
