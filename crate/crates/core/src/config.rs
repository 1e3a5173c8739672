//! Flat `section.key = value` run configuration.
//!
//! ```text
//! # comment
//! model.instance = heston_vasicek
//! model.kappa = 2
//! payoff.kind = call
//! payoff.strike = 100
//! bumps = s0:central:1:crn, rho_shift_epsilon:forward
//! sweep = 250, 500, 1000
//! ```
//!
//! Every error names the key it concerns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::baselines::{BumpSpec, BumpTarget, FdScheme};
use crate::engine::SimConfig;
use crate::error::{Error, Result};
use crate::greeks::Greek;
use crate::model::{
    black_scholes_degenerate, heston_vasicek_model, CorrelationTriple, HestonVasicekParams, InitialState,
    ModelSpec, Payoff, PositivityCheck, PositivityCondition,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelConfig {
    HestonVasicek { params: HestonVasicekParams, correlations: [f64; 3], positivity: PositivityCheck },
    /// Constant rate taken from `init.r0`.
    BlackScholes { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    JsonLines,
}

impl OutputFormat {
    pub fn name(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::JsonLines => "json-lines",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(OutputFormat::Csv),
            "json-lines" => Some(OutputFormat::JsonLines),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
    /// Emit measured wall time; when off the column is written as 0.
    pub timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { path: None, format: OutputFormat::Csv, timing: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub init: InitialState,
    pub payoff: Payoff,
    pub sim: SimConfig,
    /// Greeks estimated with Malliavin weights.
    pub estimators: Vec<Greek>,
    pub bumps: Vec<BumpSpec>,
    pub sweep: Vec<usize>,
    pub output: OutputConfig,
}

pub const DEFAULT_SWEEP: [usize; 6] = [250, 500, 1000, 2000, 5000, 10_000];

impl Default for RunConfig {
    fn default() -> Self {
        let init = InitialState { s0: 100.0, v0: 0.04, r0: 0.02 };
        let bump = |target: BumpTarget| BumpSpec {
            target,
            scheme: FdScheme::Central,
            h: target.default_step(&init),
            crn: true,
        };
        Self {
            model: ModelConfig::HestonVasicek {
                params: HestonVasicekParams {
                    kappa: 2.0,
                    theta: 0.04,
                    sigma_vol: 0.04,
                    a: 0.02,
                    b: 0.08,
                    k: 0.002,
                },
                correlations: [-0.8, 0.5, 0.02],
                positivity: PositivityCheck::default(),
            },
            init,
            payoff: Payoff::Call { strike: 100.0 },
            sim: SimConfig::default(),
            estimators: vec![Greek::Price, Greek::Delta, Greek::Rho, Greek::Vega],
            bumps: vec![
                bump(BumpTarget::S0),
                bump(BumpTarget::RhoShiftEpsilon),
                bump(BumpTarget::VegaShiftEpsilon),
            ],
            sweep: DEFAULT_SWEEP.to_vec(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Entries::read(text)?;
        let cfg = Self::from_entries(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_entries(kv: &mut Entries) -> Result<Self> {
        let defaults = Self::default();
        let model = match kv.required("model.instance")?.as_str() {
            "heston_vasicek" => {
                let params = HestonVasicekParams {
                    kappa: kv.f64("model.kappa")?,
                    theta: kv.f64("model.theta")?,
                    sigma_vol: kv.f64("model.sigma_vol")?,
                    a: kv.f64("model.a")?,
                    b: kv.f64("model.b")?,
                    k: kv.f64("model.k")?,
                };
                let correlations = [kv.f64("model.rho12")?, kv.f64("model.rho13")?, kv.f64("model.rho23")?];
                let condition = match kv.optional("model.positivity").as_deref() {
                    None | Some("novikov") => PositivityCondition::Novikov,
                    Some("feller") => PositivityCondition::Feller,
                    Some(other) => {
                        return Err(Error::config("model.positivity", format!("unknown condition `{other}`")))
                    }
                };
                let strict = kv.opt_parse("model.positivity_strict", true, parse_bool)?;
                ModelConfig::HestonVasicek {
                    params,
                    correlations,
                    positivity: PositivityCheck { condition, strict },
                }
            }
            "black_scholes" => ModelConfig::BlackScholes { sigma: kv.f64("model.sigma")? },
            other => return Err(Error::config("model.instance", format!("unknown instance `{other}`"))),
        };
        let init = InitialState { s0: kv.f64("init.s0")?, v0: kv.f64("init.v0")?, r0: kv.f64("init.r0")? };
        let payoff = match kv.required("payoff.kind")?.as_str() {
            "call" => Payoff::Call { strike: kv.f64("payoff.strike")? },
            "put" => Payoff::Put { strike: kv.f64("payoff.strike")? },
            "digital_call" => Payoff::DigitalCall { strike: kv.f64("payoff.strike")? },
            "constant" => Payoff::Constant { level: kv.f64("payoff.level")? },
            "identity" => Payoff::Identity,
            other => return Err(Error::config("payoff.kind", format!("unknown payoff `{other}`"))),
        };
        let d = defaults.sim;
        let sim = SimConfig {
            n_paths: kv.opt_parse("sim.paths", d.n_paths, parse_num)?,
            n_steps: kv.opt_parse("sim.steps", d.n_steps, parse_num)?,
            maturity: kv.f64("sim.maturity")?,
            seed: kv.opt_parse("sim.seed", d.seed, parse_num)?,
            variance_floor: kv.opt_parse("sim.variance_floor", d.variance_floor, parse_num)?,
            sigma_floor: kv.opt_parse("sim.sigma_floor", d.sigma_floor, parse_num)?,
            workers: kv.opt_parse("sim.workers", d.workers, parse_num)?,
        };
        let estimators = match kv.optional("estimators") {
            None => defaults.estimators,
            Some(v) => list(&v)
                .map(|s| Greek::parse(s).ok_or_else(|| Error::config("estimators", format!("unknown greek `{s}`"))))
                .collect::<Result<_>>()?,
        };
        let bumps = match kv.optional("bumps") {
            None => defaults.bumps,
            Some(v) => list(&v).map(|s| parse_bump(s, &init)).collect::<Result<_>>()?,
        };
        let sweep = match kv.optional("sweep") {
            None => defaults.sweep,
            Some(v) => list(&v).map(|s| parse_num::<usize>(s).map_err(|r| Error::config("sweep", r))).collect::<Result<_>>()?,
        };
        let output = OutputConfig {
            path: kv.optional("output.path").map(PathBuf::from),
            format: kv.opt_parse("output.format", OutputFormat::Csv, |s| {
                OutputFormat::parse(s).ok_or_else(|| format!("expected csv or json-lines, got `{s}`"))
            })?,
            timing: kv.opt_parse("output.timing", true, parse_bool)?,
        };
        Ok(Self { model, init, payoff, sim, estimators, bumps, sweep, output })
    }

    /// Checks cross-key invariants.
    pub fn validate(&self) -> Result<()> {
        self.init.validate().map_err(|e| Error::config("init", e.to_string()))?;
        self.payoff.validate().map_err(|e| Error::config("payoff", e.to_string()))?;
        self.sim.validate().map_err(|e| Error::config("sim", e.to_string()))?;
        self.build_model()?;
        if self.sweep.contains(&0) {
            return Err(Error::config("sweep", "sizes must be positive"));
        }
        if self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sweep", "sizes must be strictly increasing"));
        }
        let degenerate = matches!(self.model, ModelConfig::BlackScholes { .. });
        if degenerate {
            if let Some(g) = self
                .estimators
                .iter()
                .find(|g| matches!(g, Greek::VegaV0 | Greek::RhoR0 | Greek::Kappa | Greek::ReversionSpeed))
            {
                return Err(Error::config(
                    "estimators",
                    format!("{} is undefined for the black_scholes instance", g.name()),
                ));
            }
            if let Some(b) = self
                .bumps
                .iter()
                .find(|b| matches!(b.target, BumpTarget::KappaEpsilon | BumpTarget::ReversionEpsilon))
            {
                return Err(Error::config(
                    "bumps",
                    format!("{} is undefined for the black_scholes instance", b.target.name()),
                ));
            }
        }
        for b in &self.bumps {
            b.validate(&self.init).map_err(|e| Error::config("bumps", e.to_string()))?;
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        match self.model {
            ModelConfig::HestonVasicek { params, correlations: [r12, r13, r23], positivity } => {
                let rho = CorrelationTriple::new(r12, r13, r23)
                    .map_err(|e| Error::config("model.rho12", e.to_string()))?;
                heston_vasicek_model(&params, &rho, positivity).map_err(|e| {
                    let key = if matches!(e, Error::NonPositiveSemiDefinite { .. }) { "model.rho12" } else { "model" };
                    Error::config(key, e.to_string())
                })
            }
            ModelConfig::BlackScholes { sigma } => {
                black_scholes_degenerate(sigma, self.init.r0).map_err(|e| Error::config("model.sigma", e.to_string()))
            }
        }
    }

    /// Serializes the effective configuration; parsing the result yields an
    /// equal `RunConfig`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match self.model {
            ModelConfig::HestonVasicek { params: p, correlations, positivity } => {
                put("model.instance", "heston_vasicek".into());
                put("model.kappa", p.kappa.to_string());
                put("model.theta", p.theta.to_string());
                put("model.sigma_vol", p.sigma_vol.to_string());
                put("model.a", p.a.to_string());
                put("model.b", p.b.to_string());
                put("model.k", p.k.to_string());
                put("model.rho12", correlations[0].to_string());
                put("model.rho13", correlations[1].to_string());
                put("model.rho23", correlations[2].to_string());
                let cond = match positivity.condition {
                    PositivityCondition::Novikov => "novikov",
                    PositivityCondition::Feller => "feller",
                };
                put("model.positivity", cond.into());
                put("model.positivity_strict", positivity.strict.to_string());
            }
            ModelConfig::BlackScholes { sigma } => {
                put("model.instance", "black_scholes".into());
                put("model.sigma", sigma.to_string());
            }
        }
        put("init.s0", self.init.s0.to_string());
        put("init.v0", self.init.v0.to_string());
        put("init.r0", self.init.r0.to_string());
        put("payoff.kind", self.payoff.kind_name().into());
        match self.payoff {
            Payoff::Call { strike } | Payoff::Put { strike } | Payoff::DigitalCall { strike } => {
                put("payoff.strike", strike.to_string())
            }
            Payoff::Constant { level } => put("payoff.level", level.to_string()),
            Payoff::Identity => {}
        }
        let s = &self.sim;
        put("sim.maturity", s.maturity.to_string());
        put("sim.paths", s.n_paths.to_string());
        put("sim.steps", s.n_steps.to_string());
        put("sim.seed", s.seed.to_string());
        put("sim.variance_floor", s.variance_floor.to_string());
        put("sim.sigma_floor", s.sigma_floor.to_string());
        put("sim.workers", s.workers.to_string());
        put("estimators", self.estimators.iter().map(|g| g.name()).collect::<Vec<_>>().join(", "));
        let bumps: Vec<String> = self
            .bumps
            .iter()
            .map(|b| {
                let crn = if b.crn { "crn" } else { "nocrn" };
                format!("{}:{}:{}:{crn}", b.target.name(), b.scheme.name(), b.h)
            })
            .collect();
        put("bumps", bumps.join(", "));
        put("sweep", self.sweep.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", "));
        if let Some(p) = &self.output.path {
            put("output.path", p.display().to_string());
        }
        put("output.format", self.output.format.name().into());
        put("output.timing", self.output.timing.to_string());
        out
    }
}

/// `target:scheme[:h][:crn|nocrn]`; CRN is on unless `nocrn` is given.
fn parse_bump(s: &str, init: &InitialState) -> Result<BumpSpec> {
    let err = |reason: String| Error::config("bumps", reason);
    let mut parts = s.split(':');
    let target = parts.next().unwrap_or_default();
    let target = BumpTarget::parse(target).ok_or_else(|| err(format!("unknown bump target `{target}`")))?;
    let scheme = parts.next().ok_or_else(|| err(format!("`{s}` lacks a scheme")))?;
    let scheme = FdScheme::parse(scheme).ok_or_else(|| err(format!("unknown scheme `{scheme}`")))?;
    let mut h = None;
    let mut crn = None;
    for p in parts {
        match p {
            "crn" if crn.is_none() => crn = Some(true),
            "nocrn" if crn.is_none() => crn = Some(false),
            _ if h.is_none() && crn.is_none() => {
                h = Some(parse_num::<f64>(p).map_err(|r| err(format!("step in `{s}`: {r}")))?)
            }
            _ => return Err(err(format!("unexpected field `{p}` in `{s}`"))),
        }
    }
    Ok(BumpSpec { target, scheme, h: h.unwrap_or_else(|| target.default_step(init)), crn: crn.unwrap_or(true) })
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse `{s}` as a number"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn read(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", i + 1), "expected `key = value`"));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}", i + 1), "empty key"));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, "duplicate key"));
            }
        }
        Ok(Self { map })
    }

    fn optional(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.optional(key).ok_or_else(|| Error::config(key, "missing required key"))
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        let v = self.required(key)?;
        let x: f64 = parse_num(&v).map_err(|r| Error::config(key, r))?;
        if !x.is_finite() {
            return Err(Error::config(key, "must be finite"));
        }
        Ok(x)
    }

    fn opt_parse<T>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.optional(key) {
            None => Ok(default),
            Some(v) => parse(&v).map_err(|r| Error::config(key, r)),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.into_keys().next() {
            Some(k) => Err(Error::config(k, "unknown key")),
            None => Ok(()),
        }
    }
}
