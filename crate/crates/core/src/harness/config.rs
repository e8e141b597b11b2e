//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.
//! `n_agents` and `horizon` are required; every other key has a default
//! (see the table in the README).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::datagen::{hex, GroundTruthParams};
use crate::graph::TopologySpec;
use crate::losses::{DomainBall, FeatureMap, LossKind, LossVariant};
use crate::protocols::Protocol;

use super::HarnessError;

/// Where the physical graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    Generator(TopologySpec),
    /// Edge-list file, resolved against the config file's directory.
    File(PathBuf),
}

/// How the logical weight matrix is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsMode {
    /// Rows drawn from `Dirichlet(y0, …, y1, …, y0)`.
    Dirichlet,
    /// `11ᵀ/N`
    Uniform,
    Identity,
}

impl WeightsMode {
    fn name(self) -> &'static str {
        match self {
            WeightsMode::Dirichlet => "dirichlet",
            WeightsMode::Uniform => "uniform",
            WeightsMode::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocols: Vec<Protocol>,
    pub n_agents: usize,
    pub horizon: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub loss: LossVariant,
    pub feature_map: FeatureMap,
    pub radius: f64,
    pub rho: f64,
    pub y0: f64,
    pub y1: f64,
    pub weights: WeightsMode,
    pub noise_std: f64,
    pub personal_mean_range: (f64, f64),
    pub personal_variance_range: (f64, f64),
    pub gate_keep_prob: f64,
    pub topology: TopologySource,
    pub c: f64,
    pub seed: u64,
    pub seeds: usize,
    pub dump_matrices: bool,
}

impl RunConfig {
    /// Defaults with the two required fields filled in.
    pub fn new(n_agents: usize, horizon: usize) -> Self {
        RunConfig {
            protocols: Protocol::ALL.to_vec(),
            n_agents,
            horizon,
            d_k: 8,
            d_v: 8,
            loss: LossVariant::DeltaNet,
            feature_map: LossKind::new(LossVariant::DeltaNet).feature_map(),
            radius: 10.0,
            rho: 0.75,
            y0: 2.0,
            y1: 10.0,
            weights: WeightsMode::Dirichlet,
            noise_std: 1.0,
            personal_mean_range: (-5.0, 5.0),
            personal_variance_range: (0.0, 50.0),
            gate_keep_prob: 0.9,
            topology: TopologySource::Generator(TopologySpec::ErdosRenyi { p: 0.2 }),
            c: 1.0,
            seed: 0,
            seeds: 5,
            dump_matrices: false,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        LossKind::with_feature_map(self.loss, self.feature_map).expect("validated")
    }

    pub fn domain(&self) -> DomainBall {
        DomainBall::new(self.radius).expect("validated")
    }

    pub fn ground_truth_params(&self) -> GroundTruthParams {
        GroundTruthParams {
            n_agents: self.n_agents,
            d_k: self.d_k,
            d_v: self.d_v,
            rho: self.rho,
            noise_std: self.noise_std,
            personal_mean_range: self.personal_mean_range,
            personal_variance_range: self.personal_variance_range,
        }
    }

    /// Gate keep-probability when the loss is gated.
    pub fn gate(&self) -> Option<f64> {
        self.loss.is_gated().then_some(self.gate_keep_prob)
    }

    /// Seed value of the `index`-th seed.
    pub fn seed_value(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |key: &'static str, constraint: &str| Err(HarnessError::invalid(key, constraint));
        if self.protocols.is_empty() {
            return bad("protocols", "must list at least one protocol");
        }
        if self.n_agents == 0 {
            return bad("n_agents", "must be ≥ 1");
        }
        if self.n_agents > 4096 {
            return bad("n_agents", "must be ≤ 4096");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be ≥ 1");
        }
        if self.d_k == 0 {
            return bad("d_k", "must be ≥ 1");
        }
        if self.d_v == 0 {
            return bad("d_v", "must be ≥ 1");
        }
        if LossKind::with_feature_map(self.loss, self.feature_map).is_err() {
            return bad("feature_map", "only softmax-family losses accept a non-identity feature map");
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad("radius", "must be positive and finite");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho", "must lie in [0, 1]");
        }
        if !(self.y0.is_finite() && self.y0 >= 0.0) {
            return bad("y0", "must be finite and ≥ 0");
        }
        if !(self.y1.is_finite() && self.y1 > 0.0) {
            return bad("y1", "must be finite and > 0");
        }
        if self.y1 < self.y0 {
            return bad("y1", "y1 must be ≥ y0");
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std", "must be finite and ≥ 0");
        }
        let (ml, mh) = self.personal_mean_range;
        if !(ml.is_finite() && mh.is_finite() && ml <= mh) {
            return bad("personal_mean_range", "needs finite lo ≤ hi");
        }
        let (vl, vh) = self.personal_variance_range;
        if !(vl.is_finite() && vh.is_finite() && 0.0 <= vl && vl <= vh) {
            return bad("personal_variance_range", "needs finite 0 ≤ lo ≤ hi");
        }
        if !(0.0..=1.0).contains(&self.gate_keep_prob) {
            return bad("gate_keep_prob", "must lie in [0, 1]");
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad("c", "must be positive and finite");
        }
        if self.seeds == 0 {
            return bad("seeds", "must be ≥ 1");
        }
        Ok(())
    }

    /// Every field as `key = value`, one per line, in a fixed order. This is
    /// what the config hash covers.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let protocols: Vec<&str> = self.protocols.iter().map(|p| p.name()).collect();
        let topology = match &self.topology {
            TopologySource::Generator(spec) => spec.to_string(),
            TopologySource::File(p) => format!("file:{}", p.display()),
        };
        let f = |x: f64| format!("{x:?}");
        let lines: Vec<(&str, String)> = vec![
            ("protocols", protocols.join(",")),
            ("n_agents", self.n_agents.to_string()),
            ("horizon", self.horizon.to_string()),
            ("d_k", self.d_k.to_string()),
            ("d_v", self.d_v.to_string()),
            ("loss", self.loss.name().to_string()),
            ("feature_map", self.feature_map.name().to_string()),
            ("radius", f(self.radius)),
            ("rho", f(self.rho)),
            ("y0", f(self.y0)),
            ("y1", f(self.y1)),
            ("weights", self.weights.name().to_string()),
            ("noise_std", f(self.noise_std)),
            ("personal_mean_range", format!("{},{}", f(self.personal_mean_range.0), f(self.personal_mean_range.1))),
            (
                "personal_variance_range",
                format!("{},{}", f(self.personal_variance_range.0), f(self.personal_variance_range.1)),
            ),
            ("gate_keep_prob", f(self.gate_keep_prob)),
            ("topology", topology),
            ("c", f(self.c)),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.to_string()),
            ("dump_matrices", self.dump_matrices.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    /// Sets `key` from its textual value.
    pub fn set(&mut self, key: &str, value: &str, base_dir: Option<&Path>) -> Result<(), HarnessError> {
        let v = value.trim();
        match key {
            "protocols" => {
                self.protocols = v
                    .split(',')
                    .map(|p| p.parse::<Protocol>().map_err(|e| HarnessError::invalid("protocols", &e)))
                    .collect::<Result<_, _>>()?;
            }
            "n_agents" => self.n_agents = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "d_k" => self.d_k = parse(key, v)?,
            "d_v" => self.d_v = parse(key, v)?,
            "loss" => {
                self.loss = v.parse().map_err(|e: crate::losses::LossError| HarnessError::invalid("loss", &e.to_string()))?;
                self.feature_map = LossKind::new(self.loss).feature_map();
            }
            "feature_map" => {
                self.feature_map = v
                    .parse()
                    .map_err(|e: crate::losses::LossError| HarnessError::invalid("feature_map", &e.to_string()))?
            }
            "radius" => self.radius = parse(key, v)?,
            "rho" => self.rho = parse(key, v)?,
            "y0" => self.y0 = parse(key, v)?,
            "y1" => self.y1 = parse(key, v)?,
            "weights" => {
                self.weights = match v {
                    "dirichlet" => WeightsMode::Dirichlet,
                    "uniform" => WeightsMode::Uniform,
                    "identity" => WeightsMode::Identity,
                    _ => return Err(HarnessError::invalid("weights", "must be dirichlet, uniform or identity")),
                }
            }
            "noise_std" => self.noise_std = parse(key, v)?,
            "personal_mean_range" => self.personal_mean_range = parse_pair(key, v)?,
            "personal_variance_range" => self.personal_variance_range = parse_pair(key, v)?,
            "gate_keep_prob" => self.gate_keep_prob = parse(key, v)?,
            "topology" => {
                self.topology = match v.strip_prefix("file:") {
                    Some(path) => {
                        let p = PathBuf::from(path.trim());
                        TopologySource::File(match base_dir {
                            Some(dir) if p.is_relative() => dir.join(p),
                            _ => p,
                        })
                    }
                    None => TopologySource::Generator(
                        v.parse().map_err(|e: crate::graph::GraphError| HarnessError::invalid("topology", &e.to_string()))?,
                    ),
                }
            }
            "c" => self.c = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "dump_matrices" => self.dump_matrices = parse(key, v)?,
            _ => return Err(HarnessError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::invalid(key, &format!("cannot parse {v:?}")))
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64), HarnessError> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| HarnessError::invalid(key, "expected `lo,hi`"))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

/// Parses config text. Relative topology files resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::new(0, 0);
    let mut seen_agents = false;
    let mut seen_horizon = false;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(HarnessError::Syntax { line: i + 1 })?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    // `loss` resets the feature map, so apply it before `feature_map`
    entries.sort_by_key(|(k, _)| k != "loss");
    for (k, v) in &entries {
        cfg.set(k, v, base_dir)?;
        seen_agents |= k == "n_agents";
        seen_horizon |= k == "horizon";
    }
    if !seen_agents {
        return Err(HarnessError::MissingKey("n_agents"));
    }
    if !seen_horizon {
        return Err(HarnessError::MissingKey("horizon"));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text, path.parent())
}
