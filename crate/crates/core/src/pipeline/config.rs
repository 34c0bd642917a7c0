//! Flat `key = value` run configuration.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::DenseParams;
use crate::geoeval::ThresholdSpec;
use crate::translator::train::parse_bool;
use crate::translator::TrainConfig;
use crate::vlad::{VladNorm, DEFAULT_CLUSTERS, DEFAULT_PCA_DIM};

pub const SEED_ENV: &str = "NIGHTSHIFT_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    /// PCA output dimension; 0 disables projection.
    pub pca_dim: usize,
    pub kmeans_iters: usize,
    /// Upper bound on descriptors sampled for vocabulary fitting.
    pub vocab_samples: usize,
    pub dense: DenseParams,
    pub vlad_norm: VladNorm,
    pub thresholds: ThresholdSpec,
    pub dual: bool,
    pub hist_eq: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: DEFAULT_CLUSTERS,
            pca_dim: DEFAULT_PCA_DIM,
            kmeans_iters: 30,
            vocab_samples: 20_000,
            dense: DenseParams::default(),
            vlad_norm: VladNorm::Global,
            thresholds: ThresholdSpec::standard(),
            dual: false,
            hist_eq: false,
            train: TrainConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_thresholds(value: &str) -> Result<ThresholdSpec> {
    let bounds = value
        .split(',')
        .map(|pair| {
            let (m, d) = pair.trim().split_once('/').ok_or_else(|| {
                Error::invalid(format!("threshold {pair:?} is not meters/degrees"))
            })?;
            Ok((num("thresholds", m)?, num("thresholds", d)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ThresholdSpec::new(bounds)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = num(key, value)?,
            "pca_dim" => self.pca_dim = num(key, value)?,
            "kmeans_iters" => self.kmeans_iters = num(key, value)?,
            "vocab_samples" => self.vocab_samples = num(key, value)?,
            "scales" => {
                self.dense.scales = value
                    .split(',')
                    .map(|s| num(key, s))
                    .collect::<Result<Vec<_>>>()?
            }
            "stride" => self.dense.stride = num(key, value)?,
            "intra_norm" => {
                self.vlad_norm = if parse_bool(key, value)? {
                    VladNorm::Intra
                } else {
                    VladNorm::Global
                }
            }
            "thresholds" => self.thresholds = parse_thresholds(value)?,
            "dual" => self.dual = parse_bool(key, value)?,
            "hist_eq" => self.hist_eq = parse_bool(key, value)?,
            _ => {
                if !self.train.set(key, value)? {
                    return Err(Error::invalid(format!("unknown configuration key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key = value", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (defaults when `None`), then apply the seed override from
    /// the environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.train.seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{SEED_ENV}={seed:?} is not an integer")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if self.dense.scales.is_empty() || self.dense.scales.contains(&0) || self.dense.stride == 0 {
            return Err(Error::invalid("scales and stride must be positive"));
        }
        if self.kmeans_iters == 0 || self.vocab_samples == 0 {
            return Err(Error::invalid("kmeans_iters and vocab_samples must be positive"));
        }
        self.train.validate()
    }

    /// Resolved configuration in the same format [`RunConfig::parse`] reads.
    pub fn echo(&self) -> String {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let thresholds = self
            .thresholds
            .bounds()
            .iter()
            .map(|(m, d)| format!("{m}/{d}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in [
            ("k", self.k.to_string()),
            ("pca_dim", self.pca_dim.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("vocab_samples", self.vocab_samples.to_string()),
            ("scales", join(&self.dense.scales)),
            ("stride", self.dense.stride.to_string()),
            ("intra_norm", (self.vlad_norm == VladNorm::Intra).to_string()),
            ("thresholds", thresholds),
            ("dual", self.dual.to_string()),
            ("hist_eq", self.hist_eq.to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&self.train.to_text());
        s
    }
}
