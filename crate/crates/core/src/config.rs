//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional; missing
//! keys take the defaults of [`RunConfig::default`]. Lists are comma separated.
//! [`RunConfig::to_text`] writes every key in a fixed order, so parsing its
//! output returns the same configuration and the digest of that text
//! identifies a run.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::env::{builtin_laws, EnvironmentFamily};
use crate::error::{Error, Result};
use crate::sim::{PopulationCap, SimConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySpec {
    pub kind: String,
    pub a: f64,
    pub b: f64,
}

impl FamilySpec {
    pub fn build(&self) -> Result<EnvironmentFamily> {
        EnvironmentFamily::with_law(builtin_laws().get(&self.kind)?, self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub format_version: u32,
    pub family1: FamilySpec,
    pub family2: FamilySpec,
    pub latent_r: f64,
    pub n: usize,
    pub m: usize,
    pub pop_cap: PopulationCap,
    pub master_seed: u64,
    pub replications: usize,
    pub quad_order: usize,
    pub kappa: f64,
    pub delta_prime: f64,
    pub tail_grid: Vec<f64>,
    pub ladder: Vec<usize>,
    pub ladder_replications: usize,
    pub coverage_replications: usize,
    pub suite: String,
    pub inject_normal: bool,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let two_point = FamilySpec {
            kind: "two_point".into(),
            a: 0.0,
            b: 1.0,
        };
        RunConfig {
            format_version: FORMAT_VERSION,
            family1: two_point.clone(),
            family2: two_point,
            latent_r: 0.5,
            n: 2000,
            m: 2000,
            pop_cap: PopulationCap::default(),
            master_seed: 20240601,
            replications: 10_000,
            quad_order: crate::env::DEFAULT_QUAD_ORDER,
            kappa: 0.05,
            delta_prime: 0.5,
            tail_grid: (0..=12).map(|i| i as f64 * 0.25).collect(),
            ladder: vec![250, 1000, 4000],
            ladder_replications: 10_000,
            coverage_replications: 10_000,
            suite: "all".into(),
            inject_normal: false,
            output_dir: "reports".into(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn join<T: std::fmt::Debug>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, found {line:?}"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "format_version" => {
                let v: u32 = parse_value(key, value)?;
                if v != FORMAT_VERSION {
                    return Err(Error::config(
                        key,
                        format!("unsupported version {v}, expected {FORMAT_VERSION}"),
                    ));
                }
                self.format_version = v;
            }
            "family1" => self.family1.kind = value.to_string(),
            "a1" => self.family1.a = parse_value(key, value)?,
            "b1" => self.family1.b = parse_value(key, value)?,
            "family2" => self.family2.kind = value.to_string(),
            "a2" => self.family2.a = parse_value(key, value)?,
            "b2" => self.family2.b = parse_value(key, value)?,
            "latent_r" => self.latent_r = parse_value(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "pop_cap" => {
                self.pop_cap = if value == "exact" {
                    PopulationCap::Exact
                } else {
                    let cap: f64 = parse_value(key, value)?;
                    if !(cap.fract() == 0.0 && cap >= 0.0 && cap <= u64::MAX as f64) {
                        return Err(Error::config(
                            key,
                            format!("{value:?} is not an integer or `exact`"),
                        ));
                    }
                    PopulationCap::Frozen(cap as u64)
                }
            }
            "master_seed" => self.master_seed = parse_value(key, value)?,
            "replications" => self.replications = parse_value(key, value)?,
            "quad_order" => self.quad_order = parse_value(key, value)?,
            "kappa" => self.kappa = parse_value(key, value)?,
            "delta_prime" => self.delta_prime = parse_value(key, value)?,
            "tail_grid" => self.tail_grid = parse_list(key, value)?,
            "ladder" => self.ladder = parse_list(key, value)?,
            "ladder_replications" => self.ladder_replications = parse_value(key, value)?,
            "coverage_replications" => self.coverage_replications = parse_value(key, value)?,
            "suite" => self.suite = value.to_string(),
            "inject_normal" => self.inject_normal = parse_value(key, value)?,
            "output_dir" => self.output_dir = value.to_string(),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks every key; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let keyed = |key: &'static str| move |e: Error| Error::config(key, e.to_string());
        for (spec, keys) in [
            (&self.family1, ["family1", "a1", "b1"]),
            (&self.family2, ["family2", "a2", "b2"]),
        ] {
            if let Err(e) = spec.build() {
                let key = match e {
                    Error::Unknown { .. } => keys[0],
                    _ if !spec.a.is_finite() => keys[1],
                    _ => keys[2],
                };
                return Err(Error::config(key, e.to_string()));
            }
        }
        if !(-1.0..=1.0).contains(&self.latent_r) {
            return Err(Error::config("latent_r", "must lie in [-1, 1]"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        self.pop_cap.validate().map_err(keyed("pop_cap"))?;
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if !(8..=crate::quadrature::MAX_ORDER).contains(&self.quad_order) {
            return Err(Error::config(
                "quad_order",
                format!("must lie in 8..={}", crate::quadrature::MAX_ORDER),
            ));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::config("kappa", "must lie in (0, 1)"));
        }
        if !(self.delta_prime > 0.0 && self.delta_prime < 1.0) {
            return Err(Error::config("delta_prime", "must lie in (0, 1)"));
        }
        if self.tail_grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::config(
                "tail_grid",
                "points must be finite and nonnegative",
            ));
        }
        if self.ladder.contains(&0) {
            return Err(Error::config("ladder", "horizons must be at least 1"));
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order, floats in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let cap = match self.pop_cap {
            PopulationCap::Exact => "exact".to_string(),
            PopulationCap::Frozen(c) => c.to_string(),
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("format_version", self.format_version.to_string());
        put("family1", self.family1.kind.clone());
        put("a1", format!("{:?}", self.family1.a));
        put("b1", format!("{:?}", self.family1.b));
        put("family2", self.family2.kind.clone());
        put("a2", format!("{:?}", self.family2.a));
        put("b2", format!("{:?}", self.family2.b));
        put("latent_r", format!("{:?}", self.latent_r));
        put("n", self.n.to_string());
        put("m", self.m.to_string());
        put("pop_cap", cap);
        put("master_seed", self.master_seed.to_string());
        put("replications", self.replications.to_string());
        put("quad_order", self.quad_order.to_string());
        put("kappa", format!("{:?}", self.kappa));
        put("delta_prime", format!("{:?}", self.delta_prime));
        put("tail_grid", join(&self.tail_grid));
        put("ladder", join(&self.ladder));
        put("ladder_replications", self.ladder_replications.to_string());
        put(
            "coverage_replications",
            self.coverage_replications.to_string(),
        );
        put("suite", self.suite.clone());
        put("inject_normal", self.inject_normal.to_string());
        put("output_dir", self.output_dir.clone());
        out
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hash.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut sim = SimConfig::new(self.family1.build()?, self.family2.build()?, self.n, self.m);
        sim.latent_r = self.latent_r;
        sim.pop_cap = self.pop_cap;
        sim.master_seed = self.master_seed;
        sim.replications = self.replications;
        sim.validate()?;
        Ok(sim)
    }
}
