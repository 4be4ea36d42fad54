//! Simulation of single and paired branching processes in random environments.
//!
//! Populations start from a single ancestor. While the population is at most
//! the cap, the next generation is drawn exactly through the family's
//! convolution sampler. Once it exceeds the cap, the normalized population
//! `W = Z/Π` is frozen and the log-population continues as
//! `ln Z_k = ln W_frozen + ln Π_k`. Per-generation relative fluctuations of
//! `Z_{k+1}/(Z_k m_k)` are then `O(cap^{-1/2})`, orders of magnitude below the
//! `1/√n` scale of the comparison statistic. [`PopulationCap::Exact`] disables
//! the continuation and is the reference mode for small horizons.

use std::io::{self, Write};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{EnvRealization, EnvironmentFamily, OffspringSum};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, SimRng, Stream};

pub const DEFAULT_POP_CAP: u64 = 1_000_000_000;
pub const MIN_POP_CAP: u64 = 10_000;
/// Above this, Poisson draws are no longer exact integers in `f64`.
pub const MAX_POP_CAP: u64 = 1 << 52;

/// How large populations are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PopulationCap {
    /// Exact sampling up to the cap, frozen-martingale continuation beyond.
    Frozen(u64),
    /// Exact integer populations throughout; overflowing `u64` is an error.
    Exact,
}

impl Default for PopulationCap {
    fn default() -> Self {
        PopulationCap::Frozen(DEFAULT_POP_CAP)
    }
}

impl PopulationCap {
    pub fn validate(self) -> Result<Self> {
        match self {
            PopulationCap::Frozen(cap) if !(MIN_POP_CAP..=MAX_POP_CAP).contains(&cap) => {
                Err(Error::domain(
                    "pop_cap",
                    format!("{cap} outside [{MIN_POP_CAP}, {MAX_POP_CAP}]"),
                ))
            }
            _ => Ok(self),
        }
    }
}

/// State of one generation after it has been produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationRecord {
    /// Index `k ≥ 1` of the generation.
    pub generation: usize,
    /// Conditional mean `m_{k-1}` of the environment that produced it.
    pub mean: f64,
    /// `M_{k-1} = ln m_{k-1}`.
    pub log_mean: f64,
    pub log_z: f64,
    pub log_w: f64,
    /// Whether `log_z` is the log of an exactly simulated population.
    pub exact: bool,
}

/// One simulated process up to generation `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub n: usize,
    pub path: Vec<GenerationRecord>,
    /// `ln Z_n`.
    pub log_z: f64,
    /// `ln Π_n = Σ_{k<n} M_k`.
    pub log_pi: f64,
    /// `ln W_n = ln Z_n − ln Π_n`.
    pub log_w: f64,
    /// First generation whose population exceeded the cap, if any.
    pub exact_until: Option<usize>,
    /// Last exactly tracked population.
    pub z_exact: u64,
}

impl Trajectory {
    pub fn m_path(&self) -> impl Iterator<Item = f64> + '_ {
        self.path.iter().map(|r| r.mean)
    }

    /// `M_0, …, M_{n-1}`.
    pub fn log_mean_path(&self) -> impl Iterator<Item = f64> + '_ {
        self.path.iter().map(|r| r.log_mean)
    }

    /// `Σ M_k`; identical to `log_pi`.
    pub fn log_m_sum(&self) -> f64 {
        self.log_pi
    }
}

/// Incremental state of one process.
#[derive(Debug, Clone)]
struct Process {
    generation: usize,
    z: u64,
    exact: bool,
    log_z: f64,
    log_pi: f64,
    log_w_frozen: f64,
    exact_until: Option<usize>,
}

impl Process {
    fn new() -> Self {
        Process {
            generation: 0,
            z: 1,
            exact: true,
            log_z: 0.0,
            log_pi: 0.0,
            log_w_frozen: 0.0,
            exact_until: None,
        }
    }

    #[inline]
    fn step(
        &mut self,
        family: &EnvironmentFamily,
        env: &EnvRealization,
        cap: PopulationCap,
        rng: &mut dyn RngCore,
    ) -> Result<GenerationRecord> {
        self.generation += 1;
        self.log_pi += env.log_mean;
        let was_exact = self.exact;
        if self.exact {
            let next = family.offspring_sum(env, self.z, rng)?;
            match (next, cap) {
                (OffspringSum::Exact(z), PopulationCap::Exact) => {
                    self.z = z;
                    self.log_z = (z as f64).ln();
                }
                (OffspringSum::Exact(z), PopulationCap::Frozen(c)) if z <= c => {
                    self.z = z;
                    self.log_z = (z as f64).ln();
                }
                (_, PopulationCap::Exact) => {
                    return Err(Error::Overflow {
                        generation: self.generation,
                    })
                }
                (over, PopulationCap::Frozen(_)) => {
                    if let OffspringSum::Exact(z) = over {
                        self.z = z;
                    }
                    self.exact = false;
                    self.exact_until = Some(self.generation);
                    self.log_z = over.as_f64().ln();
                    self.log_w_frozen = self.log_z - self.log_pi;
                }
            }
        } else {
            self.log_z = self.log_w_frozen + self.log_pi;
        }
        Ok(GenerationRecord {
            generation: self.generation,
            mean: env.mean,
            log_mean: env.log_mean,
            log_z: self.log_z,
            log_w: self.log_z - self.log_pi,
            exact: was_exact,
        })
    }

    fn finish(self, path: Vec<GenerationRecord>) -> Trajectory {
        Trajectory {
            n: self.generation,
            path,
            log_z: self.log_z,
            log_pi: self.log_pi,
            log_w: self.log_z - self.log_pi,
            exact_until: self.exact_until,
            z_exact: self.z,
        }
    }
}

/// Simulates one process for `n` generations. The latent environment draw
/// and the offspring draws of each generation come from `rng` in that order.
pub fn simulate_trajectory(
    family: &EnvironmentFamily,
    n: usize,
    pop_cap: PopulationCap,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::domain("simulate_trajectory", "n must be at least 1"));
    }
    let cap = pop_cap.validate()?;
    let mut process = Process::new();
    let mut path = Vec::with_capacity(n);
    for _ in 0..n {
        let g: f64 = rng.sample(StandardNormal);
        let env = family.sample_environment(g);
        path.push(process.step(family, &env, cap, rng)?);
    }
    Ok(process.finish(path))
}

/// Everything needed to simulate a batch of paired trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub family1: EnvironmentFamily,
    pub family2: EnvironmentFamily,
    /// Correlation of the latent Gaussian pair driving shared generations.
    pub latent_r: f64,
    /// Horizon of process 1.
    pub n: usize,
    /// Horizon of process 2.
    pub m: usize,
    pub pop_cap: PopulationCap,
    pub master_seed: u64,
    pub replications: usize,
}

impl SimConfig {
    pub fn new(family1: EnvironmentFamily, family2: EnvironmentFamily, n: usize, m: usize) -> Self {
        SimConfig {
            family1,
            family2,
            latent_r: 0.0,
            n,
            m,
            pop_cap: PopulationCap::default(),
            master_seed: 0,
            replications: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::domain("sim config", "n and m must be at least 1"));
        }
        if !(-1.0..=1.0).contains(&self.latent_r) {
            return Err(Error::domain(
                "sim config",
                format!("latent_r = {} is outside [-1, 1]", self.latent_r),
            ));
        }
        self.pop_cap.validate()?;
        Ok(())
    }
}

/// Two processes whose shared generations were driven by a coupled latent pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTrajectory {
    pub traj1: Trajectory,
    pub traj2: Trajectory,
    pub latent_r: f64,
    /// Seed of this replication, `derive_seed(master_seed, index)`.
    pub seed: u64,
}

/// Final values of a paired simulation, without paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairOutcome {
    pub log_z1: f64,
    pub log_z2: f64,
    pub log_w1: f64,
    pub log_w2: f64,
    /// `M_{1,0}` and `M_{2,0}`.
    pub first_log_mean1: f64,
    pub first_log_mean2: f64,
}

/// Runs one replication, reporting each generation to `observe` as
/// `(process, record)` with `process ∈ {1, 2}`.
fn run_pair(
    cfg: &SimConfig,
    index: u64,
    mut observe: impl FnMut(u8, &GenerationRecord),
) -> Result<(Process, Process, u64)> {
    cfg.validate()?;
    let seed = derive_seed(cfg.master_seed, index);
    let mut env_rng = stream_rng(seed, Stream::Environment);
    let mut rng1 = stream_rng(seed, Stream::Offspring1);
    let mut rng2 = stream_rng(seed, Stream::Offspring2);
    let (n, m) = (cfg.n, cfg.m);
    let shared = n.min(m);
    let r = cfg.latent_r;
    let s = (1.0 - r * r).max(0.0).sqrt();
    let mut p1 = Process::new();
    let mut p2 = Process::new();
    for k in 0..n.max(m) {
        let z1: f64 = env_rng.sample(StandardNormal);
        let z2: f64 = env_rng.sample(StandardNormal);
        if k < n {
            let env = cfg.family1.sample_environment(z1);
            let rec = p1.step(&cfg.family1, &env, cfg.pop_cap, &mut rng1)?;
            observe(1, &rec);
        }
        if k < m {
            let g2 = if k < shared { r * z1 + s * z2 } else { z2 };
            let env = cfg.family2.sample_environment(g2);
            let rec = p2.step(&cfg.family2, &env, cfg.pop_cap, &mut rng2)?;
            observe(2, &rec);
        }
    }
    Ok((p1, p2, seed))
}

/// Replication `index` of `cfg`; a pure function of `(cfg, index)`.
pub fn simulate_pair(cfg: &SimConfig, index: u64) -> Result<PairedTrajectory> {
    let mut path1 = Vec::with_capacity(cfg.n);
    let mut path2 = Vec::with_capacity(cfg.m);
    let (p1, p2, seed) = run_pair(cfg, index, |process, rec| {
        if process == 1 {
            path1.push(*rec);
        } else {
            path2.push(*rec);
        }
    })?;
    Ok(PairedTrajectory {
        traj1: p1.finish(path1),
        traj2: p2.finish(path2),
        latent_r: cfg.latent_r,
        seed,
    })
}

/// Same draws as [`simulate_pair`], keeping only the final values.
pub fn simulate_pair_outcome(cfg: &SimConfig, index: u64) -> Result<PairOutcome> {
    let mut first = [0.0f64; 2];
    let (p1, p2, _) = run_pair(cfg, index, |process, rec| {
        if rec.generation == 1 {
            first[usize::from(process - 1)] = rec.log_mean;
        }
    })?;
    Ok(PairOutcome {
        log_z1: p1.log_z,
        log_z2: p2.log_z,
        log_w1: p1.log_z - p1.log_pi,
        log_w2: p2.log_z - p2.log_pi,
        first_log_mean1: first[0],
        first_log_mean2: first[1],
    })
}

/// Evaluates `f(0), …, f(count-1)` on `workers` threads (0 = all cores) and
/// returns the results in index order.
pub fn par_map_indices<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::domain("thread pool", e.to_string()))?;
    pool.install(|| (0..count as u64).into_par_iter().map(&f).collect())
}

/// All `cfg.replications` paired trajectories, in replication order.
pub fn replicate(cfg: &SimConfig, workers: usize) -> Result<Vec<PairedTrajectory>> {
    if cfg.replications == 0 {
        return Err(Error::domain(
            "replicate",
            "replications must be at least 1",
        ));
    }
    par_map_indices(cfg.replications, workers, |i| simulate_pair(cfg, i))
}

/// Final values of all replications, in replication order.
pub fn replicate_outcomes(cfg: &SimConfig, workers: usize) -> Result<Vec<PairOutcome>> {
    if cfg.replications == 0 {
        return Err(Error::domain(
            "replicate",
            "replications must be at least 1",
        ));
    }
    par_map_indices(cfg.replications, workers, |i| simulate_pair_outcome(cfg, i))
}

/// Header of the per-generation trajectory dump.
pub const TRAJECTORY_CSV_HEADER: &str = "replication,process,generation,M,logZ,logW,exact_flag";

/// Writes one row per generation and process (no header).
pub fn write_trajectory_rows<W: Write>(
    out: &mut W,
    replication: u64,
    pair: &PairedTrajectory,
) -> io::Result<()> {
    for (process, traj) in [(1, &pair.traj1), (2, &pair.traj2)] {
        for rec in &traj.path {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                replication,
                process,
                rec.generation,
                rec.log_mean,
                rec.log_z,
                rec.log_w,
                u8::from(rec.exact)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_point() -> EnvironmentFamily {
        EnvironmentFamily::new("two_point", 0.0, 1.0).unwrap()
    }

    #[test]
    fn deterministic_doubling() {
        let always = EnvironmentFamily::degenerate("two_point", 800.0).unwrap();
        let mut rng = SimRng::seed_from_u64(9);
        let t = simulate_trajectory(&always, 10, PopulationCap::default(), &mut rng).unwrap();
        assert_eq!(t.z_exact, 1024);
        assert!((t.log_z - 1024f64.ln()).abs() < 1e-12);
        assert!(t.log_w.abs() < 1e-12);
        assert_eq!(t.exact_until, None);
    }

    #[test]
    fn log_w_identity_and_bounds() {
        for kind in crate::env::builtin_laws().names() {
            let f = EnvironmentFamily::new(kind, 0.5, 1.0).unwrap();
            for seed in 0..20 {
                let mut rng = SimRng::seed_from_u64(seed);
                let t = simulate_trajectory(&f, 200, PopulationCap::default(), &mut rng).unwrap();
                assert_eq!(t.log_w, t.log_z - t.log_pi);
                assert!(t.log_z >= 0.0);
                assert_eq!(t.path.len(), 200);
                for rec in &t.path {
                    assert_eq!(rec.log_w, rec.log_z - (rec.log_z - rec.log_w));
                }
                assert!(t.exact_until.is_some(), "{kind} never reached the cap");
            }
        }
    }

    #[test]
    fn zero_horizon_rejected() {
        let mut rng = SimRng::seed_from_u64(0);
        assert!(simulate_trajectory(&two_point(), 0, PopulationCap::default(), &mut rng).is_err());
        assert!(simulate_trajectory(&two_point(), 5, PopulationCap::Frozen(10), &mut rng).is_err());
    }

    #[test]
    fn exact_mode_overflows_loudly() {
        let f = EnvironmentFamily::new("shifted_poisson", 3.0, 1.0).unwrap();
        let mut rng = SimRng::seed_from_u64(4);
        let err = simulate_trajectory(&f, 200, PopulationCap::Exact, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Overflow { .. }));
    }

    #[test]
    fn continuation_path_is_martingale_frozen() {
        let mut rng = SimRng::seed_from_u64(77);
        let t = simulate_trajectory(
            &two_point(),
            120,
            PopulationCap::Frozen(MIN_POP_CAP),
            &mut rng,
        )
        .unwrap();
        let g = t.exact_until.unwrap();
        let frozen = t.path[g - 1].log_w;
        for rec in &t.path[g..] {
            assert!(!rec.exact);
            assert!((rec.log_w - frozen).abs() < 1e-12);
        }
    }

    fn cfg(latent_r: f64, n: usize, m: usize) -> SimConfig {
        let mut c = SimConfig::new(two_point(), two_point(), n, m);
        c.latent_r = latent_r;
        c.master_seed = 42;
        c
    }

    #[test]
    fn pair_is_deterministic() {
        let c = cfg(0.3, 40, 60);
        let a = simulate_pair(&c, 17).unwrap();
        let b = simulate_pair(&c, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_pair(&c, 18).unwrap());
        let o = simulate_pair_outcome(&c, 17).unwrap();
        assert_eq!(o.log_z1, a.traj1.log_z);
        assert_eq!(o.log_z2, a.traj2.log_z);
        assert_eq!(o.first_log_mean2, a.traj2.path[0].log_mean);
        assert_eq!(a.traj1.n, 40);
        assert_eq!(a.traj2.n, 60);
    }

    #[test]
    fn comonotone_coupling_shares_environments() {
        let c = cfg(1.0, 30, 50);
        let p = simulate_pair(&c, 3).unwrap();
        for (x, y) in p
            .traj1
            .log_mean_path()
            .zip(p.traj2.log_mean_path())
            .take(30)
        {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn independent_environments_are_uncorrelated() {
        let mut c = cfg(0.0, 1, 1);
        c.replications = 100_000;
        let outs = replicate_outcomes(&c, 1).unwrap();
        let n = outs.len() as f64;
        let (xs, ys): (Vec<f64>, Vec<f64>) = outs
            .iter()
            .map(|o| (o.first_log_mean1, o.first_log_mean2))
            .unzip();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 3.0 / n.sqrt(), "{corr}");
    }

    #[test]
    fn replicate_singleton_and_worker_invariance() {
        let mut c = cfg(0.5, 25, 25);
        c.replications = 1;
        assert_eq!(replicate(&c, 1).unwrap()[0], simulate_pair(&c, 0).unwrap());
        c.replications = 64;
        let one = replicate_outcomes(&c, 1).unwrap();
        let four = replicate_outcomes(&c, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn martingale_mean_is_one() {
        for &n in &[10usize, 100] {
            let mut c = cfg(0.0, n, 1);
            c.replications = 100_000;
            let w: Vec<f64> = replicate_outcomes(&c, 0)
                .unwrap()
                .iter()
                .map(|o| o.log_w1.exp())
                .collect();
            let len = w.len() as f64;
            let mean = w.iter().sum::<f64>() / len;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1.0);
            let se = (var / len).sqrt();
            assert!((mean - 1.0).abs() < 3.0 * se, "n = {n}: {mean} +- {se}");
        }
    }

    #[test]
    fn increments_of_log_w_decay() {
        let mut c = cfg(0.0, 60, 1);
        c.replications = 2_000;
        c.pop_cap = PopulationCap::Exact;
        let pairs = replicate(&c, 0).unwrap();
        let mean_inc = |k: usize| {
            pairs
                .iter()
                .map(|p| (p.traj1.path[k].log_w - p.traj1.path[k - 1].log_w).abs())
                .sum::<f64>()
                / pairs.len() as f64
        };
        let early = mean_inc(2);
        let mid = mean_inc(10);
        let late = mean_inc(25);
        assert!(early > mid && mid > late, "{early} {mid} {late}");
    }

    #[test]
    fn trajectory_csv_rows() {
        let c = cfg(0.2, 3, 2);
        let p = simulate_pair(&c, 0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_rows(&mut buf, 0, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 5);
        assert!(rows[0].starts_with("0,1,1,"));
        assert!(rows[4].starts_with("0,2,2,"));
        assert_eq!(
            rows[0].split(',').count(),
            TRAJECTORY_CSV_HEADER.split(',').count()
        );
    }
}
