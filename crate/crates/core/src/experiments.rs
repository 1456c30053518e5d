//! Reproducible numerical studies: multistart training on the parity
//! target, the two-point partition-model error curve, and a harness for the
//! explicit mixture construction.
//!
//! Every task draws from its own ChaCha stream derived from the master seed
//! and the task indices, and results are collected by index, so the output
//! does not depend on the size of the worker pool.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, max_error_bound, BoundReport};
use crate::constructor::build_mixture_rbm;
use crate::distributions::{parity_distribution, random_mixture_with, Distribution};
use crate::error::{Error, Result};
use crate::projections::{kl, project_partition};
use crate::rbm::{
    kl_to_model, random_init_with, train_cd, train_ml, CdData, RbmParams, TrainConfig,
};
use crate::statespace::{Face, Partition};

/// Largest `n` accepted by the training experiment.
pub const MAX_TRAINING_DIM: usize = 6;

/// Slack allowed above the bound for trained models.
pub const BOUND_SLACK: f64 = 0.05;

/// Largest KL accepted at the final sharpness of the construction harness.
pub const CONSTRUCTION_TOL: f64 = 1e-3;

/// Tolerance on the monotonicity check over the sharpness sweep.
pub const MONOTONE_TOL: f64 = 1e-12;

fn stream(seed: u64, hi: u64, lo: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(hi << 32 | lo);
    rng
}

fn run_indexed<T, F>(threads: Option<usize>, tasks: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidConfig("thread count must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..tasks).into_par_iter().map(&f).collect())
}

/// Output encoding of a result table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Tables that can be written as CSV or as a JSON array of rows.
pub trait Table {
    type Row: Serialize;
    const HEADER: &'static str;
    fn rows(&self) -> &[Self::Row];
    fn csv_line(row: &Self::Row) -> String;

    fn write<W: Write>(&self, mut w: W, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Csv => {
                writeln!(w, "{}", Self::HEADER)?;
                for r in self.rows() {
                    writeln!(w, "{}", Self::csv_line(r))?;
                }
            }
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut w, self.rows())?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf, OutputFormat::Csv)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

// ---------------------------------------------------------------------------
// bound table

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub rows: Vec<BoundReport>,
}

impl Table for BoundTable {
    type Row = BoundReport;
    const HEADER: &'static str = "n,m,bound,lower_envelope,upper_envelope,universal";

    fn rows(&self) -> &[BoundReport] {
        &self.rows
    }

    fn csv_line(r: &BoundReport) -> String {
        format!(
            "{},{},{},{},{},{}",
            r.n, r.m, r.bound, r.lower_envelope, r.upper_envelope, r.universal
        )
    }
}

/// Bound reports for `m = 0..=m_max`.
pub fn bound_table(n: usize, m_max: u64) -> Result<BoundTable> {
    if n == 0 || n > 63 {
        return Err(Error::DimensionOutOfRange { n, min: 1, max: 63 });
    }
    if m_max >= u64::MAX / 2 {
        return Err(Error::OutOfRange(format!("m_max = {m_max} is too large")));
    }
    Ok(BoundTable {
        rows: (0..=m_max).map(|m| bound_report(n, m)).collect(),
    })
}

// ---------------------------------------------------------------------------
// parity training

/// Multistart training protocol on the parity target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub restarts: usize,
    pub seed: u64,
    /// First CD phase; its `seed` field is ignored in favour of per-restart
    /// streams.
    pub cd: TrainConfig,
    pub cd2_learning_rate: f64,
    pub cd2_epochs: usize,
    pub ml_learning_rate: f64,
    pub ml_epochs: usize,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m_min: 0,
            m_max: 4,
            restarts: 20,
            seed: 0,
            cd: TrainConfig::default(),
            cd2_learning_rate: 0.1,
            cd2_epochs: 500,
            ml_learning_rate: 1.0,
            ml_epochs: 5000,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_TRAINING_DIM {
            return Err(Error::DimensionOutOfRange {
                n: self.n,
                min: 1,
                max: MAX_TRAINING_DIM,
            });
        }
        let limit = 1usize << (self.n - 1);
        if self.m_min > self.m_max || self.m_max > limit {
            return Err(Error::InvalidConfig(format!(
                "hidden-unit range {}..={} must lie within 0..={limit}",
                self.m_min, self.m_max
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        self.cd.validate()?;
        for (name, lr) in [
            ("cd2", self.cd2_learning_rate),
            ("ml", self.ml_learning_rate),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} learning rate {lr} must be finite and non-negative"
                )));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Cd,
    Cd2,
    Ml,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::Cd => "cd",
            Phase::Cd2 => "cd2",
            Phase::Ml => "ml",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub m: usize,
    pub restart: usize,
    pub phase: Phase,
    pub kl_bits: f64,
    pub bound_bits: f64,
}

/// Exact-ML trajectory of the best restart for one `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub m: usize,
    pub restart: usize,
    pub epoch: usize,
    pub kl_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityResult {
    pub rows: Vec<ParityRow>,
    pub trajectories: TrajectoryTable,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryTable {
    pub rows: Vec<TrajectoryRow>,
}

impl Table for ParityResult {
    type Row = ParityRow;
    const HEADER: &'static str = "m,restart,phase,kl_bits,bound_bits";

    fn rows(&self) -> &[ParityRow] {
        &self.rows
    }

    fn csv_line(r: &ParityRow) -> String {
        format!(
            "{},{},{},{},{}",
            r.m, r.restart, r.phase, r.kl_bits, r.bound_bits
        )
    }
}

impl Table for TrajectoryTable {
    type Row = TrajectoryRow;
    const HEADER: &'static str = "m,restart,epoch,kl_bits";

    fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    fn csv_line(r: &TrajectoryRow) -> String {
        format!("{},{},{},{}", r.m, r.restart, r.epoch, r.kl_bits)
    }
}

impl ParityResult {
    /// Smallest KL over restarts reached in `phase` for each `m`, ascending
    /// in `m`.
    pub fn best(&self, phase: Phase) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.phase == phase) {
            match out.last_mut() {
                Some((m, best)) if *m == r.m => *best = best.min(r.kl_bits),
                _ => out.push((r.m, r.kl_bits)),
            }
        }
        out
    }

    /// `m` values whose best final KL exceeds the bound plus
    /// [`BOUND_SLACK`].
    pub fn bound_violations(&self) -> Vec<(usize, f64, f64)> {
        self.best(Phase::Ml)
            .into_iter()
            .filter_map(|(m, kl)| {
                let bound = self
                    .rows
                    .iter()
                    .find(|r| r.m == m)
                    .map(|r| r.bound_bits)
                    .unwrap_or(f64::NAN);
                (kl > bound + BOUND_SLACK).then_some((m, kl, bound))
            })
            .collect()
    }
}

struct RestartOutcome {
    kls: [f64; 4],
    trajectory: Vec<f64>,
}

fn run_restart(
    cfg: &ExperimentConfig,
    target: &Distribution,
    m: usize,
    restart: usize,
) -> Result<RestartOutcome> {
    let mut rng = stream(cfg.seed, m as u64, restart as u64);
    let init = random_init_with(cfg.n, m, cfg.cd.init_range, &mut rng)?;
    let data = CdData::Target(target.clone());

    let cd_cfg = TrainConfig {
        seed: rng.gen(),
        ..cfg.cd.clone()
    };
    let after_cd = train_cd(&init, &data, &cd_cfg)?;
    let cd2_cfg = TrainConfig {
        seed: rng.gen(),
        learning_rate: cfg.cd2_learning_rate,
        epochs: cfg.cd2_epochs,
        ..cfg.cd.clone()
    };
    let after_cd2 = train_cd(&after_cd, &data, &cd2_cfg)?;

    let kl_init = kl_to_model(target, &init)?;
    let kl_cd = kl_to_model(target, &after_cd)?;
    let kl_cd2 = kl_to_model(target, &after_cd2)?;
    let start: &RbmParams = if kl_cd2 <= kl_cd {
        &after_cd2
    } else {
        &after_cd
    };

    let ml_cfg = TrainConfig {
        learning_rate: cfg.ml_learning_rate,
        epochs: cfg.ml_epochs,
        ..cfg.cd.clone()
    };
    let ml = train_ml(start, target, &ml_cfg)?;
    Ok(RestartOutcome {
        kls: [kl_init, kl_cd, kl_cd2, ml.final_kl()],
        trajectory: ml.trajectory,
    })
}

/// For every `m` and restart: random initialization, CD at the configured
/// rate, a second CD phase at the reduced rate, then exact maximum-likelihood
/// ascent from whichever CD phase ended lower.
pub fn run_parity_experiment(cfg: &ExperimentConfig) -> Result<ParityResult> {
    cfg.validate()?;
    let target = parity_distribution(cfg.n)?;
    let ms: Vec<usize> = (cfg.m_min..=cfg.m_max).collect();
    let tasks = ms.len() * cfg.restarts;
    let outcomes = run_indexed(cfg.threads, tasks, |t| {
        run_restart(cfg, &target, ms[t / cfg.restarts], t % cfg.restarts)
    })?;

    let mut rows = Vec::with_capacity(tasks * 4);
    let mut trajectories = TrajectoryTable::default();
    for (mi, &m) in ms.iter().enumerate() {
        let bound = max_error_bound(cfg.n, m as u64);
        let chunk = &outcomes[mi * cfg.restarts..(mi + 1) * cfg.restarts];
        for (restart, o) in chunk.iter().enumerate() {
            for (phase, &kl_bits) in [Phase::Init, Phase::Cd, Phase::Cd2, Phase::Ml]
                .iter()
                .zip(&o.kls)
            {
                rows.push(ParityRow {
                    m,
                    restart,
                    phase: *phase,
                    kl_bits,
                    bound_bits: bound,
                });
            }
        }
        let (best, o) = chunk
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.kls[3].total_cmp(&b.1.kls[3]))
            .expect("at least one restart");
        trajectories
            .rows
            .extend(
                o.trajectory
                    .iter()
                    .enumerate()
                    .map(|(epoch, &kl_bits)| TrajectoryRow {
                        m,
                        restart: best,
                        epoch,
                        kl_bits,
                    }),
            );
    }
    Ok(ParityResult { rows, trajectories })
}

// ---------------------------------------------------------------------------
// partition-model error curve

pub const MIN_CURVE_DIM: usize = 2;
pub const MAX_CURVE_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub divergence_bits: f64,
    pub relative_error: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub n: usize,
    pub rows: Vec<CurveRow>,
}

impl Table for CurveResult {
    type Row = CurveRow;
    const HEADER: &'static str = "k,divergence_bits,relative_error,expected";

    fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    fn csv_line(r: &CurveRow) -> String {
        format!(
            "{},{},{},{}",
            r.k, r.divergence_bits, r.relative_error, r.expected
        )
    }
}

impl CurveResult {
    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.relative_error - r.expected).abs())
            .fold(0.0, f64::max)
    }
}

fn random_free_mask<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> usize {
    let mut coords: Vec<usize> = (0..n).collect();
    coords.shuffle(rng);
    coords[..k].iter().fold(0, |m, &i| m | 1 << i)
}

/// Two faces of dimension `k`, one through `0…0` and one through `1…1`,
/// with free coordinates drawn at random (rejecting pairs that would
/// overlap), as a partial partition.
pub fn two_point_partition<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Partition> {
    if k >= n {
        return Err(Error::OutOfRange(format!(
            "face dimension {k} must be below n = {n}"
        )));
    }
    let all = (1usize << n) - 1;
    loop {
        let a = random_free_mask(n, k, rng);
        let b = random_free_mask(n, k, rng);
        if a | b != all {
            return Partition::from_faces(
                n,
                vec![Face::through(n, 0, a)?, Face::through(n, all, b)?],
            );
        }
    }
}

/// Relative error `D(p || p_ξ) / D(p || uniform)` of the partition model
/// for `p = ½(δ_{0…0} + δ_{1…1})` and blocks of size `2^k`.
pub fn run_partition_error_curve(n: usize, seed: u64) -> Result<CurveResult> {
    if !(MIN_CURVE_DIM..=MAX_CURVE_DIM).contains(&n) {
        return Err(Error::DimensionOutOfRange {
            n,
            min: MIN_CURVE_DIM,
            max: MAX_CURVE_DIM,
        });
    }
    let target = Distribution::uniform_on(n, &[0, (1 << n) - 1])?;
    let reference = kl(&target, &Distribution::uniform(n)?)?.to_f64();
    let rows = (0..n)
        .map(|k| {
            let mut rng = stream(seed, n as u64, k as u64);
            let partition = two_point_partition(n, k, &mut rng)?;
            let d = project_partition(&target, &partition)?.divergence.to_f64();
            Ok(CurveRow {
                k,
                divergence_bits: d,
                relative_error: d / reference,
                expected: k as f64 / (n - 1) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveResult { n, rows })
}

// ---------------------------------------------------------------------------
// construction harness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub n: usize,
    pub components: usize,
    /// Increasing sharpness values; the last one is held to
    /// [`CONSTRUCTION_TOL`].
    pub sharpness: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            n: 4,
            components: 4,
            sharpness: vec![5.0, 10.0, 20.0, 30.0],
            trials: 100,
            seed: 0,
            threads: None,
        }
    }
}

impl ConstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_TRAINING_DIM {
            return Err(Error::DimensionOutOfRange {
                n: self.n,
                min: 1,
                max: MAX_TRAINING_DIM,
            });
        }
        if self.components == 0 || self.components > 1 << self.n {
            return Err(Error::InvalidConfig(format!(
                "{} components do not fit in {} states",
                self.components,
                1usize << self.n
            )));
        }
        if self.sharpness.is_empty()
            || self.sharpness.iter().any(|a| !(a.is_finite() && *a > 0.0))
            || self.sharpness.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidConfig(
                "sharpness sweep must be positive and strictly increasing".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionRow {
    pub trial: usize,
    pub components: usize,
    pub sharpness: f64,
    pub kl_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionResult {
    pub rows: Vec<ConstructionRow>,
    /// Per trial: KL non-increasing over the sweep and below
    /// [`CONSTRUCTION_TOL`] at the last sharpness.
    pub passed: Vec<bool>,
}

impl Table for ConstructionResult {
    type Row = ConstructionRow;
    const HEADER: &'static str = "trial,components,sharpness,kl_bits";

    fn rows(&self) -> &[ConstructionRow] {
        &self.rows
    }

    fn csv_line(r: &ConstructionRow) -> String {
        format!("{},{},{},{}", r.trial, r.components, r.sharpness, r.kl_bits)
    }
}

impl ConstructionResult {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }
}

/// Random cubical partial partition with `components` blocks: the cube is
/// split along random free coordinates into `components + extra` faces
/// (`extra` uniform in `0..components`), and `components` of them are kept.
pub fn random_partial_partition<R: Rng + ?Sized>(
    n: usize,
    components: usize,
    rng: &mut R,
) -> Result<Partition> {
    if components == 0 || components > 1 << n {
        return Err(Error::BlockCountOutOfRange {
            blocks: components,
            max: 1 << n,
        });
    }
    let extra = rng.gen_range(0..components);
    let total = (components + extra).min(1 << n);
    let mut faces = vec![Face::full(n)?];
    while faces.len() < total {
        let splittable: Vec<usize> = (0..faces.len()).filter(|&i| faces[i].dim() > 0).collect();
        let f = faces.swap_remove(splittable[rng.gen_range(0..splittable.len())]);
        let coords = f.free_coords();
        let i = coords[rng.gen_range(0..coords.len())];
        let mask = f.fixed_mask() | 1 << i;
        faces.push(Face::new(n, mask, f.fixed_values())?);
        faces.push(Face::new(n, mask, f.fixed_values() | 1 << i)?);
    }
    faces.shuffle(rng);
    faces.truncate(components);
    Partition::from_faces(n, faces)
}

/// Builds the mixture RBM of random targets for each sharpness in the sweep
/// and records `D(target || model)`.
pub fn run_construction_verification(cfg: &ConstructionConfig) -> Result<ConstructionResult> {
    cfg.validate()?;
    let trials = run_indexed(cfg.threads, cfg.trials, |t| {
        let mut rng = stream(cfg.seed, cfg.components as u64, t as u64);
        let partition = random_partial_partition(cfg.n, cfg.components, &mut rng)?;
        let mixture = random_mixture_with(&partition, &mut rng)?;
        let target = mixture.densify();
        cfg.sharpness
            .iter()
            .map(|&a| {
                let params = build_mixture_rbm(&mixture, mixture.heaviest_component(), a)?;
                kl_to_model(&target, &params)
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let mut rows = Vec::with_capacity(cfg.trials * cfg.sharpness.len());
    let mut passed = Vec::with_capacity(cfg.trials);
    for (trial, kls) in trials.iter().enumerate() {
        for (&sharpness, &kl_bits) in cfg.sharpness.iter().zip(kls) {
            rows.push(ConstructionRow {
                trial,
                components: cfg.components,
                sharpness,
                kl_bits,
            });
        }
        let monotone = kls.windows(2).all(|w| w[1] <= w[0] + MONOTONE_TOL);
        let last = *kls.last().expect("non-empty sweep");
        passed.push(monotone && last < CONSTRUCTION_TOL);
    }
    Ok(ConstructionResult { rows, passed })
}
