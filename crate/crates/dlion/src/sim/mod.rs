//! The bulk-synchronous training simulator: run configuration, per-round
//! logs, and the trainer that executes worker compute, wire round-trips,
//! server aggregation, and broadcast application.
//!
//! Everything a run produces is a pure function of its [`RunConfig`]. All
//! randomness flows through counter-based streams keyed by (purpose, worker,
//! round), so worker 0's draws do not depend on how many peers it has, and
//! thread count never touches results.

use crate::bandwidth::BandwidthLedger;
use crate::compress::DgcConfig;
use crate::error::{Error, Result};
use crate::optim::{AdamParams, AdamWState, Hyperparams, LionState, Schedule, SignumState};
use crate::problems::{
    generate_blobs, generate_two_class, load_csv_dataset, Curvature, GradientOracle,
    LogisticProblem, MlpProblem, Problem, QuadraticProblem, Shard,
};
use crate::rng::{gaussian, stream, Purpose};
use std::fmt;
use std::path::PathBuf;

mod trainer;
pub use trainer::{run_momenta_reference, run_training, Trainer};

/// Initialization stream slots under [`Purpose::ProblemInit`], so dataset,
/// optimum, curvature, and starting point draw from disjoint streams.
const SLOT_DATASET: u64 = 0;
const SLOT_X_STAR: u64 = 1;
const SLOT_PSD: u64 = 2;
const SLOT_X0: u64 = 3;

/// Training schemes the simulator can run. The `d_` prefix marks schemes
/// whose workers send sign updates; `g_` marks full-precision gradient
/// averaging at the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DLionMavo,
    DLionAvg,
    GLion,
    GAdamw,
    DSignumMavo,
    DSignumAvg,
    Terngrad,
    Graddrop,
    Dgc,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::DLionMavo,
        Method::DLionAvg,
        Method::GLion,
        Method::GAdamw,
        Method::DSignumMavo,
        Method::DSignumAvg,
        Method::Terngrad,
        Method::Graddrop,
        Method::Dgc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DLionMavo => "d_lion_mavo",
            Method::DLionAvg => "d_lion_avg",
            Method::GLion => "g_lion",
            Method::GAdamw => "g_adamw",
            Method::DSignumMavo => "d_signum_mavo",
            Method::DSignumAvg => "d_signum_avg",
            Method::Terngrad => "terngrad",
            Method::Graddrop => "graddrop",
            Method::Dgc => "dgc",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidParameter(format!(
                    "unknown method {s:?}; expected one of: {}",
                    names.join(", ")
                ))
            })
    }

    /// Schemes where the server averages raw gradients and keeps the only
    /// optimizer state.
    pub fn is_global(self) -> bool {
        matches!(self, Method::GLion | Method::GAdamw)
    }

    /// Schemes whose uplink is a per-coordinate sign update.
    pub fn sends_signs(self) -> bool {
        matches!(
            self,
            Method::DLionMavo | Method::DLionAvg | Method::DSignumMavo | Method::DSignumAvg
        )
    }

    /// Schemes whose uplink is a sparse top-k payload.
    pub fn sends_sparse(self) -> bool {
        matches!(self, Method::Graddrop | Method::Dgc)
    }

    pub fn uses_majority_vote(self) -> bool {
        matches!(self, Method::DLionMavo | Method::DSignumMavo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Uplink/downlink codec for sign updates. One-bit halves the sign traffic
/// but cannot represent 0, which it maps to +1; ternary is lossless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    OneBit,
    #[default]
    Ternary,
}

/// How dataset problems hand data to workers: everyone samples the full
/// dataset i.i.d., or each worker owns a disjoint slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardMode {
    #[default]
    Iid,
    Disjoint,
}

/// Knobs for the sparse compressors. `keep` is the fraction of coordinates
/// transmitted; the remaining fields configure momentum correction,
/// clipping, and warmup and matter only to the momentum-corrected variant.
/// `clip_norm` is optional so that "no clipping" survives serialization
/// formats without an infinity literal; leave it unset to disable clipping.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionParams {
    pub keep: f64,
    pub momentum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    pub warmup: Vec<f64>,
    pub rounds_per_stage: usize,
}

impl Default for CompressionParams {
    fn default() -> Self {
        let d = DgcConfig::default();
        CompressionParams {
            keep: d.keep_fraction,
            momentum: d.momentum,
            clip_norm: None,
            warmup: d.warmup,
            rounds_per_stage: d.rounds_per_stage,
        }
    }
}

impl CompressionParams {
    pub fn to_dgc(&self) -> Result<DgcConfig> {
        if let Some(c) = self.clip_norm {
            if !c.is_finite() {
                return Err(Error::Config(
                    "clip_norm must be finite; omit it to disable clipping".into(),
                ));
            }
        }
        DgcConfig::new(
            self.keep,
            self.momentum,
            self.clip_norm.unwrap_or(f64::INFINITY),
            self.warmup.clone(),
            self.rounds_per_stage,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.to_dgc().map(|_| ())
    }
}

/// Recipe for a deterministic vector: all zeros, a constant, a single spike
/// at coordinate 0, or a seeded Gaussian draw.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VecSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl Default for VecSpec {
    fn default() -> Self {
        VecSpec {
            kind: "zeros".into(),
            value: None,
            scale: None,
        }
    }
}

impl VecSpec {
    pub fn constant(value: f64) -> Self {
        VecSpec {
            kind: "constant".into(),
            value: Some(value),
            scale: None,
        }
    }

    pub fn spike(value: f64) -> Self {
        VecSpec {
            kind: "spike".into(),
            value: Some(value),
            scale: None,
        }
    }

    pub fn gaussian(scale: f64) -> Self {
        VecSpec {
            kind: "gaussian".into(),
            value: None,
            scale: Some(scale),
        }
    }

    fn check_fields(&self, wants_value: bool, wants_scale: bool) -> Result<()> {
        if self.value.is_some() != wants_value {
            return Err(Error::Config(format!(
                "vector kind {:?} {} a `value` field",
                self.kind,
                if wants_value { "requires" } else { "does not take" }
            )));
        }
        if self.scale.is_some() && !wants_scale {
            return Err(Error::Config(format!(
                "vector kind {:?} does not take a `scale` field",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind.as_str() {
            "zeros" => self.check_fields(false, false),
            "constant" | "spike" => {
                self.check_fields(true, false)?;
                let v = self.value.unwrap();
                if !v.is_finite() {
                    return Err(Error::Config(format!("vector value must be finite, got {v}")));
                }
                Ok(())
            }
            "gaussian" => {
                self.check_fields(false, true)?;
                let s = self.scale.unwrap_or(1.0);
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::Config(format!(
                        "gaussian scale must be nonnegative and finite, got {s}"
                    )));
                }
                Ok(())
            }
            other => Err(Error::Config(format!(
                "unknown vector kind {other:?}; expected zeros, constant, spike, or gaussian"
            ))),
        }
    }

    fn resolve(&self, dim: usize, seed: u64, slot: u64) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match self.kind.as_str() {
            "zeros" => vec![0.0; dim],
            "constant" => vec![self.value.unwrap(); dim],
            "spike" => {
                let mut v = vec![0.0; dim];
                v[0] = self.value.unwrap();
                v
            }
            "gaussian" => {
                let scale = self.scale.unwrap_or(1.0);
                let mut rng = stream(seed, Purpose::ProblemInit, 0, slot);
                (0..dim).map(|_| scale * gaussian(&mut rng)).collect()
            }
            _ => unreachable!("validated above"),
        })
    }
}

/// Recipe for the quadratic's curvature: identity, a diagonal ramp between
/// two eigenvalues, or a seeded random positive definite matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AKind {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Default for AKind {
    fn default() -> Self {
        AKind {
            kind: "identity".into(),
            min: None,
            max: None,
        }
    }
}

impl AKind {
    pub fn diag_linspace(min: f64, max: f64) -> Self {
        AKind {
            kind: "diag_linspace".into(),
            min: Some(min),
            max: Some(max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind.as_str() {
            "identity" | "random_psd" => {
                if self.min.is_some() || self.max.is_some() {
                    return Err(Error::Config(format!(
                        "curvature kind {:?} does not take min/max",
                        self.kind
                    )));
                }
                Ok(())
            }
            "diag_linspace" => match (self.min, self.max) {
                (Some(lo), Some(hi)) if 0.0 <= lo && lo <= hi && hi.is_finite() => Ok(()),
                _ => Err(Error::Config(
                    "diag_linspace needs 0 <= min <= max, both finite".into(),
                )),
            },
            other => Err(Error::Config(format!(
                "unknown curvature kind {other:?}; expected identity, diag_linspace, or random_psd"
            ))),
        }
    }

    fn resolve(&self, dim: usize, seed: u64) -> Result<Curvature> {
        self.validate()?;
        Ok(match self.kind.as_str() {
            "identity" => Curvature::Identity,
            "diag_linspace" => {
                let (lo, hi) = (self.min.unwrap(), self.max.unwrap());
                let diag: Vec<f64> = if dim == 1 {
                    vec![lo]
                } else {
                    (0..dim)
                        .map(|k| lo + (hi - lo) * k as f64 / (dim - 1) as f64)
                        .collect()
                };
                Curvature::Diag(diag)
            }
            "random_psd" => crate::problems::random_psd(dim, stream(seed, Purpose::ProblemInit, 0, SLOT_PSD)),
            _ => unreachable!("validated above"),
        })
    }
}

/// Noisy quadratic problem settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub a: AKind,
    #[serde(default)]
    pub x_star: VecSpec,
    #[serde(default)]
    pub x0: VecSpec,
}

fn default_n() -> usize {
    1000
}

fn default_dim() -> usize {
    20
}

fn default_separation() -> f64 {
    4.0
}

fn default_hidden() -> usize {
    16
}

fn default_classes() -> usize {
    3
}

fn default_x0_scale() -> f64 {
    0.1
}

/// Binary logistic regression settings. With `dataset` set, samples come
/// from that CSV file and the generator fields n/dim/separation are unused.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub reg: f64,
    #[serde(default)]
    pub x0: VecSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

/// One-hidden-layer tanh classifier settings; parameters start as a seeded
/// Gaussian draw scaled by `x0_scale`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dim")]
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_x0_scale")]
    pub x0_scale: f64,
}

/// Which objective to train, with its construction recipe. Everything is
/// rebuilt deterministically from the master seed at trainer startup.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
    Mlp(MlpSpec),
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemSpec::Quadratic(q) => {
                if q.dim == 0 {
                    return Err(Error::Config("quadratic dim must be >= 1".into()));
                }
                if !(q.sigma >= 0.0 && q.sigma.is_finite()) {
                    return Err(Error::Config(format!(
                        "sigma must be nonnegative and finite, got {}",
                        q.sigma
                    )));
                }
                q.a.validate()?;
                q.x_star.validate()?;
                q.x0.validate()
            }
            ProblemSpec::Logistic(l) => {
                if l.dataset.is_none() && (l.n == 0 || l.dim == 0) {
                    return Err(Error::Config("logistic needs n >= 1 and dim >= 1".into()));
                }
                if !(l.separation >= 0.0 && l.separation.is_finite()) {
                    return Err(Error::Config("separation must be nonnegative and finite".into()));
                }
                if !(l.reg >= 0.0 && l.reg.is_finite()) {
                    return Err(Error::Config("reg must be nonnegative and finite".into()));
                }
                l.x0.validate()
            }
            ProblemSpec::Mlp(m) => {
                if m.n == 0 || m.input_dim == 0 || m.hidden == 0 {
                    return Err(Error::Config(
                        "mlp needs n, input_dim, and hidden all >= 1".into(),
                    ));
                }
                if !(2..=256).contains(&m.classes) {
                    return Err(Error::Config("mlp classes must be in 2..=256".into()));
                }
                if !(m.separation >= 0.0 && m.separation.is_finite()) {
                    return Err(Error::Config("separation must be nonnegative and finite".into()));
                }
                if !(m.x0_scale >= 0.0 && m.x0_scale.is_finite()) {
                    return Err(Error::Config("x0_scale must be nonnegative and finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Builds the objective; all draws key off the master seed.
    pub fn build(&self, master_seed: u64) -> Result<Problem> {
        self.validate()?;
        Ok(match self {
            ProblemSpec::Quadratic(q) => {
                let a = q.a.resolve(q.dim, master_seed)?;
                let x_star = q.x_star.resolve(q.dim, master_seed, SLOT_X_STAR)?;
                Problem::Quadratic(QuadraticProblem::new(a, x_star, q.sigma)?)
            }
            ProblemSpec::Logistic(l) => {
                let data = match &l.dataset {
                    Some(path) => load_csv_dataset(path)?,
                    None => generate_two_class(
                        seed_with_slot(master_seed, SLOT_DATASET),
                        l.n,
                        l.dim,
                        l.separation,
                    )?,
                };
                Problem::Logistic(LogisticProblem::new(data, l.reg)?)
            }
            ProblemSpec::Mlp(m) => {
                let data = generate_blobs(
                    seed_with_slot(master_seed, SLOT_DATASET),
                    m.n,
                    m.input_dim,
                    m.classes,
                    m.separation,
                )?;
                Problem::Mlp(MlpProblem::new(data, m.hidden, m.classes)?)
            }
        })
    }

    /// Starting parameter vector for a problem built from the same seed.
    pub fn initial_x(&self, master_seed: u64, problem: &Problem) -> Result<Vec<f64>> {
        match self {
            ProblemSpec::Quadratic(q) => q.x0.resolve(q.dim, master_seed, SLOT_X0),
            ProblemSpec::Logistic(l) => l.x0.resolve(problem.dim(), master_seed, SLOT_X0),
            ProblemSpec::Mlp(m) => {
                VecSpec::gaussian(m.x0_scale).resolve(problem.dim(), master_seed, SLOT_X0)
            }
        }
    }
}

/// Dataset generation takes a plain seed; fold the slot in so generated data
/// stays tied to the master seed but distinct from other init streams.
fn seed_with_slot(master_seed: u64, slot: u64) -> u64 {
    master_seed.wrapping_add(slot)
}

/// Complete description of one training run. Two equal configs produce
/// byte-identical logs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub problem: ProblemSpec,
    #[serde(default = "default_workers")]
    pub workers: u32,
    #[serde(default = "default_batch")]
    pub batch_size: u32,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default = "default_signum_beta")]
    pub signum_beta: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub codec: CodecMode,
    #[serde(default)]
    pub shard_mode: ShardMode,
    #[serde(default)]
    pub compression: CompressionParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_grad_norm: Option<f64>,
}

fn default_workers() -> u32 {
    4
}

fn default_batch() -> u32 {
    1
}

fn default_rounds() -> u64 {
    200
}

fn default_signum_beta() -> f64 {
    0.99
}

impl RunConfig {
    /// A runnable default: majority-vote sign aggregation on the noisy
    /// quadratic with the optimum pushed away from the origin, so both
    /// training phases are visible in a short run.
    pub fn default_config() -> Self {
        RunConfig {
            method: Method::DLionMavo,
            problem: ProblemSpec::Quadratic(QuadraticSpec {
                dim: 20,
                sigma: 1.0,
                a: AKind::default(),
                x_star: VecSpec::constant(3.0),
                x0: VecSpec::default(),
            }),
            workers: default_workers(),
            batch_size: default_batch(),
            rounds: default_rounds(),
            master_seed: 0,
            hyper: Hyperparams::default(),
            adam: AdamParams::default(),
            signum_beta: default_signum_beta(),
            schedule: Schedule::Constant,
            codec: CodecMode::default(),
            shard_mode: ShardMode::default(),
            compression: CompressionParams::default(),
            early_stop_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        self.hyper.validate().map_err(config_err)?;
        AdamParams::new(self.adam.beta1, self.adam.beta2, self.adam.eps).map_err(config_err)?;
        if !(0.0..1.0).contains(&self.signum_beta) {
            return Err(Error::Config(format!(
                "signum_beta must be in [0, 1), got {}",
                self.signum_beta
            )));
        }
        self.compression.validate().map_err(config_err)?;
        self.problem.validate()?;
        if self.shard_mode == ShardMode::Disjoint
            && matches!(self.problem, ProblemSpec::Quadratic(_))
        {
            return Err(Error::Config(
                "disjoint sharding needs a dataset problem; the quadratic has no samples".into(),
            ));
        }
        if let Some(t) = self.early_stop_grad_norm {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "early_stop_grad_norm must be positive and finite, got {t}"
                )));
            }
        }
        Ok(())
    }
}

fn config_err(e: Error) -> Error {
    Error::Config(e.to_string())
}

/// Execution knobs that must not influence results: worker parallelism and
/// whether the trainer retains the full parameter trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOpts {
    pub threads: usize,
    pub keep_trajectory: bool,
}

impl Default for ExecOpts {
    fn default() -> Self {
        ExecOpts {
            threads: 1,
            keep_trajectory: false,
        }
    }
}

/// Serializable per-worker (or server) optimizer state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptState {
    Lion(LionState),
    Signum(SignumState),
    AdamW(AdamWState),
    None,
}

/// One row of the run log; the CSV schema mirrors these fields minus the
/// wall-clock, which is measurement, not result.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundLog {
    /// 1-based round index; the row describes state after this round.
    pub round: u64,
    /// Mean of the workers' minibatch loss estimates.
    pub loss: f64,
    pub full_loss: f64,
    pub kkt_score: f64,
    /// l2 distance to the weight-decay feasible box.
    pub dist_f: f64,
    /// Uplink payload bits this round, summed over workers.
    pub up_bits: u64,
    /// Downlink payload bits this round; the broadcast is counted once.
    pub down_bits: u64,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// Everything a finished run yields.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub rounds: Vec<RoundLog>,
    /// x before round 1, then after each round; only kept on request.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Vec<f64>>>,
    pub final_x: Vec<f64>,
    pub final_accuracy: Option<f64>,
    pub ledger: BandwidthLedger,
    pub stopped_early: bool,
}

/// Builds each worker's sampling view of a dataset of `len` rows. I.i.d.
/// mode hands everyone the full range; disjoint mode deals a seeded shuffle
/// into contiguous, pairwise-disjoint chunks covering the dataset.
pub fn shard_data(len: usize, workers: u32, mode: ShardMode, seed: u64) -> Result<Vec<Shard>> {
    if workers == 0 {
        return Err(Error::invalid_input("worker count must be at least 1"));
    }
    if len == 0 {
        return Err(Error::invalid_input("cannot shard an empty dataset"));
    }
    match mode {
        ShardMode::Iid => Ok((0..workers).map(|_| Shard::Full { len }).collect()),
        ShardMode::Disjoint => {
            if len < workers as usize {
                return Err(Error::InvalidInput(format!(
                    "disjoint sharding needs at least one row per worker ({len} rows, {workers} workers)"
                )));
            }
            let mut order: Vec<u32> = (0..len as u32).collect();
            let mut rng = stream(seed, Purpose::Shard, 0, 0);
            // Fisher-Yates
            for i in (1..order.len()).rev() {
                let j = rand::RngExt::random_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            let n = workers as usize;
            let mut shards = Vec::with_capacity(n);
            for w in 0..n {
                let lo = w * len / n;
                let hi = (w + 1) * len / n;
                let mut indices = order[lo..hi].to_vec();
                indices.sort_unstable();
                shards.push(Shard::Subset { indices });
            }
            Ok(shards)
        }
    }
}

#[cfg(test)]
mod config_tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert!(Method::parse("fedavg").is_err());
    }

    #[test]
    fn default_config_validates() {
        let cfg = RunConfig::default_config();
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let mut cfg = RunConfig::default_config();
        cfg.workers = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RunConfig::default_config();
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default_config();
        cfg.signum_beta = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default_config();
        cfg.hyper.lr = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RunConfig::default_config();
        cfg.compression.keep = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default_config();
        cfg.shard_mode = ShardMode::Disjoint;
        assert!(cfg.validate().is_err(), "quadratic has nothing to shard");

        let mut cfg = RunConfig::default_config();
        cfg.early_stop_grad_norm = Some(0.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn vec_specs_resolve_and_reject() {
        let zeros = VecSpec::default();
        assert_eq!(zeros.resolve(3, 0, SLOT_X0).unwrap(), vec![0.0; 3]);

        let c = VecSpec::constant(2.5);
        assert_eq!(c.resolve(2, 0, SLOT_X0).unwrap(), vec![2.5, 2.5]);

        let s = VecSpec::spike(20.0);
        assert_eq!(s.resolve(3, 0, SLOT_X0).unwrap(), vec![20.0, 0.0, 0.0]);

        let g = VecSpec::gaussian(0.5);
        let a = g.resolve(4, 7, SLOT_X0).unwrap();
        let b = g.resolve(4, 7, SLOT_X0).unwrap();
        assert_eq!(a, b);
        let other_slot = g.resolve(4, 7, SLOT_X_STAR).unwrap();
        assert_ne!(a, other_slot);

        let bad = VecSpec {
            kind: "ones".into(),
            value: None,
            scale: None,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));

        let mixed = VecSpec {
            kind: "zeros".into(),
            value: Some(1.0),
            scale: None,
        };
        assert!(mixed.validate().is_err());

        let missing = VecSpec {
            kind: "constant".into(),
            value: None,
            scale: None,
        };
        assert!(missing.validate().is_err());
    }

    #[test]
    fn curvature_specs_resolve() {
        assert_eq!(
            AKind::default().resolve(3, 0).unwrap(),
            Curvature::Identity
        );
        match AKind::diag_linspace(1.0, 3.0).resolve(3, 0).unwrap() {
            Curvature::Diag(d) => assert_eq!(d, vec![1.0, 2.0, 3.0]),
            other => panic!("expected diagonal, got {other:?}"),
        }
        match AKind::diag_linspace(2.0, 5.0).resolve(1, 0).unwrap() {
            Curvature::Diag(d) => assert_eq!(d, vec![2.0]),
            other => panic!("expected diagonal, got {other:?}"),
        }
        assert!(AKind::diag_linspace(3.0, 1.0).validate().is_err());
        let extra = AKind {
            kind: "identity".into(),
            min: Some(1.0),
            max: None,
        };
        assert!(extra.validate().is_err());
    }

    #[test]
    fn problem_builds_are_deterministic_in_the_master_seed() {
        let spec = ProblemSpec::Logistic(LogisticSpec {
            n: 30,
            dim: 4,
            separation: 2.0,
            reg: 0.0,
            x0: VecSpec::default(),
            dataset: None,
        });
        let a = spec.build(5).unwrap();
        let b = spec.build(5).unwrap();
        let c = spec.build(6).unwrap();
        match (&a, &b, &c) {
            (Problem::Logistic(pa), Problem::Logistic(pb), Problem::Logistic(pc)) => {
                assert_eq!(pa.data(), pb.data());
                assert_ne!(pa.data(), pc.data());
            }
            _ => panic!("expected logistic problems"),
        }
        assert_eq!(
            spec.initial_x(5, &a).unwrap(),
            spec.initial_x(5, &b).unwrap()
        );
    }

    #[test]
    fn mlp_spec_builds_with_scaled_gaussian_start() {
        let spec = ProblemSpec::Mlp(MlpSpec {
            n: 24,
            input_dim: 3,
            hidden: 4,
            classes: 3,
            separation: 2.0,
            x0_scale: 0.1,
        });
        let p = spec.build(1).unwrap();
        let x0 = spec.initial_x(1, &p).unwrap();
        assert_eq!(x0.len(), p.dim());
        assert!(x0.iter().any(|&v| v != 0.0));
        assert!(x0.iter().all(|&v| v.abs() < 1.0), "scale 0.1 draws stay small");
    }

    #[test]
    fn iid_shards_cover_everything_disjoint_shards_partition() {
        let iid = shard_data(100, 4, ShardMode::Iid, 0).unwrap();
        assert_eq!(iid.len(), 4);
        assert!(iid.iter().all(|s| s.len() == 100));

        let disjoint = shard_data(100, 4, ShardMode::Disjoint, 0).unwrap();
        assert_eq!(disjoint.len(), 4);
        let mut seen = vec![false; 100];
        for shard in &disjoint {
            assert_eq!(shard.len(), 25);
            match shard {
                Shard::Subset { indices } => {
                    for &i in indices {
                        assert!(!seen[i as usize], "index {i} dealt twice");
                        seen[i as usize] = true;
                    }
                }
                other => panic!("expected subset, got {other:?}"),
            }
        }
        assert!(seen.into_iter().all(|b| b));

        let again = shard_data(100, 4, ShardMode::Disjoint, 0).unwrap();
        assert_eq!(disjoint, again);
        let other_seed = shard_data(100, 4, ShardMode::Disjoint, 1).unwrap();
        assert_ne!(disjoint, other_seed);

        assert!(shard_data(0, 4, ShardMode::Iid, 0).is_err());
        assert!(shard_data(3, 4, ShardMode::Disjoint, 0).is_err());
        assert!(shard_data(10, 0, ShardMode::Iid, 0).is_err());
    }

    #[test]
    fn uneven_disjoint_shards_stay_balanced() {
        let shards = shard_data(10, 3, ShardMode::Disjoint, 2).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert!(sizes.iter().all(|&s| s == 3 || s == 4));
    }

    #[test]
    fn run_config_toml_round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig::default_config();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);

        let bad = text.replace("weight_decay", "weight_decat");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
    }
}
