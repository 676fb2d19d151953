//! Canned configurations for the bundled studies. The check suites and the
//! comparison experiments all start from these, so the exact task shapes
//! and per-method step sizes live in one place.

use crate::optim::{Hyperparams, Schedule};
use crate::sim::{
    AKind, CompressionParams, LogisticSpec, Method, ProblemSpec, QuadraticSpec, RunConfig,
    VecSpec,
};

/// Step sizes for the two-class logistic comparison, one pair per method:
/// each is the grid winner for its own method on this task (cosine
/// schedule, zero start, means over seeds 42/52/62). The sign methods take
/// lion-style small steps with the heavier decay that suits them; methods
/// that apply raw (quantized or sparsified) gradient averages need larger
/// steps to move at a comparable speed.
pub fn comparison_hyper(method: Method) -> Hyperparams {
    let (lr, wd) = match method {
        Method::DLionMavo | Method::DLionAvg | Method::GLion => (2e-3, 5e-3),
        Method::DSignumMavo | Method::DSignumAvg => (2e-3, 5e-3),
        Method::GAdamw => (5e-3, 5e-4),
        Method::Terngrad => (1e-1, 5e-4),
        Method::Graddrop => (5e-2, 5e-4),
        Method::Dgc => (1e-2, 5e-4),
    };
    Hyperparams {
        lr,
        weight_decay: wd,
        ..Hyperparams::default()
    }
}

/// The two-class logistic comparison task: 2000 rows in 20 dimensions at
/// separation 4, eight workers on batches of 32, 2000 rounds, and a 4% keep
/// fraction for the sparse baselines.
pub fn comparison_config(method: Method, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default_config();
    cfg.method = method;
    cfg.problem = ProblemSpec::Logistic(LogisticSpec {
        n: 2000,
        dim: 20,
        separation: 4.0,
        reg: 0.0,
        x0: VecSpec::default(),
        dataset: None,
    });
    cfg.workers = 8;
    cfg.batch_size = 32;
    cfg.rounds = 2000;
    cfg.master_seed = seed;
    cfg.hyper = comparison_hyper(method);
    cfg.schedule = Schedule::Cosine;
    cfg.compression = CompressionParams {
        keep: 0.04,
        ..CompressionParams::default()
    };
    cfg
}

/// The aggregation-noise study: identity quadratic with the optimum at
/// 3·1 (well inside the box of radius 10), unit gradient noise, and
/// single-sample batches. The long horizon lets the KKT score settle onto
/// its floor, which is what the worker-count comparison reads off.
pub fn noise_floor_config(method: Method, workers: u32, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default_config();
    cfg.method = method;
    cfg.workers = workers;
    cfg.batch_size = 1;
    cfg.rounds = 5000;
    cfg.master_seed = seed;
    cfg.hyper = Hyperparams {
        beta1: 0.9,
        beta2: 0.99,
        lr: 0.01,
        weight_decay: 0.1,
    };
    cfg
}

/// The contraction study: a spike start at 20 on coordinate 0 sits at
/// distance exactly 10 from the box of radius 10, and lr·wd = 0.01 forces
/// per-round shrinkage by at least the 0.99 factor until entry.
pub fn contraction_config() -> RunConfig {
    let mut cfg = RunConfig::default_config();
    cfg.method = Method::DLionMavo;
    cfg.problem = ProblemSpec::Quadratic(QuadraticSpec {
        dim: 50,
        sigma: 1.0,
        a: AKind::default(),
        x_star: VecSpec::default(),
        x0: VecSpec::spike(20.0),
    });
    cfg.workers = 4;
    cfg.rounds = 400;
    cfg.master_seed = 1;
    cfg.hyper = Hyperparams {
        beta1: 0.9,
        beta2: 0.99,
        lr: 0.1,
        weight_decay: 0.1,
    };
    cfg
}
