//! The round loop: worker compute, wire round-trips, server aggregation,
//! synchronized application, and per-round bookkeeping.
//!
//! Every update that the protocol would transmit really is packed to bytes
//! and unpacked again, so codec distortions (and their absence) are part of
//! the simulated dynamics, and the ledger can count payload bits straight
//! off the encoded buffers.

use super::{CodecMode, ExecOpts, Method, OptState, RoundLog, RunConfig, RunLog};
use crate::agg::{aggregate_avg, aggregate_majority, sum_deltas};
use crate::bandwidth::{table_formula_bits, BandwidthLedger, RoundTraffic, Traffic};
use crate::checkpoint::Snapshot;
use crate::compress::{
    dgc_compress, graddrop_compress, terngrad_compress_scaled, CompressorState,
};
use crate::error::{Error, Result};
use crate::math::{dist_to_feasible, norm_l2, norm_linf, sign_scalar, Norm};
use crate::metrics::kkt_score;
use crate::optim::{
    adamw_step, apply_gradient_step, apply_update, lion_delta, lr_factor, signum_delta,
    AdamWState, Hyperparams, LionState, SignumState,
};
use crate::problems::{GradientOracle, Problem, Shard};
use crate::rng::worker_round;
use crate::sim::shard_data;
use crate::wire::{
    binary_payload_bits, pack_binary, pack_signed_levels, pack_sparse, pack_sum, pack_ternary,
    signed_payload_bits, sparse_payload_bits, sum_payload_bits, ternary_payload_bits,
    unpack_binary, unpack_signed_levels, unpack_sparse, unpack_sum, unpack_ternary, SignUpdate,
    SparseUpdate,
};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Runs `job` for workers `0..n` and returns the outputs in worker order.
/// With one thread this is a plain loop; with more, contiguous worker ranges
/// go to scoped threads and the chunks are merged back in order. Either way
/// the result is a function of worker index alone, so the thread count can
/// never change what a run computes.
fn for_each_worker<T, F>(threads: usize, n: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let k = threads.clamp(1, n.max(1));
    if k <= 1 {
        return (0..n).map(job).collect();
    }
    let mut chunks: Vec<Result<Vec<T>>> = Vec::with_capacity(k);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(k);
        for t in 0..k {
            let lo = t * n / k;
            let hi = (t + 1) * n / k;
            let job = &job;
            handles.push(scope.spawn(move || (lo..hi).map(job).collect()));
        }
        for h in handles {
            chunks.push(h.join().expect("worker thread panicked"));
        }
    });
    let mut out = Vec::with_capacity(n);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Elementwise pairwise-tree sum over equal-length vectors; the fixed
/// reduction order keeps gradient averaging reproducible regardless of how
/// the worker compute was scheduled.
fn pairwise_sum(vecs: &[Vec<f64>]) -> Vec<f64> {
    debug_assert!(!vecs.is_empty());
    if vecs.len() == 1 {
        return vecs[0].clone();
    }
    let mid = vecs.len() / 2;
    let mut left = pairwise_sum(&vecs[..mid]);
    let right = pairwise_sum(&vecs[mid..]);
    for (l, r) in left.iter_mut().zip(&right) {
        *l += r;
    }
    left
}

fn pairwise_mean(vecs: &[Vec<f64>]) -> Vec<f64> {
    let mut sum = pairwise_sum(vecs);
    let n = vecs.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    sum
}

/// Mean of per-worker minibatch losses, folded in worker order.
fn mean_loss(losses: &[f64]) -> f64 {
    losses.iter().sum::<f64>() / losses.len() as f64
}

fn state_dim_mismatch(s: &OptState, d: usize) -> bool {
    match s {
        OptState::Lion(s) => s.m.len() != d,
        OptState::Signum(s) => s.m.len() != d,
        OptState::AdamW(s) => s.m.len() != d || s.v.len() != d,
        OptState::None => false,
    }
}

/// Drives one configured run. Owns the problem, each worker's replica of the
/// parameters and its optimizer state, and the traffic ledger; one `step` is
/// one communication round.
///
/// Every worker holds its own copy of x. The protocol keeps the copies
/// bitwise equal (everyone applies the same broadcast bytes), and the
/// trainer verifies that invariant after every round rather than assuming
/// it.
pub struct Trainer {
    cfg: RunConfig,
    opts: ExecOpts,
    problem: Problem,
    shards: Vec<Shard>,
    xs: Vec<Vec<f64>>,
    worker_opt: Vec<OptState>,
    compressors: Vec<CompressorState>,
    global_opt: OptState,
    ledger: BandwidthLedger,
    formula_up_per_worker: f64,
    formula_down: f64,
    round_done: u64,
    stopped_early: bool,
}

impl Trainer {
    pub fn new(cfg: RunConfig, opts: ExecOpts) -> Result<Self> {
        cfg.validate()?;
        Self::assemble(cfg, opts, None)
    }

    /// Rebuilds a trainer mid-run from a checkpoint. The config travels
    /// inside the snapshot, so the continuation cannot drift from the
    /// original run's setup.
    pub fn from_snapshot(snap: Snapshot, opts: ExecOpts) -> Result<Self> {
        snap.config.validate()?;
        Self::assemble(snap.config.clone(), opts, Some(snap))
    }

    fn assemble(cfg: RunConfig, opts: ExecOpts, restore: Option<Snapshot>) -> Result<Self> {
        if opts.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        let problem = cfg.problem.build(cfg.master_seed)?;
        let d = problem.dim();
        let n = cfg.workers as usize;
        let shards = match problem.dataset_len() {
            Some(len) => shard_data(len, cfg.workers, cfg.shard_mode, cfg.master_seed)?,
            // the quadratic samples noise, not rows; give everyone a
            // trivial full view
            None => vec![Shard::Full { len: 1 }; n],
        };
        let (worker_opt, compressors, global_opt) = match cfg.method {
            Method::DLionMavo | Method::DLionAvg => (
                vec![OptState::Lion(LionState::zeros(d)); n],
                Vec::new(),
                OptState::None,
            ),
            Method::DSignumMavo | Method::DSignumAvg => {
                let s = SignumState::zeros(d, cfg.signum_beta)?;
                (vec![OptState::Signum(s); n], Vec::new(), OptState::None)
            }
            Method::GLion => (
                vec![OptState::None; n],
                Vec::new(),
                OptState::Lion(LionState::zeros(d)),
            ),
            Method::GAdamw => (
                vec![OptState::None; n],
                Vec::new(),
                OptState::AdamW(AdamWState::zeros(d)),
            ),
            Method::Terngrad => (vec![OptState::None; n], Vec::new(), OptState::None),
            Method::Graddrop | Method::Dgc => (
                vec![OptState::None; n],
                vec![CompressorState::zeros(d); n],
                OptState::None,
            ),
        };
        let (formula_up_per_worker, formula_down) =
            table_formula_bits(cfg.method, d, cfg.workers, cfg.compression.keep)?;
        let x0 = cfg.problem.initial_x(cfg.master_seed, &problem)?;
        let mut trainer = Trainer {
            cfg,
            opts,
            problem,
            shards,
            xs: vec![x0; n],
            worker_opt,
            compressors,
            global_opt,
            ledger: BandwidthLedger::new(),
            formula_up_per_worker,
            formula_down,
            round_done: 0,
            stopped_early: false,
        };
        if let Some(snap) = restore {
            trainer.restore(snap)?;
        }
        Ok(trainer)
    }

    fn restore(&mut self, snap: Snapshot) -> Result<()> {
        let d = self.problem.dim();
        let n = self.cfg.workers as usize;
        if snap.x.len() != d {
            return Err(Error::CorruptStream(format!(
                "snapshot carries {} parameters but the problem has {d}",
                snap.x.len()
            )));
        }
        if snap.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptStream(
                "snapshot parameters are not finite".into(),
            ));
        }
        if snap.round_done > self.cfg.rounds {
            return Err(Error::CorruptStream(format!(
                "snapshot is {} rounds in but the config stops at {}",
                snap.round_done, self.cfg.rounds
            )));
        }
        let shape_ok = snap.worker_opt.len() == self.worker_opt.len()
            && snap.compressors.len() == self.compressors.len()
            && std::mem::discriminant(&snap.global_opt)
                == std::mem::discriminant(&self.global_opt)
            && !state_dim_mismatch(&snap.global_opt, d)
            && snap
                .worker_opt
                .iter()
                .zip(&self.worker_opt)
                .all(|(have, want)| {
                    std::mem::discriminant(have) == std::mem::discriminant(want)
                        && !state_dim_mismatch(have, d)
                })
            && snap
                .compressors
                .iter()
                .all(|c| c.residual.len() == d && c.velocity.len() == d);
        if !shape_ok {
            return Err(Error::CorruptStream(
                "snapshot optimizer state does not match the configured method".into(),
            ));
        }
        self.xs = vec![snap.x; n];
        self.worker_opt = snap.worker_opt;
        self.compressors = snap.compressors;
        self.global_opt = snap.global_opt;
        self.ledger = snap.ledger;
        self.round_done = snap.round_done;
        self.stopped_early = snap.stopped_early;
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            config: self.cfg.clone(),
            round_done: self.round_done,
            x: self.xs[0].clone(),
            worker_opt: self.worker_opt.clone(),
            compressors: self.compressors.clone(),
            global_opt: self.global_opt.clone(),
            ledger: self.ledger.clone(),
            stopped_early: self.stopped_early,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// The shared iterate (worker 0's replica).
    pub fn x(&self) -> &[f64] {
        &self.xs[0]
    }

    pub fn ledger(&self) -> &BandwidthLedger {
        &self.ledger
    }

    pub fn round_done(&self) -> u64 {
        self.round_done
    }

    pub fn stopped_early(&self) -> bool {
        self.stopped_early
    }

    pub fn is_finished(&self) -> bool {
        self.round_done >= self.cfg.rounds || self.stopped_early
    }

    pub fn final_accuracy(&self) -> Result<Option<f64>> {
        self.problem.accuracy(self.x())
    }

    /// One worker's minibatch draw for this round. The returned generator
    /// has consumed exactly the batch's randomness, so a compressor that
    /// needs more draws this round can pick up where sampling stopped.
    fn worker_batch(&self, w: usize, round: u64) -> Result<(f64, Vec<f64>, ChaCha8Rng)> {
        let mut rng = worker_round(self.cfg.master_seed, w as u32, round);
        let (loss, grad) = self.problem.stochastic(
            &self.xs[w],
            self.cfg.batch_size as usize,
            &self.shards[w],
            &mut rng,
        )?;
        Ok((loss, grad, rng))
    }

    /// Runs one communication round and reports its log row.
    ///
    /// A `Divergence` error means the optimization blew up; `Inconsistency`
    /// means the worker replicas stopped agreeing, which would be a protocol
    /// bug and is checked every round rather than trusted.
    pub fn step(&mut self) -> Result<RoundLog> {
        if self.is_finished() {
            return Err(Error::invalid_input("run is already finished"));
        }
        let start = Instant::now();
        let round = self.round_done + 1;
        let mut h = self.cfg.hyper;
        h.lr *= lr_factor(self.cfg.schedule, round as usize, self.cfg.rounds as usize);
        let (loss, up, down) = match self.cfg.method {
            Method::DLionMavo | Method::DLionAvg | Method::DSignumMavo | Method::DSignumAvg => {
                self.round_sign(round, &h)?
            }
            Method::GLion | Method::GAdamw => self.round_global(round, &h)?,
            Method::Terngrad => self.round_terngrad(round, &h)?,
            Method::Graddrop | Method::Dgc => self.round_sparse(round, &h)?,
        };
        if !loss.is_finite() {
            return Err(Error::Divergence {
                round: round as usize,
                what: format!("minibatch loss became {loss}"),
            });
        }
        self.check_replicas(round)?;
        if self.xs[0].iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                round: round as usize,
                what: "parameters left the representable range".into(),
            });
        }
        let (full_loss, full_grad) = self.problem.full(&self.xs[0])?;
        if !full_loss.is_finite() {
            return Err(Error::Divergence {
                round: round as usize,
                what: format!("full objective became {full_loss}"),
            });
        }
        let kkt = kkt_score(&full_grad, &self.xs[0], self.cfg.hyper.weight_decay)?;
        let dist_f = if self.cfg.hyper.weight_decay > 0.0 {
            dist_to_feasible(&self.xs[0], self.cfg.hyper.weight_decay, Norm::L2)?
        } else {
            0.0
        };
        self.ledger.record(RoundTraffic {
            up,
            down,
            formula_up_per_worker_bits: self.formula_up_per_worker,
            formula_down_bits: self.formula_down,
        });
        self.round_done = round;
        if let Some(thresh) = self.cfg.early_stop_grad_norm {
            if norm_l2(&full_grad) < thresh {
                self.stopped_early = true;
            }
        }
        Ok(RoundLog {
            round,
            loss,
            full_loss,
            kkt_score: kkt,
            dist_f,
            up_bits: up.payload_bits,
            down_bits: down.payload_bits,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn check_replicas(&self, round: u64) -> Result<()> {
        let (first, rest) = self.xs.split_first().expect("at least one worker");
        for (i, x) in rest.iter().enumerate() {
            let same = x.len() == first.len()
                && x.iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::Inconsistency(format!(
                    "worker {} parameters differ from worker 0 after round {round}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Sign-update methods: each worker sends the ternary (or binary) output
    /// of its local rule, the server reduces the exact integer sum, and the
    /// broadcast is either that sum (average mode) or its sign (majority
    /// vote). Both broadcasts stay inside the unit sup-norm ball, which is
    /// what `apply_update` enforces downstream.
    fn round_sign(&mut self, round: u64, h: &Hyperparams) -> Result<(f64, Traffic, Traffic)> {
        let n = self.cfg.workers as usize;
        let d = self.problem.dim();
        let outs = for_each_worker(self.opts.threads, n, |w| {
            let (loss, grad, _) = self.worker_batch(w, round)?;
            let (delta, next) = match &self.worker_opt[w] {
                OptState::Lion(s) => {
                    let (delta, s) = lion_delta(s, &grad, h)?;
                    (delta, OptState::Lion(s))
                }
                OptState::Signum(s) => {
                    let (delta, s) = signum_delta(s, &grad)?;
                    (delta, OptState::Signum(s))
                }
                _ => {
                    return Err(Error::Inconsistency(
                        "sign-aggregation round without a sign optimizer state".into(),
                    ))
                }
            };
            Ok((loss, delta, next))
        })?;
        let mut losses = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n);
        let mut decoded = Vec::with_capacity(n);
        let mut up = Traffic::default();
        for (loss, delta, next) in outs {
            losses.push(loss);
            next_states.push(next);
            let dec = match self.cfg.codec {
                CodecMode::OneBit => {
                    let bytes = pack_binary(&delta);
                    up.add(Traffic::packed(binary_payload_bits(d), bytes.len()));
                    unpack_binary(&bytes, d)?
                }
                CodecMode::Ternary => {
                    let bytes = pack_ternary(&delta);
                    up.add(Traffic::packed(ternary_payload_bits(d), bytes.len()));
                    unpack_ternary(&bytes, d)?
                }
            };
            decoded.push(dec);
        }
        let sum = sum_deltas(&decoded)?;
        let workers = sum.workers();
        let mut down = Traffic::default();
        let applied: Vec<f64> = if self.cfg.method.uses_majority_vote() {
            let vote = aggregate_majority(&sum);
            let wire_vote =
                SignUpdate::from_signs(vote.values.iter().map(|&v| v as i8).collect());
            match self.cfg.codec {
                CodecMode::OneBit => {
                    // the one-bit alphabet has no zero symbol; exact ties
                    // leave the server as +1
                    let bytes = pack_binary(&wire_vote);
                    down.add(Traffic::packed(binary_payload_bits(d), bytes.len()));
                    unpack_binary(&bytes, d)?.to_f64()
                }
                CodecMode::Ternary => {
                    let bytes = pack_ternary(&wire_vote);
                    down.add(Traffic::packed(ternary_payload_bits(d), bytes.len()));
                    unpack_ternary(&bytes, d)?.to_f64()
                }
            }
        } else {
            match self.cfg.codec {
                CodecMode::OneBit => {
                    // strictly binary inputs give the sum a parity invariant
                    // the narrower codec relies on
                    let bytes = pack_sum(&sum)?;
                    down.add(Traffic::packed(sum_payload_bits(d, workers), bytes.len()));
                    aggregate_avg(&unpack_sum(&bytes, d, workers)?).values
                }
                CodecMode::Ternary => {
                    let bytes = pack_signed_levels(sum.values(), workers)?;
                    down.add(Traffic::packed(signed_payload_bits(d, workers), bytes.len()));
                    let levels = unpack_signed_levels(&bytes, d, workers)?;
                    let nf = workers as f64;
                    levels.iter().map(|&s| s as f64 / nf).collect()
                }
            }
        };
        for x in &mut self.xs {
            *x = apply_update(x, &applied, h)?;
        }
        self.worker_opt = next_states;
        Ok((mean_loss(&losses), up, down))
    }

    /// Gradient-averaging baselines: raw f64 gradients up, one dense
    /// parameter broadcast back. Both legs travel unpacked at 32 bits per
    /// coordinate, the conventional fp32 accounting for dense traffic.
    fn round_global(&mut self, round: u64, h: &Hyperparams) -> Result<(f64, Traffic, Traffic)> {
        let n = self.cfg.workers as usize;
        let d = self.problem.dim();
        let outs = for_each_worker(self.opts.threads, n, |w| {
            let (loss, grad, _) = self.worker_batch(w, round)?;
            Ok((loss, grad))
        })?;
        let mut losses = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for (loss, grad) in outs {
            losses.push(loss);
            grads.push(grad);
        }
        let up = Traffic::unpacked(32 * d as u64 * n as u64);
        let down = Traffic::unpacked(32 * d as u64);
        let gbar = pairwise_mean(&grads);
        let new_x = match self.cfg.method {
            Method::GLion => {
                let OptState::Lion(state) = &self.global_opt else {
                    return Err(Error::Inconsistency(
                        "gradient-averaging lion without a lion state".into(),
                    ));
                };
                let (delta, next) = lion_delta(state, &gbar, h)?;
                let x = apply_update(&self.xs[0], &delta.to_f64(), h)?;
                self.global_opt = OptState::Lion(next);
                x
            }
            Method::GAdamw => {
                let OptState::AdamW(state) = &self.global_opt else {
                    return Err(Error::Inconsistency(
                        "adamw baseline without an adamw state".into(),
                    ));
                };
                let (x, next) = adamw_step(state, &self.xs[0], &gbar, h, &self.cfg.adam)?;
                self.global_opt = OptState::AdamW(next);
                x
            }
            _ => unreachable!("round_global only handles global methods"),
        };
        for x in &mut self.xs {
            x.clone_from(&new_x);
        }
        Ok((mean_loss(&losses), up, down))
    }

    /// Ternary quantization against a shared scale. Two uplink phases: the
    /// workers first report their gradient sup-norms (one f64 each), the
    /// server folds the max in worker order and broadcasts it, then everyone
    /// quantizes against that common scale so the server can sum ternary
    /// levels exactly.
    fn round_terngrad(&mut self, round: u64, h: &Hyperparams) -> Result<(f64, Traffic, Traffic)> {
        let n = self.cfg.workers as usize;
        let d = self.problem.dim();
        let outs = for_each_worker(self.opts.threads, n, |w| self.worker_batch(w, round))?;
        let mut up = Traffic::default();
        let mut down = Traffic::default();
        let mut losses = Vec::with_capacity(n);
        let mut scale = 0.0f64;
        for (loss, grad, _) in &outs {
            losses.push(*loss);
            scale = scale.max(norm_linf(grad));
            up.add(Traffic::unpacked(64));
        }
        if !scale.is_finite() {
            return Err(Error::Divergence {
                round: round as usize,
                what: format!("gradient sup-norm became {scale}"),
            });
        }
        down.add(Traffic::unpacked(64));
        // quantization continues each worker's round stream exactly where
        // the batch draw left it, so the whole round stays one stream per
        // worker
        let mut decoded = Vec::with_capacity(n);
        for (_, grad, mut rng) in outs {
            let delta = terngrad_compress_scaled(&grad, scale, &mut rng)?;
            let bytes = pack_ternary(&delta);
            up.add(Traffic::packed(ternary_payload_bits(d), bytes.len()));
            decoded.push(unpack_ternary(&bytes, d)?);
        }
        let sum = sum_deltas(&decoded)?;
        let workers = sum.workers();
        let bytes = pack_signed_levels(sum.values(), workers)?;
        down.add(Traffic::packed(signed_payload_bits(d, workers), bytes.len()));
        let levels = unpack_signed_levels(&bytes, d, workers)?;
        let nf = workers as f64;
        let ghat: Vec<f64> = levels.iter().map(|&v| scale * v as f64 / nf).collect();
        for x in &mut self.xs {
            *x = apply_gradient_step(x, &ghat, h)?;
        }
        Ok((mean_loss(&losses), up, down))
    }

    /// Sparse methods: each worker sends the surviving (index, value) pairs,
    /// the server accumulates them densely, divides by N once, and
    /// broadcasts the union support as another sparse payload.
    fn round_sparse(&mut self, round: u64, h: &Hyperparams) -> Result<(f64, Traffic, Traffic)> {
        let n = self.cfg.workers as usize;
        let d = self.problem.dim();
        let keep = self.cfg.compression.keep;
        let dgc = self.cfg.compression.to_dgc()?;
        let momentum_corrected = self.cfg.method == Method::Dgc;
        let outs = for_each_worker(self.opts.threads, n, |w| {
            let (loss, grad, _) = self.worker_batch(w, round)?;
            let (sparse, state) = if momentum_corrected {
                dgc_compress(&self.compressors[w], &grad, &dgc)?
            } else {
                graddrop_compress(&self.compressors[w], &grad, keep)?
            };
            Ok((loss, sparse, state))
        })?;
        let mut losses = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n);
        let mut up = Traffic::default();
        let mut acc = vec![0.0f64; d];
        for (loss, sparse, state) in outs {
            losses.push(loss);
            next_states.push(state);
            let bytes = pack_sparse(&sparse);
            up.add(Traffic::packed(sparse_payload_bits(sparse.len(), d), bytes.len()));
            let dec = unpack_sparse(&bytes, d)?;
            for (&i, &v) in dec.indices().iter().zip(dec.values()) {
                acc[i as usize] += v;
            }
        }
        let nf = n as f64;
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (k, &a) in acc.iter().enumerate() {
            let v = a / nf;
            if !v.is_finite() {
                return Err(Error::Divergence {
                    round: round as usize,
                    what: format!("aggregated sparse update overflowed at coordinate {k}"),
                });
            }
            if v != 0.0 {
                idx.push(k as u32);
                val.push(v);
            }
        }
        let union = SparseUpdate::new(idx, val, d)?;
        let bytes = pack_sparse(&union);
        let mut down = Traffic::default();
        down.add(Traffic::packed(sparse_payload_bits(union.len(), d), bytes.len()));
        let ghat = unpack_sparse(&bytes, d)?.to_dense();
        for x in &mut self.xs {
            *x = apply_gradient_step(x, &ghat, h)?;
        }
        self.compressors = next_states;
        Ok((mean_loss(&losses), up, down))
    }
}

/// Runs a config to completion, capturing per-round logs and, on request,
/// the full parameter trajectory.
pub fn run_training(cfg: &RunConfig, opts: &ExecOpts) -> Result<RunLog> {
    let mut trainer = Trainer::new(cfg.clone(), *opts)?;
    let mut rounds = Vec::with_capacity(cfg.rounds as usize);
    let mut trajectory = opts.keep_trajectory.then(|| vec![trainer.x().to_vec()]);
    while !trainer.is_finished() {
        let row = trainer.step()?;
        if let Some(t) = trajectory.as_mut() {
            t.push(trainer.x().to_vec());
        }
        rounds.push(row);
    }
    let final_accuracy = trainer.final_accuracy()?;
    Ok(RunLog {
        config: trainer.cfg.clone(),
        rounds,
        trajectory,
        final_x: trainer.xs[0].clone(),
        final_accuracy,
        ledger: trainer.ledger.clone(),
        stopped_early: trainer.stopped_early,
    })
}

/// Reference implementation of the gradient-averaging lion baseline that
/// keeps one momentum per worker and averages the blended directions, the
/// way the distributed schemes do, instead of averaging gradients into one
/// server momentum. Momenta are linear in the gradient history with a
/// shared zero start, so the two formulations pick the same sign direction
/// and walk the same trajectory; this exists so a test can hold `g_lion`
/// to that equivalence.
pub fn run_momenta_reference(cfg: &RunConfig, opts: &ExecOpts) -> Result<RunLog> {
    if cfg.method != Method::GLion {
        return Err(Error::invalid_input(
            "the momentum-averaging reference only models g_lion",
        ));
    }
    cfg.validate()?;
    let problem = cfg.problem.build(cfg.master_seed)?;
    let d = problem.dim();
    let n = cfg.workers as usize;
    let shards = match problem.dataset_len() {
        Some(len) => shard_data(len, cfg.workers, cfg.shard_mode, cfg.master_seed)?,
        None => vec![Shard::Full { len: 1 }; n],
    };
    let mut x = cfg.problem.initial_x(cfg.master_seed, &problem)?;
    let mut momenta = vec![vec![0.0f64; d]; n];
    let mut ledger = BandwidthLedger::new();
    let (formula_up, formula_down) =
        table_formula_bits(cfg.method, d, cfg.workers, cfg.compression.keep)?;
    let mut rounds = Vec::with_capacity(cfg.rounds as usize);
    let mut trajectory = opts.keep_trajectory.then(|| vec![x.clone()]);
    let mut stopped_early = false;
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let mut h = cfg.hyper;
        h.lr *= lr_factor(cfg.schedule, round as usize, cfg.rounds as usize);
        let mut losses = Vec::with_capacity(n);
        let mut blends = Vec::with_capacity(n);
        for (w, m) in momenta.iter_mut().enumerate() {
            let mut rng = worker_round(cfg.master_seed, w as u32, round);
            let (loss, grad) =
                problem.stochastic(&x, cfg.batch_size as usize, &shards[w], &mut rng)?;
            losses.push(loss);
            let blend: Vec<f64> = m
                .iter()
                .zip(&grad)
                .map(|(&mi, &gi)| h.beta1 * mi + (1.0 - h.beta1) * gi)
                .collect();
            for (mi, &gi) in m.iter_mut().zip(&grad) {
                *mi = h.beta2 * *mi + (1.0 - h.beta2) * gi;
            }
            blends.push(blend);
        }
        let delta: Vec<f64> = pairwise_mean(&blends)
            .iter()
            .map(|&v| f64::from(sign_scalar(v)))
            .collect();
        x = apply_update(&x, &delta, &h)?;
        let loss = mean_loss(&losses);
        if !loss.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                round: round as usize,
                what: "reference run left the representable range".into(),
            });
        }
        let (full_loss, full_grad) = problem.full(&x)?;
        let kkt = kkt_score(&full_grad, &x, cfg.hyper.weight_decay)?;
        let dist_f = if cfg.hyper.weight_decay > 0.0 {
            dist_to_feasible(&x, cfg.hyper.weight_decay, Norm::L2)?
        } else {
            0.0
        };
        let up = Traffic::unpacked(32 * d as u64 * n as u64);
        let down = Traffic::unpacked(32 * d as u64);
        ledger.record(RoundTraffic {
            up,
            down,
            formula_up_per_worker_bits: formula_up,
            formula_down_bits: formula_down,
        });
        if let Some(t) = trajectory.as_mut() {
            t.push(x.clone());
        }
        rounds.push(RoundLog {
            round,
            loss,
            full_loss,
            kkt_score: kkt,
            dist_f,
            up_bits: up.payload_bits,
            down_bits: down.payload_bits,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(thresh) = cfg.early_stop_grad_norm {
            if norm_l2(&full_grad) < thresh {
                stopped_early = true;
                break;
            }
        }
    }
    let final_accuracy = problem.accuracy(&x)?;
    Ok(RunLog {
        config: cfg.clone(),
        rounds,
        trajectory,
        final_x: x,
        final_accuracy,
        ledger,
        stopped_early,
    })
}
