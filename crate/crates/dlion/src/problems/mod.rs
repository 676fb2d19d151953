//! Desk-scale objectives with stochastic gradient oracles.
//!
//! Three problems cover the regimes the simulator cares about: a noisy
//! quadratic whose gradient-noise level is a config knob (the theory
//! verification vehicle), binary logistic regression on synthetic two-class
//! data, and a one-hidden-layer tanh MLP with softmax cross-entropy as the
//! minimal nonconvex case. All expose full-batch loss/gradient for metrics
//! and honest stochastic estimates for training.

use crate::error::{Error, Result};
use crate::math::{check_finite, check_same_len, dot, norm_l2};
use crate::rng::{gaussian, stream, Purpose};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// The slice of a dataset a worker is allowed to sample from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shard {
    /// Sample uniformly from the whole dataset (i.i.d. mode).
    Full { len: usize },
    /// Sample uniformly from an explicit index subset (disjoint mode).
    Subset { indices: Vec<u32> },
}

impl Shard {
    pub fn len(&self) -> usize {
        match self {
            Shard::Full { len } => *len,
            Shard::Subset { indices } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One uniform draw with replacement.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<usize> {
        match self {
            Shard::Full { len } => {
                if *len == 0 {
                    return Err(Error::invalid_input("cannot sample from an empty shard"));
                }
                Ok(rng.random_range(0..*len))
            }
            Shard::Subset { indices } => {
                if indices.is_empty() {
                    return Err(Error::invalid_input("cannot sample from an empty shard"));
                }
                Ok(indices[rng.random_range(0..indices.len())] as usize)
            }
        }
    }
}

/// Stochastic first-order oracle: unbiased minibatch gradients plus exact
/// full-batch quantities for diagnostics.
pub trait GradientOracle {
    fn dim(&self) -> usize;

    /// Minibatch loss estimate and stochastic gradient. The estimate is
    /// unbiased for the full-batch gradient when sampling from a full shard.
    fn stochastic(
        &self,
        x: &[f64],
        batch: usize,
        shard: &Shard,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)>;

    /// Exact full-batch loss and gradient; deterministic in x.
    fn full(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Classification accuracy over the whole dataset, if the problem has
    /// that notion.
    fn accuracy(&self, x: &[f64]) -> Result<Option<f64>>;
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::invalid_input("batch size must be at least 1"));
    }
    Ok(())
}

/// The closed set of objectives the simulator trains, behind one oracle
/// interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
    Mlp(MlpProblem),
}

impl GradientOracle for Problem {
    fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(p) => p.dim(),
            Problem::Logistic(p) => p.dim(),
            Problem::Mlp(p) => p.dim(),
        }
    }

    fn stochastic(
        &self,
        x: &[f64],
        batch: usize,
        shard: &Shard,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Problem::Quadratic(p) => p.stochastic(x, batch, shard, rng),
            Problem::Logistic(p) => p.stochastic(x, batch, shard, rng),
            Problem::Mlp(p) => p.stochastic(x, batch, shard, rng),
        }
    }

    fn full(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Problem::Quadratic(p) => p.full(x),
            Problem::Logistic(p) => p.full(x),
            Problem::Mlp(p) => p.full(x),
        }
    }

    fn accuracy(&self, x: &[f64]) -> Result<Option<f64>> {
        match self {
            Problem::Quadratic(p) => p.accuracy(x),
            Problem::Logistic(p) => p.accuracy(x),
            Problem::Mlp(p) => p.accuracy(x),
        }
    }
}

impl Problem {
    /// Rows available for sharding; the quadratic has no samples.
    pub fn dataset_len(&self) -> Option<usize> {
        match self {
            Problem::Quadratic(_) => None,
            Problem::Logistic(p) => Some(p.data().len()),
            Problem::Mlp(p) => Some(p.data().len()),
        }
    }
}

// ---------------------------------------------------------------------------
// Quadratic

/// Curvature choices for the quadratic. All constructions are exactly
/// symmetric by storage, so the gradient A(x - x*) is the true gradient of
/// the stored loss with no symmetrization slack.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Identity,
    Diag(Vec<f64>),
    /// Row-major dense symmetric PSD matrix.
    Dense(Vec<f64>),
}

/// f(x) = 1/2 (x - x*)^T A (x - x*) with per-coordinate Gaussian gradient
/// noise of std sigma / sqrt(batch). Loss values are always noise-free.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    dim: usize,
    a: Curvature,
    x_star: Vec<f64>,
    sigma: f64,
}

impl QuadraticProblem {
    pub fn new(a: Curvature, x_star: Vec<f64>, sigma: f64) -> Result<Self> {
        let dim = x_star.len();
        if dim == 0 {
            return Err(Error::invalid_input("quadratic needs dimension >= 1"));
        }
        check_finite("quadratic x_star", &x_star)?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be nonnegative and finite, got {sigma}"
            )));
        }
        match &a {
            Curvature::Identity => {}
            Curvature::Diag(d) => {
                check_same_len("quadratic diag", d, &x_star)?;
                if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::invalid_parameter(
                        "diagonal curvature must be nonnegative and finite",
                    ));
                }
            }
            Curvature::Dense(m) => {
                if m.len() != dim * dim {
                    return Err(Error::InvalidInput(format!(
                        "dense curvature has {} entries, expected {}",
                        m.len(),
                        dim * dim
                    )));
                }
                check_finite("quadratic matrix", m)?;
                for i in 0..dim {
                    for j in 0..i {
                        if m[i * dim + j] != m[j * dim + i] {
                            return Err(Error::invalid_input(
                                "dense curvature must be exactly symmetric",
                            ));
                        }
                    }
                }
            }
        }
        Ok(QuadraticProblem {
            dim,
            a,
            x_star,
            sigma,
        })
    }

    /// Random positive definite curvature drawn from a fresh problem-init
    /// stream for `seed`; see [`random_psd`].
    pub fn random_dense(dim: usize, seed: u64, x_star: Vec<f64>, sigma: f64) -> Result<Self> {
        let a = random_psd(dim, stream(seed, Purpose::ProblemInit, 0, 2));
        QuadraticProblem::new(a, x_star, sigma)
    }

    pub fn curvature(&self) -> &Curvature {
        &self.a
    }

    fn matvec(&self, r: &[f64]) -> Vec<f64> {
        match &self.a {
            Curvature::Identity => r.to_vec(),
            Curvature::Diag(d) => d.iter().zip(r).map(|(&a, &v)| a * v).collect(),
            Curvature::Dense(m) => (0..self.dim)
                .map(|i| dot(&m[i * self.dim..(i + 1) * self.dim], r))
                .collect(),
        }
    }

    fn loss_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_same_len("quadratic", x, &self.x_star)?;
        let r: Vec<f64> = x.iter().zip(&self.x_star).map(|(&a, &b)| a - b).collect();
        let g = self.matvec(&r);
        let loss = 0.5 * dot(&r, &g);
        Ok((loss, g))
    }
}

/// Random positive definite curvature: A = B^T B / dim + 0.1 I with standard
/// normal B, mirrored on construction so symmetry is exact to the bit.
pub fn random_psd(dim: usize, mut rng: ChaCha8Rng) -> Curvature {
    let mut b = vec![0.0f64; dim * dim];
    for v in b.iter_mut() {
        *v = gaussian(&mut rng);
    }
    let mut m = vec![0.0f64; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..dim {
                s += b[k * dim + i] * b[k * dim + j];
            }
            let mut v = s / dim as f64;
            if i == j {
                v += 0.1;
            }
            m[i * dim + j] = v;
            m[j * dim + i] = v;
        }
    }
    Curvature::Dense(m)
}

impl GradientOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn stochastic(
        &self,
        x: &[f64],
        batch: usize,
        _shard: &Shard,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        check_batch(batch)?;
        let (loss, mut g) = self.loss_and_grad(x)?;
        if self.sigma > 0.0 {
            let std = self.sigma / (batch as f64).sqrt();
            for v in g.iter_mut() {
                *v += std * gaussian(rng);
            }
        }
        Ok((loss, g))
    }

    fn full(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad(x)
    }

    fn accuracy(&self, _x: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Datasets

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid_input("dataset needs feature dim >= 1"));
        }
        if labels.is_empty() {
            return Err(Error::invalid_input("dataset has no rows"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::InvalidInput(format!(
                "feature buffer has {} values, expected {} rows x {} dims",
                features.len(),
                labels.len(),
                dim
            )));
        }
        check_finite("dataset features", &features)?;
        Ok(Dataset {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }
}

/// Two Gaussian clouds centered at +/- separation/2 along a random unit
/// direction; labels alternate row by row so the dataset is exactly
/// balanced for even n. Deterministic per seed.
pub fn generate_two_class(seed: u64, n: usize, d: usize, separation: f64) -> Result<Dataset> {
    generate_blobs(seed, n, d, 2, separation)
}

/// Multi-class version: one random unit center direction per class, scaled
/// by separation/2; labels cycle 0..classes.
pub fn generate_blobs(
    seed: u64,
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
) -> Result<Dataset> {
    if n == 0 || d == 0 || classes < 2 {
        return Err(Error::invalid_input(
            "blob generation needs n >= 1, d >= 1, classes >= 2",
        ));
    }
    if classes > 256 {
        return Err(Error::invalid_input("labels are bytes; classes <= 256"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid_parameter(
            "separation must be nonnegative and finite",
        ));
    }
    let mut rng = stream(seed, Purpose::ProblemInit, 0, 0);
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut u: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let norm = norm_l2(&u);
        if norm > 0.0 {
            for v in u.iter_mut() {
                *v *= separation / 2.0 / norm;
            }
        }
        centers.push(u);
    }
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for k in 0..d {
            features.push(centers[c][k] + gaussian(&mut rng));
        }
        labels.push(c as u8);
    }
    Dataset::new(features, labels, d)
}

/// Writes a dataset as CSV: header f0..f{d-1},label, one row per sample.
/// Floats use shortest round-trip formatting, so a reload is bit-exact.
pub fn save_csv_dataset(path: &Path, data: &Dataset) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let header: Vec<String> = (0..data.dim())
        .map(|k| format!("f{k}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.len() {
        for v in data.row(i) {
            write!(w, "{v},")?;
        }
        writeln!(w, "{}", data.label(i))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a CSV dataset: header row, numeric feature columns, final column a
/// {0,1} label. Parse failures name the 1-based data row (header excluded)
/// and 1-based column.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(format!(
                "cannot open {}: {e}",
                path.display()
            ))),
            _ => Error::InvalidInput(format!("cannot read {}: {e}", path.display())),
        })?;
    let n_cols = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("bad CSV header: {e}")))?
        .len();
    if n_cols < 2 {
        return Err(Error::invalid_input(
            "dataset needs at least one feature column plus a label column",
        ));
    }
    let dim = n_cols - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::InvalidInput(format!("data row {row}: {e}")))?;
        if record.len() != n_cols {
            return Err(Error::InvalidInput(format!(
                "data row {row}: expected {n_cols} columns, found {}",
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let col = c + 1;
            let value: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                row,
                col,
                msg: format!("not a number: {cell:?}"),
            })?;
            if c < dim {
                if !value.is_finite() {
                    return Err(Error::CsvCell {
                        row,
                        col,
                        msg: "feature must be finite".into(),
                    });
                }
                features.push(value);
            } else if value == 0.0 {
                labels.push(0);
            } else if value == 1.0 {
                labels.push(1);
            } else {
                return Err(Error::CsvCell {
                    row,
                    col,
                    msg: format!("label must be 0 or 1, got {cell:?}"),
                });
            }
        }
    }
    Dataset::new(features, labels, dim)
}

// ---------------------------------------------------------------------------
// Logistic regression

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy for logit z and label y.
fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mean cross-entropy over the dataset plus 0.5 * reg * |w|^2.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProblem {
    data: Dataset,
    reg: f64,
}

impl LogisticProblem {
    pub fn new(data: Dataset, reg: f64) -> Result<Self> {
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::invalid_parameter(
                "regularization must be nonnegative and finite",
            ));
        }
        if data.labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid_input(
                "logistic regression needs binary labels",
            ));
        }
        Ok(LogisticProblem { data, reg })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Mean loss and gradient over an explicit index set, in the given
    /// order, plus the regularization term.
    fn over_indices<I: Iterator<Item = usize>>(
        &self,
        w: &[f64],
        indices: I,
        count: usize,
    ) -> Result<(f64, Vec<f64>)> {
        if w.len() != self.data.dim() {
            return Err(Error::InvalidInput(format!(
                "weight dim {} does not match feature dim {}",
                w.len(),
                self.data.dim()
            )));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0f64; w.len()];
        for i in indices {
            let xi = self.data.row(i);
            let y = self.data.label(i) as f64;
            let z = dot(xi, w);
            loss += logistic_loss(z, y);
            let err = sigmoid(z) - y;
            for (gk, &fk) in grad.iter_mut().zip(xi) {
                *gk += err * fk;
            }
        }
        let inv = 1.0 / count as f64;
        loss *= inv;
        for (gk, &wk) in grad.iter_mut().zip(w) {
            *gk = *gk * inv + self.reg * wk;
        }
        if self.reg > 0.0 {
            loss += 0.5 * self.reg * dot(w, w);
        }
        Ok((loss, grad))
    }
}

impl GradientOracle for LogisticProblem {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn stochastic(
        &self,
        x: &[f64],
        batch: usize,
        shard: &Shard,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        check_batch(batch)?;
        let mut picks = Vec::with_capacity(batch);
        for _ in 0..batch {
            picks.push(shard.draw(rng)?);
        }
        self.over_indices(x, picks.into_iter(), batch)
    }

    fn full(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.over_indices(x, 0..self.data.len(), self.data.len())
    }

    fn accuracy(&self, x: &[f64]) -> Result<Option<f64>> {
        let mut hits = 0usize;
        for i in 0..self.data.len() {
            let z = dot(self.data.row(i), x);
            let pred = u8::from(z >= 0.0);
            if pred == self.data.label(i) {
                hits += 1;
            }
        }
        Ok(Some(hits as f64 / self.data.len() as f64))
    }
}

// ---------------------------------------------------------------------------
// One-hidden-layer MLP

/// tanh hidden layer, softmax cross-entropy output. Parameters flatten as
/// W1 (hidden x input, row-major), b1, W2 (classes x hidden, row-major), b2.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProblem {
    data: Dataset,
    input: usize,
    hidden: usize,
    classes: usize,
}

impl MlpProblem {
    pub fn new(data: Dataset, hidden: usize, classes: usize) -> Result<Self> {
        if hidden == 0 || classes < 2 {
            return Err(Error::invalid_input("mlp needs hidden >= 1, classes >= 2"));
        }
        if data.labels.iter().any(|&y| (y as usize) >= classes) {
            return Err(Error::invalid_input("label out of range for class count"));
        }
        Ok(MlpProblem {
            input: data.dim(),
            data,
            hidden,
            classes,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn param_dim(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    fn check_params(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.param_dim() {
            return Err(Error::InvalidInput(format!(
                "parameter vector has {} entries, expected {}",
                x.len(),
                self.param_dim()
            )));
        }
        Ok(())
    }

    /// (W1, b1, W2, b2) slices of the flat parameter vector.
    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (h, i, c) = (self.hidden, self.input, self.classes);
        let w1 = &x[0..h * i];
        let b1 = &x[h * i..h * i + h];
        let w2 = &x[h * i + h..h * i + h + c * h];
        let b2 = &x[h * i + h + c * h..];
        (w1, b1, w2, b2)
    }

    /// Forward pass for one sample: hidden activations and class logits.
    fn forward(&self, x: &[f64], sample: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w1, b1, w2, b2) = self.split(x);
        let (h, i) = (self.hidden, self.input);
        let a: Vec<f64> = (0..h)
            .map(|j| (dot(&w1[j * i..(j + 1) * i], sample) + b1[j]).tanh())
            .collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| dot(&w2[c * h..(c + 1) * h], &a) + b2[c])
            .collect();
        (a, logits)
    }

    /// Mean softmax cross-entropy and its exact gradient over the index set.
    fn over_indices<I: Iterator<Item = usize>>(
        &self,
        x: &[f64],
        indices: I,
        count: usize,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_params(x)?;
        let (h, i, c) = (self.hidden, self.input, self.classes);
        let (_, _, w2, _) = self.split(x);
        let mut loss = 0.0;
        let mut grad = vec![0.0f64; x.len()];
        let (gw1, rest) = grad.split_at_mut(h * i);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(c * h);
        for s in indices {
            let sample = self.data.row(s);
            let y = self.data.label(s) as usize;
            let (a, logits) = self.forward(x, sample);
            // log-sum-exp, shifted by the max logit for stability
            let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|&z| (z - zmax).exp()).sum();
            loss += zmax + sum_exp.ln() - logits[y];
            // dz2 = softmax - onehot
            let mut da = vec![0.0f64; h];
            for k in 0..c {
                let dz = (logits[k] - zmax).exp() / sum_exp - if k == y { 1.0 } else { 0.0 };
                for j in 0..h {
                    gw2[k * h + j] += dz * a[j];
                    da[j] += dz * w2[k * h + j];
                }
                gb2[k] += dz;
            }
            for j in 0..h {
                let dz1 = da[j] * (1.0 - a[j] * a[j]);
                for p in 0..i {
                    gw1[j * i + p] += dz1 * sample[p];
                }
                gb1[j] += dz1;
            }
        }
        let inv = 1.0 / count as f64;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Ok((loss * inv, grad))
    }
}

impl GradientOracle for MlpProblem {
    fn dim(&self) -> usize {
        self.param_dim()
    }

    fn stochastic(
        &self,
        x: &[f64],
        batch: usize,
        shard: &Shard,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        check_batch(batch)?;
        let mut picks = Vec::with_capacity(batch);
        for _ in 0..batch {
            picks.push(shard.draw(rng)?);
        }
        self.over_indices(x, picks.into_iter(), batch)
    }

    fn full(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.over_indices(x, 0..self.data.len(), self.data.len())
    }

    fn accuracy(&self, x: &[f64]) -> Result<Option<f64>> {
        self.check_params(x)?;
        let mut hits = 0usize;
        for s in 0..self.data.len() {
            let (_, logits) = self.forward(x, self.data.row(s));
            let mut best = 0usize;
            for k in 1..logits.len() {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            if best == self.data.label(s) as usize {
                hits += 1;
            }
        }
        Ok(Some(hits as f64 / self.data.len() as f64))
    }
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central-difference gradient of a black-box loss, used to audit the
/// analytic gradients.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid_parameter("finite-difference h must be > 0"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let xk = x[k];
        probe[k] = xk + h;
        let up = f(&probe);
        probe[k] = xk - h;
        let down = f(&probe);
        probe[k] = xk;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tol;
    use rand::SeedableRng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm_l2(&diff) / norm_l2(a).max(1e-30)
    }

    #[test]
    fn identity_quadratic_matches_hand_values() {
        let p = QuadraticProblem::new(Curvature::Identity, vec![0.0, 0.0], 0.0).unwrap();
        let (loss, grad) = p.full(&[3.0, -4.0]).unwrap();
        assert_eq!(grad, vec![3.0, -4.0]);
        assert_eq!(loss, 12.5);

        let (l0, g0) = p.full(&[0.0, 0.0]).unwrap();
        assert_eq!(l0, 0.0);
        assert_eq!(g0, vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_sigma_zero_consumes_no_randomness() {
        let p = QuadraticProblem::new(Curvature::Identity, vec![0.0], 0.0).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let shard = Shard::Full { len: 0 };
        let _ = p.stochastic(&[1.0], 4, &shard, &mut a).unwrap();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn quadratic_noise_scales_with_batch() {
        // Empirical per-coordinate variance of the noise is sigma^2/batch.
        let p = QuadraticProblem::new(Curvature::Identity, vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let shard = Shard::Full { len: 0 };
        let n = 20_000;
        let batch = 100;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (_, g) = p.stochastic(&[0.0, 0.0], batch, &shard, &mut rng).unwrap();
            for v in g {
                sum += v;
                sum_sq += v * v;
            }
        }
        let m = sum / (2.0 * n as f64);
        let var = sum_sq / (2.0 * n as f64) - m * m;
        let expect = 1.0 / batch as f64;
        // SE of a variance estimate from k normal draws is var * sqrt(2/k).
        let se = expect * (2.0 / (2.0 * n as f64)).sqrt();
        assert!(
            (var - expect).abs() <= tol::ORACLE_MC_SIGMAS * se,
            "variance {var} vs {expect}"
        );
    }

    #[test]
    fn dense_curvature_must_be_symmetric() {
        let bad = Curvature::Dense(vec![1.0, 0.5, 0.25, 1.0]);
        assert!(QuadraticProblem::new(bad, vec![0.0, 0.0], 0.0).is_err());
        let p = QuadraticProblem::random_dense(6, 9, vec![0.0; 6], 0.0).unwrap();
        if let Curvature::Dense(m) = &p.a {
            for i in 0..6 {
                for j in 0..6 {
                    assert_eq!(m[i * 6 + j].to_bits(), m[j * 6 + i].to_bits());
                }
            }
        } else {
            panic!("expected dense curvature");
        }
        // Positive definite: random directions have positive energy.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v: Vec<f64> = (0..6).map(|_| gaussian(&mut rng)).collect();
            let (loss, _) = p.full(&v).unwrap();
            assert!(loss > 0.0);
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let p = QuadraticProblem::random_dense(8, 11, vec![1.0; 8], 0.0).unwrap();
        let x: Vec<f64> = (0..8).map(|k| (k as f64) * 0.3 - 1.0).collect();
        let (_, analytic) = p.full(&x).unwrap();
        let fd = finite_diff_grad(|v| p.full(v).unwrap().0, &x, 1e-5).unwrap();
        assert!(rel_err(&analytic, &fd) < tol::GRADCHECK_QUADRATIC_REL);
    }

    #[test]
    fn two_class_generation_is_deterministic_and_balanced() {
        let a = generate_two_class(7, 100, 5, 4.0).unwrap();
        let b = generate_two_class(7, 100, 5, 4.0).unwrap();
        assert_eq!(a, b);
        let ones = (0..a.len()).filter(|&i| a.label(i) == 1).count();
        assert_eq!(ones, 50);

        let c = generate_two_class(8, 100, 5, 4.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn separated_classes_are_linearly_separable() {
        // With a wide margin, the difference of class means gives a
        // separating direction.
        let data = generate_two_class(3, 400, 2, 12.0).unwrap();
        let p = LogisticProblem::new(data, 0.0).unwrap();
        let d = p.data();
        let mut mean1 = vec![0.0f64; 2];
        let mut mean0 = vec![0.0f64; 2];
        for i in 0..d.len() {
            let target = if d.label(i) == 1 { &mut mean1 } else { &mut mean0 };
            for (t, v) in target.iter_mut().zip(d.row(i)) {
                *t += v;
            }
        }
        let w: Vec<f64> = mean1.iter().zip(&mean0).map(|(a, b)| a - b).collect();
        let acc = p.accuracy(&w).unwrap().unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn zero_separation_is_chance_level() {
        let data = generate_two_class(5, 2000, 3, 0.0).unwrap();
        let p = LogisticProblem::new(data, 0.0).unwrap();
        let acc = p.accuracy(&[1.0, 0.0, 0.0]).unwrap().unwrap();
        assert!((acc - 0.5).abs() < 0.05, "accuracy {acc}");
    }

    #[test]
    fn logistic_zero_weights_give_ln_two() {
        let data = generate_two_class(1, 64, 4, 2.0).unwrap();
        let p = LogisticProblem::new(data, 0.0).unwrap();
        let (loss, _) = p.full(&[0.0; 4]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn logistic_single_sample_gradient() {
        let data = Dataset::new(vec![1.0], vec![1], 1).unwrap();
        let p = LogisticProblem::new(data, 0.0).unwrap();
        let (_, grad) = p.full(&[0.0]).unwrap();
        assert_eq!(grad, vec![-0.5]);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let data = generate_two_class(21, 40, 6, 1.0).unwrap();
        let p = LogisticProblem::new(data, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..6).map(|_| 0.5 * gaussian(&mut rng)).collect();
        let (_, analytic) = p.full(&x).unwrap();
        let fd = finite_diff_grad(|v| p.full(v).unwrap().0, &x, 1e-5).unwrap();
        assert!(rel_err(&analytic, &fd) < 1e-6);
    }

    #[test]
    fn logistic_stochastic_is_unbiased_on_full_shard() {
        let data = generate_two_class(13, 50, 4, 2.0).unwrap();
        let p = LogisticProblem::new(data, 0.0).unwrap();
        let x = [0.3, -0.2, 0.1, 0.05];
        let (_, full) = p.full(&x).unwrap();
        let shard = Shard::Full { len: p.data().len() };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut mean = vec![0.0f64; 4];
        let mut sq = vec![0.0f64; 4];
        for _ in 0..n {
            let (_, g) = p.stochastic(&x, 4, &shard, &mut rng).unwrap();
            for k in 0..4 {
                mean[k] += g[k];
                sq[k] += g[k] * g[k];
            }
        }
        for k in 0..4 {
            let m = mean[k] / n as f64;
            let var = (sq[k] / n as f64 - m * m).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (m - full[k]).abs() <= tol::ORACLE_MC_SIGMAS * se + 1e-12,
                "coordinate {k}: {m} vs {}",
                full[k]
            );
        }
    }

    #[test]
    fn mlp_zero_params_give_log_classes() {
        let data = generate_blobs(2, 30, 4, 3, 2.0).unwrap();
        let p = MlpProblem::new(data, 5, 3).unwrap();
        let (loss, _) = p.full(&vec![0.0; p.param_dim()]).unwrap();
        assert!((loss - (3.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let data = generate_blobs(17, 20, 4, 3, 1.5).unwrap();
        let p = MlpProblem::new(data, 6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..p.param_dim()).map(|_| 0.4 * gaussian(&mut rng)).collect();
        let (_, analytic) = p.full(&x).unwrap();
        let fd = finite_diff_grad(|v| p.full(v).unwrap().0, &x, 1e-5).unwrap();
        assert!(
            rel_err(&analytic, &fd) < tol::GRADCHECK_REL,
            "rel err {}",
            rel_err(&analytic, &fd)
        );
    }

    #[test]
    fn mlp_hidden_unit_permutation_is_a_symmetry() {
        let data = generate_blobs(23, 16, 3, 2, 2.0).unwrap();
        let p = MlpProblem::new(data, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..p.param_dim()).map(|_| gaussian(&mut rng)).collect();
        let (base, _) = p.full(&x).unwrap();

        // Swap hidden units 0 and 1: W1 rows, b1 entries, W2 columns.
        let (h, i, c) = (4usize, 3usize, 2usize);
        let mut y = x.clone();
        for k in 0..i {
            y.swap(k, i + k);
        }
        y.swap(h * i, h * i + 1);
        let w2_off = h * i + h;
        for cls in 0..c {
            y.swap(w2_off + cls * h, w2_off + cls * h + 1);
        }
        let (permuted, _) = p.full(&y).unwrap();
        assert!(
            (base - permuted).abs() <= 1e-12 * (1.0 + base.abs()),
            "{base} vs {permuted}"
        );
    }

    #[test]
    fn finite_diff_on_square_is_the_derivative() {
        let g = finite_diff_grad(|v| v[0] * v[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let flat = finite_diff_grad(|_| 7.0, &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(flat, vec![0.0, 0.0]);
        assert!(finite_diff_grad(|v| v[0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = generate_two_class(31, 17, 3, 2.5).unwrap();
        save_csv_dataset(&path, &data).unwrap();
        let back = load_csv_dataset(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn csv_parse_errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,1\n3.0,abc,0\n").unwrap();
        match load_csv_dataset(&path) {
            Err(Error::CsvCell { row, col, .. }) => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("expected cell error, got {other:?}"),
        }

        std::fs::write(&path, "f0,label\n1.0,2\n").unwrap();
        match load_csv_dataset(&path) {
            Err(Error::CsvCell { row, col, msg }) => {
                assert_eq!((row, col), (1, 2));
                assert!(msg.contains("label"));
            }
            other => panic!("expected label error, got {other:?}"),
        }

        std::fs::write(&path, "f0,f1,label\n1.0,1\n").unwrap();
        assert!(matches!(
            load_csv_dataset(&path),
            Err(Error::InvalidInput(_))
        ));

        assert!(load_csv_dataset(Path::new("/nonexistent/x.csv")).is_err());
    }

    #[test]
    fn shard_draws_respect_subsets() {
        let shard = Shard::Subset {
            indices: vec![3, 5, 9],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let i = shard.draw(&mut rng).unwrap();
            assert!([3usize, 5, 9].contains(&i));
        }
        let empty = Shard::Subset { indices: vec![] };
        assert!(empty.draw(&mut rng).is_err());

        let data = generate_two_class(1, 10, 2, 1.0).unwrap();
        let p = LogisticProblem::new(data, 0.0).unwrap();
        assert!(matches!(
            p.stochastic(&[0.0, 0.0], 0, &Shard::Full { len: 10 }, &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }
}
