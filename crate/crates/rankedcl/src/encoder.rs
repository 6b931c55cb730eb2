//! Small trainable encoder: an MLP with ReLU hidden layers, a projection
//! head, and a final L2 normalization, trained by plain SGD on the ranked
//! contrastive loss. A same-architecture softmax classifier is provided as
//! the discriminative baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{ranked_loss_grad_raw, ranked_loss_raw, EmbeddingMatrix, LossBreakdown};
use crate::numkernel::{Gradients, Matrix, Tape, Var};
use crate::ranking::{linear_temperature_schedule, RankingSpec, TemperatureSchedule};
use crate::rng::Rng;

/// Training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs at which lr is multiplied by lr_decay. Empty = use the
    /// defaults at 60% and 80% of `epochs`.
    #[serde(default)]
    pub decay_milestones: Vec<usize>,
    pub seed: u64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub r: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 200,
            lr: 0.5,
            lr_decay: 0.1,
            decay_milestones: Vec::new(),
            seed: 0,
            tau_min: 0.1,
            tau_max: 0.6,
            r: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Validation(format!("lr {} must be > 0", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Validation(format!(
                "lr_decay {} must be in (0, 1]",
                self.lr_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Validation(format!(
                "batch_size {} must be >= 2",
                self.batch_size
            )));
        }
        if self.r < 1 {
            return Err(Error::Validation("r must be >= 1".into()));
        }
        // schedule construction re-checks the tau bounds
        linear_temperature_schedule(self.tau_min, self.tau_max, self.r)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<TemperatureSchedule> {
        linear_temperature_schedule(self.tau_min, self.tau_max, self.r)
    }

    pub fn milestones(&self) -> Vec<usize> {
        if !self.decay_milestones.is_empty() {
            return self.decay_milestones.clone();
        }
        vec![self.epochs * 3 / 5, self.epochs * 4 / 5]
    }
}

/// MLP encoder. `dims` = [input, hidden..., embed]; ReLU after every layer
/// except the last, then row-wise L2 normalization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderModel {
    pub dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
    pub seed: u64,
    pub epoch: usize,
}

fn init_layers(dims: &[usize], rng: &mut Rng) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.range_f64(-bound, bound)).collect();
        weights.push(Matrix::new(fan_in, fan_out, data).expect("sized"));
        biases.push(Matrix::zeros(1, fan_out));
    }
    (weights, biases)
}

impl EncoderModel {
    pub fn new(dims: Vec<usize>, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!("bad architecture {dims:?}")));
        }
        let mut rng = Rng::new(seed).derive(&[0xEC0D]);
        let (weights, biases) = init_layers(&dims, &mut rng);
        Ok(EncoderModel { dims, weights, biases, seed, epoch: 0 })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch width {} != model input dim {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Unit-norm embeddings for a batch (no tape).
    pub fn forward(&self, batch: &Matrix) -> Result<EmbeddingMatrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?;
            for r in 0..h.rows() {
                for c in 0..h.cols() {
                    let v = h.get(r, c) + b.get(0, c);
                    h.set(r, c, if i < last { v.max(0.0) } else { v });
                }
            }
        }
        EmbeddingMatrix::new(h.l2_normalize_rows()?)
    }

    /// Forward pass recorded on a tape; returns the tape, the output var,
    /// and (weight, bias) vars for every layer.
    pub fn forward_traced(&self, batch: &Matrix) -> Result<(Tape, Var, Vec<(Var, Var)>)> {
        self.check_input(batch)?;
        let mut tape = Tape::new();
        let mut h = tape.input(batch.clone());
        let mut params = Vec::new();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.input(w.clone());
            let bv = tape.input(b.clone());
            params.push((wv, bv));
            h = tape.matmul(h, wv)?;
            h = tape.add_row_broadcast(h, bv)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        let z = tape.l2_normalize_rows(h)?;
        Ok((tape, z, params))
    }

    fn apply_grads(&mut self, grads: &Gradients, params: &[(Var, Var)], lr: f64) {
        for (i, &(wv, bv)) in params.iter().enumerate() {
            self.weights[i] = self.weights[i].sub(&grads.get(wv).scale(lr)).expect("shape");
            self.biases[i] = self.biases[i].sub(&grads.get(bv).scale(lr)).expect("shape");
        }
    }

    /// One SGD step on the ranked loss; returns the pre-update loss.
    pub fn train_step(
        &mut self,
        batch: &Matrix,
        labels: &[String],
        spec: &RankingSpec,
        taus: &TemperatureSchedule,
        lr: f64,
    ) -> Result<LossBreakdown> {
        let (tape, z, params) = self.forward_traced(batch)?;
        let breakdown = ranked_loss_raw(tape.value(z), labels, spec, taus)?;
        let dldz = ranked_loss_grad_raw(tape.value(z), labels, spec, taus)?;
        let grads = tape.backward(z, dldz)?;
        self.apply_grads(&grads, &params, lr);
        Ok(breakdown)
    }

    /// Deterministic embeddings over the whole dataset, batched internally.
    /// No augmentation is applied.
    pub fn embed_dataset(&self, samples: &[Vec<f64>]) -> Result<Matrix> {
        if samples.is_empty() {
            return Ok(Matrix::zeros(0, self.embed_dim()));
        }
        let mut rows = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(256) {
            let batch = Matrix::from_rows(chunk)?;
            let z = self.forward(&batch)?;
            for i in 0..z.n() {
                rows.push(z.matrix().row(i).to_vec());
            }
        }
        Matrix::from_rows(&rows)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Produces the two batch rows contributed by one dataset item.
pub type ViewFn<'a> = dyn Fn(&Rng, &[f64]) -> (Vec<f64>, Vec<f64>) + 'a;

/// Both views equal the input; the sibling view is then a guaranteed P_1
/// member for every anchor.
pub fn duplicate_views(_rng: &Rng, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (x.to_vec(), x.to_vec())
}

/// Two-crop analog for vector data: each view is the input plus isotropic
/// Gaussian noise of the given stddev, re-normalized. The stochasticity
/// regularizes the encoder toward a smooth map, which matters for
/// out-of-distribution scoring of unseen inputs.
pub fn noise_views(sigma: f64) -> impl Fn(&Rng, &[f64]) -> (Vec<f64>, Vec<f64>) {
    move |rng, x| {
        let view = |stream: u64| {
            let mut r = rng.derive(&[stream]);
            let mut v: Vec<f64> = x.iter().map(|&a| a + sigma * r.normal()).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for a in v.iter_mut() {
                    *a /= norm;
                }
            }
            v
        };
        (view(0), view(1))
    }
}

/// Train with shuffled, seeded batches. Each item contributes two views
/// with the same label, doubling the effective batch width. Learning rate
/// is multiplied by `lr_decay` at each milestone epoch.
pub fn fit(
    model: &mut EncoderModel,
    samples: &[Vec<f64>],
    labels: &[String],
    cfg: &TrainConfig,
    spec: &RankingSpec,
    view_fn: &ViewFn,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation("empty training dataset".into()));
    }
    if samples.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} samples vs {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let taus = cfg.schedule()?;
    let milestones = cfg.milestones();
    let root = Rng::new(cfg.seed);
    let mut lr = cfg.lr;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if milestones.contains(&epoch) && epoch > 0 {
            lr *= cfg.lr_decay;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle_rng = root.derive(&[1, epoch as u64]);
        shuffle_rng.shuffle(&mut order);

        let mut epoch_total = 0.0;
        let mut epoch_per_rank = vec![0.0; spec.depth()];
        let mut epoch_skipped = 0usize;
        let mut batches = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let mut rows = Vec::with_capacity(chunk.len() * 2);
            let mut batch_labels = Vec::with_capacity(chunk.len() * 2);
            for &i in chunk {
                let key = root.derive(&[2, epoch as u64, batch_idx as u64, i as u64]);
                let (a, b) = view_fn(&key, &samples[i]);
                rows.push(a);
                rows.push(b);
                batch_labels.push(labels[i].clone());
                batch_labels.push(labels[i].clone());
            }
            let batch = Matrix::from_rows(&rows)?;
            let breakdown = model.train_step(&batch, &batch_labels, spec, &taus, lr)?;
            epoch_total += breakdown.total;
            for (acc, v) in epoch_per_rank.iter_mut().zip(&breakdown.per_rank) {
                *acc += v;
            }
            epoch_skipped += breakdown.skipped_terms;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Validation(
                "no batch of size >= 2 could be formed".into(),
            ));
        }
        let inv = 1.0 / batches as f64;
        model.epoch = epoch + 1;
        log.push(EpochRecord {
            epoch,
            lr,
            loss: LossBreakdown {
                total: epoch_total * inv,
                per_rank: epoch_per_rank.iter().map(|v| v * inv).collect(),
                per_anchor: Vec::new(),
                skipped_terms: epoch_skipped,
            },
        });
    }
    Ok(log)
}

/// Same-architecture discriminative baseline: the encoder trunk with a
/// final linear layer to class logits, trained with softmax cross-entropy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    pub dims: Vec<usize>,
    pub classes: Vec<String>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl SoftmaxClassifier {
    /// `dims` = [input, hidden...]; a logits layer to `classes.len()` is
    /// appended.
    pub fn new(mut dims: Vec<usize>, classes: Vec<String>, seed: u64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Validation("no classes".into()));
        }
        dims.push(classes.len());
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!("bad architecture {dims:?}")));
        }
        let mut rng = Rng::new(seed).derive(&[0x50F7]);
        let (weights, biases) = init_layers(&dims, &mut rng);
        Ok(SoftmaxClassifier { dims, classes, weights, biases })
    }

    fn logits_traced(&self, batch: &Matrix) -> Result<(Tape, Var, Vec<(Var, Var)>)> {
        let mut tape = Tape::new();
        let mut h = tape.input(batch.clone());
        let mut params = Vec::new();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.input(w.clone());
            let bv = tape.input(b.clone());
            params.push((wv, bv));
            h = tape.matmul(h, wv)?;
            h = tape.add_row_broadcast(h, bv)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok((tape, h, params))
    }

    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        let (tape, h, _) = self.logits_traced(batch)?;
        Ok(tape.value(h).clone())
    }

    /// One cross-entropy SGD step; returns the pre-update mean loss.
    pub fn train_step(&mut self, batch: &Matrix, targets: &[usize], lr: f64) -> Result<f64> {
        let (tape, hv, params) = self.logits_traced(batch)?;
        let logits = tape.value(hv);
        let n = logits.rows();
        let c = logits.cols();
        let mut dl = Matrix::zeros(n, c);
        let mut loss = 0.0;
        for i in 0..n {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            loss += lse - row[targets[i]];
            for j in 0..c {
                let p = (row[j] - lse).exp();
                let y = if j == targets[i] { 1.0 } else { 0.0 };
                dl.set(i, j, (p - y) / n as f64);
            }
        }
        let grads = tape.backward(hv, dl)?;
        for (i, &(wv, bv)) in params.iter().enumerate() {
            self.weights[i] = self.weights[i].sub(&grads.get(wv).scale(lr))?;
            self.biases[i] = self.biases[i].sub(&grads.get(bv).scale(lr))?;
        }
        Ok(loss / n as f64)
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Mirror of [`fit`] for the baseline: same shuffling, same schedule.
    pub fn fit(
        &mut self,
        samples: &[Vec<f64>],
        labels: &[String],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        let targets: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::Validation(format!("unknown label '{l}'")))
            })
            .collect::<Result<_>>()?;
        let milestones = cfg.milestones();
        let root = Rng::new(cfg.seed);
        let mut lr = cfg.lr;
        let mut log = Vec::new();
        for epoch in 0..cfg.epochs {
            if milestones.contains(&epoch) && epoch > 0 {
                lr *= cfg.lr_decay;
            }
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut shuffle_rng = root.derive(&[1, epoch as u64]);
            shuffle_rng.shuffle(&mut order);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let batch = Matrix::from_rows(&rows)?;
                total += self.train_step(&batch, &t, lr)?;
                batches += 1;
            }
            log.push(total / batches as f64);
        }
        Ok(log)
    }
}

/// Checkpoint JSON: architecture, flat weight arrays, seed, epoch.
pub fn save_checkpoint(model: &EncoderModel, path: &std::path::Path) -> Result<()> {
    let json = serde_json::to_string(model)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<EncoderModel> {
    let text = std::fs::read_to_string(path)?;
    let model: EncoderModel = serde_json::from_str(&text)?;
    if model.weights.len() != model.dims.len() - 1 {
        return Err(Error::Validation("checkpoint layer count mismatch".into()));
    }
    for (i, w) in model.weights.iter().enumerate() {
        if w.rows() != model.dims[i] || w.cols() != model.dims[i + 1] {
            return Err(Error::Validation(format!("checkpoint weight {i} shape mismatch")));
        }
    }
    Ok(model)
}
