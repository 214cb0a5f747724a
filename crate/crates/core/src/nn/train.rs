use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::loss::{argmax, cross_entropy, softmax};
use super::network::{backward_accumulate, forward, NetworkSpec};
use super::optim::{adam_step, AdamConfig, AdamState, Plateau, PlateauConfig};
use super::tensor::Tensor;
use super::NnError;
use crate::rng::keyed_rng;

/// Samples per forward/backward pass.
const CHUNK: usize = 4;
/// Samples per independently accumulated gradient. Fixed so that the
/// summation order, and therefore the trained weights, do not depend on the
/// thread count.
const GROUP: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            initial_lr: 0.001,
            plateau_patience: 10,
            plateau_factor: 0.2,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie strictly between 0 and 1");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        Ok(())
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            patience: self.plateau_patience,
            factor: self.plateau_factor,
            ..PlateauConfig::default()
        }
    }
}

/// Images stored channel-major, one after another, with their labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub sample_shape: [usize; 3],
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(sample_shape: [usize; 3]) -> Self {
        LabeledSet {
            sample_shape,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, chw: &[f32], label: usize) {
        assert_eq!(chw.len(), self.sample_len(), "sample size");
        self.images.extend_from_slice(chw);
        self.labels.push(label);
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Gather the given indices into a `[n, c, h, w]` batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        let [c, h, w] = self.sample_shape;
        (
            Tensor::from_vec(&[idx.len(), c, h, w], data),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// Mean loss and gradients over a batch, computed chunk by chunk.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &[Tensor<f32>],
    batch: &Tensor<f32>,
    labels: &[usize],
) -> Result<(f64, Vec<Tensor<f32>>, usize), NnError> {
    let n = labels.len();
    if batch.shape.first() != Some(&n) || n == 0 {
        return Err(NnError::ShapeMismatch(format!("{n} labels for batch {:?}", batch.shape)));
    }
    let per = batch.len() / n;
    let scale = 1.0 / n as f32;
    let parts: Vec<_> = (0..n.div_ceil(GROUP))
        .into_par_iter()
        .map(|g| {
            let mut grads: Vec<Tensor<f32>> = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
            let mut loss = 0.0;
            let mut correct = 0;
            for lo in (g * GROUP..((g + 1) * GROUP).min(n)).step_by(CHUNK) {
                let hi = (lo + CHUNK).min(n).min((g + 1) * GROUP);
                let mut shape = batch.shape.clone();
                shape[0] = hi - lo;
                let x = Tensor::from_vec(&shape, batch.data[lo * per..hi * per].to_vec());
                let trace = forward(spec, params, &x)?;
                let (l, mut dlogits) = cross_entropy(trace.logits(), &labels[lo..hi])?;
                // rescale the chunk mean to the batch mean
                let w = (hi - lo) as f32 * scale;
                dlogits.data.iter_mut().for_each(|d| *d *= w);
                correct += softmax(trace.logits())
                    .iter()
                    .zip(&labels[lo..hi])
                    .filter(|(p, &y)| argmax(p) == y)
                    .count();
                backward_accumulate(spec, params, &trace, &dlogits, &mut grads, false)?;
                loss += l * (hi - lo) as f64;
            }
            Ok::<_, NnError>((loss, grads, correct))
        })
        .collect();
    let mut total = 0.0;
    let mut correct = 0;
    let mut grads: Option<Vec<Tensor<f32>>> = None;
    for part in parts {
        let (l, g, c) = part?;
        total += l;
        correct += c;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((total / n as f64, grads.expect("at least one group"), correct))
}

/// Mean loss and accuracy of `params` on a whole set.
pub fn evaluate_loss(spec: &NetworkSpec, params: &[Tensor<f32>], set: &LabeledSet) -> Result<(f64, f64), NnError> {
    if set.is_empty() {
        return Err(NnError::EmptySplit);
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let parts: Vec<_> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let (x, y) = set.batch(chunk);
            let trace = forward(spec, params, &x)?;
            let (loss, _) = cross_entropy(trace.logits(), &y)?;
            let correct = softmax(trace.logits())
                .iter()
                .zip(&y)
                .filter(|(p, &l)| argmax(p) == l)
                .count();
            Ok::<_, NnError>((loss * chunk.len() as f64, correct))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for p in parts {
        let (l, c) = p?;
        loss += l;
        correct += c;
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Train from a fresh initialization and return the parameters of the epoch
/// with the lowest validation loss.
pub fn train(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    spec.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnError::EmptySplit);
    }
    for set in [train_set, val_set] {
        if set.sample_shape != spec.input || set.labels.iter().any(|&l| l >= spec.classes) {
            return Err(NnError::ShapeMismatch("data does not match network input or classes".into()));
        }
    }
    let mut params = spec.init_params::<f32>(config.seed);
    let mut state = AdamState::new(&params);
    let adam = AdamConfig::default();
    let mut plateau = Plateau::new(config.plateau(), config.initial_lr);
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let lr = plateau.lr;
        order.sort_unstable();
        order.shuffle(&mut keyed_rng("train-shuffle", &[config.seed, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(config.batch_size) {
            let (x, y) = train_set.batch(idx);
            let (loss, grads, c) = loss_and_grad(spec, &params, &x, &y)?;
            if !loss.is_finite() {
                return Err(NnError::DivergedLoss { epoch });
            }
            adam_step(&mut params, &grads, &mut state, &adam, lr)?;
            loss_sum += loss * idx.len() as f64;
            correct += c;
        }
        let (val_loss, val_accuracy) = evaluate_loss(spec, &params, val_set)?;
        if !val_loss.is_finite() {
            return Err(NnError::DivergedLoss { epoch });
        }
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} train loss {:.4} acc {:.4} val loss {val_loss:.4} acc {val_accuracy:.4}",
            stats.train_loss,
            stats.train_accuracy
        );
        history.push(stats);
        if best.as_ref().map_or(true, |b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                spec: spec.clone(),
                params: params.clone(),
                epoch,
                val_loss,
            });
        }
        plateau.observe(val_loss);
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        history,
    })
}
