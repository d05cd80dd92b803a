//! Seeded training loops: supervised classifier training and adversarial
//! generator/discriminator training on normal tiles.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgrid::UnitImage;
use crate::io;
use crate::metrics::{confusion, ConfusionMatrix};
use crate::nets::{classify_batch, tiles_to_tensor, LOGIT_NODE};
use crate::synthdata::LabeledTile;
use crate::tensorcore::loss::{bce_with_logits, l1, softmax_cross_entropy};
use crate::tensorcore::{adam_step, AdamConfig, AdamState, Mode, Network, Param, Tensor};

/// Discriminator losses below this for a whole epoch count as collapse.
pub const COLLAPSE_LOSS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adversarial: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adversarial: 1.0,
            reconstruction: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub seed: u64,
    /// Train fraction of the labelled split.
    pub split_ratio: f64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::gan()
    }
}

impl TrainConfig {
    /// Adversarial defaults: batch 4, 8 epochs, Adam(2e-4, 0.5, 0.999).
    pub fn gan() -> Self {
        TrainConfig {
            batch_size: 4,
            epochs: 8,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            split_ratio: 0.8,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn classifier() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            ..Self::gan()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let w = self.loss_weights;
        if !(w.adversarial >= 0.0 && w.reconstruction >= 0.0) || w.adversarial + w.reconstruction == 0.0 {
            return Err(Error::Config(format!(
                "loss weights ({}, {}) must be non-negative and not both zero",
                w.adversarial, w.reconstruction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// One line of a training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Classifier cross-entropy, or the generator's weighted total.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_adversarial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_reconstruction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    /// Rows are true classes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u64>>>,
    pub warnings: Vec<String>,
    pub wall_seconds: f64,
}

impl TrainReport {
    fn new(kind: &str, seed: u64) -> Self {
        TrainReport {
            kind: kind.into(),
            seed,
            epochs: Vec::new(),
            train_size: 0,
            test_size: 0,
            test_accuracy: None,
            confusion: None,
            warnings: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// JSON lines: one record per epoch, then a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).unwrap_or_default());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "kind": self.kind,
                "seed": self.seed,
                "train_size": self.train_size,
                "test_size": self.test_size,
                "test_accuracy": self.test_accuracy,
                "confusion": self.confusion,
                "warnings": self.warnings,
                "wall_seconds": self.wall_seconds,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Index partition into `(train, test)`. With labels the split is
/// stratified: each class keeps at least one example on both sides and the
/// train total is `floor(ratio·n)` whenever that is compatible.
pub fn split(n: usize, labels: Option<&[usize]>, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (ratio * n as f64).floor() as usize;
    let Some(labels) = labels else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let test = idx.split_off(target);
        return Ok((idx, test));
    };
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} items", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<usize> = (0..k).filter(|&c| !by_class[c].is_empty()).collect();
    if let Some(&c) = present.iter().find(|&&c| by_class[c].len() < 2) {
        return Err(Error::Stratification {
            class: c,
            count: by_class[c].len(),
        });
    }
    let mut quota = vec![0usize; k];
    for &c in &present {
        let m = by_class[c].len();
        quota[c] = ((ratio * m as f64).floor() as usize).clamp(1, m - 1);
    }
    let remainder = |c: usize, q: usize| ratio * by_class[c].len() as f64 - q as f64;
    loop {
        let total: usize = quota.iter().sum();
        let step = if total < target {
            present
                .iter()
                .filter(|&&c| quota[c] < by_class[c].len() - 1)
                .max_by(|&&a, &&b| remainder(a, quota[a]).total_cmp(&remainder(b, quota[b])).then(b.cmp(&a)))
                .map(|&c| (c, true))
        } else if total > target {
            present
                .iter()
                .filter(|&&c| quota[c] > 1)
                .min_by(|&&a, &&b| remainder(a, quota[a]).total_cmp(&remainder(b, quota[b])).then(a.cmp(&b)))
                .map(|&c| (c, false))
        } else {
            None
        };
        match step {
            Some((c, true)) => quota[c] += 1,
            Some((c, false)) => quota[c] -= 1,
            None => break,
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for &c in &present {
        let mut idx = by_class[c].clone();
        idx.shuffle(&mut rng);
        test.extend(idx.split_off(quota[c]));
        train.extend(idx);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn snapshot(net: &Network) -> Vec<Tensor> {
    net.params().iter().map(|p| p.value.clone()).collect()
}

fn restore_snapshot(net: &mut Network, snap: Vec<Tensor>) {
    for (p, v) in net.params_mut().iter_mut().zip(snap) {
        p.value = v;
    }
    net.clear_cache();
}

fn check_finite(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Where per-epoch checkpoints go; `None` trains in memory only.
#[derive(Debug, Clone, Default)]
pub struct CheckpointPaths {
    pub classifier: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    pub discriminator: Option<PathBuf>,
}

/// Minimises softmax cross-entropy with Adam on the train split and scores
/// the held-out split every epoch. On a non-finite loss the network is
/// rolled back to its last completed epoch (which is also the last
/// checkpoint written) and the error is returned.
pub fn train_classifier(
    net: &mut Network,
    tiles: &[LabeledTile],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let labels: Vec<usize> = tiles.iter().map(|t| t.label).collect();
    let k = net.node_shape(net.output_id())[0];
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {l} but classifier has {k} outputs")));
    }
    let distinct = {
        let mut seen = vec![false; k];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::InvalidArgument("classifier training needs at least two classes".into()));
    }
    let (train, test) = split(tiles.len(), Some(&labels), cfg.split_ratio, cfg.seed)?;
    let test_tiles: Vec<UnitImage> = test.iter().map(|&i| tiles[i].tile.clone()).collect();
    let test_labels: Vec<usize> = test.iter().map(|&i| labels[i]).collect();

    let mut report = TrainReport::new("classifier", cfg.seed);
    report.train_size = train.len();
    report.test_size = test.len();
    let adam = cfg.adam();
    let mut state = AdamState::new(net.params());
    let mut last_good = snapshot(net);

    for epoch in 0..cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = tiles_to_tensor(net, batch.iter().map(|&i| &tiles[i].tile))?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = match classifier_step(net, &mut state, &adam, &x, &y) {
                Ok(l) => l,
                Err(e) => {
                    restore_snapshot(net, last_good);
                    return Err(e);
                }
            };
            net.advance_step();
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let cm = evaluate(net, &test_tiles, &test_labels, k)?;
        let acc = cm.accuracy().ok();
        log::info!("classifier epoch {epoch}: loss {:.4}, test accuracy {acc:?}", sum / count as f64);
        report.epochs.push(EpochRecord {
            epoch,
            steps: order.len().div_ceil(cfg.batch_size),
            loss: sum / count.max(1) as f64,
            test_accuracy: acc,
            generator_adversarial: None,
            generator_reconstruction: None,
            discriminator: None,
        });
        last_good = snapshot(net);
        if let Some(path) = checkpoint {
            net.save(path)?;
        }
    }
    let cm = evaluate(net, &test_tiles, &test_labels, k)?;
    report.test_accuracy = cm.accuracy().ok();
    report.confusion = Some((0..k).map(|t| (0..k).map(|p| cm.get(t, p)).collect()).collect());
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn classifier_step(net: &mut Network, state: &mut AdamState, adam: &AdamConfig, x: &Tensor, y: &[usize]) -> Result<f64> {
    net.zero_grad();
    let logits = net.forward(x, Mode::Train)?.output().clone();
    check_finite_tensor(&logits, "classifier logits")?;
    let (loss, grad) = softmax_cross_entropy(&logits, y)?;
    check_finite(loss, "classifier loss")?;
    let out = net.output_id();
    net.backward(&[(out, grad)])?;
    adam_step(net.params_mut(), state, adam)?;
    Ok(loss)
}

/// Confusion matrix of argmax predictions.
pub fn evaluate(net: &Network, tiles: &[UnitImage], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    let pred: Vec<usize> = classify_batch(net, tiles)?.iter().map(|p| p.argmax()).collect();
    confusion(labels, &pred, k)
}

/// Loss components of one generator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    pub adversarial: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// A generator/discriminator pair with their optimiser states.
pub struct GanTrainer<'a> {
    pub generator: &'a mut Network,
    pub discriminator: &'a mut Network,
    cfg: TrainConfig,
    g_state: AdamState,
    d_state: AdamState,
    logit: usize,
}

impl<'a> GanTrainer<'a> {
    pub fn new(generator: &'a mut Network, discriminator: &'a mut Network, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if generator.input_shape() != discriminator.input_shape()
            || generator.node_shape(generator.output_id()) != generator.input_shape()
        {
            return Err(Error::Config(
                "generator output, generator input and discriminator input must share a shape".into(),
            ));
        }
        let names = |n: &Network| n.params().iter().map(|p| p.name.clone()).collect::<Vec<_>>();
        let g_names = names(generator);
        if names(discriminator).iter().any(|n| g_names.contains(n)) {
            return Err(Error::Config("generator and discriminator share parameter names".into()));
        }
        let logit = discriminator
            .node_id(LOGIT_NODE)
            .ok_or_else(|| Error::Config(format!("discriminator has no `{LOGIT_NODE}` node")))?;
        Ok(GanTrainer {
            g_state: AdamState::new(generator.params()),
            d_state: AdamState::new(discriminator.params()),
            generator,
            discriminator,
            cfg: cfg.clone(),
            logit,
        })
    }

    /// One adversarial step on a batch of real tiles. Returns the
    /// discriminator loss and the generator loss.
    pub fn step(&mut self, real: &Tensor) -> Result<(f64, GeneratorLoss)> {
        let n = real.batch();
        let adam = self.cfg.adam();
        let w = self.cfg.loss_weights;

        let fake = self.generator.forward(real, Mode::Train)?.output().clone();
        check_finite_tensor(&fake, "generator output")?;

        // Discriminator: BCE(real -> 1) and BCE(fake -> 0), averaged.
        let d = &mut *self.discriminator;
        d.zero_grad();
        let logits = d.forward(real, Mode::Train)?.value(self.logit).clone();
        let (l_real, mut g_real) = bce_with_logits(&logits, &vec![1.0; n])?;
        g_real.scale(0.5);
        d.backward(&[(self.logit, g_real)])?;
        let logits = d.forward(&fake, Mode::Train)?.value(self.logit).clone();
        let (l_fake, mut g_fake) = bce_with_logits(&logits, &vec![0.0; n])?;
        g_fake.scale(0.5);
        d.backward(&[(self.logit, g_fake)])?;
        let d_loss = 0.5 * (l_real + l_fake);
        check_finite(d_loss, "discriminator loss")?;
        adam_step(d.params_mut(), &mut self.d_state, &adam)?;

        // Generator: λ_adv·BCE(D(G(x)) -> 1) + λ_rec·L1(G(x), x). The
        // discriminator's parameter gradients from this pass are discarded.
        let logits = d.forward(&fake, Mode::Train)?.value(self.logit).clone();
        let (adv, g_adv) = bce_with_logits(&logits, &vec![1.0; n])?;
        let mut grad = d.backward(&[(self.logit, g_adv)])?;
        d.zero_grad();
        d.clear_cache();
        grad.scale(w.adversarial as f32);
        let (rec, mut g_rec) = l1(&fake, real)?;
        g_rec.scale(w.reconstruction as f32);
        grad.add_assign(&g_rec);
        let total = w.adversarial * adv + w.reconstruction * rec;
        check_finite(total, "generator loss")?;
        let g = &mut *self.generator;
        g.zero_grad();
        let out = g.output_id();
        g.backward(&[(out, grad)])?;
        adam_step(g.params_mut(), &mut self.g_state, &adam)?;
        g.advance_step();
        d.advance_step();
        Ok((
            d_loss,
            GeneratorLoss {
                adversarial: adv,
                reconstruction: rec,
                total,
            },
        ))
    }
}

fn check_finite_tensor(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Number of optimiser steps per epoch (partial batches are dropped).
pub fn gan_steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size.max(1)
}

/// Adversarial training on normal tiles. Every epoch is a fresh seeded
/// permutation cut into `floor(n / batch_size)` full batches. On a
/// non-finite loss both networks roll back to their last completed epoch.
pub fn train_gan(
    generator: &mut Network,
    discriminator: &mut Network,
    tiles: &[UnitImage],
    cfg: &TrainConfig,
    checkpoints: &CheckpointPaths,
) -> Result<TrainReport> {
    cfg.validate()?;
    if tiles.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} tiles cannot fill a batch of {}",
            tiles.len(),
            cfg.batch_size
        )));
    }
    let start = Instant::now();
    let mut report = TrainReport::new("gan", cfg.seed);
    report.train_size = tiles.len();
    let steps = gan_steps_per_epoch(tiles.len(), cfg.batch_size);
    let mut good = (snapshot(generator), snapshot(discriminator));
    let mut trainer = GanTrainer::new(generator, discriminator, cfg)?;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tiles.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let (mut d_sum, mut adv_sum, mut rec_sum, mut tot_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut d_max: f64 = 0.0;
        for batch in order.chunks_exact(cfg.batch_size) {
            let x = tiles_to_tensor(trainer.generator, batch.iter().map(|&i| &tiles[i]))?;
            let (d_loss, g_loss) = match trainer.step(&x) {
                Ok(v) => v,
                Err(e) => {
                    let (g, d) = good;
                    restore_snapshot(trainer.generator, g);
                    restore_snapshot(trainer.discriminator, d);
                    return Err(e);
                }
            };
            d_sum += d_loss;
            d_max = d_max.max(d_loss);
            adv_sum += g_loss.adversarial;
            rec_sum += g_loss.reconstruction;
            tot_sum += g_loss.total;
        }
        let s = steps as f64;
        if d_max < COLLAPSE_LOSS {
            let msg = format!("epoch {epoch}: discriminator loss collapsed below {COLLAPSE_LOSS}");
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
        log::info!(
            "gan epoch {epoch}: D {:.4}, G adv {:.4} rec {:.4}",
            d_sum / s,
            adv_sum / s,
            rec_sum / s
        );
        report.epochs.push(EpochRecord {
            epoch,
            steps,
            loss: tot_sum / s,
            test_accuracy: None,
            generator_adversarial: Some(adv_sum / s),
            generator_reconstruction: Some(rec_sum / s),
            discriminator: Some(d_sum / s),
        });
        good = (snapshot(trainer.generator), snapshot(trainer.discriminator));
        if let Some(p) = &checkpoints.generator {
            trainer.generator.save(p)?;
        }
        if let Some(p) = &checkpoints.discriminator {
            trainer.discriminator.save(p)?;
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Saves `net` (parameters plus architecture descriptor).
pub fn checkpoint(net: &Network, path: &Path) -> Result<()> {
    net.save(path)
}

pub fn restore(path: &Path) -> Result<Network> {
    Network::restore(path)
}

/// Parameter names, for disjointness checks.
pub fn param_names(params: &[Param]) -> Vec<&str> {
    params.iter().map(|p| p.name.as_str()).collect()
}
