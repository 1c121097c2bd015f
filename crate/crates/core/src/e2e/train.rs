use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::{example_rng, scene_for, simulate_split, EmbeddingSet, Split, PURPOSE_NOISE};
use super::report::{EpochRecord, RunReport};
use super::{encoder_psf, precompute_fixed_dataset, slm_psf, EncoderKind, ExperimentConfig};
use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{ConvPlan, RealGrid, Resizer};
use crate::io::{ingest_mnist, DigitSet, MnistSplits};
use crate::learn::{argmax_rows, AdamConfig, AdamState, BatchNorm1d, Classifier, Mode, PsfGraph, Tape, Value, NUM_CLASSES};
use crate::simcam::{noise_term, Simulator};
use crate::slm::SlmState;

/// Examples per evaluation shard.
const EVAL_SHARD: usize = 1000;

/// Everything downstream of the sensor: an optional batch-norm + rectifier
/// front (learned encoders) followed by the classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub front: Option<BatchNorm1d>,
    pub classifier: Classifier,
}

impl Decoder {
    pub fn in_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    /// Record the decoder; returns the score node and parameter leaves in
    /// [`Decoder::params_mut`] order.
    pub fn record(&mut self, tape: &mut Tape, x: crate::learn::NodeId, batch: usize, mode: Mode) -> Result<(crate::learn::NodeId, Vec<crate::learn::NodeId>)> {
        let mut leaves = Vec::new();
        let mut h = x;
        if let Some(bn) = &mut self.front {
            let n = tape.real(x).len();
            if n != batch * bn.dim {
                return Err(dim_mismatch("decoder input", batch * bn.dim, n));
            }
            let (y, p) = bn.record(tape, h, batch, mode);
            h = tape.relu(y);
            leaves.extend(p);
        }
        let (y, p) = self.classifier.record(tape, h, batch, mode)?;
        leaves.extend(p);
        Ok((y, leaves))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        if let Some(bn) = &mut self.front {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(bn) = &self.front {
            out.extend([bn.dim, bn.dim]);
        }
        out.extend(self.classifier.param_shapes());
        out
    }

    /// Eval-mode scores for `batch` flattened embeddings.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xi = tape.constant(Value::Real(x.to_vec()));
        let mut me = self.clone();
        let (y, _) = me.record(&mut tape, xi, batch, Mode::Eval)?;
        Ok(tape.real(y).to_vec())
    }
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() * NUM_CLASSES {
        return Err(dim_mismatch("scores", labels.len() * NUM_CLASSES, scores.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = argmax_rows(scores, NUM_CLASSES)
        .iter()
        .zip(labels)
        .filter(|(p, &l)| **p == l as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Eval-mode accuracy of `decoder` on `set`, sharded across threads.
pub fn evaluate(decoder: &Decoder, set: &EmbeddingSet) -> Result<f64> {
    if set.dim != decoder.in_dim() {
        return Err(dim_mismatch("embedding dimension", decoder.in_dim(), set.dim));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let scores: Vec<Vec<f64>> = idx
        .par_chunks(EVAL_SHARD)
        .map(|c| {
            let (x, _) = set.gather(c);
            decoder.predict(&x, c.len())
        })
        .collect::<Result<_>>()?;
    accuracy(&scores.concat(), &set.labels)
}

/// Re-simulate the test split through the checkpoint's PSF and score it.
pub fn evaluate_checkpoint(dir: &Path, test: &DigitSet) -> Result<f64> {
    let ck = Checkpoint::load(dir)?;
    let set = test_embeddings(&ck.config, &ck.psf, test, ck.norm)?;
    evaluate(&ck.decoder, &set)
}

fn test_embeddings(cfg: &ExperimentConfig, psf: &RealGrid, test: &DigitSet, norm: Option<(f64, f64)>) -> Result<EmbeddingSet> {
    let sim = Simulator::new(cfg.effective_sim(), psf)?;
    let mut set = simulate_split(cfg, &sim, test, Split::Test, None)?;
    if let Some((m, s)) = norm {
        set.normalize(m, s);
    }
    Ok(set)
}

/// Load MNIST from `cfg.mnist_dir`, truncate as configured and train.
pub fn train(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let splits = ingest_mnist(&cfg.mnist_dir)?;
    train_on(cfg, &splits)
}

/// Train on already-loaded digits (truncated to `n_train` / `n_test`).
pub fn train_on(cfg: &ExperimentConfig, splits: &MnistSplits) -> Result<RunReport> {
    cfg.validate()?;
    let splits = MnistSplits {
        train: cfg.n_train.map_or_else(|| splits.train.clone(), |n| splits.train.truncated(n)),
        test: cfg.n_test.map_or_else(|| splits.test.clone(), |n| splits.test.truncated(n)),
    };
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Config("empty training or test split".into()));
    }
    let start = Instant::now();
    let mut run = if cfg.encoder == EncoderKind::LearnedSlm {
        train_learned(cfg, &splits)?
    } else {
        train_fixed(cfg, &splits)?
    };
    run.report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(run.report)
}

struct Run {
    report: RunReport,
}

fn embedding_len(cfg: &ExperimentConfig) -> usize {
    let sim = cfg.effective_sim();
    let (eh, ew) = sim.embedding_dims;
    eh * ew * if sim.grayscale { 1 } else { 3 }
}

fn init_rng(cfg: &ExperimentConfig) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    s[24..].copy_from_slice(b"decoder!");
    ChaCha8Rng::from_seed(s)
}

fn shuffle_rng(cfg: &ExperimentConfig, epoch: usize) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    s[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    s[24..].copy_from_slice(b"shuffle!");
    ChaCha8Rng::from_seed(s)
}

fn epoch_order(cfg: &ExperimentConfig, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut shuffle_rng(cfg, epoch));
    idx
}

fn new_report(cfg: &ExperimentConfig, n_train: usize, n_test: usize) -> RunReport {
    RunReport {
        name: cfg.name.clone(),
        encoder: cfg.encoder.name().into(),
        classifier: format!("{:?}", cfg.classifier).to_lowercase(),
        embedding_dims: cfg.sim.embedding_dims,
        transform: format!("{:?}", cfg.transform.kind).to_lowercase(),
        n_train,
        n_test,
        seed: cfg.seed,
        epochs: Vec::new(),
        best_accuracy: 0.0,
        final_theta: None,
        wall_time_s: 0.0,
    }
}

fn push_epoch(report: &mut RunReport, rec: EpochRecord) -> Result<()> {
    if !rec.train_loss.is_finite() {
        return Err(Error::Numeric(format!("training loss diverged at epoch {}", rec.epoch)));
    }
    report.best_accuracy = report.best_accuracy.max(rec.test_accuracy);
    report.epochs.push(rec);
    Ok(())
}

fn decoder_step(tape: &Tape, loss: crate::learn::NodeId, leaves: &[crate::learn::NodeId], decoder: &mut Decoder, adam: &mut AdamState) -> Result<crate::learn::Gradients> {
    let grads = tape.backward(loss, Value::Real(vec![1.0]));
    let g: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&id| grads.real(id, tape.real(id).len()))
        .collect();
    adam.step(&mut decoder.params_mut(), &g)?;
    Ok(grads)
}

fn train_fixed(cfg: &ExperimentConfig, splits: &MnistSplits) -> Result<Run> {
    let psf = encoder_psf(cfg)?;
    let data = precompute_fixed_dataset(cfg, splits, &psf)?;
    let mut decoder = Decoder {
        front: None,
        classifier: Classifier::new(cfg.classifier, data.train.dim, &mut init_rng(cfg)),
    };
    let mut adam = AdamState::new(cfg.adam, &decoder.param_shapes());
    let mut report = new_report(cfg, data.train.len(), data.test.len());
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let order = epoch_order(cfg, epoch, data.train.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let (x, labels) = data.train.gather(chunk);
            let mut tape = Tape::new();
            let xi = tape.constant(Value::Real(x));
            let (scores, leaves) = decoder.record(&mut tape, xi, chunk.len(), Mode::Train)?;
            let loss = tape.softmax_ce(scores, &labels, NUM_CLASSES)?;
            loss_sum += tape.scalar(loss) * chunk.len() as f64;
            decoder_step(&tape, loss, &leaves, &mut decoder, &mut adam)?;
        }
        let acc = evaluate(&decoder, &data.test)?;
        push_epoch(
            &mut report,
            EpochRecord {
                epoch,
                train_loss: loss_sum / order.len() as f64,
                test_accuracy: acc,
                seconds: t0.elapsed().as_secs_f64(),
            },
        )?;
        if let Some(dir) = &cfg.checkpoint_dir {
            Checkpoint {
                config: cfg.clone(),
                epoch,
                psf: psf.clone(),
                norm: Some((data.mean, data.std)),
                decoder: decoder.clone(),
                theta: None,
                decoder_adam: adam.clone(),
                encoder_adam: None,
            }
            .save(dir)?;
        }
    }
    Ok(Run { report })
}

fn train_learned(cfg: &ExperimentConfig, splits: &MnistSplits) -> Result<Run> {
    let sim = cfg.effective_sim();
    let (ph, pw) = sim.psf_dims;
    let (eh, ew) = sim.embedding_dims;
    let dim = embedding_len(cfg);
    let graph = PsfGraph::new(&cfg.psf_model()?, cfg.mask_raster()?);
    let conv = Arc::new(ConvPlan::new(ph, pw));
    let resizer = Arc::new(Resizer::new(ph, pw, eh, ew));

    let init = cfg.initial_slm();
    let geometry = init.geometry.clone();
    let mut theta = init.raw_weights;
    let mut decoder = Decoder {
        front: Some(BatchNorm1d::new(dim)),
        classifier: Classifier::new(cfg.classifier, dim, &mut init_rng(cfg)),
    };
    let mut adam = AdamState::new(cfg.adam, &decoder.param_shapes());
    let enc_cfg = AdamConfig {
        lr: cfg.lr_encoder,
        ..cfg.adam
    };
    let mut enc_adam = AdamState::new(enc_cfg, &[theta.len()]);
    let mut report = new_report(cfg, splits.train.len(), splits.test.len());

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let order = epoch_order(cfg, epoch, splits.train.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let scenes: Vec<Vec<f64>> = chunk
                .par_iter()
                .map(|&i| scene_for(cfg, &sim, &splits.train, Split::Train, i).map(|s| s.plane(0).to_vec()))
                .collect::<Result<_>>()?;
            let labels: Vec<u8> = chunk.iter().map(|&i| splits.train.labels[i]).collect();

            let mut tape = Tape::new();
            let th = tape.leaf(theta.clone());
            let psf = graph.record_gray(&mut tape, th)?;
            let sensor = tape.conv_batch(psf, &scenes, conv.clone())?;
            let mut emb = tape.resize_batch(sensor, resizer.clone(), chunk.len())?;
            if let Some(snr) = sim.snr_db {
                let clean = tape.real(emb).to_vec();
                let noise: Vec<Vec<f64>> = chunk
                    .par_iter()
                    .zip(clean.par_chunks(dim))
                    .map(|(&i, row)| {
                        let g = RealGrid::from_vec(eh, ew, 1, row.to_vec())?;
                        if g.variance() == 0.0 {
                            return Ok(vec![0.0; dim]);
                        }
                        let mut rng = example_rng(cfg.seed, Split::Train, i, PURPOSE_NOISE + epoch as u32 + 1);
                        noise_term(&g, snr, &mut rng)
                    })
                    .collect::<Result<_>>()?;
                emb = tape.add_const(emb, &noise.concat());
            }
            let (scores, leaves) = decoder.record(&mut tape, emb, chunk.len(), Mode::Train)?;
            let loss = tape.softmax_ce(scores, &labels, NUM_CLASSES)?;
            loss_sum += tape.scalar(loss) * chunk.len() as f64;
            let grads = decoder_step(&tape, loss, &leaves, &mut decoder, &mut adam)?;
            let gth = grads.real(th, theta.len());
            enc_adam.step(&mut [&mut theta], &[gth])?;
        }

        let state = SlmState::new(geometry.clone(), theta.clone(), true)?;
        let psf = slm_psf(cfg, &state)?;
        let test = test_embeddings(cfg, &psf, &splits.test, None)?;
        let acc = evaluate(&decoder, &test)?;
        push_epoch(
            &mut report,
            EpochRecord {
                epoch,
                train_loss: loss_sum / order.len() as f64,
                test_accuracy: acc,
                seconds: t0.elapsed().as_secs_f64(),
            },
        )?;
        if let Some(dir) = &cfg.checkpoint_dir {
            Checkpoint {
                config: cfg.clone(),
                epoch,
                psf,
                norm: None,
                decoder: decoder.clone(),
                theta: Some(theta.clone()),
                decoder_adam: adam.clone(),
                encoder_adam: Some(enc_adam.clone()),
            }
            .save(dir)?;
        }
    }
    report.final_theta = Some(theta);
    Ok(Run { report })
}
