use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::Decoder;
use super::{config_hash, ExperimentConfig};
use crate::error::{dim_mismatch, Error, Result};
use crate::grid::RealGrid;
use crate::io::{read_real_grid, read_tensor, write_real_grid, write_tensor, Tensor};
use crate::learn::{AdamState, BatchNorm1d, Classifier, ClassifierChoice};

const MANIFEST: &str = "manifest.json";

/// Model state at the end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    /// PSF the decoder was evaluated with.
    pub psf: RealGrid,
    /// Embedding normalization of the fixed encoders.
    pub norm: Option<(f64, f64)>,
    pub decoder: Decoder,
    /// Raw SLM weights of a learned encoder.
    pub theta: Option<Vec<f64>>,
    pub decoder_adam: AdamState,
    pub encoder_adam: Option<AdamState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    epoch: usize,
    seed: u64,
    config_hash: String,
    config: ExperimentConfig,
    norm: Option<(f64, f64)>,
    classifier: ClassifierChoice,
    in_dim: usize,
    front: bool,
    decoder_adam_step: u64,
    encoder_adam_step: Option<u64>,
    tensors: Vec<String>,
}

fn bn_tensors(prefix: &str, bn: &BatchNorm1d) -> Vec<(String, Vec<f64>)> {
    vec![
        (format!("{prefix}_gamma"), bn.gamma.clone()),
        (format!("{prefix}_beta"), bn.beta.clone()),
        (format!("{prefix}_running_mean"), bn.running_mean.clone()),
        (format!("{prefix}_running_var"), bn.running_var.clone()),
    ]
}

fn adam_tensors(prefix: &str, a: &AdamState) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for (k, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        out.push((format!("{prefix}_m{k}"), m.clone()));
        out.push((format!("{prefix}_v{k}"), v.clone()));
    }
    out
}

fn classifier_tensors(c: &Classifier) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = c
        .clone()
        .params_mut()
        .into_iter()
        .enumerate()
        .map(|(k, p)| (format!("param{k}"), p.clone()))
        .collect();
    if let Some(bn) = c.batch_norm() {
        out.push(("head_bn_running_mean".into(), bn.running_mean.clone()));
        out.push(("head_bn_running_var".into(), bn.running_var.clone()));
    }
    out
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut t = classifier_tensors(&self.decoder.classifier);
        if let Some(bn) = &self.decoder.front {
            t.extend(bn_tensors("front", bn));
        }
        if let Some(theta) = &self.theta {
            t.push(("theta".into(), theta.clone()));
        }
        t.extend(adam_tensors("adam", &self.decoder_adam));
        if let Some(a) = &self.encoder_adam {
            t.extend(adam_tensors("enc_adam", a));
        }
        t
    }

    /// Write the manifest, the PSF and one tensor file per parameter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = self.tensors();
        for (name, data) in &tensors {
            write_tensor(dir.join(format!("{name}.lct")), &Tensor::real(vec![data.len()], data.clone())?)?;
        }
        write_real_grid(dir.join("psf.lct"), &self.psf)?;
        let manifest = Manifest {
            epoch: self.epoch,
            seed: self.config.seed,
            config_hash: format!("{:016x}", config_hash(&self.config)),
            config: self.config.clone(),
            norm: self.norm,
            classifier: self.decoder.classifier.choice(),
            in_dim: self.decoder.in_dim(),
            front: self.decoder.front.is_some(),
            decoder_adam_step: self.decoder_adam.step,
            encoder_adam_step: self.encoder_adam.as_ref().map(|a| a.step),
            tensors: tensors.into_iter().map(|(n, _)| n).collect(),
        };
        let p = dir.join(MANIFEST);
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        let expect_hash = format!("{:016x}", config_hash(&m.config));
        if expect_hash != m.config_hash {
            return Err(Error::Format(format!(
                "checkpoint config hash {} does not match its config ({expect_hash})",
                m.config_hash
            )));
        }
        let read = |name: &str, len: usize| -> Result<Vec<f64>> {
            let v = read_tensor(dir.join(format!("{name}.lct")))?.into_real()?;
            if v.len() != len {
                return Err(dim_mismatch(name, len, v.len()));
            }
            Ok(v)
        };

        let mut classifier = Classifier::zeros(m.classifier, m.in_dim);
        let shapes = classifier.param_shapes();
        for (k, p) in classifier.params_mut().into_iter().enumerate() {
            *p = read(&format!("param{k}"), shapes[k])?;
        }
        if let Some(bn) = classifier.batch_norm_mut() {
            bn.running_mean = read("head_bn_running_mean", bn.dim)?;
            bn.running_var = read("head_bn_running_var", bn.dim)?;
        }
        let front = if m.front {
            let mut bn = BatchNorm1d::new(m.in_dim);
            bn.gamma = read("front_gamma", m.in_dim)?;
            bn.beta = read("front_beta", m.in_dim)?;
            bn.running_mean = read("front_running_mean", m.in_dim)?;
            bn.running_var = read("front_running_var", m.in_dim)?;
            Some(bn)
        } else {
            None
        };
        let decoder = Decoder { front, classifier };

        let read_adam = |prefix: &str, cfg, shapes: &[usize], step| -> Result<AdamState> {
            let mut a = AdamState::new(cfg, shapes);
            for (k, &n) in shapes.iter().enumerate() {
                a.m[k] = read(&format!("{prefix}_m{k}"), n)?;
                a.v[k] = read(&format!("{prefix}_v{k}"), n)?;
            }
            a.step = step;
            Ok(a)
        };
        let decoder_adam = read_adam("adam", m.config.adam, &decoder.param_shapes(), m.decoder_adam_step)?;

        let theta = if m.tensors.iter().any(|t| t == "theta") {
            let n = m.config.slm_geometry().len();
            Some(read("theta", n)?)
        } else {
            None
        };
        let encoder_adam = match (m.encoder_adam_step, &theta) {
            (Some(step), Some(t)) => {
                let cfg = crate::learn::AdamConfig {
                    lr: m.config.lr_encoder,
                    ..m.config.adam
                };
                Some(read_adam("enc_adam", cfg, &[t.len()], step)?)
            }
            _ => None,
        };

        Ok(Self {
            psf: read_real_grid(dir.join("psf.lct"))?,
            config: m.config,
            epoch: m.epoch,
            norm: m.norm,
            decoder,
            theta,
            decoder_adam,
            encoder_adam,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{Linear, NUM_CLASSES};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut fc = Linear::zeros(4, NUM_CLASSES);
        fc.weight.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 * 0.1);
        let mut front = BatchNorm1d::new(4);
        front.running_var = vec![2.0, 3.0, 4.0, 5.0];
        let decoder = Decoder {
            front: Some(front),
            classifier: Classifier::Logistic(fc),
        };
        let mut adam = AdamState::new(Default::default(), &decoder.param_shapes());
        adam.step = 7;
        adam.m[2][3] = 0.25;
        let cfg = ExperimentConfig::default();
        let n = cfg.slm_geometry().len();
        let ck = Checkpoint {
            config: cfg,
            epoch: 3,
            psf: RealGrid::filled(5, 6, 1, 0.5),
            norm: None,
            decoder,
            theta: Some((0..n).map(|i| i as f64).collect()),
            decoder_adam: adam,
            encoder_adam: Some(AdamState::new(Default::default(), &[n])),
        };
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.decoder, ck.decoder);
        assert_eq!(back.theta, ck.theta);
        assert_eq!(back.decoder_adam, ck.decoder_adam);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.psf.data, ck.psf.data);
    }
}
