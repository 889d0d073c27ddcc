//! Learning-to-decode study: parity encoders over a ring of message bits,
//! a binary symmetric channel, per-bit CPT learning, joint MPE decoding,
//! and k-fold accuracy metrics.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FamilyView};
use crate::focs::{learn_focs, FoCSCpt, Scorer};
use crate::mlp::{self, Activation, TrainConfig};
use crate::mpe;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid code spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Train(#[from] mlp::MlpError),
    #[error(transparent)]
    Mpe(#[from] mpe::MpeError),
}

/// A cyclic parity code: encoded bit `i` is the XOR of `window` consecutive
/// message bits starting at `i` (indices wrap around).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CodeSpec {
    pub n: usize,
    pub window: usize,
    pub flip_prob: f64,
    pub prior_p: f64,
}

impl CodeSpec {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.n == 0 || self.window == 0 || self.window > self.n {
            return Err(CodecError::BadSpec(format!(
                "window must satisfy 1 <= w <= n, got w={} n={}",
                self.window, self.n
            )));
        }
        if !(0.0..0.5).contains(&self.flip_prob) {
            return Err(CodecError::BadSpec(format!(
                "flip probability must be in [0, 0.5), got {}",
                self.flip_prob
            )));
        }
        if !(self.prior_p > 0.0 && self.prior_p < 1.0) {
            return Err(CodecError::BadSpec(format!(
                "prior must be in (0, 1), got {}",
                self.prior_p
            )));
        }
        Ok(())
    }
}

/// `x_i = u_i ^ u_{i+1 mod n} ^ ... ^ u_{i+w-1 mod n}`.
pub fn encode(u: &[u8], spec: &CodeSpec) -> Vec<u8> {
    assert_eq!(u.len(), spec.n);
    (0..spec.n)
        .map(|i| {
            (0..spec.window)
                .map(|d| u[(i + d) % spec.n])
                .fold(0, |a, b| a ^ b)
        })
        .collect()
}

/// Binary symmetric channel: flips each bit independently.
pub fn channel_with<R: Rng>(x: &[u8], flip_prob: f64, rng: &mut R) -> Vec<u8> {
    x.iter()
        .map(|&b| {
            if flip_prob > 0.0 && rng.gen_bool(flip_prob) {
                1 - b
            } else {
                b
            }
        })
        .collect()
}

pub fn channel(x: &[u8], flip_prob: f64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    channel_with(x, flip_prob, &mut rng)
}

/// A sampled corpus of (message, noisy codeword) pairs.
#[derive(Debug, Clone)]
pub struct Pairs {
    pub spec: CodeSpec,
    pub messages: Vec<Vec<u8>>,
    pub codewords: Vec<Vec<u8>>,
}

impl Pairs {
    /// Columns U1..Un then X1..Xn, one record per pair.
    pub fn to_dataset(&self) -> Arc<Dataset> {
        let n = self.spec.n;
        let variables: Vec<String> = (1..=n)
            .map(|i| format!("U{i}"))
            .chain((1..=n).map(|i| format!("X{i}")))
            .collect();
        let records: Vec<Vec<u8>> = self
            .messages
            .iter()
            .zip(&self.codewords)
            .map(|(u, x)| u.iter().chain(x.iter()).copied().collect())
            .collect();
        let weights = vec![1; records.len()];
        Arc::new(Dataset::new(variables, records, weights).expect("pairs form a valid dataset"))
    }

    /// Family of encoded bit `i` (0-based): child X_{i+1}, parents all of U.
    pub fn family(dataset: &Arc<Dataset>, n: usize, i: usize) -> FamilyView {
        FamilyView::new(Arc::clone(dataset), n + i, (0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Pairs {
        Pairs {
            spec: self.spec,
            messages: idx.iter().map(|&i| self.messages[i].clone()).collect(),
            codewords: idx.iter().map(|&i| self.codewords[i].clone()).collect(),
        }
    }
}

/// Samples messages i.i.d. from the prior, encodes, and corrupts through
/// the channel.
pub fn make_pairs(spec: &CodeSpec, count: usize, seed: u64) -> Result<Pairs, CodecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut messages = Vec::with_capacity(count);
    let mut codewords = Vec::with_capacity(count);
    for _ in 0..count {
        let u: Vec<u8> = (0..spec.n)
            .map(|_| u8::from(rng.gen_bool(spec.prior_p)))
            .collect();
        let x = channel_with(&encode(&u, spec), spec.flip_prob, &mut rng);
        messages.push(u);
        codewords.push(x);
    }
    Ok(Pairs {
        spec: *spec,
        messages,
        codewords,
    })
}

/// Per-bit decoder training settings. The scorer is a single-hidden-layer
/// MLP converted to steps, then cut by one learned threshold (2 contexts).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden_units: 8,
            epochs: 40,
            learning_rate: 0.5,
            batch_size: 32,
        }
    }
}

/// Trains one FoCS CPT per encoded bit: MLP with sigmoid hidden units,
/// step conversion, single threshold.
pub fn train_decoder(
    pairs: &Pairs,
    cfg: &DecoderConfig,
    seed: u64,
) -> Result<Vec<FoCSCpt>, CodecError> {
    let n = pairs.spec.n;
    let dataset = pairs.to_dataset();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let view = Pairs::family(&dataset, n, i);
            let train_cfg = TrainConfig {
                hidden_units: cfg.hidden_units,
                hidden_activation: Activation::Sigmoid,
                epochs: cfg.epochs,
                learning_rate: cfg.learning_rate,
                batch_size: cfg.batch_size,
                seed: seed.wrapping_add(i as u64),
            };
            let net = mlp::train(&view, &train_cfg)?;
            let step = net.to_step(false)?;
            Ok(learn_focs(&view, &Scorer::Step(step), 2, 0.0, None))
        })
        .collect()
}

/// Joint MPE decode of one received word.
pub fn decode(
    x: &[u8],
    models: &[FoCSCpt],
    prior_p: f64,
) -> Result<mpe::MpeSolution, CodecError> {
    assert_eq!(x.len(), models.len());
    let families: Vec<(FoCSCpt, u8)> = models
        .iter()
        .zip(x)
        .map(|(m, &b)| (m.clone(), b))
        .collect();
    let prior = vec![prior_p; models.len()];
    let problem = mpe::encode(&families, &prior, mpe::DEFAULT_EPSILON)?;
    Ok(mpe::solve(&problem, None))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FoldMetrics {
    pub word_accuracy: f64,
    pub bit_accuracy: f64,
    pub hamming_error: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub word_accuracy: f64,
    pub word_std: f64,
    pub bit_accuracy: f64,
    pub bit_std: f64,
    pub hamming_error: f64,
    pub hamming_std: f64,
    pub mean_seconds: f64,
    pub seconds_std: f64,
    pub folds: Vec<FoldMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Metrics {
    fn from_folds(folds: Vec<FoldMetrics>) -> Metrics {
        let (word_accuracy, word_std) =
            mean_std(&folds.iter().map(|f| f.word_accuracy).collect::<Vec<_>>());
        let (bit_accuracy, bit_std) =
            mean_std(&folds.iter().map(|f| f.bit_accuracy).collect::<Vec<_>>());
        let (hamming_error, hamming_std) =
            mean_std(&folds.iter().map(|f| f.hamming_error).collect::<Vec<_>>());
        let (mean_seconds, seconds_std) =
            mean_std(&folds.iter().map(|f| f.mean_seconds).collect::<Vec<_>>());
        Metrics {
            word_accuracy,
            word_std,
            bit_accuracy,
            bit_std,
            hamming_error,
            hamming_std,
            mean_seconds,
            seconds_std,
            folds,
        }
    }

    /// One results row: n, window, flip_prob, count, then the four
    /// metric/std pairs.
    pub fn csv_row(&self, spec: &CodeSpec, count: usize) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6}",
            spec.n,
            spec.window,
            spec.flip_prob,
            count,
            self.word_accuracy,
            self.word_std,
            self.bit_accuracy,
            self.bit_std,
            self.hamming_error,
            self.hamming_std,
            self.mean_seconds,
            self.seconds_std
        )
    }

    pub const CSV_HEADER: &'static str = "n,window,flip_prob,count,word_acc,word_std,bit_acc,bit_std,hamming,hamming_std,seconds,seconds_std";
}

fn eval_fold(test: &Pairs, models: &[FoCSCpt], prior_p: f64) -> Result<FoldMetrics, CodecError> {
    let n = test.spec.n;
    let results: Vec<(bool, usize, f64)> = test
        .messages
        .par_iter()
        .zip(&test.codewords)
        .map(|(u, x)| {
            let start = Instant::now();
            let sol = decode(x, models, prior_p)?;
            let secs = start.elapsed().as_secs_f64();
            let bits_right = sol.u.iter().zip(u).filter(|(a, b)| a == b).count();
            Ok((bits_right == n, bits_right, secs))
        })
        .collect::<Result<_, CodecError>>()?;
    let count = results.len();
    let words: usize = results.iter().filter(|r| r.0).count();
    let bits: usize = results.iter().map(|r| r.1).sum();
    let secs: f64 = results.iter().map(|r| r.2).sum();
    let bit_accuracy = bits as f64 / (count * n) as f64;
    Ok(FoldMetrics {
        word_accuracy: words as f64 / count as f64,
        bit_accuracy,
        hamming_error: n as f64 * (1.0 - bit_accuracy),
        mean_seconds: secs / count as f64,
    })
}

/// K-fold cross validation: seeded shuffle, contiguous blocks, train on
/// k-1 folds, decode the held-out fold.
pub fn run_study(
    spec: &CodeSpec,
    count: usize,
    folds: usize,
    seed: u64,
    cfg: &DecoderConfig,
) -> Result<Metrics, CodecError> {
    assert!(folds >= 2, "cross validation needs at least 2 folds");
    let pairs = make_pairs(spec, count, seed)?;
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    idx.shuffle(&mut rng);
    let fold_size = count / folds;
    let mut fold_metrics = Vec::with_capacity(folds);
    for f in 0..folds {
        let lo = f * fold_size;
        let hi = if f + 1 == folds { count } else { lo + fold_size };
        let test_idx = &idx[lo..hi];
        let train_idx: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
        let train = pairs.subset(&train_idx);
        let test = pairs.subset(test_idx);
        let models = train_decoder(&train, cfg, seed.wrapping_add(1000 * (f as u64 + 1)))?;
        fold_metrics.push(eval_fold(&test, &models, spec.prior_p)?);
    }
    Ok(Metrics::from_folds(fold_metrics))
}
