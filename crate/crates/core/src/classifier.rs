//! Two-layer perceptron for measuring downstream utility.
//!
//! Inputs are standardized with per-feature statistics frozen from the
//! training set. Training minimizes label-smoothed cross-entropy plus an L2
//! penalty with mini-batch SGD; gradients are computed by hand.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::EmbeddingDataset;
use crate::error::{config, contract, Error, Result};

pub const MLP_MAGIC: &[u8; 4] = b"DPML";
pub const MLP_VERSION: u32 = 1;
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Annealed per epoch from the initial rate towards zero.
    Cosine,
}

impl LrSchedule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(LrSchedule::Constant),
            "cosine" => Some(LrSchedule::Cosine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub lr_schedule: LrSchedule,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            dropout: 0.5,
            epochs: 50,
            batch_size: 512,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            label_smoothing: 0.2,
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return config("hidden_dim, epochs and batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return config("dropout and label_smoothing must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return config("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config("weight_decay must be nonnegative");
        }
        Ok(())
    }

    fn rate(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Parameters live in one flat vector: `w1` (d×h, row-major), `b1` (h),
/// `w2` (c×h, row-major, one row per class), `b2` (c).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    d: usize,
    h: usize,
    c: usize,
    norm_mean: Vec<f64>,
    norm_var: Vec<f64>,
    params: Vec<f64>,
}

struct Layout {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
}

fn layout(d: usize, h: usize, c: usize) -> Layout {
    let w1 = 0..d * h;
    let b1 = w1.end..w1.end + h;
    let w2 = b1.end..b1.end + h * c;
    let b2 = w2.end..w2.end + c;
    Layout { w1, b1, w2, b2 }
}

impl MlpModel {
    /// Weights and biases drawn from U(±1/√fan_in).
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        h: usize,
        c: usize,
        norm_mean: Vec<f64>,
        norm_var: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 || h == 0 || c < 2 {
            return contract(format!("need d >= 1, h >= 1, c >= 2; got d={d}, h={h}, c={c}"));
        }
        if norm_mean.len() != d || norm_var.len() != d {
            return contract("normalization statistics must have length d");
        }
        let l = layout(d, h, c);
        let mut params = vec![0.0; l.b2.end];
        let a1 = 1.0 / (d as f64).sqrt();
        let a2 = 1.0 / (h as f64).sqrt();
        for p in &mut params[l.w1.start..l.b1.end] {
            *p = rng.random_range(-a1..a1);
        }
        for p in &mut params[l.w2.start..l.b2.end] {
            *p = rng.random_range(-a2..a2);
        }
        let model = Self {
            d,
            h,
            c,
            norm_mean,
            norm_var: norm_var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect(),
            params,
        };
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden_dim(&self) -> usize {
        self.h
    }

    pub fn num_classes(&self) -> usize {
        self.c
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.norm_mean, &self.norm_var)
    }

    fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for (o, ((v, m), s)) in out.iter_mut().zip(x.iter().zip(&self.norm_mean).zip(&self.norm_var)) {
            *o = (v - m) / s.sqrt();
        }
    }

    /// Class logits for one raw input row.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.d];
        self.standardize(x, &mut z);
        let mut pre = vec![0.0; self.h];
        let mut act = vec![0.0; self.h];
        let mut logits = vec![0.0; self.c];
        self.forward_row(&z, None, &mut pre, &mut act, &mut logits);
        logits
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> u32 {
        argmax(&self.logits(x)) as u32
    }

    fn forward_row(&self, z: &[f64], mask: Option<&[f64]>, pre: &mut [f64], act: &mut [f64], logits: &mut [f64]) {
        let l = layout(self.d, self.h, self.c);
        let p = &self.params;
        pre.copy_from_slice(&p[l.b1.clone()]);
        for (zi, row) in z.iter().zip(p[l.w1.clone()].chunks_exact(self.h)) {
            pre.iter_mut().zip(row).for_each(|(a, w)| *a += zi * w);
        }
        match mask {
            Some(m) => act
                .iter_mut()
                .zip(pre.iter().zip(m))
                .for_each(|(a, (v, k))| *a = v.max(0.0) * k),
            None => act.iter_mut().zip(pre.iter()).for_each(|(a, v)| *a = v.max(0.0)),
        }
        for ((o, b), row) in logits.iter_mut().zip(&p[l.b2.clone()]).zip(p[l.w2.clone()].chunks_exact(self.h)) {
            *o = b + dot(act, row);
        }
    }

    /// Mean smoothed cross-entropy over a batch of standardized rows
    /// (row-major, width d) plus the L2 penalty. Adds the gradient into
    /// `grad` when given.
    ///
    /// `masks` holds one row of `h` dropout multipliers per sample.
    pub fn batch_loss(
        &self,
        z: &[f64],
        labels: &[u32],
        masks: Option<&[f64]>,
        smoothing: f64,
        weight_decay: f64,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let (d, h, c) = (self.d, self.h, self.c);
        let l = layout(d, h, c);
        let b = labels.len() as f64;
        let p = &self.params;
        let mut pre = vec![0.0; h];
        let mut act = vec![0.0; h];
        let mut back = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut dlogits = vec![0.0; c];
        let mut total = 0.0;
        for (s, &y) in labels.iter().enumerate() {
            let zs = &z[s * d..(s + 1) * d];
            let mask = masks.map(|m| &m[s * h..(s + 1) * h]);
            self.forward_row(zs, mask, &mut pre, &mut act, &mut logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (k, (v, g)) in logits.iter().zip(dlogits.iter_mut()).enumerate() {
                let q = smoothing / c as f64 + if k == y as usize { 1.0 - smoothing } else { 0.0 };
                total -= q * (v - lse);
                *g = ((v - lse).exp() - q) / b;
            }
            let Some(g) = grad.as_deref_mut() else { continue };

            back.iter_mut().for_each(|v| *v = 0.0);
            let (g_head, g_tail) = g.split_at_mut(l.w2.start);
            let (g_w2, g_b2) = g_tail.split_at_mut(h * c);
            for (k, dl) in dlogits.iter().enumerate() {
                g_b2[k] += dl;
                let w2 = &p[l.w2.start + k * h..l.w2.start + (k + 1) * h];
                let gw2 = &mut g_w2[k * h..(k + 1) * h];
                gw2.iter_mut().zip(&act).for_each(|(a, x)| *a += dl * x);
                back.iter_mut().zip(w2).for_each(|(a, w)| *a += dl * w);
            }
            // Gradient reaches units that are active and kept.
            match mask {
                Some(m) => back
                    .iter_mut()
                    .zip(pre.iter().zip(m))
                    .for_each(|(a, (v, k))| *a = if *v > 0.0 { *a * k } else { 0.0 }),
                None => back.iter_mut().zip(&pre).for_each(|(a, v)| {
                    if *v <= 0.0 {
                        *a = 0.0
                    }
                }),
            }
            let (g_w1, g_b1) = g_head.split_at_mut(d * h);
            g_b1.iter_mut().zip(&back).for_each(|(a, v)| *a += v);
            for (zi, gw1) in zs.iter().zip(g_w1.chunks_exact_mut(h)) {
                gw1.iter_mut().zip(&back).for_each(|(a, v)| *a += zi * v);
            }
        }
        let penalty: f64 = p.iter().map(|x| x * x).sum::<f64>() * 0.5 * weight_decay;
        if let Some(g) = grad {
            g.iter_mut().zip(p).for_each(|(a, x)| *a += weight_decay * x);
        }
        total / b + penalty
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MLP_MAGIC)?;
        out.write_all(&MLP_VERSION.to_le_bytes())?;
        let shape = [self.d as f64, self.h as f64, self.c as f64];
        for (tag, block) in [
            (b"SHAP", &shape[..]),
            (b"NMEA", &self.norm_mean[..]),
            (b"NVAR", &self.norm_var[..]),
            (b"PARM", &self.params[..]),
        ] {
            out.write_all(tag)?;
            out.write_all(&(block.len() as u64).to_le_bytes())?;
            for v in block {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            row: 0,
            msg: format!("model container: {msg}"),
        };
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        if &word != MLP_MAGIC {
            return Err(bad("bad magic"));
        }
        input.read_exact(&mut word)?;
        if u32::from_le_bytes(word) != MLP_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut block = |expected: &[u8; 4]| -> Result<Vec<f64>> {
            let mut tag = [0u8; 4];
            input.read_exact(&mut tag)?;
            if &tag != expected {
                return Err(bad("unexpected block"));
            }
            let mut len = [0u8; 8];
            input.read_exact(&mut len)?;
            let len = u64::from_le_bytes(len) as usize;
            if len > 1 << 28 {
                return Err(bad("block too large"));
            }
            let mut bytes = vec![0u8; len * 8];
            input.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let shape = block(b"SHAP")?;
        let [d, h, c] = shape[..] else {
            return Err(bad("shape block must hold three values"));
        };
        let (d, h, c) = (d as usize, h as usize, c as usize);
        let norm_mean = block(b"NMEA")?;
        let norm_var = block(b"NVAR")?;
        let params = block(b"PARM")?;
        if norm_mean.len() != d || norm_var.len() != d || params.len() != layout(d, h, c).b2.end {
            return Err(bad("block sizes disagree with the shape"));
        }
        if params.iter().chain(&norm_mean).any(|v| !v.is_finite())
            || norm_var.iter().any(|v| !(*v >= VARIANCE_FLOOR && v.is_finite()))
        {
            return Err(bad("non-finite parameters"));
        }
        Ok(Self {
            d,
            h,
            c,
            norm_mean,
            norm_var,
            params,
        })
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-feature mean and population variance.
pub fn feature_statistics(ds: &EmbeddingDataset) -> (Vec<f64>, Vec<f64>) {
    let d = ds.dim();
    let n = ds.len() as f64;
    let mut mean = vec![0.0; d];
    for r in ds.rows() {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in ds.rows() {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m) * (x - m));
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub model: MlpModel,
    /// Mean mini-batch objective of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a classifier on the labelled rows of `train`.
pub fn train_mlp<R: Rng + ?Sized>(train: &EmbeddingDataset, cfg: &MlpConfig, rng: &mut R) -> Result<Training> {
    cfg.validate()?;
    let Some(labels) = train.labels() else {
        return contract("training data must be labelled");
    };
    let c = train.num_classes().unwrap_or(0);
    let present = {
        let mut seen = vec![false; c];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|s| **s).count()
    };
    if present < 2 {
        return contract("training data must contain at least two classes");
    }
    let (d, h, n) = (train.dim(), cfg.hidden_dim, train.len());
    let (mean, var) = feature_statistics(train);
    let mut model = MlpModel::init(d, h, c, mean, var, rng)?;
    let mut z = vec![0.0; n * d];
    for (i, row) in train.rows().enumerate() {
        model.standardize(row, &mut z[i * d..(i + 1) * d]);
    }

    let batch = cfg.batch_size.min(n);
    let keep = 1.0 - cfg.dropout;
    let keep_below = (keep * 4294967296.0) as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut zb = vec![0.0; batch * d];
    let mut yb = vec![0u32; batch];
    let mut masks = vec![0.0; batch * h];
    let mut grad = vec![0.0; model.params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.rate(epoch);
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(batch) {
            let m = idx.len();
            for (s, &i) in idx.iter().enumerate() {
                zb[s * d..(s + 1) * d].copy_from_slice(&z[i * d..(i + 1) * d]);
                yb[s] = labels[i];
            }
            for pair in masks[..m * h].chunks_mut(2) {
                let bits = rng.next_u64();
                for (v, word) in pair.iter_mut().zip([bits & 0xffff_ffff, bits >> 32]) {
                    *v = if word < keep_below { 1.0 / keep } else { 0.0 };
                }
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            sum += model.batch_loss(
                &zb[..m * d],
                &yb[..m],
                Some(&masks[..m * h]),
                cfg.label_smoothing,
                cfg.weight_decay,
                Some(&mut grad),
            );
            batches += 1;
            model.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
        }
        let loss = sum / batches as f64;
        if !loss.is_finite() {
            return contract(format!("training diverged at epoch {}", epoch + 1));
        }
        epoch_losses.push(loss);
    }
    Ok(Training { model, epoch_losses })
}

/// Fraction of labelled rows whose predicted class matches the label.
pub fn evaluate(model: &MlpModel, test: &EmbeddingDataset) -> Result<f64> {
    let Some(labels) = test.labels() else {
        return contract("test data must be labelled");
    };
    evaluate_rows(model, test.as_slice(), test.dim(), labels)
}

/// As [`evaluate`], on a row-major matrix of width `d`.
pub fn evaluate_rows(model: &MlpModel, data: &[f64], d: usize, labels: &[u32]) -> Result<f64> {
    if d != model.d {
        return contract(format!("model expects dimension {}, test rows have {d}", model.d));
    }
    if labels.is_empty() || data.len() != labels.len() * d {
        return contract("test set must be nonempty with one label per row");
    }
    let correct = data
        .chunks_exact(d)
        .zip(labels)
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// A uniformly random subset of `n` rows in their original order, or the
/// whole dataset when it has at most `n` rows.
pub fn subsample<R: Rng + ?Sized>(ds: &EmbeddingDataset, n: usize, rng: &mut R) -> Result<EmbeddingDataset> {
    if ds.len() <= n {
        return Ok(ds.clone());
    }
    let mut idx = rand::seq::index::sample(rng, ds.len(), n).into_vec();
    idx.sort_unstable();
    ds.select(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{sample_gmm, Covariance, GmmModel};
    use crate::rng::stream;

    fn blobs(n: usize, sigma: f64, seed: u64) -> EmbeddingDataset {
        let model = GmmModel::new(
            vec![0.5, 0.5],
            vec![vec![-5.0, 0.0], vec![5.0, 0.0]],
            vec![Covariance::isotropic(2, sigma * sigma), Covariance::isotropic(2, sigma * sigma)],
        )
        .unwrap();
        sample_gmm(&model, n, &mut stream(seed, "blobs")).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (d, h, c, n) = (4, 3, 2, 10);
        let mut rng = stream(1, "gradcheck");
        let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
        let mut model = MlpModel::init(d, h, c, vec![0.0; d], vec![1.0; d], &mut rng).unwrap();
        // Keep hidden pre-activations away from the ReLU kink.
        for b in &mut model.params[layout(d, h, c).b1] {
            *b = 0.7;
        }
        let mut grad = vec![0.0; model.params.len()];
        model.batch_loss(&z, &y, None, 0.2, 1e-2, Some(&mut grad));
        let step = 1e-6;
        for i in 0..model.params.len() {
            let mut plus = model.clone();
            plus.params[i] += step;
            let mut minus = model.clone();
            minus.params[i] -= step;
            let numeric = (plus.batch_loss(&z, &y, None, 0.2, 1e-2, None)
                - minus.batch_loss(&z, &y, None, 0.2, 1e-2, None))
                / (2.0 * step);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel <= 1e-4, "param {i}: analytic {} numeric {numeric}", grad[i]);
        }
    }

    /// 2000 rows give only 200 steps, too few at the default rate.
    fn small_set_config() -> MlpConfig {
        MlpConfig {
            learning_rate: 1e-2,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let train = blobs(2000, 0.1, 2);
        let test = blobs(2000, 0.1, 3);
        let out = train_mlp(&train, &small_set_config(), &mut stream(4, "mlp")).unwrap();
        assert!(evaluate(&out.model, &train).unwrap() >= 0.99);
        assert!(evaluate(&out.model, &test).unwrap() >= 0.99);
        assert!(out.epoch_losses.last().unwrap() <= &out.epoch_losses[0]);
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let mut rng = stream(5, "labels");
        let train = blobs(2000, 1.0, 6);
        let mut labels: Vec<u32> = (0..2000).map(|i| (i % 2) as u32).collect();
        labels.shuffle(&mut rng);
        let train = train.with_labels(Some(labels)).unwrap();
        let out = train_mlp(&train, &small_set_config(), &mut stream(7, "mlp")).unwrap();
        // Fresh rows drawn from the same label-independent distribution.
        let mut fresh: Vec<u32> = (0..4000).map(|i| (i % 2) as u32).collect();
        fresh.shuffle(&mut rng);
        let test = blobs(4000, 1.0, 8).with_labels(Some(fresh)).unwrap();
        let acc = evaluate(&out.model, &test).unwrap();
        assert!((0.4..=0.6).contains(&acc), "{acc}");
    }

    #[test]
    fn config_and_input_contracts() {
        let cfg = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let one_class = blobs(10, 0.1, 9).with_labels(Some(vec![0; 10])).unwrap();
        let r = train_mlp(&one_class, &MlpConfig::default(), &mut stream(0, "x"));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn evaluate_contracts() {
        let train = blobs(200, 0.1, 10);
        let cfg = MlpConfig {
            epochs: 2,
            ..MlpConfig::default()
        };
        let model = train_mlp(&train, &cfg, &mut stream(11, "mlp")).unwrap().model;
        assert!(matches!(evaluate_rows(&model, &[], 2, &[]), Err(Error::Contract(_))));
        assert!(matches!(evaluate_rows(&model, &[1.0], 1, &[0]), Err(Error::Contract(_))));
        // Scoring against the model's own predictions is exact.
        let own: Vec<u32> = train.rows().map(|r| model.predict(r)).collect();
        let relabelled = train.with_labels(Some(own)).unwrap();
        assert_eq!(evaluate(&model, &relabelled).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic_and_serializable() {
        let train = blobs(600, 0.5, 12);
        let cfg = MlpConfig {
            epochs: 3,
            ..MlpConfig::default()
        };
        let a = train_mlp(&train, &cfg, &mut stream(13, "mlp")).unwrap();
        let b = train_mlp(&train, &cfg, &mut stream(13, "mlp")).unwrap();
        assert_eq!(a, b);
        let mut bytes = Vec::new();
        a.model.write(&mut bytes).unwrap();
        assert_eq!(MlpModel::read(bytes.as_slice()).unwrap(), a.model);
        bytes[0] = b'X';
        assert!(MlpModel::read(bytes.as_slice()).is_err());
    }

    #[test]
    fn subsample_keeps_order() {
        let ds = blobs(100, 1.0, 14);
        let sub = subsample(&ds, 10, &mut stream(15, "sub")).unwrap();
        assert_eq!(sub.len(), 10);
        let rows: Vec<&[f64]> = ds.rows().collect();
        let mut last = 0;
        for r in sub.rows() {
            let pos = rows.iter().position(|x| *x == r).unwrap();
            assert!(pos >= last);
            last = pos;
        }
    }
}
