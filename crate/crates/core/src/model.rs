//! One-hidden-layer answer scorer.
//!
//! `f(c, i) = σ(U · relu(W g) + b)` where `g` concatenates the ℓ2-normalized
//! image, question, and answer features the [`Mode`] admits. Training is SGD
//! with momentum on the binary logistic loss, each triplet contributing its
//! target and three decoys. Everything runs in `f64`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, FeatureStore};
use crate::decoygen::{CandidateSet, Provenance};
use crate::error::{Error, Result};
use crate::text::{answer_key, embed_avg, normalize, ByteReader, EmbeddingTable};

/// Which inputs the scorer sees besides the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    A,
    QA,
    IA,
    IQA,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::A, Mode::QA, Mode::IA, Mode::IQA];

    pub fn uses_image(self) -> bool {
        matches!(self, Mode::IA | Mode::IQA)
    }

    pub fn uses_question(self) -> bool {
        matches!(self, Mode::QA | Mode::IQA)
    }

    pub fn input_dim(self, d_img: usize, d_txt: usize) -> usize {
        let mut n = d_txt;
        if self.uses_image() {
            n += d_img;
        }
        if self.uses_question() {
            n += d_txt;
        }
        n
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::A => "A",
            Mode::QA => "QA",
            Mode::IA => "IA",
            Mode::IQA => "IQA",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Mode::ALL.get(usize::from(code)).copied()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim_start_matches("mlp-").trim_start_matches("MLP-").to_ascii_uppercase();
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == upper)
            .ok_or_else(|| Error::config("mode", format!("unknown model mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Image,
    Question,
    Answer,
}

/// Concatenated per-modality features for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFeature {
    pub values: Vec<f64>,
    pub layout: Vec<(Segment, usize)>,
}

fn l2_normalized(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.into_iter().collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn text_segment(text: &str, table: &EmbeddingTable) -> Vec<f64> {
    l2_normalized(embed_avg(&normalize(text), table).values)
}

type Layout = Vec<(Segment, usize)>;

/// Image and question segments of an item, ready to prepend to any answer.
fn context_segments(item: &CandidateSet, mode: Mode, features: &FeatureStore, table: &EmbeddingTable) -> Result<(Vec<f64>, Layout)> {
    let mut values = Vec::new();
    let mut layout = Vec::new();
    if mode.uses_image() {
        let img = features.get(&item.image_id)?;
        values.extend(l2_normalized(img.iter().map(|&x| f64::from(x))));
        layout.push((Segment::Image, img.len()));
    }
    if mode.uses_question() {
        values.extend(text_segment(&item.question, table));
        layout.push((Segment::Question, table.dim()));
    }
    Ok((values, layout))
}

pub fn build_features(item: &CandidateSet, candidate_index: usize, mode: Mode, features: &FeatureStore, table: &EmbeddingTable) -> Result<JointFeature> {
    let candidate = item.candidates.get(candidate_index).ok_or_else(|| Error::CandidateIndex {
        id: item.triplet_id.clone(),
        index: candidate_index,
        len: item.candidates.len(),
    })?;
    let (mut values, mut layout) = context_segments(item, mode, features, table)?;
    values.extend(text_segment(candidate, table));
    layout.push((Segment::Answer, table.dim()));
    Ok(JointFeature { values, layout })
}

/// An item with its context segment and every candidate's answer segment precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedItem {
    pub context: Vec<f64>,
    pub answers: Vec<Vec<f64>>,
    pub target_index: usize,
    pub provenance: Vec<Provenance>,
}

pub fn encode_items(items: &[CandidateSet], mode: Mode, features: &FeatureStore, table: &EmbeddingTable) -> Result<Vec<EncodedItem>> {
    items
        .par_iter()
        .map(|item| {
            let (context, _) = context_segments(item, mode, features, table)?;
            Ok(EncodedItem {
                context,
                answers: item.candidates.iter().map(|c| text_segment(c, table)).collect(),
                target_index: item.target_index,
                provenance: item.provenance.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub mode: Mode,
    pub d_img: usize,
    pub d_txt: usize,
    pub hidden: usize,
    pub input: usize,
    /// Row-major `hidden × input`.
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: f64,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

impl MlpParams {
    pub fn zeros(mode: Mode, d_img: usize, d_txt: usize, hidden: usize) -> Self {
        let input = mode.input_dim(d_img, d_txt);
        Self {
            mode,
            d_img,
            d_txt,
            hidden,
            input,
            w: vec![0.0; hidden * input],
            u: vec![0.0; hidden],
            b: 0.0,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(mode: Mode, d_img: usize, d_txt: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(mode, d_img, d_txt, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lw = (6.0 / (p.input + hidden) as f64).sqrt();
        let lu = (6.0 / (hidden + 1) as f64).sqrt();
        p.w.iter_mut().for_each(|x| *x = rng.gen_range(-lw..=lw));
        p.u.iter_mut().for_each(|x| *x = rng.gen_range(-lu..=lu));
        p
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.u.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().chain(&self.u).all(|x| x.is_finite())
    }

    fn context_dim(&self) -> usize {
        self.input - self.d_txt
    }

    /// `W[:, ..c] · ctx`.
    fn context_pre(&self, ctx: &[f64]) -> Vec<f64> {
        let c = ctx.len();
        (0..self.hidden)
            .map(|j| {
                let row = &self.w[j * self.input..j * self.input + c];
                row.iter().zip(ctx).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Pre-activations for one answer given the context contribution.
    fn pre(&self, zc: &[f64], ans: &[f64]) -> Vec<f64> {
        let c = self.context_dim();
        (0..self.hidden)
            .map(|j| {
                let row = &self.w[j * self.input + c..(j + 1) * self.input];
                zc[j] + row.iter().zip(ans).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn logit(&self, z: &[f64]) -> f64 {
        self.b + z.iter().zip(&self.u).map(|(z, u)| z.max(0.0) * u).sum::<f64>()
    }

    pub fn score(&self, g: &JointFeature) -> Result<f64> {
        self.score_raw(&g.values)
    }

    pub fn score_raw(&self, g: &[f64]) -> Result<f64> {
        if g.len() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                actual: g.len(),
            });
        }
        let z: Vec<f64> = self
            .w
            .chunks_exact(self.input)
            .map(|row| row.iter().zip(g).map(|(a, b)| a * b).sum())
            .collect();
        Ok(sigmoid(self.logit(&z)))
    }

    /// Scores of every candidate of an encoded item.
    pub fn score_item(&self, item: &EncodedItem) -> Result<Vec<f64>> {
        if item.context.len() != self.context_dim() {
            return Err(Error::Dimension {
                expected: self.context_dim(),
                actual: item.context.len(),
            });
        }
        let zc = self.context_pre(&item.context);
        item.answers
            .iter()
            .map(|a| {
                if a.len() != self.d_txt {
                    return Err(Error::Dimension { expected: self.d_txt, actual: a.len() });
                }
                Ok(sigmoid(self.logit(&self.pre(&zc, a))))
            })
            .collect()
    }

    fn check_data(&self, data: &[EncodedItem]) -> Result<()> {
        if let Some(item) = data.iter().find(|it| it.context.len() != self.context_dim()) {
            return Err(Error::Dimension {
                expected: self.context_dim(),
                actual: item.context.len(),
            });
        }
        Ok(())
    }
}

/// Gradient of the mean batch loss, shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: f64,
}

impl Gradient {
    fn zeros_like(p: &MlpParams) -> Self {
        Self {
            w: vec![0.0; p.w.len()],
            u: vec![0.0; p.u.len()],
            b: 0.0,
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.w.iter_mut().chain(self.u.iter_mut()).for_each(|x| *x *= factor);
        self.b *= factor;
        self
    }

    fn get(&self, flat: usize) -> f64 {
        flat_get(&self.w, &self.u, self.b, flat)
    }
}

fn flat_get(w: &[f64], u: &[f64], b: f64, i: usize) -> f64 {
    if i < w.len() {
        w[i]
    } else if i < w.len() + u.len() {
        u[i - w.len()]
    } else {
        b
    }
}

fn flat_set(p: &mut MlpParams, i: usize, v: f64) {
    let (nw, nu) = (p.w.len(), p.u.len());
    if i < nw {
        p.w[i] = v;
    } else if i < nw + nu {
        p.u[i - nw] = v;
    } else {
        p.b = v;
    }
}

/// The target and some decoys of one item, labelled 1 and 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub item: usize,
    pub candidates: Vec<usize>,
}

impl Group {
    fn label(&self, data: &[EncodedItem], i: usize) -> f64 {
        if self.candidates[i] == data[self.item].target_index {
            1.0
        } else {
            0.0
        }
    }
}

pub fn batch_examples(batch: &[Group]) -> usize {
    batch.iter().map(|g| g.candidates.len()).sum()
}

/// Mean logistic loss over the batch and its gradient. With `dropout` set,
/// hidden units are dropped with that probability and survivors scaled up.
fn loss_and_grad_impl(p: &MlpParams, data: &[EncodedItem], batch: &[Group], dropout: Option<(f64, &mut ChaCha8Rng)>) -> (f64, Gradient) {
    let mut grad = Gradient::zeros_like(p);
    let n = batch_examples(batch).max(1) as f64;
    let c = p.context_dim();
    let mut loss = 0.0;
    let mut dropout = dropout.filter(|(rate, _)| *rate > 0.0);
    let mut mask = vec![1.0; p.hidden];
    let mut dzc = vec![0.0; p.hidden];
    for group in batch {
        let item = &data[group.item];
        let zc = p.context_pre(&item.context);
        dzc.iter_mut().for_each(|x| *x = 0.0);
        for (i, &cand) in group.candidates.iter().enumerate() {
            let y = group.label(data, i);
            let ans = &item.answers[cand];
            let z = p.pre(&zc, ans);
            if let Some((rate, rng)) = dropout.as_mut() {
                let keep = 1.0 / (1.0 - *rate);
                mask.iter_mut().for_each(|m| *m = if rng.gen::<f64>() < *rate { 0.0 } else { keep });
            }
            let h: Vec<f64> = z.iter().zip(&mask).map(|(z, m)| z.max(0.0) * m).collect();
            let s = p.b + h.iter().zip(&p.u).map(|(h, u)| h * u).sum::<f64>();
            loss += softplus(s) - y * s;
            let delta = (sigmoid(s) - y) / n;
            grad.b += delta;
            for j in 0..p.hidden {
                grad.u[j] += delta * h[j];
                if z[j] <= 0.0 || mask[j] == 0.0 {
                    continue;
                }
                let dz = delta * p.u[j] * mask[j];
                dzc[j] += dz;
                let row = &mut grad.w[j * p.input + c..(j + 1) * p.input];
                row.iter_mut().zip(ans).for_each(|(g, a)| *g += dz * a);
            }
        }
        if c > 0 {
            for (j, &d) in dzc.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut grad.w[j * p.input..j * p.input + c];
                    row.iter_mut().zip(&item.context).for_each(|(g, x)| *g += d * x);
                }
            }
        }
    }
    (loss / n, grad)
}

/// Mean batch loss and its exact gradient, without dropout.
pub fn loss_and_gradient(p: &MlpParams, data: &[EncodedItem], batch: &[Group]) -> (f64, Gradient) {
    loss_and_grad_impl(p, data, batch, None)
}

pub fn batch_loss(p: &MlpParams, data: &[EncodedItem], batch: &[Group]) -> f64 {
    let n = batch_examples(batch).max(1) as f64;
    let mut loss = 0.0;
    for group in batch {
        let item = &data[group.item];
        let zc = p.context_pre(&item.context);
        for (i, &cand) in group.candidates.iter().enumerate() {
            let s = p.logit(&p.pre(&zc, &item.answers[cand]));
            loss += softplus(s) - group.label(data, i) * s;
        }
    }
    loss / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub batch_triplets: usize,
    /// Mini-batches between tenfold learning-rate drops.
    pub step_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub dropout: f64,
    pub hidden: usize,
    pub mode: Mode,
    /// Decoys drawn per triplet.
    pub decoys_per_triplet: usize,
    #[serde(skip)]
    pub init: Option<MlpParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            batch_triplets: 100,
            step_size: 100_000,
            max_iters: 600_000,
            seed: 0,
            dropout: 0.5,
            hidden: 256,
            mode: Mode::IQA,
            decoys_per_triplet: 3,
            init: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("lr0", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.batch_triplets == 0 {
            return Err(Error::config("batch_triplets", "must be at least 1"));
        }
        if self.step_size == 0 {
            return Err(Error::config("step_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.decoys_per_triplet == 0 {
            return Err(Error::config("decoys_per_triplet", "must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        let drops = (iteration / self.step_size).min(300) as i32;
        self.lr0 * 10f64.powi(-drops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub iteration: usize,
    pub lr: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

pub type TrainingLog = Vec<LogEntry>;

pub fn write_log(path: &Path, log: &TrainingLog) -> Result<()> {
    write_jsonl(path, log)
}

/// Target plus `n` decoys. Items whose decoys come from several procedures
/// first pick one procedure uniformly and draw from its decoys, topping up
/// with fallback picks and then any other decoy when it has fewer than `n`.
pub fn sample_group(item_index: usize, item: &EncodedItem, n: usize, rng: &mut ChaCha8Rng) -> Result<Group> {
    let decoys: Vec<usize> = (0..item.answers.len()).filter(|&i| i != item.target_index).collect();
    if decoys.len() < n {
        return Err(Error::DecoyCount {
            id: format!("#{item_index}"),
            expected: n,
            actual: decoys.len(),
        });
    }
    let prov = |i: usize| item.provenance.get(i).copied().unwrap_or(Provenance::Orig);
    let mut sources: Vec<Provenance> = Vec::new();
    for &d in &decoys {
        let p = prov(d);
        if matches!(p, Provenance::Orig | Provenance::Iou | Provenance::Qou) && !sources.contains(&p) {
            sources.push(p);
        }
    }
    let pool: Vec<usize> = if sources.len() > 1 {
        let chosen = sources[rng.gen_range(0..sources.len())];
        let mut pool: Vec<usize> = decoys.iter().copied().filter(|&d| prov(d) == chosen).collect();
        if pool.len() < n {
            let mut fallback: Vec<usize> = decoys.iter().copied().filter(|&d| prov(d) == Provenance::Fallback).collect();
            let mut other: Vec<usize> = decoys.iter().copied().filter(|&d| prov(d) != chosen && prov(d) != Provenance::Fallback).collect();
            fallback.shuffle(rng);
            other.shuffle(rng);
            let missing = n - pool.len();
            pool.extend(fallback.into_iter().chain(other).take(missing));
        }
        pool
    } else {
        decoys
    };
    let mut candidates = vec![item.target_index];
    candidates.extend(index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]));
    Ok(Group { item: item_index, candidates })
}

pub fn train(items: &[CandidateSet], cfg: &TrainConfig, features: &FeatureStore, table: &EmbeddingTable) -> Result<(MlpParams, TrainingLog)> {
    train_with_validation(items, None, cfg, features, table)
}

pub fn train_with_validation(
    items: &[CandidateSet],
    validation: Option<&[CandidateSet]>,
    cfg: &TrainConfig,
    features: &FeatureStore,
    table: &EmbeddingTable,
) -> Result<(MlpParams, TrainingLog)> {
    cfg.validate()?;
    let data = encode_items(items, cfg.mode, features, table)?;
    let val = validation.map(|v| encode_items(v, cfg.mode, features, table)).transpose()?;
    let d_img = if cfg.mode.uses_image() { features.dim() } else { 0 };
    train_encoded(&data, val.as_deref(), cfg, d_img, table.dim())
}

/// Training over pre-encoded items.
pub fn train_encoded(data: &[EncodedItem], validation: Option<&[EncodedItem]>, cfg: &TrainConfig, d_img: usize, d_txt: usize) -> Result<(MlpParams, TrainingLog)> {
    cfg.validate()?;
    let mut params = match &cfg.init {
        Some(init) => {
            if init.mode != cfg.mode || init.input != cfg.mode.input_dim(d_img, d_txt) {
                return Err(Error::Dimension {
                    expected: cfg.mode.input_dim(d_img, d_txt),
                    actual: init.input,
                });
            }
            init.clone()
        }
        None => MlpParams::init(cfg.mode, d_img, d_txt, cfg.hidden, cfg.seed),
    };
    params.check_data(data)?;
    let mut log = TrainingLog::new();
    if cfg.max_iters == 0 || data.is_empty() {
        return Ok((params, log));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e_5f6d_6c70);
    let mut vel = Gradient::zeros_like(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut epoch, mut cursor) = (0usize, data.len());
    let (mut epoch_loss, mut epoch_batches) = (0.0, 0usize);
    let dropout = cfg.dropout;
    for iteration in 0..cfg.max_iters {
        let mut batch = Vec::with_capacity(cfg.batch_triplets);
        while batch.len() < cfg.batch_triplets {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push(sample_group(i, &data[i], cfg.decoys_per_triplet, &mut rng)?);
        }
        let lr = cfg.lr_at(iteration);
        let (loss, grad) = loss_and_grad_impl(&params, data, &batch, Some((dropout, &mut rng)));
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration, lr, loss });
        }
        let mu = cfg.momentum;
        for (v, (p, g)) in vel.w.iter_mut().zip(params.w.iter_mut().zip(&grad.w)) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
        for (v, (p, g)) in vel.u.iter_mut().zip(params.u.iter_mut().zip(&grad.u)) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
        vel.b = mu * vel.b - lr * grad.b;
        params.b += vel.b;
        if !params.b.is_finite() {
            return Err(Error::Diverged { iteration, lr, loss: params.b });
        }
        epoch_loss += loss;
        epoch_batches += 1;
        let epoch_done = cursor == order.len();
        if epoch_done || iteration + 1 == cfg.max_iters {
            let val_accuracy = validation.map(|v| accuracy_encoded(&params, v)).transpose()?;
            log.push(LogEntry {
                epoch,
                iteration: iteration + 1,
                lr,
                loss: epoch_loss / epoch_batches as f64,
                val_accuracy,
            });
            epoch += 1;
            epoch_loss = 0.0;
            epoch_batches = 0;
        }
    }
    if !params.is_finite() {
        return Err(Error::Diverged {
            iteration: cfg.max_iters,
            lr: cfg.lr_at(cfg.max_iters),
            loss: f64::NAN,
        });
    }
    Ok((params, log))
}

/// Index of the highest score; the first wins ties.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &MlpParams, item: &CandidateSet, features: &FeatureStore, table: &EmbeddingTable) -> Result<usize> {
    let enc = encode_items(std::slice::from_ref(item), params.mode, features, table)?;
    Ok(argmax_first(&params.score_item(&enc[0])?))
}

pub fn predict_encoded(params: &MlpParams, item: &EncodedItem) -> Result<usize> {
    Ok(argmax_first(&params.score_item(item)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Plain,
    VqaClipped,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Metric::Plain),
            "vqa-clipped" | "vqa" => Ok(Metric::VqaClipped),
            other => Err(Error::config("metric", format!("unknown metric `{other}`"))),
        }
    }
}

/// `min(matches / 3, 1)` for one picked answer.
pub fn vqa_item_score(picked: &str, human_answers: &[String]) -> f64 {
    let key = answer_key(picked);
    let matches = human_answers.iter().filter(|h| answer_key(h) == key).count();
    (matches as f64 / 3.0).min(1.0)
}

fn accuracy_encoded(params: &MlpParams, data: &[EncodedItem]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = data
        .par_iter()
        .map(|it| Ok(usize::from(predict_encoded(params, it)? == it.target_index)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

pub fn evaluate(params: &MlpParams, items: &[CandidateSet], metric: Metric, features: &FeatureStore, table: &EmbeddingTable) -> Result<f64> {
    if metric == Metric::VqaClipped {
        if let Some(bad) = items.iter().find(|it| it.human_answers.is_none()) {
            return Err(Error::MissingHumanAnswers(bad.triplet_id.clone()));
        }
    }
    let data = encode_items(items, params.mode, features, table)?;
    evaluate_encoded(params, items, &data, metric)
}

/// Evaluation when the items are already encoded; `data[i]` must encode `items[i]`.
pub fn evaluate_encoded(params: &MlpParams, items: &[CandidateSet], data: &[EncodedItem], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Plain => accuracy_encoded(params, data),
        Metric::VqaClipped => {
            if items.is_empty() {
                return Ok(0.0);
            }
            let scores = items
                .par_iter()
                .zip(data)
                .map(|(it, enc)| {
                    let human = it.human_answers.as_ref().ok_or_else(|| Error::MissingHumanAnswers(it.triplet_id.clone()))?;
                    let pick = predict_encoded(params, enc)?;
                    Ok(vqa_item_score(&it.candidates[pick], human))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(scores.iter().sum::<f64>() / items.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Compares the analytic gradient with central differences on up to
/// `samples` seeded parameter coordinates (the bias is always included).
pub fn grad_check(params: &MlpParams, data: &[EncodedItem], batch: &[Group], epsilon: f64, samples: usize, seed: u64) -> GradCheckReport {
    let (_, analytic) = loss_and_gradient(params, data, batch);
    grad_check_against(params, data, batch, &analytic, epsilon, samples, seed)
}

/// As [`grad_check`] but against a supplied gradient.
pub fn grad_check_against(
    params: &MlpParams,
    data: &[EncodedItem],
    batch: &[Group],
    analytic: &Gradient,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport {
    let total = params.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = index::sample(&mut rng, total, samples.min(total)).into_vec();
    if !coords.contains(&(total - 1)) {
        coords.push(total - 1);
    }
    coords.sort_unstable();

    // Smallest |pre-activation| per hidden unit and the largest input magnitude
    // per coordinate decide whether a W perturbation can flip a ReLU.
    let c = params.context_dim();
    let mut z_min = vec![f64::INFINITY; params.hidden];
    let mut g_max = vec![0.0f64; params.input];
    for group in batch {
        let item = &data[group.item];
        let zc = params.context_pre(&item.context);
        for &cand in &group.candidates {
            let z = params.pre(&zc, &item.answers[cand]);
            for (m, z) in z_min.iter_mut().zip(&z) {
                *m = m.min(z.abs());
            }
            for (k, g) in item.context.iter().chain(&item.answers[cand]).enumerate() {
                g_max[k] = g_max[k].max(g.abs());
            }
        }
    }
    debug_assert!(c <= params.input);

    let mut probe = params.clone();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for &i in &coords {
        if i < params.w.len() {
            let (j, k) = (i / params.input, i % params.input);
            if z_min[j] <= 2.0 * epsilon * g_max[k] {
                skipped += 1;
                continue;
            }
        }
        let base = flat_get(&params.w, &params.u, params.b, i);
        flat_set(&mut probe, i, base + epsilon);
        let up = batch_loss(&probe, data, batch);
        flat_set(&mut probe, i, base - epsilon);
        let down = batch_loss(&probe, data, batch);
        flat_set(&mut probe, i, base);
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.get(i);
        let rel = (a - numeric).abs() / numeric.abs().max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    GradCheckReport {
        max_rel_error: worst,
        checked,
        skipped,
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"DFMP";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, p: &MlpParams) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_bytes(p: &MlpParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * p.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(p.mode.code());
    for v in [p.d_img, p.d_txt, p.hidden, p.input] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for x in p.w.iter().chain(&p.u).chain(std::iter::once(&p.b)) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<MlpParams> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut r = ByteReader::new(bytes);
    if r.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("missing DFMP magic"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mode = r.u8().and_then(Mode::from_code).ok_or_else(|| bad("bad mode byte"))?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    }
    let [d_img, d_txt, hidden, input] = dims;
    if input != mode.input_dim(d_img, d_txt) {
        return Err(bad("input dimension disagrees with mode"));
    }
    let mut p = MlpParams::zeros(mode, d_img, d_txt, hidden);
    for x in p.w.iter_mut().chain(p.u.iter_mut()).chain(std::iter::once(&mut p.b)) {
        *x = r.f64().ok_or_else(|| bad("truncated weights"))?;
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn tiny(w: f64) -> MlpParams {
        MlpParams {
            mode: Mode::A,
            d_img: 0,
            d_txt: 1,
            hidden: 1,
            input: 1,
            w: vec![w],
            u: vec![1.0],
            b: 0.0,
        }
    }

    #[test]
    fn score_hand_values() {
        let p = tiny(2.0);
        assert!((p.score_raw(&[1.0]).unwrap() - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(p.score_raw(&[-1.0]).unwrap(), 0.5);
        assert_eq!(MlpParams::zeros(Mode::IQA, 4, 3, 5).score_raw(&[0.3; 10]).unwrap(), 0.5);
        assert!(matches!(p.score_raw(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn input_dims() {
        assert_eq!(Mode::IQA.input_dim(2048, 300), 2648);
        assert_eq!(Mode::A.input_dim(2048, 300), 300);
        assert_eq!(Mode::QA.input_dim(2048, 300), 600);
        assert_eq!(Mode::IA.input_dim(2048, 300), 2348);
        assert_eq!("mlp-iqa".parse::<Mode>().unwrap(), Mode::IQA);
    }

    #[test]
    fn argmax_takes_first_tie() {
        assert_eq!(argmax_first(&[0.2, 0.9, 0.9]), 1);
        assert_eq!(argmax_first(&[0.4]), 0);
    }

    #[test]
    fn vqa_metric_values() {
        let human: Vec<String> = ["red", "red", "red", "blue", "Red", "x", "y", "z", "w", "v"].iter().map(|s| s.to_string()).collect();
        assert_eq!(vqa_item_score("red", &human), 1.0);
        let two: Vec<String> = ["blue", "blue", "red"].iter().map(|s| s.to_string()).collect();
        assert!((vqa_item_score("blue", &two) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(vqa_item_score("green", &two), 0.0);
    }

    #[test]
    fn lr_schedule_steps() {
        let cfg = TrainConfig { step_size: 10, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 0.01);
        assert!((cfg.lr_at(10) - 0.001).abs() < 1e-15);
        assert!((cfg.lr_at(25) - 0.0001).abs() < 1e-16);
    }

    fn encoded(n: usize, d: usize, seed: u64) -> Vec<EncodedItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| EncodedItem {
                context: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                answers: (0..4).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                target_index: rng.gen_range(0..4),
                provenance: vec![Provenance::Orig; 4],
            })
            .collect()
    }

    fn full_batch(data: &[EncodedItem]) -> Vec<Group> {
        (0..data.len()).map(|i| Group { item: i, candidates: vec![data[i].target_index, (data[i].target_index + 1) % 4] }).collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = encoded(6, 3, 1);
        let p = MlpParams::init(Mode::QA, 0, 3, 5, 7);
        let report = grad_check(&p, &data, &full_batch(&data), 1e-5, 1000, 3);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 20);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let data = encoded(6, 3, 2);
        let p = MlpParams::init(Mode::QA, 0, 3, 5, 8);
        let batch = full_batch(&data);
        let (_, g) = loss_and_gradient(&p, &data, &batch);
        let report = grad_check_against(&p, &data, &batch, &g.scaled(2.0), 1e-5, 1000, 3);
        assert!((report.max_rel_error - 1.0).abs() < 1e-3, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = MlpParams::init(Mode::IA, 4, 3, 6, 11);
        let bytes = checkpoint_bytes(&p);
        assert_eq!(parse_checkpoint(&bytes).unwrap(), p);
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(parse_checkpoint(&wrong).is_err());
    }

    #[test]
    fn mixed_sources_draw_from_one_procedure() {
        let item = EncodedItem {
            context: vec![],
            answers: vec![vec![0.0]; 7],
            target_index: 3,
            provenance: vec![
                Provenance::Iou,
                Provenance::Iou,
                Provenance::Iou,
                Provenance::Target,
                Provenance::Qou,
                Provenance::Qou,
                Provenance::Fallback,
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let g = sample_group(0, &item, 3, &mut rng).unwrap();
            assert_eq!(g.candidates[0], 3);
            let provs: Vec<_> = g.candidates[1..].iter().map(|&i| item.provenance[i]).collect();
            let iou = provs.iter().filter(|p| **p == Provenance::Iou).count();
            assert!(iou == 3 || (iou == 0 && provs.contains(&Provenance::Fallback)), "{provs:?}");
        }
    }

    #[test]
    fn zero_iterations_return_init() {
        let init = MlpParams::init(Mode::A, 0, 2, 3, 5);
        let data = vec![EncodedItem {
            context: vec![],
            answers: vec![vec![1.0, 0.0]; 4],
            target_index: 0,
            provenance: vec![Provenance::Orig; 4],
        }];
        let cfg = TrainConfig {
            mode: Mode::A,
            max_iters: 0,
            init: Some(init.clone()),
            ..Default::default()
        };
        let (p, log) = train_encoded(&data, None, &cfg, 0, 2).unwrap();
        assert_eq!(p, init);
        assert!(log.is_empty());
    }

    #[test]
    fn build_features_normalizes_segments() {
        let mut table = EmbeddingTable::new(2);
        table.insert("red", vec![3.0, 4.0]).unwrap();
        table.insert("what", vec![0.0, 2.0]).unwrap();
        let mut store = FeatureStore::new(3);
        store.insert("img", vec![1.0, 2.0, 2.0]).unwrap();
        let item = CandidateSet {
            triplet_id: "t".into(),
            image_id: "img".into(),
            question: "what?".into(),
            split: Split::Test,
            candidates: vec!["red".into(), "zzz".into()],
            target_index: 0,
            provenance: vec![Provenance::Target, Provenance::Qou],
            human_answers: None,
        };
        let g = build_features(&item, 0, Mode::IQA, &store, &table).unwrap();
        assert_eq!(g.values.len(), 7);
        let seg = |a: usize, b: usize| g.values[a..b].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((seg(0, 3) - 1.0).abs() < 1e-12);
        assert!((seg(3, 5) - 1.0).abs() < 1e-12);
        assert!((seg(5, 7) - 1.0).abs() < 1e-12);
        let oov = build_features(&item, 1, Mode::A, &store, &table).unwrap();
        assert_eq!(oov.values, vec![0.0, 0.0]);
        assert!(matches!(build_features(&item, 5, Mode::A, &store, &table), Err(Error::CandidateIndex { .. })));
    }
}
