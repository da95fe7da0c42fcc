//! Alternating two-phase training.
//!
//! Each round runs minibatch epochs on the Phase-I encoder (when it is
//! trainable) with the graph network and label embeddings frozen, then
//! full-batch steps on the graph network weights, label embeddings and
//! biases with the encoder frozen. Losses only ever see training mentions;
//! dev and test mentions contribute through the adjacency alone.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::encoder::{EncoderParams, Phase1};
use crate::gcn::{self, GcnParameters};
use crate::graph::NormalizedAdjacency;
use crate::infer::{self, MetricsReport};
use crate::linalg::Matrix;
use crate::optim::{Adam, AdamConfig};
use crate::typing::{batch_gradients, LabelEmbeddings, LossBreakdown, Target};
use crate::{Error, Result};

/// RNG streams derived from the training seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_ENCODER: u64 = 2;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_steps: usize,
    pub max_rounds: usize,
    /// Minimum dev macro-F1 gain that resets the patience counter.
    pub tol: f64,
    /// Rounds without sufficient gain before stopping; 0 never stops early.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub hidden: usize,
    pub output: usize,
    pub force_root: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_epochs: 1,
            phase2_steps: 50,
            max_rounds: 100,
            tol: 1e-4,
            patience: 3,
            batch_size: 32,
            seed: 0,
            lr: 0.001,
            hidden: 256,
            output: 128,
            force_root: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phase2 steps", self.phase2_steps),
            ("batch size", self.batch_size),
            ("hidden width", self.hidden),
            ("output width", self.output),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Config(format!(
                "tolerance {} must be non-negative",
                self.tol
            )));
        }
        if !(0.0008..=0.001).contains(&self.lr) {
            log::warn!(
                "learning rate {} is outside the usual 0.0008-0.001 range",
                self.lr
            );
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        })
    }
}

/// Everything needed to score mentions.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gcn: GcnParameters,
    pub labels: LabelEmbeddings,
    /// Encoder weights when Phase-I is the trainable built-in encoder.
    pub encoder: Option<EncoderParams>,
}

impl Model {
    pub fn init(input: usize, types: usize, config: &TrainConfig) -> Self {
        let mut rng = seeded_rng(config.seed, STREAM_INIT);
        let gcn = GcnParameters::init(input, config.hidden, config.output, &mut rng);
        let labels = LabelEmbeddings::init(types, config.output, &mut rng);
        Self {
            gcn,
            labels,
            encoder: None,
        }
    }

    /// Phase-I rows under this model's encoder weights.
    pub fn phase1_rows(&self, phase1: &Phase1) -> Matrix {
        match (phase1, &self.encoder) {
            (Phase1::Builtin(enc), Some(params)) if enc.params() != params => {
                let mut enc = enc.clone();
                *enc.params_mut() = params.clone();
                enc.encode_all()
            }
            _ => phase1.representations(),
        }
    }

    /// Refined representations for every mention.
    pub fn refine(&self, phase1: &Phase1, adj: &NormalizedAdjacency) -> Result<Matrix> {
        let x = self.phase1_rows(phase1);
        Ok(gcn::forward(adj, &x, &self.gcn)?.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub loss: LossBreakdown,
    pub dev: Option<MetricsReport>,
    pub wall_secs: f64,
}

impl RoundLog {
    pub const HEADER: &'static str =
        "round\tclean\tnoisy\tdev_strict\tdev_macro\tdev_micro\twall_s";

    /// Tab-separated log line; dev columns are `-` without dev mentions.
    pub fn line(&self) -> String {
        let mut s = self.line_without_time();
        let _ = write!(s, "\t{:.3}", self.wall_secs);
        s
    }

    /// The line minus wall time, which is the only nondeterministic column.
    pub fn line_without_time(&self) -> String {
        let mut s = format!(
            "{}\t{:?}\t{:?}",
            self.round, self.loss.clean, self.loss.noisy
        );
        match &self.dev {
            Some(d) => {
                let _ = write!(s, "\t{:?}\t{:?}\t{:?}", d.strict, d.macro_f1, d.micro_f1);
            }
            None => s.push_str("\t-\t-\t-"),
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxRounds,
    Plateau,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model from the round with the best dev macro-F1 (the last round
    /// without dev mentions; the initialization with zero rounds).
    pub best: Model,
    pub best_round: usize,
    pub last: Model,
    pub log: Vec<RoundLog>,
    pub stop: StopReason,
}

/// Training mentions with their cleanliness tags.
pub fn training_targets(corpus: &Corpus) -> Result<Vec<Target>> {
    let tags = corpus.cleanliness()?;
    Ok(corpus
        .mentions
        .iter()
        .zip(tags)
        .filter_map(|(m, tag)| {
            tag.map(|tag| Target {
                row: m.id,
                labels: m.labels.clone(),
                tag,
            })
        })
        .collect())
}

fn diverged(round: usize, reason: impl Into<String>, last_good: &Model) -> Error {
    Error::Diverged {
        round,
        reason: reason.into(),
        last_good: Box::new(last_good.clone()),
    }
}

fn check_loss(loss: &LossBreakdown, round: usize, last_good: &Model) -> Result<()> {
    if loss.total().is_finite() {
        Ok(())
    } else {
        Err(diverged(
            round,
            format!("loss became {}", loss.total()),
            last_good,
        ))
    }
}

fn snapshot(model: &Model, phase1: &Phase1) -> Model {
    let mut m = model.clone();
    if let Phase1::Builtin(enc) = phase1 {
        m.encoder = Some(enc.params().clone());
    }
    m
}

/// Trains from a fresh initialization. `phase1` is updated in place when it
/// is the built-in encoder.
pub fn train(
    corpus: &Corpus,
    adj: &NormalizedAdjacency,
    phase1: &mut Phase1,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = Model::init(phase1.width(), corpus.type_count(), config);
    train_from(corpus, adj, phase1, config, model)
}

pub fn train_from(
    corpus: &Corpus,
    adj: &NormalizedAdjacency,
    phase1: &mut Phase1,
    config: &TrainConfig,
    mut model: Model,
) -> Result<TrainOutcome> {
    config.validate()?;
    if adj.size() != corpus.mentions.len() {
        return Err(Error::Config(format!(
            "graph has {} nodes but the corpus has {} mentions",
            adj.size(),
            corpus.mentions.len()
        )));
    }
    let targets = training_targets(corpus)?;
    if targets.is_empty() {
        return Err(Error::Config("no training mentions".into()));
    }
    let dev_gold = infer::gold_labels(corpus, Split::Dev);
    let dev_ids: Vec<usize> = dev_gold.iter().map(|g| g.mention).collect();
    if dev_gold.is_empty() {
        log::warn!("no dev mentions; keeping the last round and never stopping early");
    }

    let mut shuffle_rng = seeded_rng(config.seed, STREAM_SHUFFLE);
    let mut phase1_adam = config.adam();
    let mut phase2_adam = config.adam();
    let all_targets: Vec<usize> = (0..targets.len()).collect();

    let mut log_rows = Vec::new();
    let mut best = snapshot(&model, phase1);
    let mut best_round = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut stop = StopReason::MaxRounds;

    for round in 1..=config.max_rounds {
        let started = Instant::now();
        let last_good = snapshot(&model, phase1);

        if let Phase1::Builtin(enc) = phase1 {
            let mut order = all_targets.clone();
            for _ in 0..config.phase1_epochs {
                order.shuffle(&mut shuffle_rng);
                for batch in order.chunks(config.batch_size) {
                    let x = enc.encode_all();
                    let (refined, cache) = gcn::forward(adj, &x, &model.gcn)?;
                    let batch_targets: Vec<Target> =
                        batch.iter().map(|&t| targets[t].clone()).collect();
                    let g = batch_gradients(&refined, &batch_targets, &model.labels)?;
                    check_loss(&g.loss, round, &last_good)?;
                    let dx = gcn::backward(adj, &model.gcn, &cache, &g.d_refined, true)?
                        .dx
                        .expect("requested");
                    let grad = enc.backward(&dx);
                    phase1_adam
                        .step(&mut enc.params_mut().slices_mut(), &grad.slices())
                        .map_err(|e| diverged(round, e.to_string(), &last_good))?;
                }
            }
        }

        let x = phase1.representations();
        for _ in 0..config.phase2_steps {
            let (refined, cache) = gcn::forward(adj, &x, &model.gcn)?;
            let g = batch_gradients(&refined, &targets, &model.labels)?;
            check_loss(&g.loss, round, &last_good)?;
            let gg = gcn::backward(adj, &model.gcn, &cache, &g.d_refined, false)?;
            let [hidden_weights, output_weights] = model.gcn.slices_mut();
            let [vectors, bias] = model.labels.slices_mut();
            phase2_adam
                .step(
                    &mut [hidden_weights, output_weights, vectors, bias],
                    &[
                        gg.d_hidden_weights.as_slice(),
                        gg.d_output_weights.as_slice(),
                        g.d_vectors.as_slice(),
                        &g.d_bias,
                    ],
                )
                .map_err(|e| diverged(round, e.to_string(), &last_good))?;
        }

        let (refined, _) = gcn::forward(adj, &x, &model.gcn)?;
        let loss = batch_gradients(&refined, &targets, &model.labels)?.loss;
        check_loss(&loss, round, &last_good)?;
        let dev = if dev_gold.is_empty() {
            None
        } else {
            let preds = infer::predict(
                &refined,
                &dev_ids,
                &model.labels,
                &corpus.hierarchy,
                config.force_root,
            );
            Some(infer::evaluate(&preds, &dev_gold)?)
        };
        let row = RoundLog {
            round,
            loss,
            dev,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", row.line());
        log_rows.push(row);

        match dev {
            None => {
                best = snapshot(&model, phase1);
                best_round = round;
            }
            Some(d) => {
                if d.macro_f1 - best_score < config.tol {
                    stale += 1;
                } else {
                    stale = 0;
                }
                if d.macro_f1 > best_score {
                    best_score = d.macro_f1;
                    best = snapshot(&model, phase1);
                    best_round = round;
                }
                if config.patience > 0 && stale >= config.patience {
                    stop = StopReason::Plateau;
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        best,
        best_round,
        last: snapshot(&model, phase1),
        log: log_rows,
        stop,
    })
}
