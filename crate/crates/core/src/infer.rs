//! Top-down decoding, evaluation metrics and nearest-neighbor inspection.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split, TypeHierarchy, TypeId};
use crate::embed::cosine;
use crate::exec;
use crate::linalg::Matrix;
use crate::typing::{score, LabelEmbeddings};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction for mention {0}")]
    MissingPrediction(usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mention {0} is out of range")]
    UnknownMention(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A label set attached to a mention; used for predictions and gold alike.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention: usize,
    /// Sorted type ids.
    pub labels: Vec<TypeId>,
}

/// Walks down from the roots, each time taking the best-scoring candidate
/// while its score is non-negative. With `force_root` the best root is kept
/// even when its score is negative.
///
/// Parents have smaller ids than their children, so the returned chain is
/// also sorted.
pub fn top_down_infer(
    mention_vec: &[f64],
    labels: &LabelEmbeddings,
    hierarchy: &TypeHierarchy,
    force_root: bool,
) -> Vec<TypeId> {
    let mut chain = Vec::new();
    let mut candidates = hierarchy.roots();
    while !candidates.is_empty() {
        let mut best = (candidates[0], score(mention_vec, candidates[0], labels));
        for &y in &candidates[1..] {
            let s = score(mention_vec, y, labels);
            if s > best.1 {
                best = (y, s);
            }
        }
        if best.1 < 0.0 && !(force_root && chain.is_empty()) {
            break;
        }
        chain.push(best.0);
        candidates = hierarchy.children(best.0);
    }
    chain
}

/// Decodes every listed row of `refined`.
pub fn predict(
    refined: &Matrix,
    mentions: &[usize],
    labels: &LabelEmbeddings,
    hierarchy: &TypeHierarchy,
    force_root: bool,
) -> Vec<Prediction> {
    exec::map_range(mentions.len(), |i| Prediction {
        mention: mentions[i],
        labels: top_down_infer(refined.row(mentions[i]), labels, hierarchy, force_root),
    })
}

/// Gold label sets of every mention in `split`.
pub fn gold_labels(corpus: &Corpus, split: Split) -> Vec<Prediction> {
    corpus
        .mentions
        .iter()
        .filter(|m| m.split == split)
        .map(|m| Prediction {
            mention: m.id,
            labels: m.labels.clone(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strict: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub mentions: usize,
}

impl MetricsReport {
    /// Three-column table followed by `key=value` lines.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{:>8} {:>8} {:>8}", "strict", "mac-F1", "mic-F1")?;
        writeln!(
            w,
            "{:>8.2} {:>8.2} {:>8.2}",
            100.0 * self.strict,
            100.0 * self.macro_f1,
            100.0 * self.micro_f1
        )?;
        writeln!(w, "strict={:?}", self.strict)?;
        writeln!(w, "macro_f1={:?}", self.macro_f1)?;
        writeln!(w, "micro_f1={:?}", self.micro_f1)?;
        writeln!(w, "mentions={}", self.mentions)
    }
}

fn sorted_set(labels: &[TypeId]) -> Vec<TypeId> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn overlap(a: &[TypeId], b: &[TypeId]) -> usize {
    a.iter().filter(|y| b.binary_search(y).is_ok()).count()
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Strict accuracy, macro-F1 (mean per-mention F1) and micro-F1 (F1 of pooled
/// counts). `F1(∅, ∅) = 1` and `F1(∅, S) = 0`.
///
/// The macro average is accumulated as an exact fraction, so the result is
/// the correctly rounded value and does not depend on mention order.
pub fn evaluate(
    predictions: &[Prediction],
    gold: &[Prediction],
) -> Result<MetricsReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let by_id: HashMap<usize, &[TypeId]> = predictions
        .iter()
        .map(|p| (p.mention, p.labels.as_slice()))
        .collect();
    let (mut exact, mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize, 0usize);
    let mut macro_sum = BigRational::zero();
    for g in gold {
        let pred = sorted_set(
            by_id
                .get(&g.mention)
                .ok_or(EvalError::MissingPrediction(g.mention))?,
        );
        let gold_set = sorted_set(&g.labels);
        let hit = overlap(&pred, &gold_set);
        if pred == gold_set {
            exact += 1;
        }
        let den = pred.len() + gold_set.len();
        macro_sum += if den == 0 {
            ratio(1, 1)
        } else {
            ratio(2 * hit, den)
        };
        tp += hit;
        n_pred += pred.len();
        n_gold += gold_set.len();
    }
    let n = gold.len();
    let micro = if n_pred + n_gold == 0 {
        1.0
    } else {
        (2 * tp) as f64 / (n_pred + n_gold) as f64
    };
    Ok(MetricsReport {
        strict: exact as f64 / n as f64,
        macro_f1: (macro_sum / BigInt::from(n))
            .to_f64()
            .expect("ratio in [0, 1]"),
        micro_f1: micro,
        mentions: n,
    })
}

/// `mention<TAB>/a,/a/b`, one line per prediction.
pub fn write_predictions<W: Write>(
    predictions: &[Prediction],
    hierarchy: &TypeHierarchy,
    mut w: W,
) -> std::io::Result<()> {
    for p in predictions {
        writeln!(w, "{}\t{}", p.mention, hierarchy.names(&p.labels).join(","))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(
    r: R,
    hierarchy: &TypeHierarchy,
) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| EvalError::Parse {
            line: idx + 1,
            message,
        };
        let (id, rest) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        let mention = id
            .trim()
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad mention id {id:?}: {e}")))?;
        let mut labels = Vec::new();
        for name in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            labels.push(
                hierarchy
                    .id_of(name)
                    .ok_or_else(|| parse_err(format!("unknown type {name:?}")))?,
            );
        }
        out.push(Prediction {
            mention,
            labels: sorted_set(&labels),
        });
    }
    if out.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub mention: usize,
    pub similarity: f64,
}

/// The `k` rows most cosine-similar to row `query`, excluding the query.
/// Ties go to the lower id; rows with a zero vector score 0.
pub fn nearest_neighbors(
    query: usize,
    reps: &Matrix,
    k: usize,
) -> Result<Vec<Neighbor>, EvalError> {
    if query >= reps.rows() {
        return Err(EvalError::UnknownMention(query));
    }
    let available = reps.rows() - 1;
    let k = if k > available {
        log::warn!("asked for {k} neighbors but only {available} other mentions exist");
        available
    } else {
        k
    };
    let q = reps.row(query);
    let mut all: Vec<Neighbor> = exec::map_range(reps.rows(), |i| Neighbor {
        mention: i,
        similarity: cosine(q, reps.row(i)).unwrap_or(0.0),
    });
    all.remove(query);
    all.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.mention.cmp(&b.mention))
    });
    all.truncate(k);
    Ok(all)
}
