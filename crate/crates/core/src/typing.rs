//! Label embeddings, bilinear scores and the two margin losses.
//!
//! A mention scores `f(φ_m, y) = φ_m·φ_y + bias_y` against every type. Clean
//! training mentions push all of their labels above +1 and every other type
//! below −1. Noisy mentions only push their best-scoring label above +1.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Cleanliness, TypeId};
use crate::exec;
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Error)]
pub enum TypingError {
    #[error("mention {0} has an empty label set")]
    EmptyLabels(usize),
    #[error("width mismatch: label embeddings are {expected} wide, mention row is {got}")]
    Width { expected: usize, got: usize },
}

/// One row per type plus a bias per type.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddings {
    pub vectors: Matrix,
    pub bias: Vec<f64>,
}

impl LabelEmbeddings {
    /// Uniform in [−0.05, 0.05], zero biases.
    pub fn init<R: Rng>(types: usize, width: usize, rng: &mut R) -> Self {
        Self {
            vectors: Matrix::from_fn(types, width, |_, _| rng.random_range(-0.05..=0.05)),
            bias: vec![0.0; types],
        }
    }

    pub fn type_count(&self) -> usize {
        self.vectors.rows()
    }

    pub fn width(&self) -> usize {
        self.vectors.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.vectors.as_mut_slice(), &mut self.bias]
    }

    /// Scores of `mention_vec` against every type.
    pub fn scores(&self, mention_vec: &[f64]) -> Vec<f64> {
        (0..self.type_count())
            .map(|y| score(mention_vec, y, self))
            .collect()
    }
}

pub fn score(mention_vec: &[f64], y: TypeId, labels: &LabelEmbeddings) -> f64 {
    dot(mention_vec, labels.vectors.row(y)) + labels.bias[y]
}

/// Every type id not in the sorted set `labels`.
pub fn complement(labels: &[TypeId], type_count: usize) -> Vec<TypeId> {
    (0..type_count)
        .filter(|y| labels.binary_search(y).is_err())
        .collect()
}

fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `Σ_{y∈true} ReLU(1 − f) + Σ_{y'∈false} ReLU(1 + f)`, summed in the given order.
pub fn loss_clean(
    mention_vec: &[f64],
    true_set: &[TypeId],
    false_set: &[TypeId],
    labels: &LabelEmbeddings,
) -> Result<f64, TypingError> {
    if true_set.is_empty() {
        return Err(TypingError::EmptyLabels(0));
    }
    let mut loss = 0.0;
    for &y in true_set {
        loss += hinge(1.0 - score(mention_vec, y, labels));
    }
    for &y in false_set {
        loss += hinge(1.0 + score(mention_vec, y, labels));
    }
    Ok(loss)
}

/// Best-scoring member of `true_set`; ties go to the lower id.
pub fn best_label(
    mention_vec: &[f64],
    true_set: &[TypeId],
    labels: &LabelEmbeddings,
) -> Option<(TypeId, f64)> {
    let mut best: Option<(TypeId, f64)> = None;
    for &y in true_set {
        let s = score(mention_vec, y, labels);
        let better = match best {
            None => true,
            Some((by, bs)) => s > bs || (s == bs && y < by),
        };
        if better {
            best = Some((y, s));
        }
    }
    best
}

/// `ReLU(1 − f(y*)) + Σ_{y'∈false} ReLU(1 + f)` with `y*` the best true label.
pub fn loss_noisy(
    mention_vec: &[f64],
    true_set: &[TypeId],
    false_set: &[TypeId],
    labels: &LabelEmbeddings,
) -> Result<(f64, TypeId), TypingError> {
    let (star, s) = best_label(mention_vec, true_set, labels).ok_or(TypingError::EmptyLabels(0))?;
    let mut loss = hinge(1.0 - s);
    for &y in false_set {
        loss += hinge(1.0 + score(mention_vec, y, labels));
    }
    Ok((loss, star))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clean: f64,
    pub noisy: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.clean + self.noisy
    }
}

/// A training mention as the losses see it.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    /// Row of the refined representation matrix.
    pub row: usize,
    /// Sorted label ids.
    pub labels: Vec<TypeId>,
    pub tag: Cleanliness,
}

/// Summed losses and their subgradients over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub loss: LossBreakdown,
    /// Same shape as the representation matrix; rows outside the batch are zero.
    pub d_refined: Matrix,
    pub d_vectors: Matrix,
    pub d_bias: Vec<f64>,
}

struct MentionTerms {
    clean: f64,
    noisy: f64,
    d_row: Vec<f64>,
    /// `(type, ±1)` for every violated hinge.
    active: Vec<(TypeId, f64)>,
}

fn mention_terms(
    mention_vec: &[f64],
    target: &Target,
    labels: &LabelEmbeddings,
) -> Result<MentionTerms, TypingError> {
    let y_count = labels.type_count();
    let false_set = complement(&target.labels, y_count);
    let mut active = Vec::new();
    let (mut clean, mut noisy) = (0.0, 0.0);
    match target.tag {
        Cleanliness::Clean => {
            clean = loss_clean(mention_vec, &target.labels, &false_set, labels)
                .map_err(|_| TypingError::EmptyLabels(target.row))?;
            for &y in &target.labels {
                if 1.0 - score(mention_vec, y, labels) > 0.0 {
                    active.push((y, -1.0));
                }
            }
        }
        Cleanliness::Noisy => {
            let (l, star) = loss_noisy(mention_vec, &target.labels, &false_set, labels)
                .map_err(|_| TypingError::EmptyLabels(target.row))?;
            noisy = l;
            if 1.0 - score(mention_vec, star, labels) > 0.0 {
                active.push((star, -1.0));
            }
        }
    }
    for &y in &false_set {
        if 1.0 + score(mention_vec, y, labels) > 0.0 {
            active.push((y, 1.0));
        }
    }
    active.sort_unstable_by_key(|a| a.0);
    let mut d_row = vec![0.0; labels.width()];
    for &(y, s) in &active {
        axpy(s, labels.vectors.row(y), &mut d_row);
    }
    Ok(MentionTerms {
        clean,
        noisy,
        d_row,
        active,
    })
}

/// Loss sums and subgradients over `targets`. The selected noisy label is held
/// fixed; hinges exactly at their margin contribute nothing.
pub fn batch_gradients(
    refined: &Matrix,
    targets: &[Target],
    labels: &LabelEmbeddings,
) -> Result<BatchGradients, TypingError> {
    if refined.cols() != labels.width() {
        return Err(TypingError::Width {
            expected: labels.width(),
            got: refined.cols(),
        });
    }
    let terms = exec::map_range(targets.len(), |t| {
        mention_terms(refined.row(targets[t].row), &targets[t], labels)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut loss = LossBreakdown::default();
    let mut d_refined = Matrix::zeros(refined.rows(), refined.cols());
    for (t, term) in targets.iter().zip(&terms) {
        loss.clean += term.clean;
        loss.noisy += term.noisy;
        axpy(1.0, &term.d_row, d_refined.row_mut(t.row));
    }

    let (y_count, k) = (labels.type_count(), labels.width());
    let (d_vectors, d_bias) = exec::chunked_reduce(
        targets.len(),
        || (Matrix::zeros(y_count, k), vec![0.0; y_count]),
        |(dv, db), t| {
            let mention_vec = refined.row(targets[t].row);
            for &(y, s) in &terms[t].active {
                axpy(s, mention_vec, dv.row_mut(y));
                db[y] += s;
            }
        },
        |(dv, db), (pv, pb)| {
            axpy(1.0, pv.as_slice(), dv.as_mut_slice());
            axpy(1.0, &pb, db);
        },
    );
    Ok(BatchGradients {
        loss,
        d_refined,
        d_vectors,
        d_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels_from(rows: &[Vec<f64>], bias: &[f64]) -> LabelEmbeddings {
        LabelEmbeddings {
            vectors: Matrix::from_rows(rows),
            bias: bias.to_vec(),
        }
    }

    /// Label embeddings that give a zero mention vector exactly `scores`.
    fn fixed_scores(scores: &[f64]) -> (Vec<f64>, LabelEmbeddings) {
        let rows = vec![vec![0.0]; scores.len()];
        (vec![0.0], labels_from(&rows, scores))
    }

    #[test]
    fn score_examples() {
        let l = labels_from(&[vec![1.0, 0.0], vec![0.5, -1.0]], &[0.3, 0.1]);
        assert_eq!(score(&[0.0, 0.0], 0, &l), 0.3);
        let unit = labels_from(&[vec![1.0, 0.0]], &[0.0]);
        assert_eq!(score(&[1.0, 0.0], 0, &unit), 1.0);
        assert!((score(&[1.0, 2.0], 1, &l) - (-1.4)).abs() < 1e-15);
    }

    #[test]
    fn clean_loss_examples() {
        let (m, l) = fixed_scores(&[1.0, 1.0, -1.0, -1.0]);
        assert_eq!(loss_clean(&m, &[0, 1], &[2, 3], &l).unwrap(), 0.0);
        let (m, l) = fixed_scores(&[0.0; 5]);
        assert_eq!(loss_clean(&m, &[0, 1], &[2, 3, 4], &l).unwrap(), 5.0);
        assert!(matches!(
            loss_clean(&m, &[], &[0], &l),
            Err(TypingError::EmptyLabels(_))
        ));
    }

    #[test]
    fn noisy_loss_examples() {
        let (m, l) = fixed_scores(&[0.2, 0.9, -1.0, -1.5]);
        let (loss, star) = loss_noisy(&m, &[0, 1], &[2, 3], &l).unwrap();
        assert!((loss - 0.1).abs() < 1e-15);
        assert_eq!(star, 1);
        let (m, l) = fixed_scores(&[0.0; 5]);
        assert_eq!(loss_noisy(&m, &[0, 1], &[2, 3, 4], &l).unwrap(), (4.0, 0));
        assert!(loss_noisy(&m, &[], &[0], &l).is_err());
    }

    #[test]
    fn violated_true_label_gradient() {
        let l = labels_from(&[vec![0.3, -0.2]], &[0.0]);
        let refined = Matrix::from_rows(&[vec![0.5, 0.5]]);
        let t = Target {
            row: 0,
            labels: vec![0],
            tag: Cleanliness::Clean,
        };
        let g = batch_gradients(&refined, &[t], &l).unwrap();
        assert_eq!(g.d_refined.row(0), &[-0.3, 0.2]);
        assert_eq!(g.d_vectors.row(0), &[-0.5, -0.5]);
        assert_eq!(g.d_bias, vec![-1.0]);
    }

    #[test]
    fn satisfied_margins_give_zero_gradients() {
        let (m, l) = fixed_scores(&[1.0, 2.0, -1.0, -3.0]);
        let refined = Matrix::from_rows(&[m.clone(), m]);
        let targets = [
            Target {
                row: 0,
                labels: vec![0, 1],
                tag: Cleanliness::Clean,
            },
            Target {
                row: 1,
                labels: vec![0, 1],
                tag: Cleanliness::Noisy,
            },
        ];
        let g = batch_gradients(&refined, &targets, &l).unwrap();
        assert_eq!(g.loss.total(), 0.0);
        assert!(g.d_refined.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.d_vectors.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.d_bias.iter().all(|&v| v == 0.0));
    }

    fn oracle_clean(scores: &[f64], t: &[usize], f: &[usize]) -> f64 {
        let mut s = 0.0;
        for &y in t {
            s += (1.0 - scores[y]).max(0.0);
        }
        for &y in f {
            s += (1.0 + scores[y]).max(0.0);
        }
        s
    }

    #[test]
    fn clean_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let l = LabelEmbeddings {
                vectors: Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)),
                bias: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
            };
            let m: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scores = l.scores(&m);
            let t = vec![1, 3];
            let f = complement(&t, 4);
            assert_eq!(
                loss_clean(&m, &t, &f, &l).unwrap(),
                oracle_clean(&scores, &t, &f)
            );
        }
    }

    fn total_loss(refined: &Matrix, targets: &[Target], l: &LabelEmbeddings) -> f64 {
        batch_gradients(refined, targets, l).unwrap().loss.total()
    }

    fn min_margin_gap(refined: &Matrix, targets: &[Target], l: &LabelEmbeddings) -> f64 {
        let mut gap = f64::INFINITY;
        for t in targets {
            let s = l.scores(refined.row(t.row));
            for v in &s {
                gap = gap.min((1.0 - v).abs()).min((1.0 + v).abs());
            }
            // Near-ties among true labels move the selected label.
            for (a, &ya) in t.labels.iter().enumerate() {
                for &yb in &t.labels[a + 1..] {
                    gap = gap.min((s[ya] - s[yb]).abs());
                }
            }
        }
        gap
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut checked = 0;
        for _ in 0..40 {
            let (n, y, k) = (4, 5, 3);
            let l = LabelEmbeddings {
                vectors: Matrix::from_fn(y, k, |_, _| rng.random_range(-1.0..1.0)),
                bias: (0..y).map(|_| rng.random_range(-0.5..0.5)).collect(),
            };
            let refined = Matrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
            let targets: Vec<Target> = (0..n)
                .map(|row| Target {
                    row,
                    labels: if row % 2 == 0 {
                        vec![0, 2]
                    } else {
                        vec![1, 3, 4]
                    },
                    tag: if row < 2 {
                        Cleanliness::Clean
                    } else {
                        Cleanliness::Noisy
                    },
                })
                .collect();
            if min_margin_gap(&refined, &targets, &l) < 1e-3 {
                continue;
            }
            checked += 1;
            let g = batch_gradients(&refined, &targets, &l).unwrap();
            let check = |analytic: f64, plus: f64, minus: f64| {
                let num = (plus - minus) / (2.0 * eps);
                assert!((analytic - num).abs() <= 1e-5 * analytic.abs().max(num.abs()).max(1.0));
            };
            for idx in 0..n * k {
                let (mut p, mut m) = (refined.clone(), refined.clone());
                p.as_mut_slice()[idx] += eps;
                m.as_mut_slice()[idx] -= eps;
                check(
                    g.d_refined.as_slice()[idx],
                    total_loss(&p, &targets, &l),
                    total_loss(&m, &targets, &l),
                );
            }
            for idx in 0..y * k {
                let (mut p, mut m) = (l.clone(), l.clone());
                p.vectors.as_mut_slice()[idx] += eps;
                m.vectors.as_mut_slice()[idx] -= eps;
                check(
                    g.d_vectors.as_slice()[idx],
                    total_loss(&refined, &targets, &p),
                    total_loss(&refined, &targets, &m),
                );
            }
            for idx in 0..y {
                let (mut p, mut m) = (l.clone(), l.clone());
                p.bias[idx] += eps;
                m.bias[idx] -= eps;
                check(
                    g.d_bias[idx],
                    total_loss(&refined, &targets, &p),
                    total_loss(&refined, &targets, &m),
                );
            }
        }
        assert!(checked >= 10, "only {checked} instances away from kinks");
    }

    #[test]
    fn losses_are_summed_over_mentions() {
        let (m, l) = fixed_scores(&[0.0; 3]);
        let refined = Matrix::from_rows(&[m.clone(), m]);
        let t = |row| Target {
            row,
            labels: vec![0],
            tag: Cleanliness::Clean,
        };
        let g = batch_gradients(&refined, &[t(0), t(1)], &l).unwrap();
        assert_eq!(g.loss.clean, 6.0);
    }

    proptest! {
        #[test]
        fn noisy_never_exceeds_clean(
            scores in proptest::collection::vec(-3.0f64..3.0, 6),
            mask in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let t: Vec<usize> = (0..6).filter(|&i| mask[i]).collect();
            prop_assume!(!t.is_empty());
            let f = complement(&t, 6);
            let (m, l) = fixed_scores(&scores);
            let clean = loss_clean(&m, &t, &f, &l).unwrap();
            let (noisy, _) = loss_noisy(&m, &t, &f, &l).unwrap();
            prop_assert!(noisy >= 0.0 && clean >= 0.0);
            prop_assert!(noisy <= clean);
        }

        #[test]
        fn selected_label_survives_monotone_transform(
            scores in proptest::collection::vec(-3.0f64..3.0, 5),
            shift in -5.0f64..5.0,
        ) {
            let t = vec![0, 2, 4];
            let (m, l) = fixed_scores(&scores);
            let (_, a) = loss_noisy(&m, &t, &[1, 3], &l).unwrap();
            let moved: Vec<f64> = scores.iter().map(|s| (s * 0.5 + shift).exp()).collect();
            let (m2, l2) = fixed_scores(&moved);
            let (_, b) = loss_noisy(&m2, &t, &[1, 3], &l2).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
