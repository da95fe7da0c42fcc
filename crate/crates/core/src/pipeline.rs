//! Stage composition used by the command-line tool and the experiments.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::embed::{compute_pivots, mention_embeddings, PivotSet, TokenEmbeddingTable};
use crate::encoder::{EncoderConfig, EncoderParams, Phase1, SimpleEncoder};
use crate::graph::{
    attach_attention, build_graph, candidate_sets, normalize, CandidateSets, GraphError, GraphMode,
    GraphStats, NormalizedAdjacency, RefinementGraph, DEFAULT_THRESHOLD,
};
use crate::infer::{self, MetricsReport, Prediction};
use crate::linalg::Matrix;
use crate::training::{self, seeded_rng, Model, TrainConfig, TrainOutcome, STREAM_ENCODER};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub mode: GraphMode,
    pub thr: f64,
    /// Required for random adjacency.
    pub seed: Option<u64>,
    pub max_clique: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            mode: GraphMode::Attn,
            thr: DEFAULT_THRESHOLD,
            seed: None,
            max_clique: None,
        }
    }
}

/// Every intermediate of graph construction.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub pivots: PivotSet,
    pub candidates: CandidateSets,
    pub graph: RefinementGraph,
    pub adjacency: NormalizedAdjacency,
}

impl Refinement {
    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.graph.node_count(),
            edges: self.graph.edge_count(),
            candidates: self.candidates.node_count(),
            mode: self.graph.mode(),
        }
    }
}

/// Pivots, candidate sets, edges, attention weights and normalization over
/// every mention of the corpus.
pub fn build_refinement(
    corpus: &Corpus,
    embeddings: &Matrix,
    cfg: &GraphConfig,
) -> Result<Refinement> {
    if cfg.mode == GraphMode::Rnd && cfg.seed.is_none() {
        return Err(GraphError::MissingSeed.into());
    }
    let pivots = compute_pivots(corpus, embeddings);
    let candidates = candidate_sets(embeddings, &pivots, cfg.thr, cfg.max_clique)?;
    let mut graph = build_graph(embeddings.rows(), &candidates, cfg.mode, cfg.seed)?;
    if cfg.mode == GraphMode::Attn {
        graph = attach_attention(&graph, embeddings)?;
    }
    let adjacency = normalize(&graph)?;
    Ok(Refinement {
        pivots,
        candidates,
        graph,
        adjacency,
    })
}

/// The built-in encoder with weights drawn from `seed`.
pub fn builtin_phase1(
    corpus: &Corpus,
    table: &TokenEmbeddingTable,
    config: EncoderConfig,
    seed: u64,
) -> Result<Phase1> {
    let params = EncoderParams::init(
        &config.layout,
        table.dim(),
        &mut seeded_rng(seed, STREAM_ENCODER),
    );
    Ok(Phase1::Builtin(Box::new(SimpleEncoder::new(
        corpus, table, config, params,
    )?)))
}

/// Decodes and scores one split.
pub fn evaluate_split(
    model: &Model,
    phase1: &Phase1,
    adj: &NormalizedAdjacency,
    corpus: &Corpus,
    split: Split,
    force_root: bool,
) -> Result<(Vec<Prediction>, MetricsReport)> {
    let refined = model.refine(phase1, adj)?;
    let gold = infer::gold_labels(corpus, split);
    let ids: Vec<usize> = gold.iter().map(|g| g.mention).collect();
    let preds = infer::predict(&refined, &ids, &model.labels, &corpus.hierarchy, force_root);
    let report = infer::evaluate(&preds, &gold)?;
    Ok((preds, report))
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub refinement: Refinement,
    pub outcome: TrainOutcome,
    pub predictions: Vec<Prediction>,
    pub report: MetricsReport,
}

/// Graph, built-in encoder, training and test-split evaluation in one call.
pub fn run_experiment(
    corpus: &Corpus,
    table: &TokenEmbeddingTable,
    graph: &GraphConfig,
    encoder: EncoderConfig,
    train: &TrainConfig,
) -> Result<Experiment> {
    let embeddings = mention_embeddings(corpus, table)?;
    let refinement = build_refinement(corpus, &embeddings, graph)?;
    let mut phase1 = builtin_phase1(corpus, table, encoder, train.seed)?;
    let outcome = training::train(corpus, &refinement.adjacency, &mut phase1, train)?;
    let (predictions, report) = evaluate_split(
        &outcome.best,
        &phase1,
        &refinement.adjacency,
        corpus,
        Split::Test,
        train.force_root,
    )?;
    Ok(Experiment {
        refinement,
        outcome,
        predictions,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_dataset;

    fn corpus_and_table() -> (Corpus, TokenEmbeddingTable) {
        let text = concat!(
            r#"{"tokens":["a","x"],"mentions":[{"start":0,"end":1,"labels":["/p"]}],"split":"train"}"#,
            "\n",
            r#"{"tokens":["b","y"],"mentions":[{"start":0,"end":1,"labels":["/p"]}],"split":"train"}"#,
            "\n",
            r#"{"tokens":["c","z"],"mentions":[{"start":0,"end":1,"labels":["/o"]}],"split":"test"}"#,
            "\n",
        );
        let corpus = parse_dataset(text.as_bytes(), None).unwrap().corpus;
        let mut table = TokenEmbeddingTable::new(2);
        let vecs = [
            [1.0, 0.1],
            [0.0, 1.0],
            [0.9, 0.0],
            [0.1, 1.0],
            [0.0, 1.0],
            [1.0, 0.0],
        ];
        for r in 0..3u32 {
            for t in 0..2u32 {
                table.insert(r, t, &vecs[(2 * r + t) as usize]).unwrap();
            }
        }
        (corpus, table)
    }

    #[test]
    fn modes_produce_expected_edge_counts() {
        let (corpus, table) = corpus_and_table();
        let emb = mention_embeddings(&corpus, &table).unwrap();
        let attn = build_refinement(&corpus, &emb, &GraphConfig::default()).unwrap();
        assert_eq!(attn.stats().edges, 1);
        assert!(attn.adjacency.matrix().is_symmetric());
        let eye = build_refinement(
            &corpus,
            &emb,
            &GraphConfig {
                mode: GraphMode::Eye,
                ..GraphConfig::default()
            },
        )
        .unwrap();
        assert_eq!(eye.stats().edges, 0);
        let rnd = GraphConfig {
            mode: GraphMode::Rnd,
            ..GraphConfig::default()
        };
        assert!(build_refinement(&corpus, &emb, &rnd).is_err());
        let rnd = build_refinement(
            &corpus,
            &emb,
            &GraphConfig {
                seed: Some(1),
                ..rnd
            },
        )
        .unwrap();
        assert_eq!(rnd.stats().edges, 1);
    }

    #[test]
    fn experiment_runs_end_to_end() {
        let (corpus, table) = corpus_and_table();
        let enc = EncoderConfig {
            layout: crate::encoder::RepresentationLayout {
                mention: 2,
                context: 2,
                position: 2,
            },
            window: 1,
        };
        let train = TrainConfig {
            max_rounds: 2,
            hidden: 4,
            output: 3,
            ..TrainConfig::default()
        };
        let exp = run_experiment(&corpus, &table, &GraphConfig::default(), enc, &train).unwrap();
        assert_eq!(exp.predictions.len(), 1);
        assert_eq!(exp.outcome.log.len(), 2);
        assert!(exp.outcome.best.encoder.is_some());
    }
}
