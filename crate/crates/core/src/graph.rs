//! Corpus-level refinement graph.
//!
//! Every mention (train, dev and test) is a node. A mention becomes a
//! candidate of the type whose pivot is most similar to its contextual
//! embedding, provided that similarity reaches `thr`; candidates of one type
//! form a clique. Edges optionally carry the cosine between their endpoints'
//! embeddings as an attention weight, and the weighted adjacency plus self
//! loops is symmetrically normalized by its degrees.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TypeId;
use crate::embed::{cosine, PivotSet};
use crate::exec;
use crate::linalg::{CsrMatrix, Matrix};

pub const DEFAULT_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("random adjacency needs an explicit seed")]
    MissingSeed,
    #[error("attention weights only apply to attn graphs, not {0}")]
    WrongMode(GraphMode),
    #[error("edge ({i}, {j}) has non-finite weight")]
    NonFinite { i: usize, j: usize },
    #[error("node {node} has non-positive degree {degree}")]
    NonPositiveDegree { node: usize, degree: f64 },
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("unknown graph mode {0:?}")]
    UnknownMode(String),
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Adjacency variants: cosine-weighted cliques, unweighted cliques, no
/// edges, or as many uniformly random edges as the clique graph has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Attn,
    Pivots,
    Eye,
    Rnd,
}

impl GraphMode {
    pub const ALL: [GraphMode; 4] = [
        GraphMode::Attn,
        GraphMode::Pivots,
        GraphMode::Eye,
        GraphMode::Rnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GraphMode::Attn => "attn",
            GraphMode::Pivots => "pivots",
            GraphMode::Eye => "eye",
            GraphMode::Rnd => "rnd",
        }
    }
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphMode {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "attn" => Ok(GraphMode::Attn),
            "pivots" => Ok(GraphMode::Pivots),
            "eye" => Ok(GraphMode::Eye),
            "rnd" => Ok(GraphMode::Rnd),
            _ => Err(GraphError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub ty: TypeId,
    pub cosine: f64,
}

/// Best usable pivot for `embedding`, kept only if its cosine reaches `thr`.
/// Ties go to the lower type id.
pub fn select_candidate(embedding: &[f64], pivots: &PivotSet, thr: f64) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for ty in 0..pivots.type_count() {
        if !pivots.is_usable(ty) {
            continue;
        }
        let Ok(c) = cosine(embedding, pivots.pivot(ty)) else {
            return None;
        };
        if best.is_none_or(|b| c > b.cosine) {
            best = Some(Candidate { ty, cosine: c });
        }
    }
    if best.is_none() {
        log::warn!("no usable pivots; mention joins no candidate set");
    }
    best.filter(|b| b.cosine >= thr)
}

/// Candidate members of each type, node ids ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSets {
    pub sets: Vec<Vec<usize>>,
}

impl CandidateSets {
    pub fn node_count(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// Pairs within each set, each pair once with `i < j`, sorted.
    pub fn clique_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for set in &self.sets {
            for (a, &i) in set.iter().enumerate() {
                for &j in &set[a + 1..] {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

/// Runs candidate selection over every row of `embeddings`.
///
/// With `max_clique`, each set keeps only its highest-cosine members (ties to
/// the lower node id).
pub fn candidate_sets(
    embeddings: &Matrix,
    pivots: &PivotSet,
    thr: f64,
    max_clique: Option<usize>,
) -> Result<CandidateSets, GraphError> {
    if !(thr > 0.0 && thr <= 1.0) {
        return Err(GraphError::BadThreshold(thr));
    }
    let picks = exec::map_range(embeddings.rows(), |i| {
        let e = embeddings.row(i);
        if e.iter().all(|&x| x == 0.0) {
            log::warn!("mention {i} has a zero embedding; skipped");
            return None;
        }
        select_candidate(e, pivots, thr)
    });
    let mut scored: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pivots.type_count()];
    for (node, pick) in picks.into_iter().enumerate() {
        if let Some(c) = pick {
            scored[c.ty].push((node, c.cosine));
        }
    }
    let sets = scored
        .into_iter()
        .map(|mut members| {
            if let Some(cap) = max_clique {
                if members.len() > cap {
                    members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    members.truncate(cap);
                }
            }
            let mut ids: Vec<usize> = members.into_iter().map(|(n, _)| n).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    Ok(CandidateSets { sets })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected graph over `n` nodes; edges are stored once with `i < j`,
/// sorted, without self loops.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementGraph {
    n: usize,
    mode: GraphMode,
    edges: Vec<Edge>,
}

impl RefinementGraph {
    /// Normalizes orientation, sorts, and rejects self loops or duplicates.
    pub fn from_edges(n: usize, mode: GraphMode, mut edges: Vec<Edge>) -> Result<Self, GraphError> {
        for e in edges.iter_mut() {
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            if e.i == e.j || e.j >= n {
                return Err(GraphError::Parse {
                    line: 0,
                    message: format!("invalid edge ({}, {}) for {n} nodes", e.i, e.j),
                });
            }
        }
        edges.sort_by_key(|e| (e.i, e.j));
        if edges
            .windows(2)
            .any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j))
        {
            return Err(GraphError::Parse {
                line: 0,
                message: "duplicate edge".into(),
            });
        }
        Ok(Self { n, mode, edges })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// One line per edge: `i j weight`.
    pub fn write_edges<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        for e in &self.edges {
            writeln!(w, "{} {} {:?}", e.i, e.j, e.weight)?;
        }
        Ok(())
    }

    pub fn read_edges<R: BufRead>(r: R, n: usize, mode: GraphMode) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| GraphError::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err("expected `i j weight`"));
            }
            edges.push(Edge {
                i: f[0].parse().map_err(|_| err("bad node index"))?,
                j: f[1].parse().map_err(|_| err("bad node index"))?,
                weight: f[2].parse().map_err(|_| err("bad weight"))?,
            });
        }
        Self::from_edges(n, mode, edges)
    }
}

/// Assembles the graph for `mode` from candidate sets. `seed` is required
/// for [`GraphMode::Rnd`]. All weights start at 1.
pub fn build_graph(
    n: usize,
    sets: &CandidateSets,
    mode: GraphMode,
    seed: Option<u64>,
) -> Result<RefinementGraph, GraphError> {
    let pairs = match mode {
        GraphMode::Eye => Vec::new(),
        GraphMode::Attn | GraphMode::Pivots => sets.clique_pairs(),
        GraphMode::Rnd => {
            let seed = seed.ok_or(GraphError::MissingSeed)?;
            random_pairs(n, sets.clique_pairs().len(), seed)
        }
    };
    let edges = pairs
        .into_iter()
        .map(|(i, j)| Edge { i, j, weight: 1.0 })
        .collect();
    Ok(RefinementGraph { n, mode, edges })
}

/// `count` distinct unordered pairs drawn uniformly from the `n·(n-1)/2`
/// possible ones, sorted.
fn random_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let count = count.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, total, count)
        .into_iter()
        .map(|k| pair_from_index(n, k))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Inverse of the row-major enumeration of the strict upper triangle.
fn pair_from_index(n: usize, k: usize) -> (usize, usize) {
    // Row i starts at offset(i) = i·(2n − i − 1)/2.
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if offset(mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + (k - offset(lo)))
}

/// Replaces every weight with the cosine between the endpoints' embeddings.
/// Edges touching a zero embedding are dropped.
pub fn attach_attention(
    graph: &RefinementGraph,
    embeddings: &Matrix,
) -> Result<RefinementGraph, GraphError> {
    if graph.mode != GraphMode::Attn {
        return Err(GraphError::WrongMode(graph.mode));
    }
    let weights = exec::map_range(graph.edges.len(), |k| {
        let e = graph.edges[k];
        cosine(embeddings.row(e.i), embeddings.row(e.j)).ok()
    });
    let mut edges = Vec::with_capacity(graph.edges.len());
    for (e, w) in graph.edges.iter().zip(weights) {
        match w {
            Some(weight) => edges.push(Edge { weight, ..*e }),
            None => log::warn!("edge ({}, {}) touches a zero embedding; dropped", e.i, e.j),
        }
    }
    Ok(RefinementGraph {
        n: graph.n,
        mode: graph.mode,
        edges,
    })
}

/// `D^{-1/2} (η⊙A + I) D^{-1/2}` with D the row sums of `η⊙A + I`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: CsrMatrix::identity(n),
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    /// Coordinate triples `i j value`, one per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        for (i, j, v) in self.matrix.triplets() {
            writeln!(w, "{i} {j} {v:?}")?;
        }
        Ok(())
    }
}

pub fn normalize(graph: &RefinementGraph) -> Result<NormalizedAdjacency, GraphError> {
    let n = graph.n;
    let mut degree = vec![1.0f64; n];
    for e in &graph.edges {
        if !e.weight.is_finite() {
            return Err(GraphError::NonFinite { i: e.i, j: e.j });
        }
        degree[e.i] += e.weight;
        degree[e.j] += e.weight;
    }
    if let Some((node, &d)) = degree.iter().enumerate().find(|(_, d)| **d <= 0.0) {
        return Err(GraphError::NonPositiveDegree { node, degree: d });
    }
    let mut triplets = Vec::with_capacity(n + 2 * graph.edges.len());
    for (i, &d) in degree.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for e in &graph.edges {
        // One value shared by both orientations keeps the matrix exactly symmetric.
        let v = e.weight / (degree[e.i] * degree[e.j]).sqrt();
        triplets.push((e.i, e.j, v));
        triplets.push((e.j, e.i, v));
    }
    Ok(NormalizedAdjacency {
        matrix: CsrMatrix::from_triplets(n, n, &triplets),
    })
}

/// Node and edge counts of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub candidates: usize,
    pub mode: GraphMode,
}

/// Distinct unordered node pairs, used by tests and tooling.
pub fn edge_set(graph: &RefinementGraph) -> BTreeSet<(usize, usize)> {
    graph.edges.iter().map(|e| (e.i, e.j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pivots(rows: &[Vec<f64>]) -> PivotSet {
        PivotSet::from_parts(Matrix::from_rows(rows), vec![1; rows.len()])
    }

    #[test]
    fn select_candidate_examples() {
        let p = pivots(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]]);
        assert_eq!(
            select_candidate(&[0.0, 1.0], &p, 1.0).map(|c| c.ty),
            Some(1)
        );
        let orth = pivots(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(select_candidate(&[0.0, 0.0, 1.0], &orth, 0.5), None);

        // Exhaustive oracle: cosines (0.6, 0.8, 0.98995) → the third pivot.
        let q = [0.6, 0.8];
        let cos: Vec<f64> = (0..3).map(|t| cosine(&q, p.pivot(t)).unwrap()).collect();
        assert!((cos[0] - 0.6).abs() < 1e-12 && (cos[1] - 0.8).abs() < 1e-12);
        assert!((cos[2] - 0.98995).abs() < 1e-5);
        let c = select_candidate(&q, &p, 0.9).unwrap();
        assert_eq!(c.ty, 2);
        assert_eq!(c.cosine, cos[2]);
    }

    #[test]
    fn argmax_ties_go_to_lower_type() {
        let p = pivots(&[vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(select_candidate(&[3.0, 0.0], &p, 0.5).unwrap().ty, 0);
    }

    #[test]
    fn unusable_pivots_are_skipped() {
        let p = PivotSet::from_parts(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            vec![0, 3],
        );
        assert_eq!(select_candidate(&[1.0, 0.1], &p, 0.05).unwrap().ty, 1);
        let none = PivotSet::from_parts(Matrix::from_rows(&[vec![1.0, 0.0]]), vec![0]);
        assert_eq!(select_candidate(&[1.0, 0.0], &none, 0.5), None);
    }

    #[test]
    fn clique_and_eye_edges() {
        let sets = CandidateSets {
            sets: vec![vec![0, 1, 2], vec![], vec![5]],
        };
        let g = build_graph(6, &sets, GraphMode::Pivots, None).unwrap();
        assert_eq!(
            edge_set(&g).into_iter().collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        assert!(g.edges().iter().all(|e| e.weight == 1.0));
        assert_eq!(
            build_graph(6, &sets, GraphMode::Eye, None)
                .unwrap()
                .edge_count(),
            0
        );
        assert!(matches!(
            build_graph(6, &sets, GraphMode::Rnd, None),
            Err(GraphError::MissingSeed)
        ));
    }

    #[test]
    fn two_sets_match_brute_force_double_loop() {
        let sets = CandidateSets {
            sets: vec![vec![0, 1], vec![2, 3]],
        };
        let g = build_graph(4, &sets, GraphMode::Attn, None).unwrap();
        let mut brute = BTreeSet::new();
        for set in &sets.sets {
            for &a in set {
                for &b in set {
                    if a < b {
                        brute.insert((a, b));
                    }
                }
            }
        }
        assert_eq!(edge_set(&g), brute);
        assert_eq!(brute.len(), 2);
    }

    #[test]
    fn max_clique_keeps_most_similar() {
        let p = pivots(&[vec![1.0, 0.0]]);
        let emb = Matrix::from_rows(&[
            vec![1.0, 0.5],
            vec![1.0, 0.0],
            vec![1.0, 0.2],
            vec![1.0, 0.0],
        ]);
        let s = candidate_sets(&emb, &p, 0.1, Some(3)).unwrap();
        assert_eq!(s.sets[0], vec![1, 2, 3]);
        let s = candidate_sets(&emb, &p, 0.1, Some(2)).unwrap();
        assert_eq!(s.sets[0], vec![1, 3]);
        assert!(matches!(
            candidate_sets(&emb, &p, 0.0, None),
            Err(GraphError::BadThreshold(_))
        ));
    }

    #[test]
    fn attention_weights_are_endpoint_cosines() {
        let emb = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![0.0, 0.0],
        ]);
        let base = RefinementGraph::from_edges(
            4,
            GraphMode::Attn,
            vec![
                Edge {
                    i: 0,
                    j: 1,
                    weight: 1.0,
                },
                Edge {
                    i: 1,
                    j: 2,
                    weight: 1.0,
                },
                Edge {
                    i: 2,
                    j: 3,
                    weight: 1.0,
                },
            ],
        )
        .unwrap();
        let g = attach_attention(&base, &emb).unwrap();
        assert_eq!(g.edge_count(), 2, "edge to the zero embedding is dropped");
        assert_eq!(g.edges()[0].weight, 1.0);
        assert_eq!(g.edges()[1].weight, 0.0);
        let pivots_graph = RefinementGraph::from_edges(2, GraphMode::Pivots, vec![]).unwrap();
        assert!(matches!(
            attach_attention(&pivots_graph, &emb),
            Err(GraphError::WrongMode(_))
        ));
    }

    #[test]
    fn normalization_examples() {
        let iso = RefinementGraph::from_edges(1, GraphMode::Eye, vec![]).unwrap();
        assert_eq!(
            normalize(&iso).unwrap().matrix().to_dense(),
            Matrix::identity(1)
        );

        let one = |weight| {
            RefinementGraph::from_edges(2, GraphMode::Attn, vec![Edge { i: 0, j: 1, weight }])
                .unwrap()
        };
        let a = normalize(&one(1.0)).unwrap().matrix().to_dense();
        assert_eq!(a, Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]));

        // η = 0.5: M = [[1, .5], [.5, 1]], D = diag(1.5, 1.5) → [[2/3, 1/3], [1/3, 2/3]].
        let a = normalize(&one(0.5)).unwrap().matrix().to_dense();
        let expect = Matrix::from_rows(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]]);
        assert!(a.max_abs_diff(&expect) < 1e-15);

        assert!(matches!(
            normalize(&one(-1.5)),
            Err(GraphError::NonPositiveDegree { node: 0, .. })
        ));
        assert!(matches!(
            normalize(&one(f64::NAN)),
            Err(GraphError::NonFinite { .. })
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = RefinementGraph::from_edges(
            5,
            GraphMode::Attn,
            vec![
                Edge {
                    i: 3,
                    j: 1,
                    weight: 0.123456789012345,
                },
                Edge {
                    i: 0,
                    j: 4,
                    weight: 1.0 / 3.0,
                },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_edges(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap().lines().next(),
            Some("0 4 0.3333333333333333")
        );
        assert_eq!(
            RefinementGraph::read_edges(buf.as_slice(), 5, GraphMode::Attn).unwrap(),
            g
        );
        assert!(RefinementGraph::read_edges(&b"0 0 1.0\n"[..], 5, GraphMode::Attn).is_err());
        assert!(RefinementGraph::read_edges(&b"0 1\n"[..], 5, GraphMode::Attn).is_err());
    }

    #[test]
    fn pair_index_enumeration_is_a_bijection() {
        for n in 2..9 {
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(pair_from_index(n, k), (i, j), "n={n} k={k}");
                    k += 1;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rnd_matches_attn_edge_count(
            sizes in proptest::collection::vec(0usize..7, 1..5),
            seed in any::<u64>(),
        ) {
            let mut next = 0;
            let sets: Vec<Vec<usize>> = sizes.iter().map(|&s| {
                let v: Vec<usize> = (next..next + s).collect();
                next += s;
                v
            }).collect();
            let n = next.max(2);
            let sets = CandidateSets { sets };
            let attn = build_graph(n, &sets, GraphMode::Attn, None).unwrap();
            let rnd = build_graph(n, &sets, GraphMode::Rnd, Some(seed)).unwrap();
            prop_assert_eq!(rnd.edge_count(), attn.edge_count().min(n * (n - 1) / 2));
            prop_assert!(rnd.edges().iter().all(|e| e.i < e.j && e.j < n));
            prop_assert_eq!(edge_set(&rnd).len(), rnd.edge_count());
            prop_assert_eq!(build_graph(n, &sets, GraphMode::Rnd, Some(seed)).unwrap(), rnd);
        }

        #[test]
        fn raising_threshold_shrinks_candidate_sets(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..40),
            t1 in 0.05f64..1.0,
            t2 in 0.05f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let p = pivots(&[vec![1.0, 0.2, 0.0], vec![0.0, 1.0, 0.3], vec![-0.5, 0.0, 1.0]]);
            let emb = Matrix::from_rows(&rows);
            let a = candidate_sets(&emb, &p, lo, None).unwrap();
            let b = candidate_sets(&emb, &p, hi, None).unwrap();
            for (sa, sb) in a.sets.iter().zip(&b.sets) {
                prop_assert!(sb.iter().all(|x| sa.contains(x)));
            }
        }

        #[test]
        fn eye_normalizes_to_identity(n in 1usize..30) {
            let g = build_graph(n, &CandidateSets { sets: vec![(0..n).collect()] }, GraphMode::Eye, None).unwrap();
            prop_assert_eq!(normalize(&g).unwrap().matrix().to_dense(), Matrix::identity(n));
        }
    }
}
