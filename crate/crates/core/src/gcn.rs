//! Two-layer graph convolution over the normalized adjacency.
//!
//! `Φ = Â · ReLU(Â X W0) · W1`, no biases and no nonlinearity on the output.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::graph::NormalizedAdjacency;
use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cache was produced by different parameters or inputs")]
    StaleCache,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Layer weights: `hidden_weights` is f × h, `output_weights` is h × k.
#[derive(Clone, Debug)]
pub struct GcnParameters {
    hidden_weights: Matrix,
    output_weights: Matrix,
    // Changes on every mutable access so caches from earlier weights are rejected.
    version: u64,
}

impl PartialEq for GcnParameters {
    fn eq(&self, other: &Self) -> bool {
        self.hidden_weights == other.hidden_weights && self.output_weights == other.output_weights
    }
}

impl GcnParameters {
    pub fn new(hidden_weights: Matrix, output_weights: Matrix) -> Result<Self, GcnError> {
        if hidden_weights.cols() != output_weights.rows() {
            return Err(GcnError::Shape(format!(
                "hidden widths differ: hidden_weights is {:?}, output_weights is {:?}",
                hidden_weights.shape(),
                output_weights.shape()
            )));
        }
        if !hidden_weights.is_finite() || !output_weights.is_finite() {
            return Err(GcnError::Shape("non-finite weight".into()));
        }
        Ok(Self {
            hidden_weights,
            output_weights,
            version: fresh_version(),
        })
    }

    /// Glorot-uniform weights.
    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
        };
        let hidden_weights = glorot(input, hidden);
        let output_weights = glorot(hidden, output);
        Self {
            hidden_weights,
            output_weights,
            version: fresh_version(),
        }
    }

    pub fn hidden_weights(&self) -> &Matrix {
        &self.hidden_weights
    }

    pub fn output_weights(&self) -> &Matrix {
        &self.output_weights
    }

    /// `(f, h, k)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.hidden_weights.rows(),
            self.hidden_weights.cols(),
            self.output_weights.cols(),
        )
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        self.version = fresh_version();
        [
            self.hidden_weights.as_mut_slice(),
            self.output_weights.as_mut_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.hidden_weights.is_finite() && self.output_weights.is_finite()
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct GcnCache {
    version: u64,
    nodes: usize,
    /// `Â X`.
    propagated_input: Matrix,
    /// Pre-activation `Â X W0`.
    hidden_pre: Matrix,
    /// `Â · ReLU(hidden_pre)`.
    propagated_hidden: Matrix,
}

impl GcnCache {
    pub fn pre_activation(&self) -> &Matrix {
        &self.hidden_pre
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnGradients {
    pub d_hidden_weights: Matrix,
    pub d_output_weights: Matrix,
    /// Absent when the caller did not ask for it.
    pub dx: Option<Matrix>,
}

pub fn forward(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    params: &GcnParameters,
) -> Result<(Matrix, GcnCache), GcnError> {
    let n = adj.size();
    if x.rows() != n {
        return Err(GcnError::Shape(format!(
            "adjacency has {n} nodes but X has {} rows",
            x.rows()
        )));
    }
    if x.cols() != params.hidden_weights.rows() {
        return Err(GcnError::Shape(format!(
            "input has width {} but the hidden weights expect {}",
            x.cols(),
            params.hidden_weights.rows()
        )));
    }
    let a = adj.matrix();
    let propagated_input = a.matmul_dense(x);
    let hidden_pre = propagated_input.matmul(&params.hidden_weights);
    let relu = hidden_pre.map(|v| if v > 0.0 { v } else { 0.0 });
    let propagated_hidden = a.matmul_dense(&relu);
    let refined = propagated_hidden.matmul(&params.output_weights);
    Ok((
        refined,
        GcnCache {
            version: params.version,
            nodes: n,
            propagated_input,
            hidden_pre,
            propagated_hidden,
        },
    ))
}

/// Gradients of a scalar loss given `d_refined = ∂L/∂Φ`. Uses `Â = Âᵀ`; the ReLU
/// derivative at exactly 0 is taken as 0.
pub fn backward(
    adj: &NormalizedAdjacency,
    params: &GcnParameters,
    cache: &GcnCache,
    d_refined: &Matrix,
    need_dx: bool,
) -> Result<GcnGradients, GcnError> {
    if cache.version != params.version || cache.nodes != adj.size() {
        return Err(GcnError::StaleCache);
    }
    let (_, h, k) = params.dims();
    if d_refined.shape() != (cache.nodes, k) {
        return Err(GcnError::Shape(format!(
            "upstream gradient is {:?}, expected {:?}",
            d_refined.shape(),
            (cache.nodes, k)
        )));
    }
    let a = adj.matrix();
    let d_output_weights = cache.propagated_hidden.t_matmul(d_refined);
    let mut dh = a.matmul_dense(&d_refined.matmul_t(&params.output_weights));
    for (d, &pre) in dh
        .as_mut_slice()
        .iter_mut()
        .zip(cache.hidden_pre.as_slice())
    {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    debug_assert_eq!(dh.cols(), h);
    let d_hidden_weights = cache.propagated_input.t_matmul(&dh);
    let dx = need_dx.then(|| a.matmul_dense(&dh.matmul_t(&params.hidden_weights)));
    Ok(GcnGradients {
        d_hidden_weights,
        d_output_weights,
        dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, Edge, GraphMode, RefinementGraph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn path_graph(n: usize, weights: &[f64]) -> NormalizedAdjacency {
        let edges = (0..n - 1)
            .map(|i| Edge {
                i,
                j: i + 1,
                weight: weights[i],
            })
            .collect();
        normalize(&RefinementGraph::from_edges(n, GraphMode::Attn, edges).unwrap()).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> NormalizedAdjacency {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.4) {
                    edges.push(Edge {
                        i,
                        j,
                        weight: rng.random_range(0.1..1.0),
                    });
                }
            }
        }
        normalize(&RefinementGraph::from_edges(n, GraphMode::Attn, edges).unwrap()).unwrap()
    }

    fn dense_forward(a: &Matrix, x: &Matrix, p: &GcnParameters) -> Matrix {
        let naive = |l: &Matrix, r: &Matrix| {
            Matrix::from_fn(l.rows(), r.cols(), |i, j| {
                (0..l.cols()).map(|t| l.get(i, t) * r.get(t, j)).sum()
            })
        };
        let h = naive(&naive(a, x), p.hidden_weights()).map(|v| v.max(0.0));
        naive(&naive(a, &h), p.output_weights())
    }

    #[test]
    fn identity_pipeline_returns_input() {
        let x = Matrix::from_rows(&[vec![0.5, 1.0, 0.0], vec![2.0, 0.25, 3.0]]);
        let p = GcnParameters::new(Matrix::identity(3), Matrix::identity(3)).unwrap();
        let (refined, _) = forward(&NormalizedAdjacency::identity(2), &x, &p).unwrap();
        assert_eq!(refined, x);
    }

    #[test]
    fn identity_pipeline_clips_negatives() {
        let x = Matrix::from_rows(&[vec![-0.5, 1.0], vec![2.0, -3.0]]);
        let p = GcnParameters::new(Matrix::identity(2), Matrix::identity(2)).unwrap();
        let (refined, _) = forward(&NormalizedAdjacency::identity(2), &x, &p).unwrap();
        assert_eq!(refined, x.map(|v| v.max(0.0)));
    }

    #[test]
    fn path_graph_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let adj = path_graph(3, &[0.7, 0.4]);
        let x = random_matrix(&mut rng, 3, 4);
        let p = GcnParameters::new(random_matrix(&mut rng, 4, 5), random_matrix(&mut rng, 5, 2))
            .unwrap();
        let (refined, _) = forward(&adj, &x, &p).unwrap();
        let expect = dense_forward(&adj.matrix().to_dense(), &x, &p);
        for (a, b) in refined.as_slice().iter().zip(expect.as_slice()) {
            assert!(
                (a - b).abs() <= 1e-10 * b.abs().max(1e-300) || (a - b).abs() < 1e-14,
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn shape_errors() {
        let p = GcnParameters::init(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let adj = NormalizedAdjacency::identity(2);
        assert!(matches!(
            forward(&adj, &Matrix::zeros(3, 3), &p),
            Err(GcnError::Shape(_))
        ));
        assert!(matches!(
            forward(&adj, &Matrix::zeros(2, 4), &p),
            Err(GcnError::Shape(_))
        ));
        assert!(GcnParameters::new(Matrix::zeros(3, 4), Matrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let adj = random_graph(&mut rng, 5);
        let x = random_matrix(&mut rng, 5, 4);
        let p = GcnParameters::init(4, 3, 2, &mut rng);
        let (_, cache) = forward(&adj, &x, &p).unwrap();
        let g = backward(&adj, &p, &cache, &Matrix::zeros(5, 2), true).unwrap();
        assert!(g.d_hidden_weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.d_output_weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.dx.unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_regime_dw1_is_xw0_transposed_times_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_fn(4, 3, |_, _| rng.random_range(0.1..1.0));
        let hidden_weights = Matrix::from_fn(3, 3, |_, _| rng.random_range(0.1..1.0));
        let output_weights = random_matrix(&mut rng, 3, 2);
        let p = GcnParameters::new(hidden_weights.clone(), output_weights).unwrap();
        let adj = NormalizedAdjacency::identity(4);
        let (_, cache) = forward(&adj, &x, &p).unwrap();
        assert!(cache.pre_activation().as_slice().iter().all(|&v| v > 0.0));
        let d_refined = random_matrix(&mut rng, 4, 2);
        let g = backward(&adj, &p, &cache, &d_refined, false).unwrap();
        assert_eq!(
            g.d_output_weights,
            x.matmul(&hidden_weights).t_matmul(&d_refined)
        );
        assert!(g.dx.is_none());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let adj = NormalizedAdjacency::identity(3);
        let x = random_matrix(&mut rng, 3, 2);
        let mut p = GcnParameters::init(2, 2, 2, &mut rng);
        let (_, cache) = forward(&adj, &x, &p).unwrap();
        p.slices_mut()[0][0] += 0.1;
        let r = backward(&adj, &p, &cache, &Matrix::zeros(3, 2), true);
        assert!(matches!(r, Err(GcnError::StaleCache)));
        let r = backward(
            &NormalizedAdjacency::identity(4),
            &p,
            &cache,
            &Matrix::zeros(3, 2),
            true,
        );
        assert!(matches!(r, Err(GcnError::StaleCache)));
    }

    /// Loss `Σ d_refined ⊙ Φ`, whose gradient with respect to Φ is `d_refined`.
    fn probe(adj: &NormalizedAdjacency, x: &Matrix, p: &GcnParameters, d_refined: &Matrix) -> f64 {
        let (refined, _) = forward(adj, x, p).unwrap();
        refined
            .as_slice()
            .iter()
            .zip(d_refined.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, f, h, k) = (5, 4, 3, 2);
        let adj = random_graph(&mut rng, n);
        let x = random_matrix(&mut rng, n, f);
        let p = GcnParameters::init(f, h, k, &mut rng);
        let d_refined = random_matrix(&mut rng, n, k);
        let (_, cache) = forward(&adj, &x, &p).unwrap();
        // Keep clear of the ReLU kink so central differences are valid.
        assert!(cache
            .pre_activation()
            .as_slice()
            .iter()
            .all(|v| v.abs() > 1e-3));
        let g = backward(&adj, &p, &cache, &d_refined, true).unwrap();

        for idx in 0..f * h {
            let mut plus = p.clone();
            plus.slices_mut()[0][idx] += eps;
            let mut minus = p.clone();
            minus.slices_mut()[0][idx] -= eps;
            let num = (probe(&adj, &x, &plus, &d_refined) - probe(&adj, &x, &minus, &d_refined))
                / (2.0 * eps);
            assert!(rel_err(g.d_hidden_weights.as_slice()[idx], num) < 1e-5);
        }
        for idx in 0..h * k {
            let mut plus = p.clone();
            plus.slices_mut()[1][idx] += eps;
            let mut minus = p.clone();
            minus.slices_mut()[1][idx] -= eps;
            let num = (probe(&adj, &x, &plus, &d_refined) - probe(&adj, &x, &minus, &d_refined))
                / (2.0 * eps);
            assert!(rel_err(g.d_output_weights.as_slice()[idx], num) < 1e-5);
        }
        let dx = g.dx.unwrap();
        for idx in 0..n * f {
            let mut plus = x.clone();
            plus.as_mut_slice()[idx] += eps;
            let mut minus = x.clone();
            minus.as_mut_slice()[idx] -= eps;
            let num = (probe(&adj, &plus, &p, &d_refined) - probe(&adj, &minus, &p, &d_refined))
                / (2.0 * eps);
            assert!(rel_err(dx.as_slice()[idx], num) < 1e-5);
        }
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        // One hidden unit sits exactly at 0: its gradient path is cut.
        let x = Matrix::from_rows(&[vec![1.0, -1.0]]);
        let hidden_weights = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 0.5]]);
        let p = GcnParameters::new(hidden_weights, Matrix::identity(2)).unwrap();
        let adj = NormalizedAdjacency::identity(1);
        let (_, cache) = forward(&adj, &x, &p).unwrap();
        assert_eq!(cache.pre_activation().row(0), &[0.0, 1.5]);
        let g = backward(
            &adj,
            &p,
            &cache,
            &Matrix::from_rows(&[vec![1.0, 1.0]]),
            true,
        )
        .unwrap();
        assert_eq!(g.d_hidden_weights.as_slice(), &[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(g.d_output_weights.as_slice(), &[0.0, 0.0, 1.5, 1.5]);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    edges.push((i, j, rng.random_range(0.1..1.0)));
                }
            }
        }
        let perm = [3usize, 0, 5, 1, 4, 2];
        let build = |map: &dyn Fn(usize) -> usize| {
            let es = edges
                .iter()
                .map(|&(i, j, weight)| Edge {
                    i: map(i),
                    j: map(j),
                    weight,
                })
                .collect();
            normalize(&RefinementGraph::from_edges(n, GraphMode::Attn, es).unwrap()).unwrap()
        };
        let adj = build(&|i| i);
        let padj = build(&|i| perm[i]);
        let x = random_matrix(&mut rng, n, 3);
        let mut px = Matrix::zeros(n, 3);
        for (i, &to) in perm.iter().enumerate() {
            px.row_mut(to).copy_from_slice(x.row(i));
        }
        let p = GcnParameters::init(3, 4, 2, &mut rng);
        let (refined, _) = forward(&adj, &x, &p).unwrap();
        let (permuted_out, _) = forward(&padj, &px, &p).unwrap();
        for (i, &to) in perm.iter().enumerate() {
            for (a, b) in refined.row(i).iter().zip(permuted_out.row(to)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_adjacency_keeps_rows_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let adj = NormalizedAdjacency::identity(5);
        let x = random_matrix(&mut rng, 5, 3);
        let p = GcnParameters::init(3, 4, 2, &mut rng);
        let (refined, _) = forward(&adj, &x, &p).unwrap();
        let mut y = x.clone();
        for j in 0..3 {
            y.set(3, j, 10.0 * rng.random_range(-1.0..1.0));
        }
        let (psi, _) = forward(&adj, &y, &p).unwrap();
        for i in [0, 1, 2, 4] {
            assert_eq!(refined.row(i), psi.row(i));
        }
    }
}
