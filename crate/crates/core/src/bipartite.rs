//! The auxiliary task-feature bipartite graph.
//!
//! Nodes `0..d` are features and nodes `d..d+T` are tasks. The affinity
//! between feature `i` and task `j` is `|W_ij|`; feature-feature and
//! task-task blocks are empty.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Result, TfclError};
use crate::linalg;

/// Relative cutoff below which an entry of `W` counts as outside the support.
pub const DEFAULT_SUPPORT_REL_THRESHOLD: f64 = 1e-8;

/// `d x T` weight matrix, one column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMatrix(Array2<f64>);

impl TaskMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (d, t) = entries.dim();
        if d == 0 || t == 0 {
            return Err(TfclError::InvalidInput(format!(
                "task matrix must be non-empty, got {d}x{t}"
            )));
        }
        if !linalg::all_finite(entries.view()) {
            return Err(TfclError::InvalidInput(
                "task matrix has non-finite entries".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn zeros(d: usize, t: usize) -> Self {
        Self(Array2::zeros((d.max(1), t.max(1))))
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn t(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Default support cutoff `1e-8 * max|W|`.
    pub fn support_threshold(&self) -> f64 {
        default_threshold(self.view())
    }
}

pub fn default_threshold(w: ArrayView2<f64>) -> f64 {
    DEFAULT_SUPPORT_REL_THRESHOLD * linalg::max_abs(w)
}

/// Laplacian `diag(A 1) - A` of the bipartite graph with affinity `|W|`.
#[derive(Debug, Clone)]
pub struct BipartiteLaplacian {
    matrix: Array2<f64>,
    d: usize,
    t: usize,
}

impl BipartiteLaplacian {
    /// Builds the Laplacian directly from a `d x T` weight view.
    pub fn from_weights(w: ArrayView2<f64>) -> Result<Self> {
        if !linalg::all_finite(w) {
            return Err(TfclError::InvalidInput(
                "weights have non-finite entries".into(),
            ));
        }
        let (d, t) = w.dim();
        let n = d + t;
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..d {
            for j in 0..t {
                let a = w[[i, j]].abs();
                if a == 0.0 {
                    continue;
                }
                l[[i, d + j]] = -a;
                l[[d + j, i]] = -a;
                l[[i, i]] += a;
                l[[d + j, d + j]] += a;
            }
        }
        Ok(Self { matrix: l, d, t })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.d + self.t
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0)
    }
}

pub fn build_laplacian(w: &TaskMatrix) -> Result<BipartiteLaplacian> {
    BipartiteLaplacian::from_weights(w.view())
}

/// `D_ij = U_ii + U_{d+j,d+j} - 2 U_{i,d+j}`, clamped at zero.
///
/// Uses the entries of `U` rather than embedding rows so that fractional
/// eigenvalue weights in `U` are honoured.
pub fn distance_matrix(u: ArrayView2<f64>, d: usize, t: usize) -> Result<Array2<f64>> {
    let (r, c) = u.dim();
    if r != c || r != d + t {
        return Err(TfclError::DimensionMismatch(format!(
            "U is {r}x{c}, expected {n}x{n}",
            n = d + t
        )));
    }
    Ok(Array2::from_shape_fn((d, t), |(i, j)| {
        let v = u[[i, i]] + u[[d + j, d + j]] - u[[i, d + j]] - u[[d + j, i]];
        v.max(0.0)
    }))
}

/// Node partition into connected components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    /// Component id per node, ids numbered `0..count` by first appearance.
    pub labels: Vec<usize>,
    pub count: usize,
}

impl Grouping {
    pub fn feature_labels(&self, d: usize) -> &[usize] {
        &self.labels[..d]
    }

    pub fn task_labels(&self, d: usize) -> &[usize] {
        &self.labels[d..]
    }

    /// Component sizes indexed by component id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Components of the graph with edges `{(i, d+j) : |W_ij| > threshold}`.
pub fn connected_components(w: ArrayView2<f64>, threshold: f64) -> Result<Grouping> {
    if !(threshold >= 0.0) {
        return Err(TfclError::InvalidInput(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    let (d, t) = w.dim();
    let mut sets = DisjointSet::new(d + t);
    for i in 0..d {
        for j in 0..t {
            if w[[i, j]].abs() > threshold {
                sets.union(i, d + j);
            }
        }
    }
    let mut ids = vec![usize::MAX; d + t];
    let mut labels = Vec::with_capacity(d + t);
    let mut count = 0;
    for node in 0..d + t {
        let root = sets.find(node);
        if ids[root] == usize::MAX {
            ids[root] = count;
            count += 1;
        }
        labels.push(ids[root]);
    }
    Ok(Grouping { labels, count })
}

/// Rows of the embedding matrix `V` (one `k`-vector per node).
pub fn embeddings(v: ArrayView2<f64>) -> Vec<Array1<f64>> {
    v.rows().into_iter().map(|r| r.to_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_give_zero_laplacian() {
        let l = BipartiteLaplacian::from_weights(Array2::zeros((3, 2)).view()).unwrap();
        assert!(l.is_zero());
        assert_eq!(l.n(), 5);
    }

    #[test]
    fn single_edge() {
        let l = BipartiteLaplacian::from_weights(array![[1.0]].view()).unwrap();
        assert_eq!(l.matrix(), array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn negative_weights_use_magnitude() {
        let l = BipartiteLaplacian::from_weights(array![[-2.0]].view()).unwrap();
        assert_eq!(l.matrix(), array![[2.0, -2.0], [-2.0, 2.0]]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(TaskMatrix::new(array![[f64::NAN]]).is_err());
        assert!(BipartiteLaplacian::from_weights(array![[f64::INFINITY]].view()).is_err());
    }

    #[test]
    fn distance_identity_and_constant() {
        let (d, t) = (2, 3);
        let eye = Array2::<f64>::eye(d + t);
        let dist = distance_matrix(eye.view(), d, t).unwrap();
        assert!(dist.iter().all(|v| (v - 2.0).abs() < 1e-15));

        let flat = Array2::<f64>::from_elem((d + t, d + t), 1.0 / (d + t) as f64);
        let dist = distance_matrix(flat.view(), d, t).unwrap();
        assert!(dist.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn distance_dimension_mismatch() {
        let eye = Array2::<f64>::eye(4);
        assert!(matches!(
            distance_matrix(eye.view(), 2, 3),
            Err(TfclError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn components_of_empty_graph_are_singletons() {
        let g = connected_components(Array2::zeros((3, 4)).view(), 0.0).unwrap();
        assert_eq!(g.count, 7);
    }

    #[test]
    fn components_follow_blocks() {
        let mut w = Array2::<f64>::zeros((6, 5));
        // features {0,1} x tasks {0,1}; {2,3} x {2}; {4,5} x {3,4}
        for &(i, j) in &[
            (0, 0),
            (1, 1),
            (0, 1),
            (2, 2),
            (3, 2),
            (4, 3),
            (5, 4),
            (4, 4),
        ] {
            w[[i, j]] = 1.0;
        }
        let g = connected_components(w.view(), 0.0).unwrap();
        assert_eq!(g.count, 3);
        assert_eq!(g.labels[0], g.labels[6 + 1]);
        assert_eq!(g.labels[2], g.labels[6 + 2]);
        assert_ne!(g.labels[0], g.labels[2]);

        w[[0, 3]] = 1e-9;
        let g = connected_components(w.view(), 1e-6).unwrap();
        assert_eq!(g.count, 3);
        let g = connected_components(w.view(), 0.0).unwrap();
        assert_eq!(g.count, 2);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(connected_components(Array2::zeros((1, 1)).view(), -1.0).is_err());
    }

    #[test]
    fn embeddings_are_rows() {
        let v = array![[1.0], [0.0], [0.0]];
        let f = embeddings(v.view());
        assert_eq!(f.len(), 3);
        assert_eq!(f[0], array![1.0]);
        assert_eq!(f[2], array![0.0]);
    }
}
