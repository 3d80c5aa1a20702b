//! Pairwise distances and k-nearest-neighbour graphs in feature space.
//!
//! The graph is rebuilt from whatever features a layer produces, so the
//! same code serves the input-space graph and every per-layer recomputed
//! graph. Selection is brute force with a total `(distance, index)` order,
//! which makes every row fully deterministic.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::parallel::use_parallel;
use crate::tensor::kernels::{dot, matmul, transpose};
use crate::tensor::{Real, Tensor};

static FLIP_TIE_RULE: AtomicBool = AtomicBool::new(false);

/// Fault-injection hook: when set, equal distances are broken towards the
/// *higher* index. Only the verification suite's mutation check uses it.
pub fn inject_tie_rule_fault(on: bool) {
    FLIP_TIE_RULE.store(on, AtomicOrdering::SeqCst);
}

/// `n × f` matrix of per-point features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    f: usize,
    values: Vec<Real>,
}

impl FeatureMatrix {
    pub fn new(n: usize, f: usize, values: Vec<Real>) -> Result<Self> {
        if n == 0 || f == 0 {
            return Err(Error::dim(format!("feature matrix must be non-empty, got {n}x{f}")));
        }
        if values.len() != n * f {
            return Err(Error::dim(format!(
                "{} values do not form a {n}x{f} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature matrix holds non-finite values".into()));
        }
        Ok(Self { n, f, values })
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let f = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != f) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), f, rows.iter().flatten().copied().collect())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, f) = t.dims2()?;
        Self::new(n, f, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.f], self.values.clone()).expect("shape is consistent")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.values[i * self.f..(i + 1) * self.f]
    }

    /// Rows reordered so that output row `i` is input row `order[i]`.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(order.len() * self.f);
        for &i in order {
            if i >= self.n {
                return Err(Error::Index(format!("row {i} out of range for {} rows", self.n)));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(order.len(), self.f, values)
    }

    /// Adds `offset` to every row.
    pub fn translated(&self, offset: &[Real]) -> Result<Self> {
        if offset.len() != self.f {
            return Err(Error::dim("translation width differs from feature width"));
        }
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.f) {
            row.iter_mut().zip(offset).for_each(|(v, t)| *v += t);
        }
        Self::new(self.n, self.f, values)
    }
}

/// Directed k-NN graph: row `i` lists the `k` neighbours of point `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    neighbors: Vec<usize>,
    self_loop: bool,
}

impl NeighborGraph {
    /// Builds a graph from an explicit `n × k` table, checking index ranges.
    pub fn from_table(n: usize, k: usize, neighbors: Vec<usize>, self_loop: bool) -> Result<Self> {
        if k == 0 || neighbors.len() != n * k {
            return Err(Error::dim(format!("neighbour table must be {n}x{k} with k >= 1")));
        }
        if let Some(&bad) = neighbors.iter().find(|&&j| j >= n) {
            return Err(Error::Index(format!("neighbour {bad} out of range for {n} points")));
        }
        if self_loop && (0..n).any(|i| neighbors[i * k] != i) {
            return Err(Error::Contract("self-loop graph must list each point first".into()));
        }
        Ok(Self { n, k, neighbors, self_loop })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn self_loop(&self) -> bool {
        self.self_loop
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// Image of this graph under the point relabelling `old -> perm_inv[old]`,
    /// where `order[new] = old` is the permutation applied to the features.
    pub fn relabeled(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n {
            return Err(Error::dim("permutation length differs from point count"));
        }
        let mut inverse = vec![usize::MAX; self.n];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let mut neighbors = Vec::with_capacity(self.neighbors.len());
        for &old in order {
            neighbors.extend(self.row(old).iter().map(|&j| inverse[j]));
        }
        Self::from_table(self.n, self.k, neighbors, self.self_loop)
    }

    /// Edge list as CSV rows `i,j,rank,distance2` with a header line.
    pub fn to_csv(&self, x: &FeatureMatrix) -> Result<String> {
        if x.n() != self.n {
            return Err(Error::dim("features and graph cover different point counts"));
        }
        let mut out = String::from("i,j,rank,distance2\n");
        for i in 0..self.n {
            for (rank, &j) in self.row(i).iter().enumerate() {
                let d: Real = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                writeln!(out, "{i},{j},{rank},{d}").expect("writing to a String");
            }
        }
        Ok(out)
    }
}

fn sq_norms(values: &[Real], f: usize) -> Vec<Real> {
    values.chunks(f).map(|r| dot(r, r)).collect()
}

/// Rows `rows` of the squared-distance matrix, from the Gram products
/// `x_i·x_j` (an exactly symmetric computation) and the squared norms.
fn distance_block(values: &[Real], xt: &[Real], norms: &[Real], f: usize, rows: std::ops::Range<usize>) -> Vec<Real> {
    let n = norms.len();
    let mut out = matmul(&values[rows.start * f..rows.end * f], xt, rows.len(), f, n);
    for (r, i) in rows.enumerate() {
        for (j, o) in out[r * n..(r + 1) * n].iter_mut().enumerate() {
            *o = if i == j { 0.0 } else { (norms[i] + norms[j] - 2.0 * *o).max(0.0) };
        }
    }
    out
}

/// Rows per distance block, bounding scratch memory for large clouds.
const BLOCK_ROWS: usize = 256;

/// `D[i][j] = |x_i - x_j|²` via `|a|² + |b|² - 2a·b`, with negative round-off
/// clamped to zero and an exactly zero diagonal.
pub fn pairwise_sq_distances(x: &FeatureMatrix) -> Tensor {
    let n = x.n;
    let norms = sq_norms(&x.values, x.f);
    let xt = transpose(&x.values, n, x.f);
    let mut out = Vec::with_capacity(n * n);
    for start in (0..n).step_by(BLOCK_ROWS) {
        out.extend(distance_block(&x.values, &xt, &norms, x.f, start..(start + BLOCK_ROWS).min(n)));
    }
    Tensor::new(vec![n, n], out).expect("square matrix")
}

fn check_k(n: usize, k: usize, self_loop: bool) -> Result<()> {
    let max = if self_loop { n } else { n.saturating_sub(1) };
    if k == 0 || k > max {
        return Err(Error::param(format!(
            "k = {k} is out of range for {n} points (self_loop = {self_loop}, valid 1..={max})"
        )));
    }
    Ok(())
}

fn compare(a: &(Real, usize), b: &(Real, usize)) -> Ordering {
    let by_index = if FLIP_TIE_RULE.load(AtomicOrdering::Relaxed) {
        b.1.cmp(&a.1)
    } else {
        a.1.cmp(&b.1)
    };
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(by_index)
}

fn select_row(i: usize, dist: &[Real], k: usize, self_loop: bool, out: &mut [usize]) {
    let take = if self_loop { k - 1 } else { k };
    // Sorted buffer of the best `take` candidates seen so far.
    let mut best: Vec<(Real, usize)> = Vec::with_capacity(take + 1);
    if take > 0 {
        // Anything farther than the current worst kept entry loses outright.
        let mut worst = Real::INFINITY;
        for (j, &d) in dist.iter().enumerate() {
            if d > worst || j == i {
                continue;
            }
            let c = (d, j);
            if best.len() == take && compare(&c, &best[take - 1]) != Ordering::Less {
                continue;
            }
            let pos = best.partition_point(|b| compare(b, &c) == Ordering::Less);
            best.insert(pos, c);
            best.truncate(take);
            if best.len() == take {
                worst = best[take - 1].0;
            }
        }
    }
    let mut slots = out.iter_mut();
    if self_loop {
        *slots.next().expect("k >= 1") = i;
    }
    for (slot, &(_, j)) in slots.zip(&best) {
        *slot = j;
    }
}

/// Raw-slice entry point used by the networks, where features come straight
/// off the tape.
pub(crate) fn knn_rows(values: &[Real], n: usize, f: usize, k: usize, self_loop: bool) -> Result<NeighborGraph> {
    check_k(n, k, self_loop)?;
    let norms = sq_norms(values, f);
    let xt = transpose(values, n, f);
    let mut neighbors = vec![0usize; n * k];
    for start in (0..n).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(n);
        let dist = distance_block(values, &xt, &norms, f, start..end);
        let fill = |(r, row): (usize, &mut [usize])| {
            select_row(start + r, &dist[r * n..(r + 1) * n], k, self_loop, row);
        };
        let rows = &mut neighbors[start * k..end * k];
        if use_parallel(rows.len() * n) {
            rows.par_chunks_mut(k).enumerate().for_each(fill);
        } else {
            rows.chunks_mut(k).enumerate().for_each(fill);
        }
    }
    Ok(NeighborGraph { n, k, neighbors, self_loop })
}

/// k-NN graph of the rows of `x`.
///
/// With `self_loop`, row `i` starts with `i` itself followed by the `k - 1`
/// nearest other points; otherwise it holds the `k` nearest other points.
/// Rows are ordered by `(distance, index)`.
pub fn knn_graph(x: &FeatureMatrix, k: usize, self_loop: bool) -> Result<NeighborGraph> {
    knn_rows(&x.values, x.n, x.f, k, self_loop)
}

/// The per-layer graph: [`knn_graph`] on the features a layer produced.
/// Static-graph networks skip this and keep the input-space graph.
pub fn recompute_graph(features: &FeatureMatrix, k: usize, self_loop: bool) -> Result<NeighborGraph> {
    knn_graph(features, k, self_loop)
}

/// Flattened `(centre, neighbour)` row indices for a batch of equally sized
/// clouds stacked row-wise, edge `e = (b·n + i)·k + r`.
pub(crate) fn batch_edge_index(graphs: &[NeighborGraph]) -> Result<(Vec<usize>, Vec<usize>)> {
    let first = graphs.first().ok_or_else(|| Error::dim("empty batch of graphs"))?;
    let (n, k) = (first.n, first.k);
    let mut centers = Vec::with_capacity(graphs.len() * n * k);
    let mut neighbors = Vec::with_capacity(graphs.len() * n * k);
    for (b, g) in graphs.iter().enumerate() {
        if g.n != n || g.k != k {
            return Err(Error::dim("graphs in a batch must share n and k"));
        }
        let offset = b * n;
        for i in 0..n {
            for &j in g.row(i) {
                centers.push(offset + i);
                neighbors.push(offset + j);
            }
        }
    }
    Ok((centers, neighbors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[&[Real]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn distances_of_small_fixture() {
        let x = pts(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        let d = pairwise_sq_distances(&x);
        assert_eq!(d.at(&[0, 1]), 1.0);
        assert_eq!(d.at(&[0, 2]), 4.0);
        assert_eq!(d.at(&[1, 2]), 5.0);
        for i in 0..3 {
            assert_eq!(d.at(&[i, i]), 0.0);
        }
    }

    #[test]
    fn identical_points_have_zero_distances() {
        let x = pts(&[&[0.3, -1.7], &[0.3, -1.7], &[0.3, -1.7]]);
        assert!(pairwise_sq_distances(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k1_self_loop_is_identity_graph() {
        let x = pts(&[&[0.0], &[1.0], &[3.0]]);
        let g = knn_graph(&x, 1, true).unwrap();
        assert_eq!(g.neighbors(), &[0, 1, 2]);
    }

    #[test]
    fn collinear_nearest_neighbours() {
        let x = pts(&[&[0.0], &[1.0], &[3.0]]);
        let g = knn_graph(&x, 1, false).unwrap();
        assert_eq!(g.neighbors(), &[1, 0, 1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        // Points 0 and 2 are both at distance 1 from point 1.
        let x = pts(&[&[0.0], &[1.0], &[2.0]]);
        let g = knn_graph(&x, 1, false).unwrap();
        assert_eq!(g.row(1), &[0]);
        let g = knn_graph(&x, 2, true).unwrap();
        assert_eq!(g.row(1), &[1, 0]);
    }

    #[test]
    fn k_range_is_enforced() {
        let x = pts(&[&[0.0], &[1.0], &[3.0]]);
        assert!(matches!(knn_graph(&x, 0, true), Err(Error::Parameter(_))));
        assert!(knn_graph(&x, 3, true).is_ok());
        assert!(matches!(knn_graph(&x, 3, false), Err(Error::Parameter(_))));
        assert!(knn_graph(&x, 2, false).is_ok());
    }

    #[test]
    fn csv_lists_every_edge() {
        let x = pts(&[&[0.0], &[1.0], &[3.0]]);
        let g = knn_graph(&x, 1, false).unwrap();
        let csv = g.to_csv(&x).unwrap();
        assert_eq!(csv, "i,j,rank,distance2\n0,1,0,1\n1,0,0,1\n2,1,0,4\n");
    }

    #[test]
    fn relabeling_follows_permutation() {
        let x = pts(&[&[0.0], &[1.0], &[3.0], &[7.0]]);
        let order = [2, 0, 3, 1];
        let g = knn_graph(&x, 2, false).unwrap();
        let permuted = knn_graph(&x.select_rows(&order).unwrap(), 2, false).unwrap();
        assert_eq!(g.relabeled(&order).unwrap(), permuted);
    }
}
