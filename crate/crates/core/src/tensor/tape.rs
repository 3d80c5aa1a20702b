use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::kernels::{dot, matmul, matmul_grad_left, matmul_grad_right};
use super::{axis_blocks, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchedMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleRows { x: Var, w: Var },
    GaussianWeight { diff: Var, bandwidth: Real },
    LeakyRelu { x: Var, slope: Real },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<Real>, inv_std: Vec<Real> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<Real>, inv_std: Vec<Real> },
    MaxAxis { x: Var, argmax: Vec<usize> },
    SumAxis { x: Var, outer: usize, extent: usize, inner: usize },
    SumAll { x: Var },
    Concat { parts: Vec<Var>, outer: usize, blocks: Vec<usize> },
    GatherRows { x: Var, index: Vec<usize> },
    GatherAdd { a: Var, ia: Vec<usize>, b: Var, ib: Vec<usize> },
    SliceCols { x: Var, start: usize, end: usize },
    Reshape { x: Var },
    Dropout { x: Var, mask: Vec<Real> },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<Real>, labels: Vec<usize> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            MatMul { a, b }
            | BatchedMatMul { a, b, .. }
            | Add { a, b }
            | Sub { a, b }
            | Mul { a, b } => vec![*a, *b],
            AddBias { x, bias } => vec![*x, *bias],
            GatherAdd { a, b, .. } => vec![*a, *b],
            ScaleRows { x, w } => vec![*x, *w],
            BatchNormTrain { x, gamma, beta, .. } | BatchNormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Concat { parts, .. } => parts.clone(),
            GaussianWeight { diff: x, .. }
            | LeakyRelu { x, .. }
            | MaxAxis { x, .. }
            | SumAxis { x, .. }
            | SumAll { x }
            | GatherRows { x, .. }
            | SliceCols { x, .. }
            | Reshape { x }
            | Dropout { x, .. }
            | SoftmaxCrossEntropy { logits: x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of a forward computation.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep visits each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when nothing upstream of the loss
    /// depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when `v` is disconnected from the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric("leaf tensor holds non-finite values".into()));
        }
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor that gradients are wanted for.
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{what} produced non-finite values")));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, "matmul")
    }

    /// Independent products `a[i] · b[i]` for `a [B×m×k]`, `b [B×k×n]`.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (batch, m, k, n) = match (sa, sb) {
            ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
            _ => {
                return Err(Error::dim(format!(
                    "batched matmul shapes {sa:?} and {sb:?} are incompatible"
                )))
            }
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            out.extend(matmul(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        self.push(value, Op::BatchedMatMul { a, b, batch, m, k, n }, "batched matmul")
    }

    /// Adds a `[n]` bias to every row of `x [m×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.shape(bias) != [n] {
            return Err(Error::dim(format!(
                "bias of shape {:?} does not fit {n} columns",
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::AddBias { x, bias }, "add_bias")
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(Real, Real) -> Real, op: Op, what: &str) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, op, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    /// Multiplies row `r` of `x [m×n]` by `w[r]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.shape(w) != [m] {
            return Err(Error::dim(format!(
                "row weights of shape {:?} do not fit {m} rows",
                self.shape(w)
            )));
        }
        let wv = self.value(w).data();
        let mut out = self.value(x).data().to_vec();
        for (row, &wr) in out.chunks_mut(n.max(1)).zip(wv) {
            row.iter_mut().for_each(|v| *v *= wr);
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::ScaleRows { x, w }, "scale_rows")
    }

    /// Per-row Gaussian kernel `exp(-|d_r|² / (2 σ²))` of a matrix of
    /// displacement rows.
    pub fn gaussian_weight(&mut self, diff: Var, bandwidth: Real) -> Result<Var> {
        if !(bandwidth > 0.0) {
            return Err(Error::param(format!("gaussian bandwidth must be positive, got {bandwidth}")));
        }
        let (m, n) = self.value(diff).dims2()?;
        let denom = 2.0 * bandwidth * bandwidth;
        let data = self
            .value(diff)
            .data()
            .chunks(n.max(1))
            .take(m)
            .map(|r| (-dot(r, r) / denom).exp())
            .collect();
        self.push(Tensor::new(vec![m], data)?, Op::GaussianWeight { diff, bandwidth }, "gaussian_weight")
    }

    /// Elementwise `max(x, slope·x)` for `slope` in (0, 1).
    pub fn leaky_relu(&mut self, x: Var, slope: Real) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::param(format!("leaky relu slope must lie in (0, 1), got {slope}")));
        }
        self.rectify(x, slope)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.rectify(x, 0.0)
    }

    fn rectify(&mut self, x: Var, slope: Real) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, Op::LeakyRelu { x, slope }, "leaky_relu")
    }

    fn bn_checks(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(Error::dim(format!(
                "batch norm affine parameters must have shape [{cols}]"
            )));
        }
        Ok((rows, cols))
    }

    fn bn_affine(&self, xhat: &[Real], gamma: Var, beta: Var, cols: usize) -> Vec<Real> {
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            for c in 0..cols {
                row[c] = g[c] * row[c] + b[c];
            }
        }
        out
    }

    /// Batch normalisation over the rows of `x [B×C]` using batch
    /// statistics. Returns the output together with the per-channel batch
    /// mean and (biased) variance so callers can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: Real,
    ) -> Result<(Var, Vec<Real>, Vec<Real>)> {
        let (rows, cols) = self.bn_checks(x, gamma, beta)?;
        if rows < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch statistics need at least 2 rows, got {rows}"
            )));
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0; cols];
        for row in xv.chunks(cols) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as Real);
        let mut var = vec![0.0; cols];
        for row in xv.chunks(cols) {
            for c in 0..cols {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as Real);
        let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.to_vec();
        for row in xhat.chunks_mut(cols) {
            for c in 0..cols {
                row[c] = (row[c] - mean[c]) * inv_std[c];
            }
        }
        let out = self.bn_affine(&xhat, gamma, beta, cols);
        let value = Tensor::new(vec![rows, cols], out)?;
        let v = self.push(value, Op::BatchNormTrain { x, gamma, beta, xhat, inv_std }, "batch_norm")?;
        Ok((v, mean, var))
    }

    /// Batch normalisation with fixed running statistics: a per-channel
    /// affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[Real],
        running_var: &[Real],
        eps: Real,
    ) -> Result<Var> {
        let (rows, cols) = self.bn_checks(x, gamma, beta)?;
        if running_mean.len() != cols || running_var.len() != cols {
            return Err(Error::dim("running statistics do not match channel count"));
        }
        if running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Numeric("running variance must be strictly positive".into()));
        }
        let inv_std: Vec<Real> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = self.value(x).data().to_vec();
        for row in xhat.chunks_mut(cols.max(1)) {
            for c in 0..cols {
                row[c] = (row[c] - running_mean[c]) * inv_std[c];
            }
        }
        let out = self.bn_affine(&xhat, gamma, beta, cols);
        let value = Tensor::new(vec![rows, cols], out)?;
        self.push(value, Op::BatchNormEval { x, gamma, beta, xhat, inv_std }, "batch_norm")
    }

    /// Maximum along `axis`, returning the values and, per output element,
    /// the position along `axis` that won. Ties go to the lowest position.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let shape = self.shape(x).to_vec();
        let (outer, extent, inner) = axis_blocks(&shape, axis)?;
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.max_blocks(x, outer, extent, inner, out_shape)
    }

    /// Maximum over consecutive groups of `group` rows of a matrix:
    /// `[P·group × M] -> [P × M]`. Equivalent to reshaping to
    /// `[P, group, M]` and taking [`Tape::max_axis`] over axis 1, without
    /// the copy.
    pub fn max_row_groups(&mut self, x: Var, group: usize) -> Result<(Var, Vec<usize>)> {
        let (rows, m) = self.value(x).dims2()?;
        if group == 0 || rows % group != 0 {
            return Err(Error::dim(format!("{rows} rows do not split into groups of {group}")));
        }
        self.max_blocks(x, rows / group, group, m, vec![rows / group, m])
    }

    fn max_blocks(
        &mut self,
        x: Var,
        outer: usize,
        extent: usize,
        inner: usize,
        out_shape: Vec<usize>,
    ) -> Result<(Var, Vec<usize>)> {
        if extent == 0 {
            return Err(Error::dim("cannot take the maximum over an empty axis"));
        }
        let xv = self.value(x).data();
        let mut values = Vec::with_capacity(outer * inner);
        let mut flat = Vec::with_capacity(outer * inner);
        let mut positions = Vec::with_capacity(outer * inner);
        let mut arg = vec![0usize; inner];
        for o in 0..outer {
            let base = o * extent * inner;
            let start = values.len();
            values.extend_from_slice(&xv[base..base + inner]);
            let best = &mut values[start..];
            arg.fill(0);
            for l in 1..extent {
                let row = &xv[base + l * inner..base + (l + 1) * inner];
                for i in 0..inner {
                    if row[i] > best[i] {
                        best[i] = row[i];
                        arg[i] = l;
                    }
                }
            }
            for i in 0..inner {
                flat.push(base + arg[i] * inner + i);
            }
            positions.extend_from_slice(&arg);
        }
        let value = Tensor::new(out_shape, values)?;
        let v = self.push(value, Op::MaxAxis { x, argmax: flat }, "max_axis")?;
        Ok((v, positions))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, extent, inner) = axis_blocks(&shape, axis)?;
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.sum_blocks(x, outer, extent, inner, out_shape)
    }

    /// Sum over consecutive groups of `group` rows, the additive
    /// counterpart of [`Tape::max_row_groups`].
    pub fn sum_row_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, m) = self.value(x).dims2()?;
        if group == 0 || rows % group != 0 {
            return Err(Error::dim(format!("{rows} rows do not split into groups of {group}")));
        }
        self.sum_blocks(x, rows / group, group, m, vec![rows / group, m])
    }

    fn sum_blocks(&mut self, x: Var, outer: usize, extent: usize, inner: usize, out_shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let acc = &mut out[o * inner..(o + 1) * inner];
            for l in 0..extent {
                let base = (o * extent + l) * inner;
                for (a, v) in acc.iter_mut().zip(&xv[base..base + inner]) {
                    *a += v;
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::SumAxis { x, outer, extent, inner }, "sum_axis")
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x }, "sum")
    }

    /// Juxtaposes `parts` along `axis`; every other extent must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of an empty list"))?;
        let base_shape = self.shape(*first).to_vec();
        let (outer, _, inner) = axis_blocks(&base_shape, axis)?;
        let mut blocks = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "cannot concatenate {s:?} with {base_shape:?} along axis {axis}"
                )));
            }
            blocks.push(s[axis] * inner);
            total += s[axis];
        }
        let width: usize = blocks.iter().sum();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            for (&p, &blk) in parts.iter().zip(&blocks) {
                out.extend_from_slice(&self.value(p).data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat { parts: parts.to_vec(), outer, blocks }, "concat")
    }

    /// Rows `x[index[0]], x[index[1]], ...` of a matrix.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Index(format!("row {bad} out of range for {m} rows")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            out.extend_from_slice(&xv[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![index.len(), n], out)?;
        self.push(value, Op::GatherRows { x, index: index.to_vec() }, "gather_rows")
    }

    /// `a[ia[e]] + b[ib[e]]` for every `e`: two row gathers and a sum in
    /// one node, with `a` and `b` sharing their column count.
    pub fn gather_add(&mut self, a: Var, ia: &[usize], b: Var, ib: &[usize]) -> Result<Var> {
        let (ma, n) = self.value(a).dims2()?;
        let (mb, nb) = self.value(b).dims2()?;
        if n != nb || ia.len() != ib.len() {
            return Err(Error::dim("gather_add operands disagree in width or index count"));
        }
        if let Some(&bad) = ia.iter().find(|&&i| i >= ma).or_else(|| ib.iter().find(|&&i| i >= mb)) {
            return Err(Error::Index(format!("row {bad} out of range")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ia.len() * n);
        for (&i, &j) in ia.iter().zip(ib) {
            out.extend(av[i * n..(i + 1) * n].iter().zip(&bv[j * n..(j + 1) * n]).map(|(x, y)| x + y));
        }
        let value = Tensor::new(vec![ia.len(), n], out)?;
        self.push(value, Op::GatherAdd { a, ia: ia.to_vec(), b, ib: ib.to_vec() }, "gather_add")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start > end || end > n {
            return Err(Error::dim(format!("column range {start}..{end} invalid for {n} columns")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&xv[r * n + start..r * n + end]);
        }
        let value = Tensor::new(vec![m, end - start], out)?;
        self.push(value, Op::SliceCols { x, start, end }, "slice_cols")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape { x }, "reshape")
    }

    /// Inverted dropout: in training mode each element survives with
    /// probability `keep_prob` and is scaled by `1/keep_prob`; otherwise the
    /// input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        keep_prob: Real,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::param(format!("keep probability must lie in (0, 1], got {keep_prob}")));
        }
        if !training || keep_prob == 1.0 {
            return Ok(x);
        }
        let scale = 1.0 / keep_prob;
        let mask: Vec<Real> = (0..self.value(x).len())
            .map(|_| {
                if (rng.random::<f64>() as Real) < keep_prob {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(value, Op::Dropout { x, mask }, "dropout")
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::dim(format!("{} labels for {b} rows of logits", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index(format!("label {bad} out of range for {c} classes")));
        }
        let lv = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = 0.0;
        for (row, &label) in lv.chunks(c).zip(labels) {
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let sum: Real = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[label];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        loss /= b as Real;
        let op = Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() };
        self.push(Tensor::scalar(loss), op, "softmax_cross_entropy")
    }

    /// Hash of every discrete decision taken during the forward pass
    /// (rectifier signs, argmax winners, gathered indices, dropout masks).
    /// Two evaluations with equal signatures took the same branches.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    i.hash(&mut h);
                    for v in self.nodes[x.0].value.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxAxis { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::GatherRows { index, .. } => {
                    i.hash(&mut h);
                    index.hash(&mut h);
                }
                Op::GatherAdd { ia, ib, .. } => {
                    i.hash(&mut h);
                    ia.hash(&mut h);
                    ib.hash(&mut h);
                }
                Op::Dropout { mask, .. } => {
                    i.hash(&mut h);
                    for m in mask {
                        (*m != 0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract("loss is not on this tape".into()))?;
        if loss_node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        leaf_grads.resize_with(self.nodes.len(), || None);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<Real>>], v: Var, contribution: Vec<Real>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.value(*a).dims2().expect("checked at record time");
                let n = node.value.shape()[1];
                if self.needs(*a) {
                    self.accumulate(grads, *a, matmul_grad_left(g, val(*b), m, k, n));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, matmul_grad_right(val(*a), g, m, k, n));
                }
            }
            &Op::BatchedMatMul { a, b, batch, m, k, n } => {
                let (av, bv) = (val(a), val(b));
                if self.needs(a) {
                    let mut ga = Vec::with_capacity(batch * m * k);
                    for i in 0..batch {
                        ga.extend(matmul_grad_left(
                            &g[i * m * n..(i + 1) * m * n],
                            &bv[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        ));
                    }
                    self.accumulate(grads, a, ga);
                }
                if self.needs(b) {
                    let mut gb = Vec::with_capacity(batch * k * n);
                    for i in 0..batch {
                        gb.extend(matmul_grad_right(
                            &av[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                        ));
                    }
                    self.accumulate(grads, b, gb);
                }
            }
            Op::AddBias { x, bias } => {
                let n = self.shape(*bias)[0];
                if self.needs(*bias) {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    self.accumulate(grads, *bias, gb);
                }
                self.accumulate(grads, *x, g.to_vec());
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(val(*b)).map(|(x, y)| x * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().zip(val(*a)).map(|(x, y)| x * y).collect());
                }
            }
            Op::ScaleRows { x, w } => {
                let n = self.shape(*x)[1].max(1);
                let (xv, wv) = (val(*x), val(*w));
                if self.needs(*x) {
                    let mut gx = g.to_vec();
                    for (row, &wr) in gx.chunks_mut(n).zip(wv) {
                        row.iter_mut().for_each(|v| *v *= wr);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.needs(*w) {
                    let gw = g.chunks(n).zip(xv.chunks(n)).map(|(gr, xr)| dot(gr, xr)).collect();
                    self.accumulate(grads, *w, gw);
                }
            }
            &Op::GaussianWeight { diff, bandwidth } => {
                let n = self.shape(diff)[1].max(1);
                let w = node.value.data();
                let inv_var = 1.0 / (bandwidth * bandwidth);
                let mut gd = val(diff).to_vec();
                for ((row, &gr), &wr) in gd.chunks_mut(n).zip(g).zip(w) {
                    let s = -gr * wr * inv_var;
                    row.iter_mut().for_each(|v| *v *= s);
                }
                self.accumulate(grads, diff, gd);
            }
            &Op::LeakyRelu { x, slope } => {
                let gx = g
                    .iter()
                    .zip(val(x))
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv })
                    .collect();
                self.accumulate(grads, x, gx);
            }
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
                let cols = inv_std.len();
                let rows = xhat.len() / cols.max(1);
                let gam = val(*gamma);
                let mut sum_g = vec![0.0; cols];
                let mut sum_gx = vec![0.0; cols];
                for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for c in 0..cols {
                        sum_g[c] += gr[c];
                        sum_gx[c] += gr[c] * xr[c];
                    }
                }
                if self.needs(*x) {
                    let inv_rows = 1.0 / rows as Real;
                    let mut gx = vec![0.0; rows * cols];
                    for ((o, gr), xr) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            o[c] = gam[c]
                                * inv_std[c]
                                * (gr[c] - inv_rows * sum_g[c] - xr[c] * inv_rows * sum_gx[c]);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::BatchNormEval { x, gamma, beta, xhat, inv_std } => {
                let cols = inv_std.len();
                let gam = val(*gamma);
                let mut sum_g = vec![0.0; cols];
                let mut sum_gx = vec![0.0; cols];
                for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for c in 0..cols {
                        sum_g[c] += gr[c];
                        sum_gx[c] += gr[c] * xr[c];
                    }
                }
                if self.needs(*x) {
                    let mut gx = g.to_vec();
                    for row in gx.chunks_mut(cols) {
                        for c in 0..cols {
                            row[c] *= gam[c] * inv_std[c];
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, sum_gx);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::MaxAxis { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (&src, gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::SumAxis { x, outer, extent, inner } => {
                let mut gx = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    for _ in 0..extent {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::SumAll { x } => {
                self.accumulate(grads, *x, vec![g[0]; self.value(*x).len()]);
            }
            Op::Concat { parts, outer, blocks } => {
                let width: usize = blocks.iter().sum();
                let mut offset = 0;
                for (&p, &blk) in parts.iter().zip(blocks) {
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(outer * blk);
                        for o in 0..*outer {
                            let start = o * width + offset;
                            gp.extend_from_slice(&g[start..start + blk]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += blk;
                }
            }
            Op::GatherRows { x, index } => {
                let (m, n) = self.value(*x).dims2().expect("checked at record time");
                let mut gx = vec![0.0; m * n];
                for (&src, gr) in index.iter().zip(g.chunks(n.max(1))) {
                    gx[src * n..(src + 1) * n]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(a, v)| *a += v);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherAdd { a, ia, b, ib } => {
                for (v, index) in [(*a, ia), (*b, ib)] {
                    if !self.needs(v) {
                        continue;
                    }
                    let (m, n) = self.value(v).dims2().expect("checked at record time");
                    let mut gv = vec![0.0; m * n];
                    for (&src, gr) in index.iter().zip(g.chunks(n.max(1))) {
                        gv[src * n..(src + 1) * n].iter_mut().zip(gr).for_each(|(acc, x)| *acc += x);
                    }
                    self.accumulate(grads, v, gv);
                }
            }
            &Op::SliceCols { x, start, end } => {
                let (m, n) = self.value(x).dims2().expect("checked at record time");
                let w = end - start;
                let mut gx = vec![0.0; m * n];
                for r in 0..m {
                    gx[r * n + start..r * n + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, x, gx);
            }
            Op::Reshape { x } => self.accumulate(grads, *x, g.to_vec()),
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, g.iter().zip(mask).map(|(a, b)| a * b).collect());
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let c = probs.len() / labels.len();
                let scale = g[0] / labels.len() as Real;
                let mut gl = probs.clone();
                for (row, &label) in gl.chunks_mut(c).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}
