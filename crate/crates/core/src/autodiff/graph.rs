use std::collections::HashMap;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tensor::{matmul_into, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::autodiff::AutodiffError;
use crate::scalar::Real;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

/// Lower clamp on the optical thickness fed to [`Graph::opacity_bce`].
pub const MIN_OPTICAL_THICKNESS: f64 = 1e-6;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRows(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GroupSumRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Gather(Var, Vec<Option<usize>>),
    ExclusiveCumsumRows(Var),
    SoftmaxGroups(Var, usize),
    Bilinear {
        map: Var,
        height: usize,
        width: usize,
        coords: Var,
    },
    CrossEntropy(Var, Vec<usize>),
    BceWithLogits(Var, Vec<T>),
    OpacityBce(Var, Vec<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRows(..) => "mul_rows",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::GroupSumRows(..) => "group_sum_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::Gather(..) => "gather",
            Op::ExclusiveCumsumRows(..) => "exclusive_cumsum",
            Op::SoftmaxGroups(..) => "softmax",
            Op::Bilinear { .. } => "bilinear",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::BceWithLogits(..) => "bce_with_logits",
            Op::OpacityBce(..) => "opacity_bce",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    label: Option<&'static str>,
}

/// Reverse-mode computation graph. Nodes are appended in evaluation order,
/// so reverse insertion order is a valid topological order for backward.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    nonfinite: Option<(usize, &'static str)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient per parameter of `store`, zero-filled for parameters the output does not touch.
    pub fn dense_param_grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .ids()
            .map(|id| {
                self.params
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Attaches a human-readable name used in non-finite diagnostics.
    pub fn label(&mut self, v: Var, label: &'static str) -> Var {
        self.nodes[v.0].label = Some(label);
        if let Some((idx, _)) = self.nonfinite {
            if idx == v.0 {
                self.nonfinite = Some((idx, label));
            }
        }
        v
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            label: None,
        });
        Var(idx)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// Fails with the first node whose value contains NaN or ±∞.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.nonfinite {
            None => Ok(()),
            Some((node, op)) => Err(AutodiffError::NonFinite {
                node,
                op: self.nodes[node].label.unwrap_or(op),
            }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: operand shapes differ"
        );
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.shape(), data).expect("shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `[n, c] + [c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let out = self.value(a).add_row(self.value(bias));
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddRow(a, bias), ng)
    }

    /// Multiplies row `i` of `[n, c]` by element `i` of `[n]`.
    pub fn mul_rows(&mut self, a: Var, s: Var) -> Var {
        let va = self.value(a);
        let vs = self.value(s);
        let c = va.cols();
        assert_eq!(va.rows(), vs.len(), "mul_rows: row count");
        let mut out = va.clone();
        for (row, &k) in out.data_mut().chunks_mut(c.max(1)).zip(vs.data()) {
            for x in row {
                *x *= k;
            }
        }
        let ng = self.ng(a) || self.ng(s);
        self.push(out, Op::MulRows(a, s), ng)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let (n, k, m) = (va.rows(), va.cols(), vb.cols());
        assert_eq!(k, vb.rows(), "matmul inner dimension");
        let mut out = vec![T::zero(); n * m];
        matmul_into(va.data(), vb.data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), ng)
    }

    /// `x · W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean of all elements; the mean of an empty array is defined as 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.len();
        let s: T = v.data().iter().copied().sum();
        let m = if n == 0 { T::zero() } else { s / T::from_usize_lossy(n) };
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    /// `[n, c] → [n]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out: Vec<T> = (0..v.rows()).map(|r| v.row(r).iter().copied().sum()).collect();
        let ng = self.ng(a);
        self.push(Tensor::vector(&out), Op::RowSum(a), ng)
    }

    /// `[n·k, c] → [n, c]`, summing each run of `k` consecutive rows.
    pub fn group_sum_rows(&mut self, a: Var, k: usize) -> Var {
        let v = self.value(a);
        let c = v.cols();
        assert!(k > 0 && v.rows().is_multiple_of(k), "group_sum_rows: row count");
        let n = v.rows() / k;
        let mut out = vec![T::zero(); n * c];
        for (r, row) in v.data().chunks(c.max(1)).enumerate().take(v.rows()) {
            let o = &mut out[(r / k) * c..(r / k + 1) * c];
            for (x, &y) in o.iter_mut().zip(row) {
                *x += y;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(n, c, out), Op::GroupSumRows(a, k), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no operands");
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            assert_eq!(v.rows(), n, "concat_cols: row count");
            for r in 0..n {
                out[r * total + off..r * total + off + w].copy_from_slice(v.row(r));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(n, total, out), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a);
        let (n, c) = (v.rows(), v.cols());
        assert!(start + width <= c, "slice_cols: out of range");
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            out.extend_from_slice(&v.row(r)[start..start + width]);
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(n, width, out), Op::SliceCols(a, start), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Row gather: output row `i` is input row `index[i]`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<Option<usize>>) -> Var {
        let v = self.value(a);
        let c = v.cols();
        let mut out = vec![T::zero(); index.len() * c];
        for (o, ix) in out.chunks_mut(c.max(1)).zip(&index) {
            if let Some(r) = *ix {
                o.copy_from_slice(v.row(r));
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(index.len(), c, out), Op::Gather(a, index), ng)
    }

    /// `out[i, j] = Σ_{k<j} a[i, k]`.
    pub fn exclusive_cumsum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        let mut out = vec![T::zero(); n * m];
        for r in 0..n {
            let row = v.row(r);
            let mut acc = T::zero();
            for j in 0..m {
                out[r * m + j] = acc;
                acc += row[j];
            }
        }
        let ng = self.ng(a);
        self.push(
            Tensor::from_vec(v.shape(), out).expect("shape"),
            Op::ExclusiveCumsumRows(a),
            ng,
        )
    }

    /// Softmax over each run of `group` consecutive elements, with max subtraction.
    pub fn softmax_groups(&mut self, a: Var, group: usize) -> Var {
        let v = self.value(a);
        assert!(group > 0 && v.len().is_multiple_of(group), "softmax_groups: group size");
        let mut out = v.data().to_vec();
        for chunk in out.chunks_mut(group) {
            softmax_in_place(chunk);
        }
        let out = Tensor::from_vec(v.shape(), out).expect("shape");
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxGroups(a, group), ng)
    }

    /// Bilinear lookup of `coords: [r, 2]` (x, y in cell units) in `map: [height·width, c]`.
    /// Coordinates are clamped to the border; cell centres sit on integer coordinates.
    pub fn bilinear(&mut self, map: Var, height: usize, width: usize, coords: Var) -> Var {
        let vm = self.value(map);
        let vc = self.value(coords);
        assert_eq!(vm.rows(), height * width, "bilinear: map rows");
        assert_eq!(vc.cols(), 2, "bilinear: coords width");
        let c = vm.cols();
        let r = vc.rows();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let cell = BilinearCell::new(vc.row(i)[0], vc.row(i)[1], height, width);
            cell.blend(vm.data(), c, &mut out[i * c..(i + 1) * c]);
        }
        let ng = self.ng(map) || self.ng(coords);
        self.push(
            Tensor::matrix(r, c, out),
            Op::Bilinear {
                map,
                height,
                width,
                coords,
            },
            ng,
        )
    }

    /// Per-row softmax cross-entropy `[n, k] → [n]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let v = self.value(logits);
        let k = v.cols();
        assert_eq!(v.rows(), targets.len(), "cross_entropy: target count");
        let out: Vec<T> = (0..v.rows())
            .map(|r| {
                let row = v.row(r);
                assert!(targets[r] < k, "cross_entropy: target class out of range");
                log_sum_exp(row) - row[targets[r]]
            })
            .collect();
        let ng = self.ng(logits);
        self.push(Tensor::vector(&out), Op::CrossEntropy(logits, targets), ng)
    }

    /// Elementwise binary cross-entropy of `sigmoid(logits)` against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<T>) -> Var {
        let v = self.value(logits);
        assert_eq!(v.len(), targets.len(), "bce_with_logits: target count");
        let out: Vec<T> = v
            .data()
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p())
            .collect();
        let ng = self.ng(logits);
        self.push(Tensor::vector(&out), Op::BceWithLogits(logits, targets), ng)
    }

    /// Binary cross-entropy of opacity `1 − exp(−s)` for optical thickness `s ≥ 0`.
    pub fn opacity_bce(&mut self, thickness: Var, targets: Vec<T>) -> Var {
        let v = self.value(thickness);
        assert_eq!(v.len(), targets.len(), "opacity_bce: target count");
        let floor = T::lit(MIN_OPTICAL_THICKNESS);
        let out: Vec<T> = v
            .data()
            .iter()
            .zip(&targets)
            .map(|(&s, &y)| {
                let s = s.max(floor);
                -y * (-(-s).exp_m1()).ln() + (T::one() - y) * s
            })
            .collect();
        let ng = self.ng(thickness);
        self.push(Tensor::vector(&out), Op::OpacityBce(thickness, targets), ng)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, AutodiffError> {
        self.check_finite()?;
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(AutodiffError::NonScalarOutput {
                shape: self.shape(output).to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.shape(output), T::one()));
        let mut leaves = HashMap::new();

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                leaves.insert(idx, g);
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }

        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| leaves.get(&v.0).map(|g| (id, g.clone())))
            .collect();
        Ok(Gradients { leaves, params })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_to(d, g.data()));
                self.acc(grads, *b, |d| add_to(d, g.data()));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_to(d, g.data()));
                self.acc(grads, *b, |d| {
                    for (x, &gv) in d.iter_mut().zip(g.data()) {
                        *x -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &bv) in d.iter_mut().zip(g.data()).zip(vb) {
                        *x += gv * bv;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((x, &gv), &av) in d.iter_mut().zip(g.data()).zip(va) {
                        *x += gv * av;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                self.acc(grads, *a, |d| add_to(d, g.data()));
                let c = g.cols().max(1);
                self.acc(grads, *bias, |d| {
                    for row in g.data().chunks(c) {
                        add_to(d, row);
                    }
                });
            }
            Op::MulRows(a, s) => {
                let va = self.value(*a);
                let vs = self.value(*s).data();
                let c = va.cols().max(1);
                self.acc(grads, *a, |d| {
                    for ((drow, grow), &k) in d.chunks_mut(c).zip(g.data().chunks(c)).zip(vs) {
                        for (x, &gv) in drow.iter_mut().zip(grow) {
                            *x += gv * k;
                        }
                    }
                });
                self.acc(grads, *s, |d| {
                    for ((x, grow), arow) in d.iter_mut().zip(g.data().chunks(c)).zip(va.data().chunks(c)) {
                        *x += grow.iter().zip(arow).map(|(&p, &q)| p * q).sum::<T>();
                    }
                });
            }
            Op::Scale(a, k) => {
                self.acc(grads, *a, |d| {
                    for (x, &gv) in d.iter_mut().zip(g.data()) {
                        *x += gv * *k;
                    }
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.acc(grads, *a, |d| add_to(d, g.data()));
            }
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                self.acc(grads, *a, |d| matmul_nt_acc(g.data(), vb.data(), d, n, m, k));
                self.acc(grads, *b, |d| matmul_tn_acc(va.data(), g.data(), d, n, k, m));
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &av) in d.iter_mut().zip(g.data()).zip(va) {
                        if av > T::zero() {
                            *x += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::Softplus(a) => {
                let va = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &av) in d.iter_mut().zip(g.data()).zip(va) {
                        *x += gv * sigmoid(av);
                    }
                });
            }
            Op::Exp(a) => {
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &yv) in d.iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gv * yv;
                    }
                });
            }
            Op::Ln(a) => {
                let va = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &av) in d.iter_mut().zip(g.data()).zip(va) {
                        *x += gv / av;
                    }
                });
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                let two = T::lit(2.0);
                self.acc(grads, *a, |d| {
                    for ((x, &gv), &av) in d.iter_mut().zip(g.data()).zip(va) {
                        *x += two * av * gv;
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                if n > 0 {
                    let gv = g.item() / T::from_usize_lossy(n);
                    self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += gv));
                }
            }
            Op::RowSum(a) => {
                let c = self.value(*a).cols().max(1);
                self.acc(grads, *a, |d| {
                    for (row, &gv) in d.chunks_mut(c).zip(g.data()) {
                        row.iter_mut().for_each(|x| *x += gv);
                    }
                });
            }
            Op::GroupSumRows(a, k) => {
                let c = self.value(*a).cols().max(1);
                self.acc(grads, *a, |d| {
                    for (r, row) in d.chunks_mut(c).enumerate() {
                        add_to(row, &g.data()[(r / k) * c..(r / k + 1) * c]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |d| {
                        for (r, row) in d.chunks_mut(w.max(1)).enumerate() {
                            add_to(row, &g.data()[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.value(*a).cols();
                let w = g.cols();
                self.acc(grads, *a, |d| {
                    for (r, grow) in g.data().chunks(w.max(1)).enumerate() {
                        add_to(&mut d[r * c + start..r * c + start + w], grow);
                    }
                });
            }
            Op::Gather(a, index) => {
                let c = self.value(*a).cols().max(1);
                self.acc(grads, *a, |d| {
                    for (grow, ix) in g.data().chunks(c).zip(index) {
                        if let Some(r) = *ix {
                            add_to(&mut d[r * c..(r + 1) * c], grow);
                        }
                    }
                });
            }
            Op::ExclusiveCumsumRows(a) => {
                let m = g.cols().max(1);
                self.acc(grads, *a, |d| {
                    for (drow, grow) in d.chunks_mut(m).zip(g.data().chunks(m)) {
                        let mut acc = T::zero();
                        for j in (0..grow.len()).rev() {
                            drow[j] += acc;
                            acc += grow[j];
                        }
                    }
                });
            }
            Op::SoftmaxGroups(a, group) => {
                self.acc(grads, *a, |d| {
                    for ((drow, grow), yrow) in d
                        .chunks_mut(*group)
                        .zip(g.data().chunks(*group))
                        .zip(y.data().chunks(*group))
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&p, &q)| p * q).sum();
                        for ((x, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *x += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::Bilinear {
                map,
                height,
                width,
                coords,
            } => {
                let vm = self.value(*map);
                let vc = self.value(*coords);
                let c = vm.cols().max(1);
                let cells: Vec<BilinearCell<T>> = (0..vc.rows())
                    .map(|i| BilinearCell::new(vc.row(i)[0], vc.row(i)[1], *height, *width))
                    .collect();
                self.acc(grads, *map, |d| {
                    for (cell, grow) in cells.iter().zip(g.data().chunks(c)) {
                        cell.scatter(d, c, grow);
                    }
                });
                self.acc(grads, *coords, |d| {
                    for ((cell, grow), drow) in cells.iter().zip(g.data().chunks(c)).zip(d.chunks_mut(2)) {
                        let (gx, gy) = cell.coord_grad(vm.data(), c, grow);
                        drow[0] += gx;
                        drow[1] += gy;
                    }
                });
            }
            Op::CrossEntropy(logits, targets) => {
                let v = self.value(*logits);
                let k = v.cols().max(1);
                self.acc(grads, *logits, |d| {
                    for (r, drow) in d.chunks_mut(k).enumerate() {
                        let mut p = v.row(r).to_vec();
                        softmax_in_place(&mut p);
                        p[targets[r]] -= T::one();
                        let gv = g.data()[r];
                        for (x, &pv) in drow.iter_mut().zip(&p) {
                            *x += gv * pv;
                        }
                    }
                });
            }
            Op::BceWithLogits(logits, targets) => {
                let v = self.value(*logits).data();
                self.acc(grads, *logits, |d| {
                    for (i, x) in d.iter_mut().enumerate() {
                        *x += g.data()[i] * (sigmoid(v[i]) - targets[i]);
                    }
                });
            }
            Op::OpacityBce(s, targets) => {
                let v = self.value(*s).data();
                let floor = T::lit(MIN_OPTICAL_THICKNESS);
                self.acc(grads, *s, |d| {
                    for (i, x) in d.iter_mut().enumerate() {
                        if v[i] > floor {
                            let e = (-v[i]).exp();
                            let y = targets[i];
                            let dl = -y * e / (-(-v[i]).exp_m1()) + (T::one() - y);
                            *x += g.data()[i] * dl;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(t.data_mut());
    }
}

fn add_to<T: Real>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

pub(crate) fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let m = xs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in xs.iter_mut() {
        *x /= s;
    }
}

/// Four-neighbour stencil of one bilinear lookup with border clamping.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearCell<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    width: usize,
    x_free: bool,
    y_free: bool,
}

fn axis<T: Real>(u: T, n: usize) -> (usize, usize, T, bool) {
    if n <= 1 {
        return (0, 0, T::zero(), false);
    }
    let hi = T::from_usize_lossy(n - 1);
    let free = u > T::zero() && u < hi;
    let uc = u.max(T::zero()).min(hi);
    let mut i0 = uc.floor().to_usize().unwrap_or(0);
    if i0 >= n - 1 {
        i0 = n - 2;
    }
    let f = uc - T::from_usize_lossy(i0);
    (i0, i0 + 1, f, free)
}

impl<T: Real> BilinearCell<T> {
    pub(crate) fn new(x: T, y: T, height: usize, width: usize) -> Self {
        let (x0, x1, fx, x_free) = axis(x, width);
        let (y0, y1, fy, y_free) = axis(y, height);
        Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
            width,
            x_free,
            y_free,
        }
    }

    fn taps(&self) -> [(usize, T); 4] {
        let w = self.width;
        let one = T::one();
        [
            (self.y0 * w + self.x0, (one - self.fx) * (one - self.fy)),
            (self.y0 * w + self.x1, self.fx * (one - self.fy)),
            (self.y1 * w + self.x0, (one - self.fx) * self.fy),
            (self.y1 * w + self.x1, self.fx * self.fy),
        ]
    }

    pub(crate) fn blend(&self, map: &[T], c: usize, out: &mut [T]) {
        for (cell, wgt) in self.taps() {
            if wgt == T::zero() {
                continue;
            }
            let src = &map[cell * c..(cell + 1) * c];
            for (o, &s) in out.iter_mut().zip(src) {
                *o += wgt * s;
            }
        }
    }

    fn scatter(&self, dmap: &mut [T], c: usize, g: &[T]) {
        for (cell, wgt) in self.taps() {
            if wgt == T::zero() {
                continue;
            }
            for (d, &gv) in dmap[cell * c..(cell + 1) * c].iter_mut().zip(g) {
                *d += wgt * gv;
            }
        }
    }

    fn coord_grad(&self, map: &[T], c: usize, g: &[T]) -> (T, T) {
        let w = self.width;
        let one = T::one();
        let f = |yy: usize, xx: usize| &map[(yy * w + xx) * c..(yy * w + xx + 1) * c];
        let (f00, f10, f01, f11) = (f(self.y0, self.x0), f(self.y0, self.x1), f(self.y1, self.x0), f(self.y1, self.x1));
        let mut gx = T::zero();
        let mut gy = T::zero();
        for ch in 0..c {
            let gv = g[ch];
            if self.x_free {
                gx += gv * ((one - self.fy) * (f10[ch] - f00[ch]) + self.fy * (f11[ch] - f01[ch]));
            }
            if self.y_free {
                gy += gv * ((one - self.fx) * (f01[ch] - f00[ch]) + self.fx * (f11[ch] - f10[ch]));
            }
        }
        (gx, gy)
    }
}
