use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::{ParamId, ParamStore, Real};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F: Real> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a: n x d` plus a `1 x d` row broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a: n x d` times a `1 x d` row broadcast over rows.
    MulRow(Var, Var),
    Div(Var, Var),
    Scale(Var, F),
    AddScalar(Var, F),
    Transpose(Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Exp(Var),
    Sqrt(Var),
    Min(Var, Var),
    Max(Var, Var),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    /// `a: n x d` divided row-wise by a `n x 1` column.
    DivCol(Var, Var),
    LayerNormRows(Var, F),
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
    },
    FocalBce {
        logits: Var,
        targets: Array2<F>,
        gamma: f64,
        alpha: f64,
        norm: F,
    },
}

struct Node<F: Real> {
    value: Array2<F>,
    op: Op<F>,
}

/// A define-by-run computation graph over `Array2<F>` values.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    param_leaves: HashMap<ParamId, Var>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<F: Real> {
    by_var: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn of(&self, v: Var) -> Option<&Array2<F>> {
        self.by_var[v.0].as_ref()
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn value_f64(&self, v: Var) -> Array2<f64> {
        self.nodes[v.0].value.mapv(Real::to_f64)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.dim();
        (s.0, s.1)
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_f64(&mut self, value: &Array2<f64>) -> Var {
        let v = value.mapv(F::from_f64);
        self.constant(v)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), F::from_f64(v)))
    }

    /// Leaf bound to a stored parameter. Memoized per id so every use site
    /// shares one node and gradients accumulate there.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.param_leaves.insert(id, v);
        v
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul: {ar}x{ac} . {br}x{bc}");
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "add_row: row shape mismatch");
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "mul_row: row shape mismatch");
        let v = &self.nodes[a.0].value * &self.nodes[row.0].value;
        self.push(v, Op::MulRow(a, row))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "div: shape mismatch");
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = F::from_f64(c);
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = F::from_f64(c);
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(v, Op::AddScalar(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let v = self.nodes[a.0].value.mapv(|x| one / (one + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.max(F::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(F::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(F::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(F::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "min: shape mismatch");
        let mut v = self.nodes[a.0].value.clone();
        Zip::from(&mut v)
            .and(&self.nodes[b.0].value)
            .for_each(|x, &y| *x = x.min(y));
        self.push(v, Op::Min(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "max: shape mismatch");
        let mut v = self.nodes[a.0].value.clone();
        Zip::from(&mut v)
            .and(&self.nodes[b.0].value)
            .for_each(|x, &y| *x = x.max(y));
        self.push(v, Op::Max(a, b))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).1, "concat_rows: col mismatch");
        let v = concatenate(
            Axis(0),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .unwrap();
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).0, self.shape(b).0, "concat_cols: row mismatch");
        let v = concatenate(
            Axis(1),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .unwrap();
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        assert!(r0 < r1 && r1 <= self.shape(a).0, "slice_rows: bad range");
        let v = self.nodes[a.0].value.slice(s![r0..r1, ..]).to_owned();
        self.push(v, Op::SliceRows(a, r0, r1))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        assert!(c0 < c1 && c1 <= self.shape(a).1, "slice_cols: bad range");
        let v = self.nodes[a.0].value.slice(s![.., c0..c1]).to_owned();
        self.push(v, Op::SliceCols(a, c0, c1))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let (n, d) = self.shape(a);
        assert!(rows.iter().all(|&r| r < n), "select_rows: index out of range");
        let mut v = Array2::zeros((rows.len(), d));
        for (k, &r) in rows.iter().enumerate() {
            v.row_mut(k).assign(&self.nodes[a.0].value.row(r));
        }
        self.push(v, Op::SelectRows(a, rows))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (n, _) = self.shape(a);
        let v = self
            .nodes[a.0]
            .value
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .mapv(|x| x / F::from_f64(n as f64));
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let (n, d) = self.shape(a);
        let v = Array2::from_elem(
            (1, 1),
            self.nodes[a.0].value.sum() / F::from_f64((n * d) as f64),
        );
        self.push(v, Op::MeanAll(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let (ar, _) = self.shape(a);
        assert_eq!(self.shape(col), (ar, 1), "div_col: column shape mismatch");
        let v = &self.nodes[a.0].value / &self.nodes[col.0].value;
        self.push(v, Op::DivCol(a, col))
    }

    /// Row-wise normalization `(x - mean) / sqrt(var + eps)` without affine
    /// terms; pair with [`Graph::mul_row`] / [`Graph::add_row`] for gain/bias.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let eps = F::from_f64(eps);
        let x = &self.nodes[a.0].value;
        let d = F::from_f64(x.ncols() as f64);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).fold(F::zero(), |a, b| a + b) / d;
            let inv = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|e| (e - mean) * inv);
        }
        self.push(v, Op::LayerNormRows(a, eps))
    }

    /// Class-weighted mean softmax cross-entropy over rows: the scalar
    /// `sum_i w_i * ce_i / sum_i w_i`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let (n, k) = self.shape(logits);
        assert_eq!(targets.len(), n, "cross_entropy: target count mismatch");
        assert_eq!(weights.len(), n, "cross_entropy: weight count mismatch");
        assert!(targets.iter().all(|&t| t < k), "cross_entropy: target out of range");
        let x = &self.nodes[logits.0].value;
        let mut total = F::zero();
        let mut wsum = F::zero();
        for (i, row) in x.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&e| (e - max).exp()).fold(F::zero(), |a, b| a + b).ln() + max;
            let w = F::from_f64(weights[i]);
            total += w * (lse - row[targets[i]]);
            wsum += w;
        }
        let v = Array2::from_elem((1, 1), total / wsum);
        let weights = weights.into_iter().map(F::from_f64).collect();
        self.push(v, Op::CrossEntropyRows { logits, targets, weights })
    }

    /// Sigmoid focal loss summed over all entries and divided by `norm`.
    /// Targets are a fixed 0/1 matrix of the logits' shape.
    pub fn focal_bce(&mut self, logits: Var, targets: Array2<f64>, gamma: f64, alpha: f64, norm: f64) -> Var {
        assert_eq!(
            self.shape(logits),
            (targets.nrows(), targets.ncols()),
            "focal_bce: target shape mismatch"
        );
        let targets = targets.mapv(F::from_f64);
        let x = &self.nodes[logits.0].value;
        let mut total = 0.0f64;
        Zip::from(x).and(&targets).for_each(|&xi, &ti| {
            let (log_pt, one_minus_pt, at) = focal_parts(xi.to_f64(), ti.to_f64(), alpha);
            total += -at * one_minus_pt.powf(gamma) * log_pt;
        });
        let v = Array2::from_elem((1, 1), F::from_f64(total / norm));
        self.push(
            v,
            Op::FocalBce {
                logits,
                targets,
                gamma,
                alpha,
                norm: F::from_f64(norm),
            },
        )
    }

    // ---- backward ----

    /// Reverse accumulation from a `1 x 1` root. Returns gradients for every
    /// node reachable from the root.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert_eq!(self.shape(root), (1, 1), "backward: root must be scalar");
        let mut by_var: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        by_var[root.0] = Some(Array2::from_elem((1, 1), F::one()));

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = by_var.split_at_mut(i);
            let Some(gy) = rest[0].as_ref() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            let mut acc = |slot: usize, g: Array2<F>| {
                debug_assert!(slot < i, "op input must precede output");
                match &mut before[slot] {
                    Some(a) => a.zip_mut_with(&g, |x, &y| *x += y),
                    slot_ref @ None => *slot_ref = Some(g),
                }
            };
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    acc(a.0, gy.dot(&val(*b).t()));
                    acc(b.0, val(*a).t().dot(gy));
                }
                Op::Add(a, b) => {
                    acc(a.0, gy.clone());
                    acc(b.0, gy.clone());
                }
                Op::AddRow(a, row) => {
                    acc(a.0, gy.clone());
                    acc(row.0, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Sub(a, b) => {
                    acc(a.0, gy.clone());
                    acc(b.0, gy.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(a.0, gy * val(*b));
                    acc(b.0, gy * val(*a));
                }
                Op::MulRow(a, row) => {
                    acc(a.0, gy * val(*row));
                    acc(row.0, (gy * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Div(a, b) => {
                    acc(a.0, gy / val(*b));
                    let mut gb = gy * val(*a);
                    Zip::from(&mut gb).and(val(*b)).for_each(|x, &bi| *x = -*x / (bi * bi));
                    acc(b.0, gb);
                }
                Op::Scale(a, c) => acc(a.0, gy.mapv(|x| x * *c)),
                Op::AddScalar(a, _) => acc(a.0, gy.clone()),
                Op::Transpose(a) => acc(a.0, gy.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = gy * y;
                    for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|gi, &yi| *gi -= dot * yi);
                    }
                    acc(a.0, g);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(a.0, gy * &y.mapv(|v| v * (F::one() - v)));
                }
                Op::Relu(a) => {
                    let mask = val(*a).mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
                    acc(a.0, gy * &mask);
                }
                Op::Abs(a) => {
                    let sign = val(*a).mapv(|v| {
                        if v > F::zero() {
                            F::one()
                        } else if v < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        }
                    });
                    acc(a.0, gy * &sign);
                }
                Op::Exp(a) => acc(a.0, gy * &node.value),
                Op::Sqrt(a) => {
                    let half = F::from_f64(0.5);
                    acc(a.0, gy * &node.value.mapv(|y| half / y));
                }
                Op::Min(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = gy.clone();
                    let mut gb = gy.clone();
                    Zip::from(&mut ga).and(va).and(vb).for_each(|g, &x, &y| {
                        if x > y {
                            *g = F::zero()
                        }
                    });
                    Zip::from(&mut gb).and(va).and(vb).for_each(|g, &x, &y| {
                        if x <= y {
                            *g = F::zero()
                        }
                    });
                    acc(a.0, ga);
                    acc(b.0, gb);
                }
                Op::Max(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = gy.clone();
                    let mut gb = gy.clone();
                    Zip::from(&mut ga).and(va).and(vb).for_each(|g, &x, &y| {
                        if x < y {
                            *g = F::zero()
                        }
                    });
                    Zip::from(&mut gb).and(va).and(vb).for_each(|g, &x, &y| {
                        if x >= y {
                            *g = F::zero()
                        }
                    });
                    acc(a.0, ga);
                    acc(b.0, gb);
                }
                Op::ConcatRows(a, b) => {
                    let na = val(*a).nrows();
                    acc(a.0, gy.slice(s![..na, ..]).to_owned());
                    acc(b.0, gy.slice(s![na.., ..]).to_owned());
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).ncols();
                    acc(a.0, gy.slice(s![.., ..ca]).to_owned());
                    acc(b.0, gy.slice(s![.., ca..]).to_owned());
                }
                Op::SliceRows(a, r0, r1) => {
                    let mut g = Array2::zeros(val(*a).dim());
                    g.slice_mut(s![*r0..*r1, ..]).assign(gy);
                    acc(a.0, g);
                }
                Op::SliceCols(a, c0, c1) => {
                    let mut g = Array2::zeros(val(*a).dim());
                    g.slice_mut(s![.., *c0..*c1]).assign(gy);
                    acc(a.0, g);
                }
                Op::SelectRows(a, rows) => {
                    let mut g: Array2<F> = Array2::zeros(val(*a).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut target = g.row_mut(r);
                        target.zip_mut_with(&gy.row(k), |x, &y| *x += y);
                    }
                    acc(a.0, g);
                }
                Op::MeanRows(a) => {
                    let (n, d) = val(*a).dim();
                    let scale = F::one() / F::from_f64(n as f64);
                    let mut g = Array2::zeros((n, d));
                    for mut row in g.rows_mut() {
                        row.assign(&gy.row(0));
                        row.mapv_inplace(|x| x * scale);
                    }
                    acc(a.0, g);
                }
                Op::SumAll(a) => {
                    acc(a.0, Array2::from_elem(val(*a).dim(), gy[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let (n, d) = val(*a).dim();
                    let g = gy[[0, 0]] / F::from_f64((n * d) as f64);
                    acc(a.0, Array2::from_elem((n, d), g));
                }
                Op::SumCols(a) => {
                    let (n, d) = val(*a).dim();
                    let mut g = Array2::zeros((n, d));
                    for (mut row, &gi) in g.rows_mut().into_iter().zip(gy.column(0)) {
                        row.fill(gi);
                    }
                    acc(a.0, g);
                }
                Op::DivCol(a, col) => {
                    let ga = gy / val(*col);
                    let ratio = gy * val(*a);
                    let c = val(*col);
                    let mut gc = Array2::zeros(c.dim());
                    for (i, row) in ratio.rows().into_iter().enumerate() {
                        gc[[i, 0]] = -row.sum() / (c[[i, 0]] * c[[i, 0]]);
                    }
                    acc(a.0, ga);
                    acc(col.0, gc);
                }
                Op::LayerNormRows(a, eps) => {
                    let x = val(*a);
                    let xhat = &node.value;
                    let d = F::from_f64(x.ncols() as f64);
                    let mut g = Array2::zeros(x.dim());
                    for ((mut grow, gyrow), (xrow, xhrow)) in g
                        .rows_mut()
                        .into_iter()
                        .zip(gy.rows())
                        .zip(x.rows().into_iter().zip(xhat.rows()))
                    {
                        let mean = xrow.sum() / d;
                        let var = xrow.iter().map(|&e| (e - mean) * (e - mean)).fold(F::zero(), |s, t| s + t) / d;
                        let inv = F::one() / (var + *eps).sqrt();
                        let gmean = gyrow.sum() / d;
                        let gdot = gyrow
                            .iter()
                            .zip(xhrow.iter())
                            .map(|(&gi, &hi)| gi * hi)
                            .fold(F::zero(), |s, t| s + t)
                            / d;
                        Zip::from(&mut grow).and(&gyrow).and(&xhrow).for_each(|o, &gi, &hi| {
                            *o = inv * (gi - gmean - hi * gdot);
                        });
                    }
                    acc(a.0, g);
                }
                Op::CrossEntropyRows { logits, targets, weights } => {
                    let x = val(*logits);
                    let wsum = weights.iter().cloned().fold(F::zero(), |a, b| a + b);
                    let mut g = Array2::zeros(x.dim());
                    for (i, (mut grow, xrow)) in g.rows_mut().into_iter().zip(x.rows()).enumerate() {
                        let max = xrow.iter().cloned().fold(F::neg_infinity(), F::max);
                        let mut denom = F::zero();
                        for &e in xrow.iter() {
                            denom += (e - max).exp();
                        }
                        let scale = weights[i] / wsum * gy[[0, 0]];
                        for (j, gj) in grow.iter_mut().enumerate() {
                            let p = (xrow[j] - max).exp() / denom;
                            let t = if targets[i] == j { F::one() } else { F::zero() };
                            *gj = scale * (p - t);
                        }
                    }
                    acc(logits.0, g);
                }
                Op::FocalBce { logits, targets, gamma, alpha, norm } => {
                    let x = val(*logits);
                    let mut g = Array2::zeros(x.dim());
                    let scale = gy[[0, 0]] / *norm;
                    Zip::from(&mut g).and(x).and(targets).for_each(|o, &xi, &ti| {
                        *o = scale * F::from_f64(focal_grad(xi.to_f64(), ti.to_f64(), *gamma, alpha.to_f64()));
                    });
                    acc(logits.0, g);
                }
            }
        }
        Gradients { by_var }
    }

    /// Gradients for all parameter leaves touched by this graph.
    pub fn param_grads(&self, grads: &Gradients<F>) -> HashMap<ParamId, Array2<F>> {
        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = grads.by_var[i].as_ref() {
                    out.insert(pid, g.clone());
                }
            }
        }
        out
    }
}

/// Stable pieces of the focal term: `(log p_t, 1 - p_t, alpha_t)`.
fn focal_parts(x: f64, t: f64, alpha: f64) -> (f64, f64, f64) {
    let softplus = |z: f64| {
        if z > 30.0 {
            z
        } else {
            z.exp().ln_1p()
        }
    };
    if t > 0.5 {
        // p_t = sigmoid(x): log p_t = -softplus(-x), 1 - p_t = sigmoid(-x)
        (-softplus(-x), 1.0 / (1.0 + x.exp()), alpha)
    } else {
        (-softplus(x), 1.0 / (1.0 + (-x).exp()), 1.0 - alpha)
    }
}

/// d/dx of `-alpha_t * (1 - p_t)^gamma * log(p_t)` for a single logit.
fn focal_grad(x: f64, t: f64, gamma: f64, alpha: f64) -> f64 {
    let (log_pt, one_minus_pt, at) = focal_parts(x, t, alpha);
    let p = 1.0 / (1.0 + (-x).exp());
    let dpt_dx = (2.0 * t - 1.0) * p * (1.0 - p);
    let pt = 1.0 - one_minus_pt;
    // dL/dp_t = alpha_t * (1-p_t)^(gamma-1) * (gamma * log p_t - (1-p_t)/p_t)
    let dl_dpt = at * one_minus_pt.powf(gamma - 1.0) * (gamma * log_pt - one_minus_pt / pt);
    dl_dpt * dpt_dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
    }

    /// Central finite differences against the analytic gradient for a scalar
    /// function of constant-leaf inputs.
    fn fd_check(
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
        inputs: &[Array2<f64>],
        tol: f64,
    ) {
        let eval = |ins: &[Array2<f64>]| -> f64 {
            let mut g = Graph::<f64>::new();
            let vars: Vec<Var> = ins.iter().map(|m| g.constant(m.clone())).collect();
            let out = build(&mut g, &vars);
            g.value(out)[[0, 0]]
        };

        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.constant(m.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);

        let eps = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .of(vars[k])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(input.dim()));
            for idx in 0..input.len() {
                let (r, c) = (idx / input.ncols(), idx % input.ncols());
                let mut plus = inputs.to_vec();
                plus[k][[r, c]] += eps;
                let mut minus = inputs.to_vec();
                minus[k][[r, c]] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic[[r, c]];
                let denom = numeric.abs().max(1.0);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "input {k} entry ({r},{c}): analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn grad_matmul_add_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let c = rand_mat(&mut rng, 3, 2);
        fd_check(
            |g, v| {
                let m = g.matmul(v[0], v[1]);
                let s = g.add(m, v[2]);
                let t = g.mul(s, s);
                g.sum_all(t)
            },
            &[a, b, c],
            1e-6,
        );
    }

    #[test]
    fn grad_broadcast_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(&mut rng, 4, 6);
        let row = rand_mat(&mut rng, 1, 6);
        fd_check(
            |g, v| {
                let n = g.layer_norm_rows(v[0], 1e-5);
                let m = g.mul_row(n, v[1]);
                let s = g.add_row(m, v[1]);
                let e = g.mul(s, s);
                g.mean_all(e)
            },
            &[a, row],
            1e-5,
        );
    }

    #[test]
    fn grad_softmax_attention_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_mat(&mut rng, 3, 4);
        let k = rand_mat(&mut rng, 5, 4);
        let v = rand_mat(&mut rng, 5, 4);
        fd_check(
            |g, vars| {
                let kt = g.transpose(vars[1]);
                let scores = g.matmul(vars[0], kt);
                let scaled = g.scale(scores, 0.5);
                let attn = g.softmax_rows(scaled);
                let out = g.matmul(attn, vars[2]);
                let sq = g.mul(out, out);
                g.sum_all(sq)
            },
            &[q, k, v],
            1e-5,
        );
    }

    #[test]
    fn grad_elementwise_unary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_mat(&mut rng, 3, 3);
        fd_check(
            |g, v| {
                let s = g.sigmoid(v[0]);
                let r = g.relu(v[0]);
                let e = g.exp(v[0]);
                let sum = g.add(s, r);
                let sum = g.add(sum, e);
                let ab = g.abs(sum);
                g.sum_all(ab)
            },
            &[a],
            1e-5,
        );
    }

    #[test]
    fn grad_min_max_div() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 4, 3);
        let b = rand_mat(&mut rng, 4, 3);
        let c = rand_mat(&mut rng, 4, 3).mapv(|x| x + 3.0); // keep away from 0
        fd_check(
            |g, v| {
                let lo = g.min(v[0], v[1]);
                let hi = g.max(v[0], v[1]);
                let d = g.div(lo, v[2]);
                let s = g.add(d, hi);
                g.mean_all(s)
            },
            &[a, b, c],
            1e-5,
        );
    }

    #[test]
    fn grad_slicing_and_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_mat(&mut rng, 4, 6);
        let b = rand_mat(&mut rng, 2, 6);
        fd_check(
            |g, v| {
                let top = g.slice_rows(v[0], 0, 2);
                let left = g.slice_cols(v[0], 0, 3);
                let right = g.slice_cols(v[0], 3, 6);
                let joined = g.concat_cols(right, left);
                let stacked = g.concat_rows(top, v[1]);
                let picked = g.select_rows(stacked, vec![1, 1, 3]);
                let x = g.mul(joined, joined);
                let y = g.mul(picked, picked);
                let sx = g.sum_all(x);
                let sy = g.sum_all(y);
                g.add(sx, sy)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_reductions_and_divcol() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_mat(&mut rng, 5, 4);
        fd_check(
            |g, v| {
                let sq = g.mul(v[0], v[0]);
                let norms = g.sum_cols(sq);
                let shifted = g.add_scalar(norms, 2.0);
                let root = g.sqrt(shifted);
                let unit = g.div_col(v[0], root);
                let pooled = g.mean_rows(unit);
                let p2 = g.mul(pooled, pooled);
                g.sum_all(p2)
            },
            &[a],
            1e-5,
        );
    }

    #[test]
    fn grad_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = rand_mat(&mut rng, 4, 5);
        fd_check(
            |g, v| g.cross_entropy_rows(v[0], vec![0, 2, 4, 1], vec![1.0, 0.1, 1.0, 0.5]),
            &[logits],
            1e-6,
        );
    }

    #[test]
    fn grad_focal_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = rand_mat(&mut rng, 3, 4);
        let targets = Array2::from_shape_fn((3, 4), |(i, j)| f64::from((i + j) % 3 == 0));
        fd_check(
            |g, v| g.focal_bce(v[0], targets.clone(), 2.0, 0.25, 3.0),
            &[logits],
            1e-5,
        );
    }

    #[test]
    fn focal_matches_bce_at_gamma_zero() {
        // gamma=0, alpha=0.5 halves plain binary cross-entropy.
        let mut g = Graph::<f64>::new();
        let x = g.constant(array![[0.3, -1.2]]);
        let t = array![[1.0, 0.0]];
        let loss = g.focal_bce(x, t, 0.0, 0.5, 1.0);
        let expected = 0.5 * ((1.0 + (-0.3f64).exp()).ln() + (1.0 + (-1.2f64).exp()).ln());
        assert!((g.value(loss)[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn param_leaves_are_shared_and_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", array![[2.0, 1.0]], 1.0);
        let mut g = Graph::new();
        let p1 = g.param(&store, w);
        let p2 = g.param(&store, w);
        assert_eq!(p1, p2);
        // loss = sum(w) + sum(w * w) -> dw = 1 + 2w
        let prod = g.mul(p1, p2);
        let s1 = g.sum_all(prod);
        let s2 = g.sum_all(p1);
        let loss = g.add(s1, s2);
        let grads = g.backward(loss);
        let pg = g.param_grads(&grads);
        let gw = &pg[&w];
        assert_eq!(gw[[0, 0]], 5.0);
        assert_eq!(gw[[0, 1]], 3.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        let s = g.softmax_rows(x);
        for row in g.value(s).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
