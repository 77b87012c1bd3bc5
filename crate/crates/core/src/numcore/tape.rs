//! Minimal reverse-mode tape over [`Matrix`] values.
//!
//! Forward calls append nodes in evaluation order; [`Tape::backward`] walks
//! them in reverse and applies each op's analytic rule. Only nodes that
//! depend on a registered parameter receive gradients.

use super::matrix::{self, Matrix};
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a trainable parameter across the forward and backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Scale(Var, f64),
    AddRowVector(Var, Var),
    Relu(Var),
    /// Keeps the pre-normalization row norms.
    L2NormalizeRows(Var, Vec<f64>),
    ScaleByExp(Var, Var),
    /// Mean of table rows per sequence.
    MeanPool(Var, Vec<Vec<usize>>),
    /// Keeps the row softmax of the logits.
    CrossEntropyRows(Var, Vec<usize>, Matrix),
    MeanRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    param: Option<ParamId>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by parameter, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradTape {
    entries: Vec<(ParamId, Matrix)>,
}

impl GradTape {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.entries.iter().map(|(p, g)| (*p, g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn accumulate(&mut self, id: ParamId, grad: Matrix) -> Result<(), NumError> {
        match self.entries.iter_mut().find(|(p, _)| *p == id) {
            Some((_, g)) => g.add_assign(&grad),
            None => {
                self.entries.push((id, grad));
                Ok(())
            }
        }
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, None, false)
    }

    /// Records a trainable parameter whose gradient will be reported.
    pub fn param(&mut self, id: ParamId, value: Matrix) -> Var {
        self.push(value, Op::Leaf, Some(id), true)
    }

    fn push(&mut self, value: Matrix, op: Op, param: Option<ParamId>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, None, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.derived(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.derived(value, Op::Scale(a, c), &[a])
    }

    /// Broadcasts a 1×cols `bias` over the rows of `a`.
    pub fn add_row_vector(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let value = self.value(a).add_row_vector(self.value(bias))?;
        Ok(self.derived(value, Op::AddRowVector(a, bias), &[a, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.derived(value, Op::Relu(a), &[a])
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let input = self.value(a);
        let norms: Vec<f64> = input.row_iter().map(matrix::norm).collect();
        let value = matrix::l2_normalize_rows(input)?;
        Ok(self.derived(value, Op::L2NormalizeRows(a, norms), &[a]))
    }

    /// `exp(s) · a` for a 1×1 log-scale `s`.
    pub fn scale_by_exp(&mut self, a: Var, log_scale: Var) -> Result<Var, NumError> {
        let s = self.value(log_scale);
        if s.shape() != (1, 1) {
            return Err(NumError::NotScalar(s.shape()));
        }
        let value = self.value(a).scale(s.item().exp());
        Ok(self.derived(value, Op::ScaleByExp(a, log_scale), &[a, log_scale]))
    }

    /// Mean of `table` rows for each id sequence; output is sequences × cols.
    pub fn mean_pool(&mut self, table: Var, sequences: Vec<Vec<usize>>) -> Result<Var, NumError> {
        let t = self.value(table);
        let mut out = Matrix::zeros(sequences.len(), t.cols());
        for (r, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(NumError::EmptySequence(r));
            }
            if let Some(&bad) = seq.iter().find(|&&id| id >= t.rows()) {
                return Err(NumError::IndexOutOfRange {
                    row: r,
                    index: bad,
                    cols: t.rows(),
                });
            }
            let inv = 1.0 / seq.len() as f64;
            let row = out.row_mut(r);
            for &id in seq {
                for (o, &v) in row.iter_mut().zip(t.row(id)) {
                    *o += v;
                }
            }
            for o in row.iter_mut() {
                *o *= inv;
            }
        }
        Ok(self.derived(out, Op::MeanPool(table, sequences), &[table]))
    }

    /// Mean row cross-entropy against `targets`; a 1×1 result.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, NumError> {
        let l = self.value(logits);
        let loss = matrix::cross_entropy_rows(l, &targets)?;
        let probs = matrix::softmax_rows(l);
        Ok(self.derived(
            Matrix::scalar(loss),
            Op::CrossEntropyRows(logits, targets, probs),
            &[logits],
        ))
    }

    /// Mean over rows; a 1×cols result.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        self.derived(value, Op::MeanRows(a), &[a])
    }

    /// Back-propagates from a 1×1 `output` and collects parameter gradients.
    pub fn backward(&self, output: Var) -> Result<GradTape, NumError> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(NumError::NotScalar(out_shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));
        let mut tape = GradTape::default();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            for (input, contribution) in self.local_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(existing) => existing.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
            if let Some(id) = node.param {
                tape.accumulate(id, g)?;
            }
        }
        Ok(tape)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, node: &Node, g: &Matrix) -> Result<Vec<(Var, Matrix)>, NumError> {
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.matmul_t(self.value(*b))?));
                }
                if self.needs(*b) {
                    out.push((*b, self.value(*a).t_matmul(g)?));
                }
            }
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Scale(a, c) => out.push((*a, g.scale(*c))),
            Op::AddRowVector(a, bias) => {
                out.push((*a, g.clone()));
                if self.needs(*bias) {
                    out.push((*bias, g.sum_rows()));
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                out.push((*a, dx));
            }
            Op::L2NormalizeRows(a, norms) => {
                // d/dx (x/|x|) applied to g: (g - y (y·g)) / |x|
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for (r, &nr) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = matrix::dot(yr, gr);
                    let inv = 1.0 / nr;
                    for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) * inv;
                    }
                }
                out.push((*a, dx));
            }
            Op::ScaleByExp(a, s) => {
                let scale = self.value(*s).item().exp();
                if self.needs(*a) {
                    out.push((*a, g.scale(scale)));
                }
                if self.needs(*s) {
                    out.push((*s, Matrix::scalar(g.frobenius_dot(&node.value))));
                }
            }
            Op::MeanPool(table, sequences) => {
                let t = self.value(*table);
                let mut dt = Matrix::zeros(t.rows(), t.cols());
                for (r, seq) in sequences.iter().enumerate() {
                    let inv = 1.0 / seq.len() as f64;
                    let gr = g.row(r);
                    for &id in seq {
                        for (d, &gv) in dt.row_mut(id).iter_mut().zip(gr) {
                            *d += gv * inv;
                        }
                    }
                }
                out.push((*table, dt));
            }
            Op::CrossEntropyRows(logits, targets, probs) => {
                let upstream = g.item() / probs.rows() as f64;
                let mut dl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = dl.get(r, t);
                    dl.set(r, t, v - 1.0);
                }
                out.push((*logits, dl.scale(upstream)));
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let inv = 1.0 / x.rows() as f64;
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.data()) {
                        *d = gv * inv;
                    }
                }
                out.push((*a, dx));
            }
        }
        Ok(out)
    }
}
