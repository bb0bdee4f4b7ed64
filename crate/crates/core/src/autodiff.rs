//! Reverse-mode differentiation over [`Array`] values.
//!
//! Every operation appends a node holding its output value, so node ids are
//! topologically ordered by construction. [`Tape::backward`] walks the nodes in
//! strict reverse order exactly once.

use crate::error::{Error, Result};
use crate::tensor::Array;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Lincomb { base: Var, terms: Vec<(f64, Var)> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Tanh(Var),
    Square(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    AppendColumn(Var),
    Column { x: Var, j: usize },
    ConcatColumns(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Array,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    #[cfg(test)]
    broken_tanh_rule: bool,
}

/// Adjoints produced by [`Tape::backward`], keyed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Array>>,
}

impl Gradients {
    /// Adjoint of a leaf, or `None` if the leaf does not influence the output.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.adjoints.get(var.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `var`, with zeros of `shape` when it is unreachable.
    pub fn get_or_zeros(&self, var: Var, like: &Array) -> Array {
        self.get(var).cloned().unwrap_or_else(|| Array::zeros_like(like))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Array)> {
        self.adjoints
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|a| (Var(i), a)))
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

    /// Discards every node recorded after the first `len`. Handles to
    /// discarded nodes must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Array) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameters, initial states).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A value that gradients never flow into.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(Op::Const, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    /// `base + Σ cᵢ · termsᵢ`, evaluated exactly as [`Array::lincomb`].
    pub fn lincomb(&mut self, base: Var, terms: &[(f64, Var)]) -> Result<Var> {
        let refs: Vec<(f64, &Array)> = terms.iter().map(|&(c, t)| (c, self.value(t))).collect();
        let v = Array::lincomb(self.value(base), &refs)?;
        let terms = terms.iter().copied().filter(|(c, _)| *c != 0.0).collect();
        Ok(self.push(Op::Lincomb { base, terms }, v))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = Array::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(Op::Linear { x, w, b }, v))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.push(Op::Square(x), v)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(Op::Log(x), v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let a = self.value(x);
        let v = Array::scalar(a.sum() / a.len().max(1) as f64);
        self.push(Op::Mean(x), v)
    }

    /// Appends a constant column (e.g. the time input of a dynamics network).
    pub fn append_column(&mut self, x: Var, value: f64) -> Var {
        let v = self.value(x).append_column(value);
        self.push(Op::AppendColumn(x), v)
    }

    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let v = self.value(x).column(j)?;
        Ok(self.push(Op::Column { x, j }, v))
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Array> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Array::concat_columns(&refs)?;
        Ok(self.push(Op::ConcatColumns(parts.to_vec()), v))
    }

    /// Reverse sweep from a scalar-valued `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out_value.shape()
            )));
        }
        let mut adj: Vec<Option<Array>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Array::filled(out_value.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
        }

        for (i, slot) in adj.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, node: &Node, g: &Array, adj: &mut [Option<Array>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                accumulate(adj, *a, g, 1.0)?;
                accumulate(adj, *b, g, 1.0)?;
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g, 1.0)?;
                accumulate(adj, *b, g, -1.0)?;
            }
            Op::Mul(a, b) => {
                let ga = g.mul(self.value(*b))?;
                let gb = g.mul(self.value(*a))?;
                accumulate_owned(adj, *a, ga)?;
                accumulate_owned(adj, *b, gb)?;
            }
            Op::Affine { x, scale } => accumulate(adj, *x, g, *scale)?,
            Op::Lincomb { base, terms } => {
                accumulate(adj, *base, g, 1.0)?;
                for &(c, t) in terms {
                    accumulate(adj, t, g, c)?;
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if !self.is_const(*x) {
                    let gx = Array::linear_input_grad(g, wv, xv.shape());
                    accumulate_owned(adj, *x, gx)?;
                }
                if !self.is_const(*w) {
                    let slot = adj[w.0].get_or_insert_with(|| Array::zeros_like(wv));
                    Array::accumulate_weight_grad(slot, g, xv);
                }
                if let Some(b) = b {
                    if !self.is_const(*b) {
                        let bv = self.value(*b);
                        let slot = adj[b.0].get_or_insert_with(|| Array::zeros_like(bv));
                        Array::accumulate_bias_grad(slot, g);
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = if self.tanh_rule_broken() {
                    g.clone()
                } else {
                    g.zip_map(&node.value, |gi, h| gi * (1.0 - h * h))?
                };
                accumulate_owned(adj, *x, gx)?;
            }
            Op::Square(x) => {
                let gx = g.zip_map(self.value(*x), |gi, xi| 2.0 * gi * xi)?;
                accumulate_owned(adj, *x, gx)?;
            }
            Op::Exp(x) => {
                let gx = g.mul(&node.value)?;
                accumulate_owned(adj, *x, gx)?;
            }
            Op::Log(x) => {
                let gx = g.zip_map(self.value(*x), |gi, xi| gi / xi)?;
                accumulate_owned(adj, *x, gx)?;
            }
            Op::Sum(x) => {
                let gx = Array::filled(self.value(*x).shape(), g.item()?);
                accumulate_owned(adj, *x, gx)?;
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gx = Array::filled(xv.shape(), g.item()? / xv.len().max(1) as f64);
                accumulate_owned(adj, *x, gx)?;
            }
            Op::AppendColumn(x) => accumulate_owned(adj, *x, g.drop_last_column())?,
            Op::Column { x, j } => {
                let xv = self.value(*x);
                let (_, d) = xv.rows_cols();
                let mut gx = Array::zeros_like(xv);
                for (row, gi) in gx.data_mut().chunks_mut(d).zip(g.data()) {
                    row[*j] = *gi;
                }
                accumulate_owned(adj, *x, gx)?;
            }
            Op::ConcatColumns(parts) => {
                let (_, total) = g.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let (_, w) = pv.rows_cols();
                    let mut gp = Vec::with_capacity(pv.len());
                    for row in g.data().chunks(total) {
                        gp.extend_from_slice(&row[offset..offset + w]);
                    }
                    offset += w;
                    accumulate_owned(adj, p, Array::from_vec(pv.shape().to_vec(), gp)?)?;
                }
            }
        }
        Ok(())
    }

    fn is_const(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Const)
    }

    #[cfg(test)]
    fn tanh_rule_broken(&self) -> bool {
        self.broken_tanh_rule
    }

    #[cfg(not(test))]
    fn tanh_rule_broken(&self) -> bool {
        false
    }

    /// Test fixture: makes the tanh adjoint drop its `1 − tanh²` factor.
    #[cfg(test)]
    pub(crate) fn break_tanh_rule(&mut self) {
        self.broken_tanh_rule = true;
    }
}

fn accumulate(adj: &mut [Option<Array>], v: Var, g: &Array, c: f64) -> Result<()> {
    match &mut adj[v.0] {
        Some(a) => a.axpy(c, g),
        slot @ None => {
            *slot = Some(if c == 1.0 { g.clone() } else { g.scale(c) });
            Ok(())
        }
    }
}

fn accumulate_owned(adj: &mut [Option<Array>], v: Var, g: Array) -> Result<()> {
    match &mut adj[v.0] {
        Some(a) => a.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
