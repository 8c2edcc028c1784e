//! Reverse-mode gradient tape.
//!
//! The forward pass appends one node per operation, each holding its value
//! and the indices of its inputs. [`Tape::backward`] walks the nodes in
//! reverse order and applies the per-operation adjoint rule. Parameter
//! leaves are numbered in registration order so the returned gradients line
//! up with the order parameters were bound.

use crate::tensor::{softmax_slice, Matrix, LOG_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    Gather { table: Var, row: usize },
    StackRows(Vec<Var>),
    Softmax(Var),
    NegLogPick { probs: Var, index: usize },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a trainable leaf. Its gradient is reported at position
    /// `param_count()` (before the call) by [`Tape::backward`].
    pub fn param(&mut self, value: &Matrix) -> Var {
        let v = self.push(value.clone(), Op::Param);
        self.params.push(v);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    // Shapes are checked by the model before it records anything, so the
    // recording ops panic on mismatch instead of threading Results through.

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b)).expect("matmul shape");
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul_transposed(self.value(b))
            .expect("matmul_t shape");
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b)).expect("add shape");
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b)).expect("mul shape");
        self.push(value, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(crate::tensor::sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Column-wise concatenation of two single-row values.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.rows() == 1 && vb.rows() == 1, "concat expects rows");
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        self.push(Matrix::row_vector(data), Op::Concat(a, b))
    }

    pub fn gather(&mut self, table: Var, row: usize) -> Var {
        let value = Matrix::row_vector(self.value(table).row(row).to_vec());
        self.push(value, Op::Gather { table, row })
    }

    /// Stacks single-row values into a matrix, one row each.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let cols = self.value(rows[0]).cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(self.value(r).data());
        }
        let value = Matrix::from_vec(rows.len(), cols, data).expect("stack_rows shape");
        self.push(value, Op::StackRows(rows.to_vec()))
    }

    /// Softmax over a single row.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = Matrix::row_vector(softmax_slice(self.value(a).data()));
        self.push(value, Op::Softmax(a))
    }

    /// `-ln(p[index] + LOG_EPS)` as a 1x1 value.
    pub fn neg_log_pick(&mut self, probs: Var, index: usize) -> Var {
        let p = self.value(probs).data()[index];
        let value = Matrix::row_vector(vec![-(p + LOG_EPS).ln()]);
        self.push(value, Op::NegLogPick { probs, index })
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let first = self.value(terms[0]).clone();
        let value = terms[1..].iter().fold(first, |mut acc, &t| {
            acc.add_assign(self.value(t)).expect("sum shape");
            acc
        });
        self.push(value, Op::Sum(terms.to_vec()))
    }

    /// Back-propagates from a 1x1 `loss` node and returns one gradient per
    /// registered parameter, in registration order.
    pub fn backward(&self, loss: Var) -> Vec<Matrix> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_transposed(self.value(*b)).unwrap();
                    let db = self.value(*a).transpose().matmul(&g).unwrap();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // out = a b^T: da = g b, db = g^T a
                    let da = g.matmul(self.value(*b)).unwrap();
                    let db = g.transpose().matmul(self.value(*a)).unwrap();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b)).unwrap();
                    let db = g.hadamard(self.value(*a)).unwrap();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::OneMinus(a) => accumulate(&mut adj, *a, g.scale(-1.0)),
                Op::Sigmoid(a) => {
                    let d = node.value.map(|s| s * (1.0 - s)).hadamard(&g).unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Tanh(a) => {
                    let d = node.value.map(|t| 1.0 - t * t).hadamard(&g).unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).cols();
                    let (ga, gb) = g.data().split_at(na);
                    accumulate(&mut adj, *a, Matrix::row_vector(ga.to_vec()));
                    accumulate(&mut adj, *b, Matrix::row_vector(gb.to_vec()));
                }
                Op::Gather { table, row } => {
                    // accumulate into the one row instead of building a dense table
                    let slot = adj[table.0].get_or_insert_with(|| {
                        let t = self.value(*table);
                        Matrix::zeros(t.rows(), t.cols())
                    });
                    for (a, b) in slot.row_mut(*row).iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                Op::StackRows(rows) => {
                    for (r, &v) in rows.iter().enumerate() {
                        accumulate(&mut adj, v, Matrix::row_vector(g.row(r).to_vec()));
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let gy: f64 = y.iter().zip(g.data()).map(|(y, g)| y * g).sum();
                    let d: Vec<f64> = y
                        .iter()
                        .zip(g.data())
                        .map(|(y, g)| y * (g - gy))
                        .collect();
                    accumulate(&mut adj, *a, Matrix::row_vector(d));
                }
                Op::NegLogPick { probs, index } => {
                    let p = self.value(*probs);
                    let mut d = Matrix::zeros(1, p.cols());
                    d.data_mut()[*index] = -g.get(0, 0) / (p.data()[*index] + LOG_EPS);
                    accumulate(&mut adj, *probs, d);
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        accumulate(&mut adj, t, g.clone());
                    }
                }
            }
        }

        self.params
            .iter()
            .map(|p| {
                adj.get(p.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| {
                        let v = self.value(*p);
                        Matrix::zeros(v.rows(), v.cols())
                    })
            })
            .collect()
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g).unwrap(),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_relative_error};

    fn check<F>(params: Vec<Matrix>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = build(&mut tape, &vars);
        let analytic = tape.backward(loss);
        let numeric = finite_diff_grad(
            |ps| {
                let mut t = Tape::new();
                let vs: Vec<Var> = ps.iter().map(|p| t.param(p)).collect();
                let l = build(&mut t, &vs);
                t.scalar(l)
            },
            &params,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-7, "max relative error {err}");
    }

    #[test]
    fn matmul_gradients() {
        let x = Matrix::from_rows(&[vec![0.3, -0.7, 1.1]]);
        let w = Matrix::from_rows(&[vec![0.2, -0.1], vec![0.5, 0.4], vec![-0.3, 0.9]]);
        let s = Matrix::from_rows(&[vec![1.0], vec![-2.0]]);
        check(vec![x, w, s], |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.tanh(h);
            t.matmul(h, v[2])
        });
    }

    #[test]
    fn gating_gradients() {
        let a = Matrix::from_rows(&[vec![0.3, -0.7]]);
        let b = Matrix::from_rows(&[vec![-1.2, 0.4]]);
        check(vec![a, b], |t, v| {
            let z = t.sigmoid(v[0]);
            let nz = t.one_minus(z);
            let l = t.mul(nz, v[1]);
            let r = t.mul(z, v[0]);
            let h = t.add(l, r);
            let c = t.concat(h, v[1]);
            let p = t.softmax(c);
            t.neg_log_pick(p, 2)
        });
    }

    #[test]
    fn attention_shaped_gradients() {
        let e0 = Matrix::from_rows(&[vec![0.3, -0.7]]);
        let e1 = Matrix::from_rows(&[vec![0.9, 0.1]]);
        let q = Matrix::from_rows(&[vec![-0.5, 0.8]]);
        let table = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.6], vec![0.0, 1.0]]);
        check(vec![e0, e1, q, table], |t, v| {
            let e = t.stack_rows(&[v[0], v[1]]);
            let scores = t.matmul_t(v[2], e);
            let w = t.softmax(scores);
            let ctx = t.matmul(w, e);
            let emb = t.gather(v[3], 1);
            let x = t.mul(ctx, emb);
            let p = t.softmax(x);
            let a = t.neg_log_pick(p, 0);
            let b = t.neg_log_pick(w, 1);
            t.sum(&[a, b])
        });
    }

    #[test]
    fn unused_params_get_zero_grad() {
        let mut t = Tape::new();
        let a = t.param(&Matrix::filled(1, 1, 2.0));
        let _b = t.param(&Matrix::filled(2, 2, 1.0));
        let l = t.mul(a, a);
        let g = t.backward(l);
        assert_eq!(g[0].get(0, 0), 4.0);
        assert_eq!(g[1], Matrix::zeros(2, 2));
    }
}
