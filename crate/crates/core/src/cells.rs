//! LSTM and GRU cells.
//!
//! Every cell has two forward routes: a plain value route used for decoding
//! and a tape route used when gradients are needed. Tests pin them to each
//! other and pin the tape route to finite differences.
//!
//! LSTM:
//! ```text
//! i = σ(x U_i + h W_i + b_i)     f = σ(x U_f + h W_f + b_f)
//! o = σ(x U_o + h W_o + b_o)     c̃ = tanh(x U_c + h W_c + b_c)
//! c' = f ⊙ c + i ⊙ c̃             h' = o ⊙ tanh(c')
//! ```
//! GRU:
//! ```text
//! z = σ(x U_z + h W_z + b_z)     r = σ(x U_r + h W_r + b_r)
//! h̃ = tanh(x U_h + (r ⊙ h) W_h + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ h̃
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{join, uniform, Parameters};
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, tanh_v, Matrix, TensorError, Vector};

/// Initial value of every forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot unroll an empty input sequence")]
    EmptySequence,
    #[error("cell state does not match the cell type")]
    StateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Lstm,
    Gru,
}

impl std::fmt::Display for CellType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellType::Lstm => "lstm",
            CellType::Gru => "gru",
        })
    }
}

impl std::str::FromStr for CellType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lstm" => Ok(CellType::Lstm),
            "gru" => Ok(CellType::Gru),
            other => Err(format!("unknown cell type {other:?} (expected lstm or gru)")),
        }
    }
}

/// Hidden state, plus the memory cell for LSTMs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Option<Vector>,
}

impl CellState {
    pub fn zeros(cell: CellType, d_h: usize) -> Self {
        Self {
            h: Vector::zeros(d_h),
            c: match cell {
                CellType::Lstm => Some(Vector::zeros(d_h)),
                CellType::Gru => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_o: Matrix,
    pub u_c: Matrix,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_c: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

fn gate(x: &Vector, u: &Matrix, h: &Vector, w: &Matrix, b: &Matrix) -> Result<Vector, TensorError> {
    let pre = x.matmul(u)?.add(&h.matmul(w)?)?;
    pre.add(&Vector::from(b.data()))
}

impl LstmParams {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        let u = || Matrix::zeros(d_in, d_h);
        let w = || Matrix::zeros(d_h, d_h);
        let b = || Matrix::zeros(1, d_h);
        Self {
            u_i: u(),
            u_f: u(),
            u_o: u(),
            u_c: u(),
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_c: w(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    pub fn random(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d_in, d_h);
        for m in [
            &mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_c, &mut p.w_i, &mut p.w_f, &mut p.w_o,
            &mut p.w_c,
        ] {
            *m = uniform(m.rows(), m.cols(), rng);
        }
        p.b_f.fill(FORGET_BIAS_INIT);
        p
    }

    pub fn d_in(&self) -> usize {
        self.u_i.rows()
    }

    pub fn d_h(&self) -> usize {
        self.u_i.cols()
    }

    pub fn step(&self, x: &Vector, prev: &CellState) -> Result<CellState, CellError> {
        let c_prev = prev.c.as_ref().ok_or(CellError::StateKind)?;
        let h = &prev.h;
        let i = sigmoid(&gate(x, &self.u_i, h, &self.w_i, &self.b_i)?);
        let f = sigmoid(&gate(x, &self.u_f, h, &self.w_f, &self.b_f)?);
        let o = sigmoid(&gate(x, &self.u_o, h, &self.w_o, &self.b_o)?);
        let cand = tanh_v(&gate(x, &self.u_c, h, &self.w_c, &self.b_c)?);
        let c = f.hadamard(c_prev)?.add(&i.hadamard(&cand)?)?;
        let h = o.hadamard(&tanh_v(&c))?;
        Ok(CellState { h, c: Some(c) })
    }
}

impl Parameters for LstmParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        for (name, m) in [
            ("u_i", &self.u_i),
            ("u_f", &self.u_f),
            ("u_o", &self.u_o),
            ("u_c", &self.u_c),
            ("w_i", &self.w_i),
            ("w_f", &self.w_f),
            ("w_o", &self.w_o),
            ("w_c", &self.w_c),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_c", &self.b_c),
        ] {
            f(join(prefix, name), m);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        for m in [
            &mut self.u_i, &mut self.u_f, &mut self.u_o, &mut self.u_c, &mut self.w_i,
            &mut self.w_f, &mut self.w_o, &mut self.w_c, &mut self.b_i, &mut self.b_f,
            &mut self.b_o, &mut self.b_c,
        ] {
            f(m);
        }
    }
}

impl GruParams {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            u_z: Matrix::zeros(d_in, d_h),
            u_r: Matrix::zeros(d_in, d_h),
            u_h: Matrix::zeros(d_in, d_h),
            w_z: Matrix::zeros(d_h, d_h),
            w_r: Matrix::zeros(d_h, d_h),
            w_h: Matrix::zeros(d_h, d_h),
            b_z: Matrix::zeros(1, d_h),
            b_r: Matrix::zeros(1, d_h),
            b_h: Matrix::zeros(1, d_h),
        }
    }

    pub fn random(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d_in, d_h);
        for m in [
            &mut p.u_z, &mut p.u_r, &mut p.u_h, &mut p.w_z, &mut p.w_r, &mut p.w_h,
        ] {
            *m = uniform(m.rows(), m.cols(), rng);
        }
        p
    }

    pub fn d_in(&self) -> usize {
        self.u_z.rows()
    }

    pub fn d_h(&self) -> usize {
        self.u_z.cols()
    }

    pub fn step(&self, x: &Vector, prev: &CellState) -> Result<CellState, CellError> {
        let h = &prev.h;
        let z = sigmoid(&gate(x, &self.u_z, h, &self.w_z, &self.b_z)?);
        let r = sigmoid(&gate(x, &self.u_r, h, &self.w_r, &self.b_r)?);
        let rh = r.hadamard(h)?;
        let cand = tanh_v(&gate(x, &self.u_h, &rh, &self.w_h, &self.b_h)?);
        let keep = z.map(|v| 1.0 - v).hadamard(h)?;
        let h = keep.add(&z.hadamard(&cand)?)?;
        Ok(CellState { h, c: None })
    }
}

impl Parameters for GruParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        for (name, m) in [
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ] {
            f(join(prefix, name), m);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        for m in [
            &mut self.u_z, &mut self.u_r, &mut self.u_h, &mut self.w_z, &mut self.w_r,
            &mut self.w_h, &mut self.b_z, &mut self.b_r, &mut self.b_h,
        ] {
            f(m);
        }
    }
}

pub fn lstm_step(params: &LstmParams, x: &Vector, prev: &CellState) -> Result<CellState, CellError> {
    params.step(x, prev)
}

pub fn gru_step(params: &GruParams, x: &Vector, prev: &CellState) -> Result<CellState, CellError> {
    params.step(x, prev)
}

/// Either cell behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Lstm(LstmParams),
    Gru(GruParams),
}

impl CellParams {
    pub fn zeros(cell: CellType, d_in: usize, d_h: usize) -> Self {
        match cell {
            CellType::Lstm => CellParams::Lstm(LstmParams::zeros(d_in, d_h)),
            CellType::Gru => CellParams::Gru(GruParams::zeros(d_in, d_h)),
        }
    }

    pub fn random(cell: CellType, d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        match cell {
            CellType::Lstm => CellParams::Lstm(LstmParams::random(d_in, d_h, rng)),
            CellType::Gru => CellParams::Gru(GruParams::random(d_in, d_h, rng)),
        }
    }

    pub fn cell_type(&self) -> CellType {
        match self {
            CellParams::Lstm(_) => CellType::Lstm,
            CellParams::Gru(_) => CellType::Gru,
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.d_in(),
            CellParams::Gru(p) => p.d_in(),
        }
    }

    pub fn d_h(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.d_h(),
            CellParams::Gru(p) => p.d_h(),
        }
    }

    pub fn zero_state(&self) -> CellState {
        CellState::zeros(self.cell_type(), self.d_h())
    }

    pub fn step(&self, x: &Vector, prev: &CellState) -> Result<CellState, CellError> {
        match self {
            CellParams::Lstm(p) => p.step(x, prev),
            CellParams::Gru(p) => p.step(x, prev),
        }
    }

    /// Registers this cell's matrices on the tape in visit order.
    pub fn bind(&self, tape: &mut Tape) -> BoundCell {
        let mut vars = Vec::new();
        self.visit("", &mut |_, m| vars.push(tape.param(m)));
        BoundCell {
            cell: self.cell_type(),
            vars,
        }
    }

    pub fn check_input(&self, x_len: usize) -> Result<(), CellError> {
        if x_len != self.d_in() {
            return Err(TensorError::ShapeMismatch {
                op: "cell_input",
                left: (1, x_len),
                right: (self.d_in(), self.d_h()),
            }
            .into());
        }
        Ok(())
    }
}

impl Parameters for CellParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        match self {
            CellParams::Lstm(p) => p.visit(prefix, f),
            CellParams::Gru(p) => p.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        match self {
            CellParams::Lstm(p) => p.visit_mut(f),
            CellParams::Gru(p) => p.visit_mut(f),
        }
    }
}

/// Cell state living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub h: Var,
    pub c: Option<Var>,
}

/// A cell's parameters registered on a tape, in visit order.
#[derive(Debug, Clone)]
pub struct BoundCell {
    cell: CellType,
    vars: Vec<Var>,
}

impl BoundCell {
    fn gate(&self, tape: &mut Tape, x: Var, h: Var, u: usize, w: usize, b: usize) -> Var {
        let xu = tape.matmul(x, self.vars[u]);
        let hw = tape.matmul(h, self.vars[w]);
        let s = tape.add(xu, hw);
        tape.add(s, self.vars[b])
    }

    pub fn step(&self, tape: &mut Tape, x: Var, prev: TapeState) -> TapeState {
        match self.cell {
            CellType::Lstm => {
                // u_i u_f u_o u_c | w_i w_f w_o w_c | b_i b_f b_o b_c
                let h = prev.h;
                let c_prev = prev.c.expect("lstm state carries a cell");
                let i = self.gate(tape, x, h, 0, 4, 8);
                let i = tape.sigmoid(i);
                let f = self.gate(tape, x, h, 1, 5, 9);
                let f = tape.sigmoid(f);
                let o = self.gate(tape, x, h, 2, 6, 10);
                let o = tape.sigmoid(o);
                let cand = self.gate(tape, x, h, 3, 7, 11);
                let cand = tape.tanh(cand);
                let fc = tape.mul(f, c_prev);
                let ic = tape.mul(i, cand);
                let c = tape.add(fc, ic);
                let tc = tape.tanh(c);
                let h = tape.mul(o, tc);
                TapeState { h, c: Some(c) }
            }
            CellType::Gru => {
                // u_z u_r u_h | w_z w_r w_h | b_z b_r b_h
                let h = prev.h;
                let z = self.gate(tape, x, h, 0, 3, 6);
                let z = tape.sigmoid(z);
                let r = self.gate(tape, x, h, 1, 4, 7);
                let r = tape.sigmoid(r);
                let rh = tape.mul(r, h);
                let cand = self.gate(tape, x, rh, 2, 5, 8);
                let cand = tape.tanh(cand);
                let nz = tape.one_minus(z);
                let keep = tape.mul(nz, h);
                let upd = tape.mul(z, cand);
                let h = tape.add(keep, upd);
                TapeState { h, c: None }
            }
        }
    }
}

/// Runs `cell` over `inputs` from `init`, returning every intermediate state.
pub fn unroll(cell: &CellParams, inputs: &[Vector], init: &CellState) -> Result<Vec<CellState>, CellError> {
    if inputs.is_empty() {
        return Err(CellError::EmptySequence);
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut state = init.clone();
    for x in inputs {
        state = cell.step(x, &state)?;
        states.push(state.clone());
    }
    Ok(states)
}
