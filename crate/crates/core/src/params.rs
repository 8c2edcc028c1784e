use rand::Rng;

use crate::tensor::Matrix;

/// Uniform init range for weights.
pub const INIT_RANGE: f64 = 0.1;

/// Anything that owns trainable matrices.
///
/// `visit` and `visit_mut` must walk the same matrices in the same order;
/// that order is the gradient order reported by the tape, the optimizer
/// state order and the checkpoint manifest order.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Matrix));

    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, m| out.push((name, m)));
        out
    }

    fn param_matrices(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        self.visit("", &mut |_, m| out.push(m.clone()));
        out
    }

    /// Overwrites every parameter from `values`, in visit order.
    fn load_matrices(&mut self, values: &[Matrix]) {
        let mut it = values.iter();
        self.visit_mut(&mut |m| {
            let v = it.next().expect("too few matrices");
            assert_eq!(m.shape(), v.shape(), "parameter shape changed");
            m.data_mut().copy_from_slice(v.data());
        });
        assert!(it.next().is_none(), "too many matrices");
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }
}

pub(crate) fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
