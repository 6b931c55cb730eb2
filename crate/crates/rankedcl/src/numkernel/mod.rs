//! Minimal dense numeric layer with reverse-mode gradient propagation.

mod matrix;
mod tape;

pub use matrix::{dot, Matrix};
pub use tape::{Gradients, Tape, Var};

/// Central-difference gradient of a scalar-valued function:
/// (f(x + eps e_ij) - f(x - eps e_ij)) / 2 eps per entry.
///
/// Validation oracle for every analytic gradient in the crate; keep it
/// independent of any tape machinery.
pub fn finite_diff_grad<F>(f: F, x: &Matrix, eps: f64) -> Matrix
where
    F: Fn(&Matrix) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + eps);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - eps);
            grad.set(i, j, (f(&plus) - f(&minus)) / (2.0 * eps));
        }
    }
    grad
}

/// Relative error convention used by all gradient checks:
/// |a - b| / max(|a|, |b|, 1e-8).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(1e-8))
}

/// Max entrywise relative error between two same-shape matrices.
pub fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn finite_diff_of_sum_is_ones() {
        let x = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.0]]).unwrap();
        let g = finite_diff_grad(|m| m.sum(), &x, 1e-5);
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_diff_of_half_sq_norm_is_x() {
        let x = Matrix::from_rows(&[vec![0.3, -0.7, 0.2]]).unwrap();
        let g = finite_diff_grad(
            |m| 0.5 * m.data().iter().map(|v| v * v).sum::<f64>(),
            &x,
            1e-5,
        );
        assert!(g.max_abs_diff(&x) < 1e-9);
    }

    // Tape gradient vs finite differences on a composite of every primitive.
    #[test]
    fn tape_matches_finite_diff_on_composite() {
        let mut rng = Rng::new(99);
        for trial in 0..20 {
            let x0 = random_matrix(&mut rng, 4, 3);
            // keep rows away from zero norm for the normalize stage
            let x0 = {
                let mut m = x0;
                for i in 0..m.rows() {
                    m.set(i, 0, m.get(i, 0) + 2.0);
                }
                m
            };
            let w = random_matrix(&mut rng, 3, 3);
            let b = random_matrix(&mut rng, 1, 3);

            let f = |x: &Matrix| -> f64 {
                let h = x.matmul(&w).unwrap();
                let h = {
                    let mut out = h.clone();
                    for i in 0..out.rows() {
                        for j in 0..out.cols() {
                            let v = out.get(i, j) + b.get(0, j);
                            out.set(i, j, v.max(0.0));
                        }
                    }
                    out
                };
                let h = h.add(&x).unwrap_or_else(|_| h.clone());
                let z = h.l2_normalize_rows().unwrap();
                z.hadamard(&z).unwrap().sum() + z.scale(0.5).sum()
            };

            let mut tape = Tape::new();
            let xv = tape.input(x0.clone());
            let wv = tape.input(w.clone());
            let bv = tape.input(b.clone());
            let h = tape.matmul(xv, wv).unwrap();
            let h = tape.add_row_broadcast(h, bv).unwrap();
            let h = tape.relu(h);
            let h = tape.add(h, xv).unwrap();
            let z = tape.l2_normalize_rows(h).unwrap();
            let sq = tape.hadamard(z, z).unwrap();
            let s1 = tape.sum(sq);
            let zh = tape.scale(z, 0.5);
            let s2 = tape.sum(zh);
            let out = tape.add(s1, s2).unwrap();

            let grads = tape.backward(out, Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
            let fd = finite_diff_grad(f, &x0, 1e-5);
            let err = max_rel_err(grads.get(xv), &fd);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn unused_outputs_have_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = tape.input(Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let s = tape.sum(a);
        let _unused = tape.scale(b, 2.0);
        let grads = tape.backward(s, Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(grads.get(b).data(), &[0.0, 0.0]);
    }
}
