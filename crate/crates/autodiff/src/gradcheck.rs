use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::Matrix;

const STEP: f64 = 1e-5;

fn eval<F>(f: &F, point: &Matrix) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.variable(point.clone());
    let out = f(&mut tape, x)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(AutodiffError::NonScalarLoss(shape));
    }
    Ok(tape.value(out)[[0, 0]])
}

/// Central-difference gradient of a scalar function, step `1e-5`.
pub fn numeric_gradient<F>(f: &F, point: &Matrix) -> Result<Matrix>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut grad = Matrix::zeros(point.dim());
    let mut probe = point.clone();
    for (idx, g) in grad.indexed_iter_mut() {
        let orig = probe[idx];
        probe[idx] = orig + STEP;
        let up = eval(f, &probe)?;
        probe[idx] = orig - STEP;
        let down = eval(f, &probe)?;
        probe[idx] = orig;
        *g = (up - down) / (2.0 * STEP);
    }
    Ok(grad)
}

/// Compares the tape gradient of `f` at `point` against central
/// differences and returns the largest coordinate-wise relative error
/// `|a - n| / max(|a| + |n|, floor)` with `floor = 1e-6 * max(1, |f(point)|)`,
/// the scale below which central differences are round-off.
pub fn grad_check<F>(f: F, point: &Matrix) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.variable(point.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(point.dim()));
    let numeric = numeric_gradient(&f, point)?;
    let floor = 1e-6 * tape.value(out)[[0, 0]].abs().max(1.0);
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares() {
        let f = |t: &mut Tape, x: Var| {
            let sq = t.mul(x, x)?;
            Ok(t.sum_all(sq))
        };
        let point = array![[1.0, 2.0]];
        let mut tape = Tape::new();
        let x = tape.variable(point.clone());
        let y = f(&mut tape, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[2.0, 4.0]]);
        assert!(grad_check(f, &point).unwrap() < 1e-6);
    }

    #[test]
    fn linear_function_is_exact() {
        let f = |t: &mut Tape, x: Var| {
            let w = t.constant(array![[0.5], [-1.25], [2.0]]);
            let y = t.matmul(x, w)?;
            Ok(t.sum_all(y))
        };
        assert!(grad_check(f, &array![[0.3, -0.7, 1.1]]).unwrap() < 1e-9);
    }

    #[test]
    fn relu_away_from_kink() {
        let f = |t: &mut Tape, x: Var| {
            let r = t.relu(x);
            let w = t.constant(array![[1.0, 2.0, -3.0, 0.5]]);
            let y = t.mul(r, w)?;
            let sq = t.mul(y, y)?;
            Ok(t.sum_all(sq))
        };
        assert!(grad_check(f, &array![[0.4, -0.2, 1.3, 0.15]]).unwrap() < 1e-4);
    }
}
