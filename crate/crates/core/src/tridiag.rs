//! Thomas algorithm for tridiagonal systems.

use std::ops::{Mul, Sub};

use crate::error::{Error, Result};

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve<T>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Result<Vec<T>>
where
    T: Copy + Sub<Output = T> + Mul<Output = T> + Pivot,
{
    let mut x = Vec::with_capacity(diag.len());
    solve_into(lower, diag, upper, rhs, &mut Vec::new(), &mut x)?;
    Ok(x)
}

/// [`solve`] writing into `x`, with `work` as scratch; both are resized.
pub fn solve_into<T>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T], work: &mut Vec<T>, x: &mut Vec<T>) -> Result<()>
where
    T: Copy + Sub<Output = T> + Mul<Output = T> + Pivot,
{
    let n = diag.len();
    work.clear();
    x.clear();
    let mut beta = diag[0];
    if beta.is_singular() {
        return Err(Error::LinearSolveFailure(0));
    }
    let mut inv = beta.recip();
    work.push(upper[0] * inv);
    x.push(rhs[0] * inv);
    for i in 1..n {
        beta = diag[i] - lower[i] * work[i - 1];
        if beta.is_singular() {
            return Err(Error::LinearSolveFailure(i));
        }
        inv = beta.recip();
        work.push(upper[i] * inv);
        x.push((rhs[i] - lower[i] * x[i - 1]) * inv);
    }
    for i in (0..n - 1).rev() {
        x[i] = x[i] - work[i] * x[i + 1];
    }
    Ok(())
}

pub trait Pivot: Sized {
    /// Zero or non-finite.
    fn is_singular(&self) -> bool;
    fn recip(self) -> Self;
}

impl Pivot for f64 {
    fn is_singular(&self) -> bool {
        *self == 0.0 || !self.is_finite()
    }
    fn recip(self) -> Self {
        1.0 / self
    }
}

impl Pivot for num_complex::Complex64 {
    fn is_singular(&self) -> bool {
        let m = self.norm_sqr();
        m == 0.0 || !m.is_finite()
    }
    fn recip(self) -> Self {
        self.inv()
    }
}
