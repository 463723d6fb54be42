//! Dense symmetric positive semidefinite factorization for the normal equations.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub(crate) struct DenseSym<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseSym<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    /// In-place Cholesky of the lower triangle.
    ///
    /// Pivots below `rel_floor * max_diag` are treated as a dependent row: the
    /// pivot is replaced by a huge value so the matching solution component is
    /// driven to zero. Returns the number of such rows.
    pub fn factor(&mut self, rel_floor: T) -> usize {
        let n = self.n;
        let max_diag = (0..n)
            .map(|i| self.data[i * n + i].abs())
            .fold(T::zero(), T::max);
        let floor = rel_floor * max_diag.max(T::min_positive_value());
        let huge = T::max_value().sqrt();
        let mut dependent = 0;
        for j in 0..n {
            let mut d = self.data[j * n + j];
            for k in 0..j {
                let l = self.data[j * n + k];
                d -= l * l;
            }
            if !(d > floor) {
                dependent += 1;
                self.data[j * n + j] = huge;
                for i in (j + 1)..n {
                    self.data[i * n + j] = T::zero();
                }
                continue;
            }
            let d = d.sqrt();
            self.data[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = self.data[i * n + j];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                self.data[i * n + j] = s / d;
            }
        }
        dependent
    }

    /// Solves with the factor computed by [`factor`](Self::factor).
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.data[i * n + k] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.data[k * n + i] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let mut m = DenseSym::<f64>::zeros(3);
        let a = [[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.add(i, j, v);
            }
        }
        assert_eq!(m.factor(1e-14), 0);
        let mut b = [1.0, 2.0, 3.0];
        m.solve_in_place(&mut b);
        for (row, rhs) in a.iter().zip([1.0, 2.0, 3.0]) {
            let r: f64 = row.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((r - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn dependent_rows_are_zeroed() {
        // rank one: [1 1; 1 1]
        let mut m = DenseSym::<f64>::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                m.add(i, j, 1.0);
            }
        }
        assert_eq!(m.factor(1e-12), 1);
        let mut b = [2.0, 2.0];
        m.solve_in_place(&mut b);
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!(b[1].abs() < 1e-100);
    }
}
