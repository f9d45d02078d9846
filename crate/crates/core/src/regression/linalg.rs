//! Householder QR with column-norm pivoting, and minimum-norm least squares on
//! top of it (complete orthogonal decomposition when rank deficient).
//!
//! Matrices are column-major `Vec<f64>`.

/// Diagonal entries of `R` below `RANK_TOLERANCE * |R[0,0]|` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ColMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ColMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ColMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Copies the selected rows of a row-major matrix with `cols` columns.
    pub fn from_row_major_rows(values: &[f64], cols: usize, rows: impl ExactSizeIterator<Item = usize>) -> Self {
        let n = rows.len();
        let mut m = ColMatrix::zeros(n, cols);
        for (i, r) in rows.enumerate() {
            for j in 0..cols {
                m.data[j * n + i] = values[r * cols + j];
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, a) in out.iter_mut().zip(self.col(j)) {
                    *o += a * xj;
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the reflector for `x` in place: on return `x[0]` holds `beta` and
/// `x[1..]` the reflector tail (implicit leading 1). Returns `tau`.
fn make_householder(x: &mut [f64]) -> f64 {
    let tail_norm2: f64 = x[1..].iter().map(|v| v * v).sum();
    let x0 = x[0];
    if tail_norm2 == 0.0 {
        return 0.0;
    }
    let norm = (x0 * x0 + tail_norm2).sqrt();
    let beta = if x0 >= 0.0 { -norm } else { norm };
    let tau = (beta - x0) / beta;
    let scale = 1.0 / (x0 - beta);
    for v in &mut x[1..] {
        *v *= scale;
    }
    x[0] = beta;
    tau
}

/// Applies `I - tau v v^T` (with `v = [1, tail]`) to `y`.
fn apply_householder(tail: &[f64], tau: f64, y: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let s = tau * (y[0] + dot(tail, &y[1..]));
    y[0] -= s;
    for (yi, vi) in y[1..].iter_mut().zip(tail) {
        *yi -= s * vi;
    }
}

/// `A P = Q R` with `Q` stored as Householder reflectors.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    factors: ColMatrix,
    tau: Vec<f64>,
    /// `perm[k]` is the original column sitting at position `k`.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedQr {
    pub fn new(mut a: ColMatrix) -> Self {
        let (n, d) = (a.rows, a.cols);
        let steps = n.min(d);
        let mut perm: Vec<usize> = (0..d).collect();
        let mut tau = Vec::with_capacity(steps);
        for k in 0..steps {
            let (best, _) = (k..d)
                .map(|j| (j, a.col(j)[k..].iter().map(|v| v * v).sum::<f64>()))
                .fold((k, -1.0), |acc, (j, norm)| if norm > acc.1 { (j, norm) } else { acc });
            if best != k {
                for i in 0..n {
                    a.data.swap(k * n + i, best * n + i);
                }
                perm.swap(k, best);
            }
            let t = make_householder(&mut a.col_mut(k)[k..]);
            tau.push(t);
            let (head, rest) = a.data.split_at_mut((k + 1) * n);
            let reflector = &head[k * n + k + 1..(k + 1) * n];
            for j in 0..d - k - 1 {
                apply_householder(reflector, t, &mut rest[j * n + k..(j + 1) * n]);
            }
        }
        let r00 = if steps > 0 { a.get(0, 0).abs() } else { 0.0 };
        let rank = (0..steps)
            .take_while(|&k| r00 > 0.0 && a.get(k, k).abs() > RANK_TOLERANCE * r00)
            .count();
        PivotedQr {
            factors: a,
            tau,
            perm,
            rank,
        }
    }

    fn apply_qt(&self, y: &mut [f64]) {
        let n = self.factors.rows;
        for (k, &t) in self.tau.iter().enumerate() {
            apply_householder(&self.factors.col(k)[k + 1..n], t, &mut y[k..]);
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.factors.get(i, j)
    }

    /// Minimum-norm minimizer of `||A x - y||`.
    pub fn solve_least_squares(&self, y: &[f64]) -> Vec<f64> {
        let d = self.factors.cols;
        let r = self.rank;
        let mut c = y.to_vec();
        self.apply_qt(&mut c);

        let mut z = vec![0.0; d];
        if r == d {
            for i in (0..d).rev() {
                let s: f64 = (i + 1..d).map(|j| self.r(i, j) * z[j]).sum();
                z[i] = (c[i] - s) / self.r(i, i);
            }
        } else if r > 0 {
            // R[..r, ..] = T^T Z^T via QR of its transpose; z = Z T^{-T} c.
            let mut rt = ColMatrix::zeros(d, r);
            for i in 0..r {
                for j in i..d {
                    rt.data[i * d + j] = self.r(i, j);
                }
            }
            let mut taus = Vec::with_capacity(r);
            for k in 0..r {
                let t = make_householder(&mut rt.col_mut(k)[k..]);
                taus.push(t);
                let (head, rest) = rt.data.split_at_mut((k + 1) * d);
                let reflector = &head[k * d + k + 1..(k + 1) * d];
                for j in 0..r - k - 1 {
                    apply_householder(reflector, t, &mut rest[j * d + k..(j + 1) * d]);
                }
            }
            let mut w = vec![0.0; d];
            for i in 0..r {
                let s: f64 = (0..i).map(|j| rt.get(j, i) * w[j]).sum();
                w[i] = (c[i] - s) / rt.get(i, i);
            }
            for k in (0..r).rev() {
                apply_householder(&rt.col(k)[k + 1..d], taus[k], &mut w[k..]);
            }
            z = w;
        }

        let mut x = vec![0.0; d];
        for (k, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[k];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&[f64]]) -> ColMatrix {
        let cols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ColMatrix::from_row_major_rows(&flat, cols, 0..rows.len())
    }

    #[test]
    fn solves_square_system() {
        let a = from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let qr = PivotedQr::new(a);
        assert_eq!(qr.rank, 2);
        let x = qr.solve_least_squares(&[3.0, 5.0]);
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn overdetermined_fit() {
        let a = from_rows(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        let x = PivotedQr::new(a).solve_least_squares(&[0.0, 1.0, 3.0]);
        assert!((x[0] + 1.0 / 6.0).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_gets_minimum_norm() {
        let a = from_rows(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[1.0, 2.0, 2.0], &[1.0, 3.0, 3.0]]);
        let qr = PivotedQr::new(a);
        assert_eq!(qr.rank, 2);
        let x = qr.solve_least_squares(&[1.0, 3.0, 5.0, 7.0]);
        // y = 1 + 2 t; the slope splits evenly across the copies.
        assert!((x[0] - 1.0).abs() < 1e-10, "{x:?}");
        assert!((x[1] - 1.0).abs() < 1e-10 && (x[2] - 1.0).abs() < 1e-10, "{x:?}");
    }

    #[test]
    fn zero_matrix_yields_zero() {
        let a = ColMatrix::zeros(3, 2);
        let qr = PivotedQr::new(a);
        assert_eq!(qr.rank, 0);
        assert_eq!(qr.solve_least_squares(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
    }
}
