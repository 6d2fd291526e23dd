//! Small dense complex linear algebra used by the receiver and the
//! user-selection code. Vectors are plain slices; matrices are column-major.

use num_complex::Complex64;

pub type C64 = Complex64;

/// `a^H b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// `v -= (q^H v) q` for each orthonormal `q`, applied twice.
pub fn project_out(v: &mut [C64], basis: &[Vec<C64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = inner(q, v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
    }
}

/// Extends an orthonormal `basis` with the columns of `cols`.
///
/// Returns `false` if some column is (numerically) in the span of the basis,
/// i.e. its residual norm is below `rel_tol` times its original norm.
pub fn extend_basis<'a>(
    basis: &mut Vec<Vec<C64>>,
    cols: impl IntoIterator<Item = &'a [C64]>,
    rel_tol: f64,
) -> bool {
    for c in cols {
        let n0 = norm(c);
        let mut v = c.to_vec();
        project_out(&mut v, basis);
        let n = norm(&v);
        if n0 == 0.0 || n <= rel_tol * n0 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    true
}

/// Column-major view of an `rows x cols` complex matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [C64],
}

impl<'a> MatRef<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [C64]) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef { rows, cols, data }
    }

    pub fn col(&self, j: usize) -> &'a [C64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &'a [C64]> + '_ {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn frobenius_sqr(&self) -> f64 {
        norm_sqr(self.data)
    }

    /// `‖w^H A‖²`.
    pub fn gain_through(&self, w: &[C64]) -> f64 {
        self.columns().map(|c| inner(w, c).norm_sqr()).sum()
    }
}

/// Unit-norm left singular vector of `a` for its largest singular value.
///
/// Returns `None` when `a` is zero.
pub fn dominant_left_vector(a: MatRef<'_>) -> Option<Vec<C64>> {
    let v = match a.cols {
        0 => return None,
        1 => vec![C64::new(1.0, 0.0)],
        2 => {
            let (c0, c1) = (a.col(0), a.col(1));
            let p = norm_sqr(c0);
            let d = norm_sqr(c1);
            let b = inner(c0, c1);
            if b.norm() <= 1e-300 {
                if p >= d {
                    vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
                } else {
                    vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
                }
            } else {
                let lambda = 0.5 * (p + d) + (0.25 * (p - d) * (p - d) + b.norm_sqr()).sqrt();
                vec![b, C64::new(lambda - p, 0.0)]
            }
        }
        n => dominant_eigvec_hermitian(&gram(a), n),
    };
    let mut u = vec![C64::new(0.0, 0.0); a.rows];
    for (j, vj) in v.iter().enumerate() {
        for (ui, aij) in u.iter_mut().zip(a.col(j)) {
            *ui += aij * vj;
        }
    }
    let n = norm(&u);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    u.iter_mut().for_each(|x| *x /= n);
    Some(u)
}

/// `A^H A`, column-major `cols x cols`.
fn gram(a: MatRef<'_>) -> Vec<C64> {
    let n = a.cols;
    let mut g = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            g[j * n + i] = inner(a.col(i), a.col(j));
        }
    }
    g
}

/// Power iteration on a small Hermitian PSD matrix, seeded from its
/// heaviest column.
fn dominant_eigvec_hermitian(g: &[C64], n: usize) -> Vec<C64> {
    let start = (0..n)
        .max_by(|&a, &b| g[a * n + a].re.total_cmp(&g[b * n + b].re))
        .unwrap_or(0);
    let mut v: Vec<C64> = g[start * n..(start + 1) * n].to_vec();
    if norm(&v) == 0.0 {
        v = vec![C64::new(1.0, 0.0); n];
    }
    for _ in 0..200 {
        let mut next = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                next[i] += g[j * n + i] * v[j];
            }
        }
        let nn = norm(&next);
        if nn == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn dominant_vector_of_rank_one_matrix() {
        // A = u [1, 2i]: left vector must be u/|u|.
        let u = [c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0)];
        let data: Vec<C64> = u
            .iter()
            .copied()
            .chain(u.iter().map(|x| x * c(0.0, 2.0)))
            .collect();
        let w = dominant_left_vector(MatRef::new(3, 2, &data)).unwrap();
        let cos = inner(&w, &u).norm() / norm(&u);
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_vector_three_columns_matches_gain_bound() {
        let data = vec![
            c(3.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(1.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
            c(0.5, 0.0),
        ];
        let a = MatRef::new(3, 3, &data);
        let w = dominant_left_vector(a).unwrap();
        assert!((a.gain_through(&w) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn extend_basis_detects_dependence() {
        let e1 = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let twice = vec![c(2.0, 0.0), c(0.0, 0.0)];
        let mut basis = Vec::new();
        assert!(extend_basis(&mut basis, [e1.as_slice()], 1e-10));
        assert!(!extend_basis(&mut basis, [twice.as_slice()], 1e-10));
    }
}
