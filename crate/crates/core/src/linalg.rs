//! Rank-revealing helpers on top of nalgebra's SVD.

use nalgebra::DMatrix;

/// Singular values below `NULLSPACE_REL_TOL * σ_max` count as zero.
pub const NULLSPACE_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Nullspace {
    /// Orthonormal columns spanning the kernel (`ncols × k`).
    pub basis: DMatrix<f64>,
    pub rank: usize,
    /// Singular values in decreasing order.
    pub singular_values: Vec<f64>,
}

impl Nullspace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Kernel of `a` via a full right-singular basis. Wide matrices are padded
/// with zero rows so that the SVD returns every right-singular vector.
pub fn nullspace(a: &DMatrix<f64>, rel_tol: f64) -> Nullspace {
    let n = a.ncols();
    if n == 0 {
        return Nullspace {
            basis: DMatrix::zeros(0, 0),
            rank: 0,
            singular_values: Vec::new(),
        };
    }
    let padded;
    let m = if a.nrows() < n {
        padded = {
            let mut p = DMatrix::zeros(n, n);
            p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
            p
        };
        &padded
    } else {
        a
    };
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let sigma = svd.singular_values;
    let sigma_max = sigma.iter().fold(0.0_f64, |acc, s| acc.max(*s));
    let cutoff = rel_tol * sigma_max;
    let null_rows: Vec<usize> = (0..sigma.len())
        .filter(|&i| sigma_max == 0.0 || sigma[i] < cutoff)
        .collect();
    let mut basis = DMatrix::zeros(n, null_rows.len());
    for (c, &r) in null_rows.iter().enumerate() {
        for k in 0..n {
            basis[(k, c)] = v_t[(r, k)];
        }
    }
    let mut singular_values: Vec<f64> = sigma.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Nullspace {
        rank: n - null_rows.len(),
        basis,
        singular_values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_of_wide_matrix() {
        // x + y + z = 0 and y - z = 0 has a one-dimensional kernel spanned by (-2, 1, 1).
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0]);
        let ns = nullspace(&a, NULLSPACE_REL_TOL);
        assert_eq!(ns.dim(), 1);
        assert_eq!(ns.rank, 2);
        let v = ns.basis.column(0);
        assert!((&a * v).amax() < 1e-14);
        assert!((v[1] - v[2]).abs() < 1e-14 && (v[0] + 2.0 * v[1]).abs() < 1e-14);
    }

    #[test]
    fn full_rank_tall_matrix_has_trivial_kernel() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(nullspace(&a, NULLSPACE_REL_TOL).dim(), 0);
    }

    #[test]
    fn zero_matrix_is_all_kernel() {
        assert_eq!(nullspace(&DMatrix::zeros(2, 4), NULLSPACE_REL_TOL).dim(), 4);
    }
}
