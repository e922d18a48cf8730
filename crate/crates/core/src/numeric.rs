//! Small numeric helpers shared by the map verification code.

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant<const N: usize>(mut a: [[f64; N]; N]) -> f64 {
    let mut det = 1.0;
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..N {
            let factor = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    det
}

/// Central-difference Jacobian determinant of `f` at `at`.
///
/// `f` returns `None` when its argument leaves the piece of the domain on
/// which the map is smooth; the determinant is then `None` as well.
pub fn jacobian_det<const N: usize>(
    f: impl Fn([f64; N]) -> Option<[f64; N]>,
    at: [f64; N],
    h: f64,
) -> Option<f64> {
    let mut jac = [[0.0; N]; N];
    for j in 0..N {
        let mut plus = at;
        let mut minus = at;
        plus[j] += h;
        minus[j] -= h;
        let fp = f(plus)?;
        let fm = f(minus)?;
        for i in 0..N {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Some(determinant(jac))
}
