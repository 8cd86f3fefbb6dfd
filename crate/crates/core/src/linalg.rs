//! Small dense helpers that do not warrant a LAPACK dependency.

use ndarray::Array2;
use num_complex::Complex64;

/// Eigenvalues of a Hermitian matrix by cyclic complex Jacobi rotations,
/// sorted ascending. Only the Hermitian part of `a` is meaningful.
pub fn hermitian_eigenvalues(a: &Array2<Complex64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let scale: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if scale == 0.0 {
        return vec![0.0; n];
    }

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let u = apq / mag;
                let tau = (m[[q, q]].re - m[[p, p]].re) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // columns: A <- A J
                for k in 0..n {
                    let kp = m[[k, p]];
                    let kq = m[[k, q]];
                    m[[k, p]] = kp * c - kq * u.conj() * s;
                    m[[k, q]] = kp * s + kq * u.conj() * c;
                }
                // rows: A <- J^H A
                for k in 0..n {
                    let pk = m[[p, k]];
                    let qk = m[[q, k]];
                    m[[p, k]] = pk * c - qk * u * s;
                    m[[q, k]] = pk * s + qk * u * c;
                }
                m[[p, q]] = Complex64::new(0.0, 0.0);
                m[[q, p]] = Complex64::new(0.0, 0.0);
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    eig.sort_by(f64::total_cmp);
    eig
}
