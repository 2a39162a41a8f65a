//! Small dense helpers on `&[f64]` points and row-major matrices.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Smallest eigenvalue of a symmetric row-major `d x d` matrix.
pub fn min_eigenvalue(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => {
            let (a, b, c) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            mean - rad
        }
        _ => {
            let mat = DMatrix::from_row_slice(d, d, m);
            let sym = (&mat + mat.transpose()) * 0.5;
            sym.symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Solves `m x = rhs` for a square row-major system; `None` when singular.
pub fn solve(m: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let d = rhs.len();
    let mat = DMatrix::from_row_slice(d, d, m);
    let b = nalgebra::DVector::from_column_slice(rhs);
    mat.lu().solve(&b).map(|x| x.iter().cloned().collect())
}

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so the result is independent of scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum over one coordinate of a flat `n x d` array.
pub fn pairwise_sum_strided(xs: &[f64], d: usize, coord: usize) -> f64 {
    let n = xs.len() / d;
    fn rec(xs: &[f64], d: usize, coord: usize, lo: usize, hi: usize) -> f64 {
        if hi - lo <= 16 {
            (lo..hi).map(|i| xs[i * d + coord]).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(xs, d, coord, lo, mid) + rec(xs, d, coord, mid, hi)
        }
    }
    rec(xs, d, coord, 0, n)
}

/// Random orthogonal matrix (row-major) from the QR factorisation of a
/// Gaussian matrix.
pub fn random_orthogonal<R: rand::Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::StandardNormal;
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = q[(i, j)];
        }
    }
    out
}

pub fn mat_vec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_2x2_matches_general_path() {
        let m = [2.0, 0.5, 0.5, -1.0];
        let general = {
            let mat = DMatrix::from_row_slice(2, 2, &m);
            mat.symmetric_eigenvalues().min()
        };
        assert!((min_eigenvalue(&m, 2) - general).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_ints() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        let flat: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum_strided(&flat, 2, 1), (0..100).map(|i| (2 * i + 1) as f64).sum());
    }
}
