//! Principal component projection for the k-means baseline.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::MetricError;

/// Above this many features (and more features than points) the n×n Gram
/// matrix is decomposed instead of the p×p covariance.
const GRAM_THRESHOLD: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub projected: Array2<f64>,
    pub explained_variance_ratio: Array1<f64>,
    /// One unit-length component per row.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Projects onto the top `dims` principal axes of the centered data. Each
/// component is signed so its largest-magnitude loading is positive.
pub fn pca(x: ArrayView2<f64>, dims: usize) -> Result<PcaResult, MetricError> {
    let (n, p) = x.dim();
    let max = n.min(p);
    if dims == 0 || dims > max {
        return Err(MetricError::BadDims { dims, max });
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let xc = DMatrix::from_fn(n, p, |r, c| centered[[r, c]]);

    let mut components = Array2::zeros((dims, p));
    let (values, total) = if p > n && p > GRAM_THRESHOLD {
        let (values, u) = sorted_eigen(&xc * xc.transpose());
        for c in 0..dims {
            let v = xc.transpose() * u.column(c);
            let norm = v.norm();
            if norm > 0.0 {
                for k in 0..p {
                    components[[c, k]] = v[k] / norm;
                }
            }
        }
        let total = values.iter().sum::<f64>();
        (values, total)
    } else {
        let (values, v) = sorted_eigen(xc.transpose() * &xc);
        for c in 0..dims {
            for k in 0..p {
                components[[c, k]] = v[(k, c)];
            }
        }
        let total = values.iter().sum::<f64>();
        (values, total)
    };

    for mut row in components.rows_mut() {
        let lead = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
    let projected = centered.dot(&components.t());
    let explained_variance_ratio =
        Array1::from_iter(values.iter().take(dims).map(|&v| if total > 0.0 { v / total } else { 0.0 }));
    Ok(PcaResult { projected, explained_variance_ratio, components, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_data_has_one_component() {
        let dir = [1.0, -2.0, 0.5, 3.0, 1.5];
        let x = Array2::from_shape_fn((12, 5), |(i, k)| (i as f64 - 4.0) * dir[k] + 7.0);
        let r = pca(x.view(), 2).unwrap();
        assert!((r.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert!(r.explained_variance_ratio[1].abs() < 1e-9);
        // largest loading is the 4th coordinate, positive
        assert!(r.components[[0, 3]] > 0.0);
    }

    #[test]
    fn full_rank_reconstructs_centered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((20, 4), |_| rng.random_range(-2.0..2.0));
        let r = pca(x.view(), 4).unwrap();
        let back = r.projected.dot(&r.components);
        let centered = &x - &r.mean;
        for (a, b) in back.iter().zip(centered.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let ratios = &r.explained_variance_ratio;
        assert!((ratios.sum() - 1.0).abs() < 1e-9);
        assert!(ratios.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn four_point_closed_form() {
        // scatter matrix [[10, 6], [6, 10]]: eigenvalues 16 and 4,
        // axes (1,1)/sqrt2 and (1,-1)/sqrt2
        let x = array![[2.0, 2.0], [-2.0, -2.0], [1.0, -1.0], [-1.0, 1.0]];
        let r = pca(x.view(), 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.components[[0, 0]] - h).abs() < 1e-12 && (r.components[[0, 1]] - h).abs() < 1e-12);
        assert!((r.components[[1, 0]].abs() - h).abs() < 1e-12);
        assert!((r.components[[1, 0]] + r.components[[1, 1]]).abs() < 1e-12);
        assert!((r.explained_variance_ratio[0] - 0.8).abs() < 1e-12);
        assert!((r.explained_variance_ratio[1] - 0.2).abs() < 1e-12);
        assert!((r.projected[[0, 0]] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GRAM_THRESHOLD + 8;
        let x = Array2::from_shape_fn((10, p), |_| rng.random_range(-1.0..1.0));
        let r = pca(x.view(), 3).unwrap();
        let centered = &x - &r.mean;
        let cov = DMatrix::from_fn(p, p, |a, b| centered.column(a).dot(&centered.column(b)));
        let (values, _) = sorted_eigen(cov);
        let total: f64 = values.iter().sum();
        for c in 0..3 {
            assert!((r.explained_variance_ratio[c] - values[c] / total).abs() < 1e-9);
            let norm = r.components.row(c).dot(&r.components.row(c));
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dims_out_of_range() {
        let x = Array2::<f64>::zeros((3, 5));
        assert!(matches!(pca(x.view(), 0), Err(MetricError::BadDims { .. })));
        assert!(matches!(pca(x.view(), 4), Err(MetricError::BadDims { dims: 4, max: 3 })));
    }
}
