//! Gene-wise dispersion: method-of-moments starting values shrunk toward a
//! common target.
//!
//! The shrunken estimate is `delta * xi + (1 - delta) * initial_g` where the
//! weight `delta` compares the spread of the initial estimates around their
//! mean to their spread around the target `xi`. The target is chosen on a
//! 101-point grid over the range of the initial estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::count_data::LabeledDataset;
use crate::error::{NbldaError, Result};

/// Denominator below which the shrinkage weight is taken to be zero.
pub const WEIGHT_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Number of candidate targets searched.
pub const TARGET_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionEstimate {
    pub initial: Vec<f64>,
    pub target: f64,
    pub weight: f64,
    pub shrunken: Vec<f64>,
}

impl DispersionEstimate {
    /// Mean of the shrunken dispersions.
    pub fn average(&self) -> f64 {
        self.shrunken.iter().sum::<f64>() / self.shrunken.len() as f64
    }
}

/// Moment estimates of the per-gene dispersion on normalized counts
/// `z_ig = X_ig / s_i`, pooled within classes.
///
/// For class `k` with mean `m_k`, `E[(z_i - m_k)^2] = m_k / s_i + m_k^2 phi`
/// under the NB model. Summing the centered squares over all classes and
/// solving for `phi` gives
///
/// ```text
/// phi = [ RSS - sum_k (n_k - 1)/n_k * m_k * sum_{i in k} 1/s_i ]
///       / sum_k (n_k - 1) m_k^2
/// ```
///
/// which reduces to `(v - m) / m^2` when all `s_i = 1` and the class means
/// agree. Negative values and genes with no usable classes are floored at 0.
pub fn moments_dispersion(data: &LabeledDataset, size_factors: &[f64]) -> Result<Vec<f64>> {
    let n = data.n_samples();
    if n < 2 {
        return Err(NbldaError::Dispersion("need at least two samples".into()));
    }
    if size_factors.len() != n {
        return Err(NbldaError::Dispersion(format!(
            "{} size factors for {n} samples",
            size_factors.len()
        )));
    }
    if let Some(s) = size_factors.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(NbldaError::Dispersion(format!("size factor {s} is not positive")));
    }

    let k_count = data.n_classes();
    let labels = data.labels();
    let sizes = data.class_sizes();
    let mut inv_s_sum = vec![0.0; k_count];
    for (&k, s) in labels.iter().zip(size_factors) {
        inv_s_sum[k] += 1.0 / s;
    }

    let phi = (0..data.n_genes())
        .into_par_iter()
        .map(|g| {
            let row = data.matrix().gene_row(g);
            let mut class_sum = vec![0.0; k_count];
            for ((&x, s), &k) in row.iter().zip(size_factors).zip(labels) {
                class_sum[k] += x as f64 / s;
            }
            let means: Vec<f64> = class_sum
                .iter()
                .zip(&sizes)
                .map(|(&t, &c)| if c > 0 { t / c as f64 } else { 0.0 })
                .collect();
            let mut rss = 0.0;
            for ((&x, s), &k) in row.iter().zip(size_factors).zip(labels) {
                rss += (x as f64 / s - means[k]).powi(2);
            }
            let mut poisson = 0.0;
            let mut scale = 0.0;
            for k in 0..k_count {
                let c = sizes[k] as f64;
                if sizes[k] < 2 {
                    continue;
                }
                poisson += (c - 1.0) / c * means[k] * inv_s_sum[k];
                scale += (c - 1.0) * means[k] * means[k];
            }
            if scale <= 0.0 {
                0.0
            } else {
                ((rss - poisson) / scale).max(0.0)
            }
        })
        .collect();
    Ok(phi)
}

fn ensure_enough_genes(initial: &[f64]) -> Result<()> {
    if initial.len() < 3 {
        return Err(NbldaError::Dispersion(format!(
            "shrinkage needs at least 3 genes, got {}",
            initial.len()
        )));
    }
    if let Some(v) = initial.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(NbldaError::Dispersion(format!("initial dispersion {v} is invalid")));
    }
    Ok(())
}

/// Shrinkage weight for target `target`, clamped to `[0, 1]`.
///
/// `delta = [sum (phi_g - mean)^2 / (G - 1)] / [sum (phi_g - target)^2 / (G - 2)]`
pub fn shrinkage_weight(initial: &[f64], target: f64) -> Result<f64> {
    ensure_enough_genes(initial)?;
    Ok(weight_unchecked(initial, target))
}

fn weight_unchecked(initial: &[f64], target: f64) -> f64 {
    let g = initial.len() as f64;
    let mean = initial.iter().sum::<f64>() / g;
    let spread = initial.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (g - 1.0);
    let distance = initial.iter().map(|p| (p - target).powi(2)).sum::<f64>() / (g - 2.0);
    if distance <= WEIGHT_DENOMINATOR_FLOOR {
        return 0.0;
    }
    (spread / distance).clamp(0.0, 1.0)
}

/// Average squared difference between shrunken and initial estimates for a
/// given target.
pub fn target_objective(initial: &[f64], target: f64) -> f64 {
    let delta = weight_unchecked(initial, target);
    let g = initial.len() as f64;
    initial.iter().map(|p| (delta * (target - p)).powi(2)).sum::<f64>() / g
}

/// Candidate targets: `TARGET_GRID_POINTS` evenly spaced values from the
/// smallest to the largest initial estimate.
pub fn target_grid(initial: &[f64]) -> Vec<f64> {
    let lo = initial.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = initial.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let steps = (TARGET_GRID_POINTS - 1) as f64;
    (0..TARGET_GRID_POINTS)
        .map(|j| if j + 1 == TARGET_GRID_POINTS { hi } else { lo + (hi - lo) * j as f64 / steps })
        .collect()
}

/// Target value minimizing [`target_objective`] over [`target_grid`]; ties go
/// to the smaller candidate. All-equal estimates return their common value.
pub fn target_value(initial: &[f64]) -> Result<f64> {
    ensure_enough_genes(initial)?;
    let first = initial[0];
    if initial.iter().all(|&p| p == first) {
        return Ok(first);
    }
    let mut best = (f64::INFINITY, f64::NAN);
    for xi in target_grid(initial) {
        let obj = target_objective(initial, xi);
        if obj < best.0 {
            best = (obj, xi);
        }
    }
    Ok(best.1)
}

/// `weight * target + (1 - weight) * initial_g` for every gene, kept inside
/// `[min(initial_g, target), max(initial_g, target)]` despite rounding.
pub fn combine(initial: &[f64], target: f64, weight: f64) -> Vec<f64> {
    initial
        .iter()
        .map(|&p| {
            let v = weight * target + (1.0 - weight) * p;
            v.clamp(p.min(target), p.max(target))
        })
        .collect()
}

/// Shrinks a vector of initial estimates.
///
/// The weight and target are computed on a sorted copy so that permuting
/// genes permutes the output exactly, rounding included.
pub fn shrink(initial: Vec<f64>) -> Result<DispersionEstimate> {
    let mut sorted = initial.clone();
    sorted.sort_by(f64::total_cmp);
    let target = target_value(&sorted)?;
    let weight = shrinkage_weight(&sorted, target)?;
    let shrunken = combine(&initial, target, weight);
    Ok(DispersionEstimate {
        initial,
        target,
        weight,
        shrunken,
    })
}

/// Moment estimates followed by shrinkage.
pub fn shrink_dispersions(data: &LabeledDataset, size_factors: &[f64]) -> Result<DispersionEstimate> {
    shrink(moments_dispersion(data, size_factors)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::count_data::CountMatrix;

    fn dataset(rows: Vec<Vec<u64>>, labels: Vec<usize>, k: usize) -> LabeledDataset {
        let g = rows.len();
        let n = rows[0].len();
        let m = CountMatrix::from_rows(
            (0..g).map(|i| format!("g{i}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            rows,
        )
        .unwrap();
        LabeledDataset::new(m, labels, k).unwrap()
    }

    #[test]
    fn constant_within_class_floors_at_zero() {
        let d = dataset(vec![vec![4, 4, 4, 9, 9, 9]], vec![0, 0, 0, 1, 1, 1], 2);
        assert_eq!(moments_dispersion(&d, &[1.0; 6]).unwrap(), vec![0.0]);
    }

    #[test]
    fn mean_ten_variance_110() {
        // mean 10, unbiased variance (81 + 64 + 16 + 169) / 3 = 110
        let d = dataset(vec![vec![1, 2, 14, 23]], vec![0; 4], 1);
        let phi = moments_dispersion(&d, &[1.0; 4]).unwrap()[0];
        assert!((phi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn size_factors_remove_depth_noise() {
        // Poisson-free data scaled exactly by depth: z is constant per class.
        let d = dataset(vec![vec![5, 10, 20, 8, 16, 32]], vec![0, 0, 0, 1, 1, 1], 2);
        let phi = moments_dispersion(&d, &[0.5, 1.0, 2.0, 0.5, 1.0, 2.0]).unwrap()[0];
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn singleton_classes_give_zero() {
        let d = dataset(vec![vec![3, 50]], vec![0, 1], 2);
        assert_eq!(moments_dispersion(&d, &[1.0, 1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn weight_all_equal_is_zero() {
        let init = vec![2.5; 10];
        assert_eq!(shrinkage_weight(&init, 2.5).unwrap(), 0.0);
        let est = shrink(init.clone()).unwrap();
        assert_eq!(est.target, 2.5);
        assert_eq!(est.weight, 0.0);
        assert_eq!(est.shrunken, init);
    }

    #[test]
    fn weight_at_the_mean() {
        let init: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs() * 4.0).collect();
        let mean = init.iter().sum::<f64>() / 50.0;
        let w = shrinkage_weight(&init, mean).unwrap();
        assert!((w - 48.0 / 49.0).abs() < 1e-12);
    }

    #[test]
    fn weight_hand_computed() {
        // mean 2.5, sum sq dev 5 -> 5/3; sum (phi - 0)^2 = 30 -> 30/2 = 15
        let w = shrinkage_weight(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        assert!((w - (5.0 / 3.0) / 15.0).abs() < 1e-15);
    }

    #[test]
    fn weight_for_three_genes_at_mean() {
        assert!((shrinkage_weight(&[0.0, 1.0, 2.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_weight_collapses_to_target() {
        assert_eq!(combine(&[0.5, 3.0, 8.0], 2.0, 1.0), vec![2.0; 3]);
        assert_eq!(combine(&[0.5, 3.0, 8.0], 2.0, 0.0), vec![0.5, 3.0, 8.0]);
    }

    #[test]
    fn too_few_genes() {
        assert!(shrinkage_weight(&[1.0, 2.0], 1.0).is_err());
        assert!(target_value(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_clusters_tie_breaks_low() {
        let mut init = vec![1.0; 10];
        init.extend(vec![9.0; 10]);
        // Symmetric: both grid endpoints minimize; the smaller wins.
        assert_eq!(target_value(&init).unwrap(), 1.0);
    }

    #[test]
    fn shrink_identity_and_bounds() {
        let init = vec![0.1, 4.0, 2.2, 7.5, 0.0, 3.3];
        let est = shrink(init.clone()).unwrap();
        assert!((0.0..=1.0).contains(&est.weight));
        for (p, s) in init.iter().zip(&est.shrunken) {
            assert_eq!(*s, est.weight * est.target + (1.0 - est.weight) * p);
            assert!(*s >= p.min(est.target) && *s <= p.max(est.target));
        }
    }
}
