//! Histograms, distances between them, mode detection and endpoint
//! statistics.

use serde::{Deserialize, Serialize};

use crate::conditioning::ObservationScheme;
use crate::error::{BridgeError, Result};
use crate::sde::Trajectory;

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 50;
/// Default mode prominence, as a fraction of the peak density.
pub const DEFAULT_PROMINENCE: f64 = 0.05;

/// Histogram of one coordinate of a set of trajectories at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalHistogram {
    pub time: f64,
    pub coordinate: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_samples: usize,
}

impl MarginalHistogram {
    /// Bins `values` into the given strictly increasing edges; values outside
    /// the range land in the outermost bins.
    pub fn from_values(values: &[f64], edges: Vec<f64>, time: f64, coordinate: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(BridgeError::EmptyInput);
        }
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(BridgeError::InvalidArgument(
                "bin edges must be strictly increasing".into(),
            ));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &v in values {
            // first edge strictly above v, minus one
            let k = edges.partition_point(|e| *e <= v).clamp(1, bins) - 1;
            counts[k] += 1;
        }
        Ok(Self {
            time,
            coordinate,
            edges,
            counts,
            n_samples: values.len(),
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bin masses summing to one.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Densities integrating to one over the bin range.
    pub fn densities(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
            .collect()
    }
}

/// `bins` equal-width bins over `[min, max]` of the data padded by 5% of the
/// range on each side.
pub fn default_edges(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(BridgeError::EmptyInput);
    }
    if bins == 0 {
        return Err(BridgeError::InvalidArgument("need at least one bin".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(BridgeError::InvalidArgument("values must be finite".into()));
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    let (lo, hi) = (lo - pad, hi + pad);
    let width = (hi - lo) / bins as f64;
    Ok((0..=bins)
        .map(|k| if k == bins { hi } else { lo + k as f64 * width })
        .collect())
}

/// Values of `coordinate` at grid node `m` across trajectories.
pub fn marginal_values(trajs: &[Trajectory], m: usize, coordinate: usize) -> Vec<f64> {
    trajs.iter().map(|t| t.state(m)[coordinate]).collect()
}

fn node_for(trajs: &[Trajectory], t: f64) -> Result<usize> {
    let first = trajs.first().ok_or(BridgeError::EmptyInput)?;
    Ok(first.grid().nearest_node(t))
}

/// Histogram of `coordinate` at the grid node nearest `t`, with default
/// edges.
pub fn marginal_histogram(trajs: &[Trajectory], t: f64, coordinate: usize, bins: usize) -> Result<MarginalHistogram> {
    let m = node_for(trajs, t)?;
    let values = marginal_values(trajs, m, coordinate);
    let edges = default_edges(&values, bins)?;
    MarginalHistogram::from_values(&values, edges, trajs[0].grid().time(m), coordinate)
}

/// Histograms of two trajectory sets at the same time over shared edges
/// covering both.
pub fn paired_histograms(
    a: &[Trajectory],
    b: &[Trajectory],
    t: f64,
    coordinate: usize,
    bins: usize,
) -> Result<(MarginalHistogram, MarginalHistogram)> {
    let ma = node_for(a, t)?;
    let mb = node_for(b, t)?;
    let va = marginal_values(a, ma, coordinate);
    let vb = marginal_values(b, mb, coordinate);
    let all: Vec<f64> = va.iter().chain(&vb).copied().collect();
    let edges = default_edges(&all, bins)?;
    let time = a[0].grid().time(ma);
    Ok((
        MarginalHistogram::from_values(&va, edges.clone(), time, coordinate)?,
        MarginalHistogram::from_values(&vb, edges, time, coordinate)?,
    ))
}

/// `½ Σ |p_i − q_i|` over bin masses.
pub fn tv_distance(h1: &MarginalHistogram, h2: &MarginalHistogram) -> Result<f64> {
    if h1.edges != h2.edges {
        return Err(BridgeError::BinMismatch);
    }
    Ok(0.5
        * h1.probabilities()
            .iter()
            .zip(h2.probabilities())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>())
}

/// Number of local maxima of the density whose topographic prominence is at
/// least `min_prominence` times the highest density. Plateaus count once.
pub fn mode_count(h: &MarginalHistogram, min_prominence: f64) -> usize {
    count_peaks(&h.densities(), min_prominence)
}

pub(crate) fn count_peaks(y: &[f64], min_prominence: f64) -> usize {
    let n = y.len();
    let peak = y.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return 0;
    }
    let threshold = min_prominence * peak;
    let mut count = 0;
    let mut i = 0;
    while i < n {
        // extent of the plateau starting at i
        let mut j = i;
        while j + 1 < n && y[j + 1] == y[i] {
            j += 1;
        }
        let rises = i == 0 || y[i - 1] < y[i];
        let falls = j == n - 1 || y[j + 1] < y[i];
        if rises && falls && y[i] > 0.0 {
            let h = y[i];
            // ties go to the leftmost of two equal peaks
            let mut left_min = h;
            for k in (0..i).rev() {
                if y[k] >= h {
                    break;
                }
                left_min = left_min.min(y[k]);
            }
            let mut right_min = h;
            for &v in &y[j + 1..] {
                if v > h {
                    break;
                }
                right_min = right_min.min(v);
            }
            // a border peak has no base on the open side
            let left_base = if i == 0 { 0.0 } else { left_min };
            let right_base = if j == n - 1 { 0.0 } else { right_min };
            let prominence = h - left_base.max(right_base);
            if prominence >= threshold {
                count += 1;
            }
        }
        i = j + 1;
    }
    count
}

/// Distance of terminal observations to the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointReport {
    /// Mean of `‖L x_M − v‖`.
    pub mean_error: f64,
    pub max_error: f64,
    pub n_paths: usize,
}

pub fn endpoint_report(trajs: &[Trajectory], obs: &ObservationScheme) -> Result<EndpointReport> {
    if trajs.is_empty() {
        return Err(BridgeError::EmptyInput);
    }
    let errors: Vec<f64> = trajs.iter().map(|t| obs.residual_norm(t.terminal())).collect();
    Ok(EndpointReport {
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
        max_error: errors.iter().cloned().fold(0.0, f64::max),
        n_paths: trajs.len(),
    })
}

/// Sample mean and its standard error.
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Self-normalized importance-sampling estimate `Σ wᵢ fᵢ / Σ wᵢ` with
/// `wᵢ = exp(log_wᵢ)`, and its delta-method standard error.
pub fn weighted_mean(values: &[f64], log_weights: &[f64]) -> (f64, f64) {
    assert_eq!(values.len(), log_weights.len(), "one weight per value");
    let top = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / sw;
    let var = w.iter().zip(values).map(|(w, v)| (w * (v - mean)).powi(2)).sum::<f64>() / (sw * sw);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(values: &[f64], edges: Vec<f64>) -> MarginalHistogram {
        MarginalHistogram::from_values(values, edges, 0.0, 0).unwrap()
    }

    #[test]
    fn constant_data_fills_one_bin() {
        let values = vec![0.7; 100];
        let h = hist(&values, default_edges(&values, 50).unwrap());
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let k = h.counts.iter().position(|&c| c == 100).unwrap();
        assert!(h.edges[k] <= 0.7 && 0.7 < h.edges[k + 1]);
    }

    #[test]
    fn symmetric_two_point_data() {
        let values: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let h = hist(&values, default_edges(&values, 50).unwrap());
        let occupied: Vec<u64> = h.counts.iter().cloned().filter(|&c| c > 0).collect();
        assert_eq!(occupied, vec![100, 100]);
    }

    #[test]
    fn counts_sum_and_outliers_clamped() {
        let h = hist(&[-5.0, 0.1, 0.5, 0.99, 1.0, 7.0], vec![0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 4]);
        assert_eq!(h.counts.iter().sum::<u64>() as usize, h.n_samples);
    }

    #[test]
    fn densities_integrate_to_one() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let h = hist(&values, default_edges(&values, 37).unwrap());
        let total: f64 = h.densities().iter().zip(h.edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_extremes() {
        let edges = vec![0.0, 1.0, 2.0, 3.0];
        let a = hist(&[0.5, 0.5, 1.5], edges.clone());
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let b = hist(&[2.5, 2.5], edges);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        let c = hist(&[0.5], vec![0.0, 1.0, 2.0]);
        assert_eq!(tv_distance(&a, &c), Err(BridgeError::BinMismatch));
    }

    #[test]
    fn peak_counting() {
        assert_eq!(count_peaks(&[0.0, 1.0, 3.0, 1.0, 0.0], 0.05), 1);
        assert_eq!(count_peaks(&[0.0, 3.0, 1.0, 3.0, 0.0], 0.05), 2);
        // a shallow dip below the prominence threshold
        assert_eq!(count_peaks(&[0.0, 3.0, 2.9, 3.0, 0.0], 0.05), 1);
        assert_eq!(count_peaks(&[1.0, 2.0, 2.0, 2.0, 1.0], 0.05), 1);
        assert_eq!(count_peaks(&[3.0, 1.0, 0.0, 0.0, 2.0], 0.05), 2);
        assert_eq!(count_peaks(&[0.0; 4], 0.05), 0);
    }

    #[test]
    fn weighted_mean_with_equal_weights() {
        let (m, _) = weighted_mean(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]);
        assert!((m - 2.0).abs() < 1e-15);
        let (m, _) = weighted_mean(&[1.0, 2.0], &[0.0, f64::NEG_INFINITY]);
        assert_eq!(m, 1.0);
    }
}
