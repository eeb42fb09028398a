use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};

/// Uniform time grid `0 = t_0 < t_1 < ... < t_M = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(BridgeError::InvalidArgument(format!(
                "terminal time must be positive and finite, got {t_end}"
            )));
        }
        if steps == 0 {
            return Err(BridgeError::InvalidArgument(
                "grid needs at least one step".into(),
            ));
        }
        Ok(Self { t_end, steps })
    }

    #[inline]
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of steps `M`; the grid has `M + 1` nodes.
    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    /// Time of node `m`. The last node is exactly `T`.
    #[inline]
    pub fn time(&self, m: usize) -> f64 {
        if m >= self.steps {
            self.t_end
        } else {
            m as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| self.time(m)).collect()
    }

    /// Index of the node closest to `t`, clamped to the grid.
    pub fn nearest_node(&self, t: f64) -> usize {
        let m = (t / self.dt()).round();
        if m <= 0.0 {
            0
        } else {
            (m as usize).min(self.steps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_increasing_and_hit_both_ends() {
        let g = TimeGrid::new(4.0, 400).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 401);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[400], 4.0);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.dt(), 0.01);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
    }

    #[test]
    fn nearest_node_clamps() {
        let g = TimeGrid::new(5.0, 500).unwrap();
        assert_eq!(g.nearest_node(3.0), 300);
        assert_eq!(g.nearest_node(-1.0), 0);
        assert_eq!(g.nearest_node(9.0), 500);
    }
}
