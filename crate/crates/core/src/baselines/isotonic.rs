//! Least-squares monotone regression via pool-adjacent-violators, used to
//! calibrate classifier scores into probabilities.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A fitted non-decreasing map. Evaluation interpolates linearly between
/// breakpoints and clamps outside the fitted range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicMap {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let n = self.breakpoints.len();
        if x <= self.breakpoints[0] {
            return self.values[0];
        }
        if x >= self.breakpoints[n - 1] {
            return self.values[n - 1];
        }
        // First breakpoint at or above x; interpolate from its predecessor.
        let hi = self.breakpoints.partition_point(|b| *b < x);
        let (x0, x1) = (self.breakpoints[hi - 1], self.breakpoints[hi]);
        let (y0, y1) = (self.values[hi - 1], self.values[hi]);
        if x1 == x0 {
            return y1;
        }
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    }

    /// Sum of squared residuals against a point set.
    pub fn squared_error(&self, points: &[(f64, f64)]) -> f64 {
        points
            .iter()
            .map(|(x, y)| {
                let r = self.evaluate(*x) - y;
                r * r
            })
            .sum()
    }
}

/// Fit the least-squares non-decreasing function through `(score, label)`
/// points via pool-adjacent-violators.
pub fn isotonic_fit(points: &[(f64, f64)]) -> Result<IsotonicMap> {
    if points.is_empty() {
        return Err(Error::EmptyFit);
    }
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Points sharing an x must share a fitted value; pre-pool them.
    let mut groups: Vec<(f64, f64, f64)> = Vec::new(); // (x, mean y, weight)
    for (x, y) in sorted {
        match groups.last_mut() {
            Some((gx, gy, gw)) if *gx == x => {
                *gy = (*gy * *gw + y) / (*gw + 1.0);
                *gw += 1.0;
            }
            _ => groups.push((x, y, 1.0)),
        }
    }

    // PAVA over the pooled groups.
    struct Block {
        value: f64,
        weight: f64,
        first: usize,
        last: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(groups.len());
    for (i, (_, y, w)) in groups.iter().enumerate() {
        blocks.push(Block {
            value: *y,
            weight: *w,
            first: i,
            last: i,
        });
        while blocks.len() >= 2 {
            let n = blocks.len();
            if blocks[n - 2].value <= blocks[n - 1].value {
                break;
            }
            let top = blocks.pop().unwrap();
            let prev = blocks.last_mut().unwrap();
            prev.value = (prev.value * prev.weight + top.value * top.weight)
                / (prev.weight + top.weight);
            prev.weight += top.weight;
            prev.last = top.last;
        }
    }

    // A block spanning several x's becomes one flat segment; keeping both
    // endpoints preserves the plateau under linear interpolation.
    let mut breakpoints = Vec::new();
    let mut values = Vec::new();
    for block in &blocks {
        breakpoints.push(groups[block.first].0);
        values.push(block.value);
        if block.last != block.first {
            breakpoints.push(groups[block.last].0);
            values.push(block.value);
        }
    }
    Ok(IsotonicMap {
        breakpoints,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive monotone least-squares oracle: enumerate every contiguous
    /// block partition of the sorted points, keep the monotone ones, and
    /// take the minimum squared error.
    pub(crate) fn brute_force_monotone_sse(points: &[(f64, f64)]) -> f64 {
        let mut sorted: Vec<(f64, f64)> = points.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = sorted.len();
        let mut best = f64::INFINITY;
        // Each bit decides whether a block boundary follows point i.
        for cut_mask in 0..(1u32 << (n - 1)) {
            let mut means = Vec::new();
            let mut sse_candidate = 0.0;
            let mut start = 0;
            let mut valid_partition = true;
            for end in 0..n {
                let boundary = end == n - 1 || (cut_mask >> end) & 1 == 1;
                if !boundary {
                    continue;
                }
                let block = &sorted[start..=end];
                // Equal scores must not straddle a boundary.
                if end + 1 < n && sorted[end].0 == sorted[end + 1].0 {
                    valid_partition = false;
                    break;
                }
                let mean = block.iter().map(|(_, y)| y).sum::<f64>() / block.len() as f64;
                means.push(mean);
                sse_candidate += block.iter().map(|(_, y)| (y - mean) * (y - mean)).sum::<f64>();
                start = end + 1;
            }
            if !valid_partition {
                continue;
            }
            if means.windows(2).all(|w| w[0] <= w[1]) {
                best = best.min(sse_candidate);
            }
        }
        best
    }

    #[test]
    fn monotone_points_pass_through() {
        let points = [(0.0, 0.1), (0.5, 0.4), (1.0, 0.9)];
        let map = isotonic_fit(&points).unwrap();
        for (x, y) in points {
            assert!((map.evaluate(x) - y).abs() < 1e-15);
        }
        // Interpolation between the first two points.
        assert!((map.evaluate(0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn violating_pair_pools_to_mean() {
        let map = isotonic_fit(&[(0.0, 1.0), (1.0, 0.0)]).unwrap();
        assert_eq!(map.evaluate(0.0), 0.5);
        assert_eq!(map.evaluate(0.5), 0.5);
        assert_eq!(map.evaluate(1.0), 0.5);
    }

    #[test]
    fn clamps_outside_fitted_range() {
        let map = isotonic_fit(&[(0.2, 0.3), (0.8, 0.7)]).unwrap();
        assert_eq!(map.evaluate(-5.0), 0.3);
        assert_eq!(map.evaluate(5.0), 0.7);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(isotonic_fit(&[]), Err(crate::Error::EmptyFit)));
    }

    #[test]
    fn evaluation_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                .collect();
            let map = isotonic_fit(&points).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=100 {
                let y = map.evaluate(i as f64 / 100.0);
                assert!(y >= prev - 1e-12, "not monotone at {i}");
                prev = y;
            }
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for trial in 0..200 {
            let n = rng.random_range(1..=8);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        // A coarse grid makes score ties common.
                        f64::from(rng.random_range(0..6)) / 5.0,
                        f64::from(rng.random_range(0..2u32)),
                    )
                })
                .collect();
            let map = isotonic_fit(&points).unwrap();
            let fitted_sse = map.squared_error(&points);
            let oracle_sse = brute_force_monotone_sse(&points);
            assert!(
                (fitted_sse - oracle_sse).abs() < 1e-9,
                "trial {trial}: PAVA {fitted_sse} vs oracle {oracle_sse} on {points:?}"
            );
        }
    }
}
