use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{GeoPoint, SpatialRect};

/// Kernel support, in bandwidths. Contributions beyond this are below
/// `exp(-12.5) ≈ 4e-6` of the peak and are dropped.
const KERNEL_RADIUS: f64 = 5.0;

/// Row-major grid of values in `[0, 1]`; row 0 is the bottom (min y) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub rows: usize,
    pub cols: usize,
    pub extent: SpatialRect,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn zeros(extent: SpatialRect, rows: usize, cols: usize) -> Self {
        DensityGrid {
            rows,
            cols,
            extent,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Scales values so the maximum becomes 1. All-zero grids stay zero.
    pub fn normalize(&mut self) {
        let max = self.max();
        if max > 0.0 {
            for v in &mut self.values {
                *v /= max;
            }
        }
    }

    /// Index of the largest cell as `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        (i / self.cols, i % self.cols)
    }
}

fn cell_size(extent: &SpatialRect, rows: usize, cols: usize) -> (f64, f64) {
    (extent.width() / cols as f64, extent.height() / rows as f64)
}

fn check_shape(rows: usize, cols: usize) -> Result<(), EvalError> {
    if rows == 0 || cols == 0 {
        return Err(EvalError::InvalidParameter(format!(
            "grid needs at least one row and column, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// Default bandwidth: the extent diagonal over 64.
pub fn default_bandwidth(extent: &SpatialRect) -> f64 {
    extent.diagonal() / 64.0
}

/// Gaussian KDE evaluated at cell centres, max-normalized to `[0, 1]`.
/// The kernel is separable, so each point adds an outer product of two 1-D
/// weight vectors over the cells within the kernel radius.
pub fn kde_grid(
    points: &[GeoPoint],
    extent: &SpatialRect,
    rows: usize,
    cols: usize,
    bandwidth: f64,
) -> Result<DensityGrid, EvalError> {
    check_shape(rows, cols)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(EvalError::InvalidParameter(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let mut grid = DensityGrid::zeros(*extent, rows, cols);
    let (cw, ch) = cell_size(extent, rows, cols);
    let reach = KERNEL_RADIUS * bandwidth;
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut wx = Vec::new();
    let mut wy = Vec::new();
    for p in points {
        let c0 = (((p.x - reach - extent.min_x) / cw).floor().max(0.0)) as usize;
        let c1 = ((((p.x + reach - extent.min_x) / cw).ceil()) as usize).min(cols);
        let r0 = (((p.y - reach - extent.min_y) / ch).floor().max(0.0)) as usize;
        let r1 = ((((p.y + reach - extent.min_y) / ch).ceil()) as usize).min(rows);
        if c0 >= c1 || r0 >= r1 {
            continue;
        }
        wx.clear();
        wx.extend((c0..c1).map(|c| {
            let d = extent.min_x + (c as f64 + 0.5) * cw - p.x;
            (-d * d * inv).exp()
        }));
        wy.clear();
        wy.extend((r0..r1).map(|r| {
            let d = extent.min_y + (r as f64 + 0.5) * ch - p.y;
            (-d * d * inv).exp()
        }));
        for (r, &ky) in (r0..r1).zip(&wy) {
            let row = &mut grid.values[r * cols + c0..r * cols + c1];
            for (v, &kx) in row.iter_mut().zip(&wx) {
                *v += ky * kx;
            }
        }
    }
    grid.normalize();
    Ok(grid)
}

/// Raw point counts per cell; points on the extent's max edges fall in the
/// last row/column. Returns the counts and their max-normalized grid.
pub fn count_grid(
    points: &[GeoPoint],
    extent: &SpatialRect,
    rows: usize,
    cols: usize,
) -> Result<(Vec<u64>, DensityGrid), EvalError> {
    check_shape(rows, cols)?;
    let (cw, ch) = cell_size(extent, rows, cols);
    let mut counts = vec![0u64; rows * cols];
    for p in points {
        if !extent.contains_closed(p.x, p.y) {
            continue;
        }
        let c = (((p.x - extent.min_x) / cw) as usize).min(cols - 1);
        let r = (((p.y - extent.min_y) / ch) as usize).min(rows - 1);
        counts[r * cols + c] += 1;
    }
    let mut grid = DensityGrid {
        rows,
        cols,
        extent: *extent,
        values: counts.iter().map(|&c| c as f64).collect(),
    };
    grid.normalize();
    Ok((counts, grid))
}

/// Default mask threshold: only cells whose exact value is at least 0.05
/// count.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.05;

/// Root-mean-square error over the cells where `exact >= mask_threshold`.
pub fn rmse_masked(approx: &DensityGrid, exact: &DensityGrid, mask_threshold: f64) -> Result<f64, EvalError> {
    if approx.rows != exact.rows || approx.cols != exact.cols {
        return Err(EvalError::ShapeMismatch {
            left: (approx.rows, approx.cols),
            right: (exact.rows, exact.cols),
        });
    }
    let (sum, n) = approx
        .values
        .iter()
        .zip(&exact.values)
        .filter(|(_, &e)| e >= mask_threshold)
        .fold((0.0, 0usize), |(s, n), (&a, &e)| (s + (a - e) * (a - e), n + 1));
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok((sum / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> SpatialRect {
        SpatialRect::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn single_point_peaks_at_its_cell_and_decays() {
        let p = [GeoPoint::new(1, 0.31, 0.71, 0)];
        let g = kde_grid(&p, &unit(), 20, 20, 0.05).unwrap();
        assert_eq!(g.argmax(), (14, 6));
        assert!((g.max() - 1.0).abs() < 1e-12);
        let row = 14;
        for c in 6..19 {
            assert!(g.get(row, c) >= g.get(row, c + 1));
        }
        for c in 1..=6 {
            assert!(g.get(row, c) >= g.get(row, c - 1));
        }
    }

    #[test]
    fn empty_input_gives_zero_grid() {
        let g = kde_grid(&[], &unit(), 4, 5, 0.1).unwrap();
        assert_eq!(g.values, vec![0.0; 20]);
        assert!(kde_grid(&[], &unit(), 0, 5, 0.1).is_err());
        assert!(kde_grid(&[], &unit(), 4, 5, 0.0).is_err());
    }

    #[test]
    fn duplicated_data_normalizes_to_the_same_grid() {
        let half: Vec<GeoPoint> = (0..200)
            .map(|i| GeoPoint::new(i, (i as f64 * 0.37).fract(), (i as f64 * 0.59).fract(), 0))
            .collect();
        let mut full = half.clone();
        full.extend(half.iter().map(|p| GeoPoint { id: p.id + 1000, ..*p }));
        let a = kde_grid(&half, &unit(), 32, 32, 0.04).unwrap();
        let b = kde_grid(&full, &unit(), 32, 32, 0.04).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_points_with_wide_bandwidth_are_flat_inside() {
        let pts: Vec<GeoPoint> = (0..1000)
            .map(|i| {
                GeoPoint::new(
                    i,
                    (i as f64 * 0.618_033_988_75).fract(),
                    (i as f64 * 0.754_877_666_25).fract(),
                    0,
                )
            })
            .collect();
        let g = kde_grid(&pts, &unit(), 32, 32, 0.1).unwrap();
        let interior: Vec<f64> = (8..24)
            .flat_map(|r| (8..24).map(move |c| (r, c)))
            .map(|(r, c)| g.get(r, c))
            .collect();
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        let var = interior.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / interior.len() as f64;
        assert!(var.sqrt() / mean < 0.2);
    }

    #[test]
    fn rmse_cases() {
        let mut exact = DensityGrid::zeros(unit(), 2, 2);
        exact.values = vec![1.0; 4];
        let mut approx = exact.clone();
        assert_eq!(rmse_masked(&approx, &exact, 0.05).unwrap(), 0.0);
        approx.values = vec![0.9; 4];
        assert!((rmse_masked(&approx, &exact, 0.05).unwrap() - 0.1).abs() < 1e-12);
        let zero = DensityGrid::zeros(unit(), 2, 2);
        assert_eq!(rmse_masked(&zero, &zero, 0.05), Err(EvalError::EmptyMask));
        let other = DensityGrid::zeros(unit(), 3, 2);
        assert!(matches!(rmse_masked(&other, &exact, 0.05), Err(EvalError::ShapeMismatch { .. })));
    }

    #[test]
    fn count_grid_bins_max_edges() {
        let pts = [GeoPoint::new(1, 1.0, 1.0, 0), GeoPoint::new(2, 0.0, 0.0, 0), GeoPoint::new(3, 0.01, 0.01, 0)];
        let (counts, g) = count_grid(&pts, &unit(), 2, 2).unwrap();
        assert_eq!(counts, vec![2, 0, 0, 1]);
        assert_eq!(g.values, vec![1.0, 0.0, 0.0, 0.5]);
    }
}
