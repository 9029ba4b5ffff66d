//! Patch-grid flattening and corner-aligned bilinear resampling.

use ndarray::{Array2, ArrayView2};

use super::video::Video;

pub const SEQ_LEN: usize = 128;
pub const FEATURE_DIM: usize = 1024;
pub const PATCH: usize = 16;

/// Source coordinate of output index `i` when resampling `n` points to `m`,
/// with the first and last samples aligned.
fn source_coord(i: usize, n: usize, m: usize) -> f64 {
    if m <= 1 || n <= 1 {
        0.0
    } else {
        (i * (n - 1)) as f64 / (m - 1) as f64
    }
}

/// Linear resampling of a 1-D signal.
pub fn resample_1d(x: &[f64], m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let s = source_coord(i, x.len(), m);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(x.len() - 1);
            let frac = s - lo as f64;
            x[lo] * (1.0 - frac) + x[hi] * frac
        })
        .collect()
}

/// Separable bilinear resampling of a matrix to `rows × cols`.
pub fn resample_bilinear(x: ArrayView2<f32>, rows: usize, cols: usize) -> Array2<f32> {
    let (n, d) = x.dim();
    let taps = |m: usize, len: usize| -> Vec<(usize, usize, f32)> {
        (0..m)
            .map(|i| {
                let s = source_coord(i, len, m);
                let lo = s.floor() as usize;
                (lo, (lo + 1).min(len - 1), (s - lo as f64) as f32)
            })
            .collect()
    };
    let (rt, ct) = (taps(rows, n), taps(cols, d));
    let mut tmp = Array2::<f32>::zeros((rows, d));
    for (i, &(lo, hi, f)) in rt.iter().enumerate() {
        for j in 0..d {
            tmp[[i, j]] = if f == 0.0 {
                x[[lo, j]]
            } else {
                x[[lo, j]] * (1.0 - f) + x[[hi, j]] * f
            };
        }
    }
    let mut out = Array2::<f32>::zeros((rows, cols));
    for i in 0..rows {
        for (j, &(lo, hi, f)) in ct.iter().enumerate() {
            out[[i, j]] = if f == 0.0 {
                tmp[[i, lo]]
            } else {
                tmp[[i, lo]] * (1.0 - f) + tmp[[i, hi]] * f
            };
        }
    }
    out
}

/// Flattens frames into one row per patch, frame-major then patch row-major,
/// with the patch pixels (row, column, channel) as features. Pixels past the
/// last whole patch are cropped.
pub fn patch_grid(video: &Video, patch: usize) -> Array2<f32> {
    let (t, h, w, c) = video.dim();
    let p = patch.min(h).min(w).max(1);
    let (gh, gw) = (h / p, w / p);
    let mut out = Array2::<f32>::zeros((t * gh * gw, p * p * c));
    for f in 0..t {
        for py in 0..gh {
            for px in 0..gw {
                let row = (f * gh + py) * gw + px;
                let mut k = 0;
                for y in 0..p {
                    for x in 0..p {
                        for ch in 0..c {
                            out[[row, k]] = video[[f, py * p + y, px * p + x, ch]];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Subtracts, for every patch position, its mean over frames, leaving only
/// what changes in time.
pub fn center_time(grid: &mut Array2<f32>, frames: usize) {
    let per_frame = grid.nrows() / frames.max(1);
    for p in 0..per_frame {
        let mut mean = ndarray::Array1::<f32>::zeros(grid.ncols());
        for f in 0..frames {
            mean += &grid.row(f * per_frame + p);
        }
        mean /= frames as f32;
        for f in 0..frames {
            let mut row = grid.row_mut(f * per_frame + p);
            row -= &mean;
        }
    }
}

/// Probe input for a video: the patch grid, optionally time-centered,
/// resampled to `rows × cols`.
pub fn extract_features(video: &Video, rows: usize, cols: usize, centered: bool) -> Array2<f32> {
    let mut grid = patch_grid(video, PATCH);
    if centered {
        center_time(&mut grid, video.dim().0);
    }
    resample_bilinear(grid.view(), rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array2};

    #[test]
    fn corner_aligned_golden_values() {
        assert_eq!(resample_1d(&[0.0, 1.0, 2.0, 3.0], 2), vec![0.0, 3.0]);
        assert_eq!(resample_1d(&[0.0, 1.0, 2.0, 3.0], 3), vec![0.0, 1.5, 3.0]);
        assert_eq!(resample_1d(&[2.0], 3), vec![2.0; 3]);
    }

    #[test]
    fn identity_when_shapes_match() {
        let x = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f32 * 0.37);
        assert_eq!(resample_bilinear(x.view(), 5, 7), x);
    }

    #[test]
    fn matrix_resampling_matches_1d_per_axis() {
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * i + 2 * j) as f32);
        let y = resample_bilinear(x.view(), 7, 5);
        for i in 0..7 {
            // Oracle: resample columns first with the 1-D routine, then rows.
            let cols: Vec<Vec<f64>> = (0..3)
                .map(|j| resample_1d(&x.column(j).iter().map(|&v| v as f64).collect::<Vec<_>>(), 7))
                .collect();
            let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            let expected = resample_1d(&row, 5);
            for j in 0..5 {
                assert!((y[[i, j]] as f64 - expected[j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn default_geometry_gives_one_row_per_patch() {
        let v = Video::from_shape_fn((8, 64, 64, 3), |(t, y, x, c)| {
            ((t * 31 + y * 7 + x * 3 + c) % 11) as f32 / 10.0
        });
        let grid = patch_grid(&v, PATCH);
        assert_eq!(grid.dim(), (128, 768));
        assert_eq!(grid[[0, 0]], v[[0, 0, 0, 0]]);
        assert_eq!(grid[[17, 3]], v[[1, 0, 17, 0]]);
        let f = extract_features(&v, SEQ_LEN, FEATURE_DIM, false);
        assert_eq!(f.dim(), (128, 1024));
        // Reversing frames reverses the order of the per-frame row blocks.
        let rev = extract_features(&super::super::video::reverse_time(&v), SEQ_LEN, FEATURE_DIM, false);
        for b in 0..8 {
            assert_eq!(
                rev.slice(s![b * 16..(b + 1) * 16, ..]),
                f.slice(s![(7 - b) * 16..(8 - b) * 16, ..])
            );
        }
    }
}
