use super::{FeatureVec, PixelGrid};
use crate::error::{Error, Result};

pub const DOWNSAMPLE_H: usize = 8;
pub const DOWNSAMPLE_W: usize = 4;

/// Fractional overlap of each output cell with each source pixel along one axis.
/// Row `i` holds the weights of output cell `i` and sums to 1.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|p| {
                    let overlap = hi.min((p + 1) as f64) - lo.max(p as f64);
                    (overlap > 0.0).then_some((p, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Toy appearance descriptor: an 8x4 area-averaged thumbnail per channel
/// followed by an L1-normalised `bins`-bin intensity histogram per channel.
///
/// Layout is channel-major: all thumbnail channels first, then all histograms.
pub fn extract_features(grid: &PixelGrid, bins: usize) -> Result<FeatureVec> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bins must be >= 2, got {bins}")));
    }
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let rows = area_weights(h, DOWNSAMPLE_H);
    let cols = area_weights(w, DOWNSAMPLE_W);

    let mut out = Vec::with_capacity(c * (DOWNSAMPLE_H * DOWNSAMPLE_W + bins));
    for ch in 0..c {
        for rw in &rows {
            for cw in &cols {
                let mut acc = 0.0;
                for &(r, wr) in rw {
                    for &(col, wc) in cw {
                        acc += wr * wc * grid.get(r, col, ch);
                    }
                }
                out.push(acc);
            }
        }
    }
    let per_channel = (h * w) as f64;
    for ch in 0..c {
        let mut hist = vec![0.0; bins];
        for r in 0..h {
            for col in 0..w {
                let v = grid.get(r, col, ch);
                let b = ((v * bins as f64) as usize).min(bins - 1);
                hist[b] += 1.0;
            }
        }
        out.extend(hist.into_iter().map(|n| n / per_channel));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_grid() {
        let g = PixelGrid::filled(16, 8, 3, 0.0).unwrap();
        let f = extract_features(&g, 4).unwrap();
        assert_eq!(f.len(), 8 * 4 * 3 + 4 * 3);
        assert!(f[..96].iter().all(|&v| v == 0.0));
        for ch in 0..3 {
            assert_eq!(&f[96 + ch * 4..96 + ch * 4 + 4], &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn mid_grey_lands_in_its_bin() {
        let g = PixelGrid::filled(10, 6, 1, 0.5).unwrap();
        let f = extract_features(&g, 4).unwrap();
        // 0.5 * 4 = 2 -> bin 2 covers [0.5, 0.75).
        assert_eq!(&f[32..], &[0.0, 0.0, 1.0, 0.0]);
        assert!(f[..32].iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn two_by_two_grid_by_hand() {
        // [[0.1, 0.9], [0.4, 1.0]]: each source pixel covers a 4x2 block of the 8x4 thumbnail.
        let g = PixelGrid::new(2, 2, 1, vec![0.1, 0.9, 0.4, 1.0]).unwrap();
        let f = extract_features(&g, 2).unwrap();
        let mut expected = Vec::new();
        for r in 0..8 {
            let row = if r < 4 { [0.1, 0.1, 0.9, 0.9] } else { [0.4, 0.4, 1.0, 1.0] };
            expected.extend_from_slice(&row);
        }
        // bins [0, .5) and [.5, 1]: {0.1, 0.4} and {0.9, 1.0}.
        expected.extend_from_slice(&[0.5, 0.5]);
        assert_eq!(f.len(), expected.len());
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn downsampling_averages_blocks() {
        // 16x8 -> 8x4: each output cell is the mean of a 2x2 block.
        let values: Vec<f64> = (0..128).map(|i| (i % 7) as f64 / 7.0).collect();
        let g = PixelGrid::new(16, 8, 1, values).unwrap();
        let f = extract_features(&g, 3).unwrap();
        for i in 0..8 {
            for j in 0..4 {
                let mean = (g.get(2 * i, 2 * j, 0)
                    + g.get(2 * i + 1, 2 * j, 0)
                    + g.get(2 * i, 2 * j + 1, 0)
                    + g.get(2 * i + 1, 2 * j + 1, 0))
                    / 4.0;
                assert!((f[i * 4 + j] - mean).abs() < 1e-12);
            }
        }
        let hist_sum: f64 = f[32..].iter().sum();
        assert!((hist_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_bins() {
        let g = PixelGrid::filled(2, 2, 1, 0.0).unwrap();
        assert!(extract_features(&g, 1).is_err());
    }
}
