//! Sliding windows over scaled rows, and merging of overlapping window
//! reconstructions into per-timestamp predictions.

/// A fixed-length window of scaled rows starting at `start` in its segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// `w` rows of equal width.
    pub rows: Vec<Vec<f64>>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Builds windows at start indices `0, stride, 2*stride, ...` while
/// `start + w <= rows.len()`. Yields nothing when fewer than `w` rows exist.
pub fn build_windows(rows: &[Vec<f64>], w: usize, stride: usize) -> Vec<Window> {
    assert!(w >= 1, "window length must be >= 1");
    assert!(stride >= 1, "stride must be >= 1");
    if rows.len() < w {
        return Vec::new();
    }
    (0..=rows.len() - w)
        .step_by(stride)
        .map(|start| Window {
            start,
            rows: rows[start..start + w].to_vec(),
        })
        .collect()
}

/// Merges overlapping window reconstructions into one prediction per
/// timestamp: the arithmetic mean of all reconstruction rows mapping to it.
///
/// Returns per-timestamp means (`None` where no window covered the
/// timestamp) and per-timestamp coverage counts. Summation runs in the order
/// the reconstructions are given, so the reduction is deterministic.
pub fn overlap_average(
    reconstructions: &[(usize, Vec<Vec<f64>>)],
    n: usize,
    dim: usize,
) -> (Vec<Option<Vec<f64>>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; n];
    let mut coverage = vec![0usize; n];
    for (start, rows) in reconstructions {
        for (offset, row) in rows.iter().enumerate() {
            let t = start + offset;
            assert!(t < n, "reconstruction row {t} out of range (n={n})");
            assert_eq!(row.len(), dim);
            for (s, v) in sums[t].iter_mut().zip(row) {
                *s += v;
            }
            coverage[t] += 1;
        }
    }
    let means = sums
        .into_iter()
        .zip(&coverage)
        .map(|(sum, &c)| {
            if c == 0 {
                None
            } else {
                Some(sum.into_iter().map(|s| s / c as f64).collect())
            }
        })
        .collect();
    (means, coverage)
}
