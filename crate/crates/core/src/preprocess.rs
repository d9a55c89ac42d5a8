//! Per-feature normalization fitted over one training interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{FeatureRow, FEATURE_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MinMax,
    Standard,
}

impl std::str::FromStr for ScalerKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minmax" => Ok(ScalerKind::MinMax),
            "standard" => Ok(ScalerKind::Standard),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot fit a scaler on empty input")]
    EmptyInput,
}

/// Fitted per-feature normalization state. Immutable once fitted.
///
/// For `MinMax`, `a`/`b` hold the per-feature minimum and maximum; for
/// `Standard` they hold the mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub a: [f64; FEATURE_COUNT],
    pub b: [f64; FEATURE_COUNT],
    pub fitted_on: usize,
}

impl Scaler {
    pub fn fit(kind: ScalerKind, rows: &[FeatureRow]) -> Result<Scaler, PreprocessError> {
        Self::fit_features(kind, rows.iter().map(|r| &r.features))
    }

    pub fn fit_features<'a>(
        kind: ScalerKind,
        rows: impl Iterator<Item = &'a [f64; FEATURE_COUNT]> + Clone,
    ) -> Result<Scaler, PreprocessError> {
        let n = rows.clone().count();
        if n == 0 {
            return Err(PreprocessError::EmptyInput);
        }
        let (a, b) = match kind {
            ScalerKind::MinMax => {
                let mut lo = [f64::INFINITY; FEATURE_COUNT];
                let mut hi = [f64::NEG_INFINITY; FEATURE_COUNT];
                for row in rows {
                    for f in 0..FEATURE_COUNT {
                        lo[f] = lo[f].min(row[f]);
                        hi[f] = hi[f].max(row[f]);
                    }
                }
                (lo, hi)
            }
            ScalerKind::Standard => {
                let mut lo = [f64::INFINITY; FEATURE_COUNT];
                let mut hi = [f64::NEG_INFINITY; FEATURE_COUNT];
                let mut mean = [0.0; FEATURE_COUNT];
                for row in rows.clone() {
                    for f in 0..FEATURE_COUNT {
                        lo[f] = lo[f].min(row[f]);
                        hi[f] = hi[f].max(row[f]);
                        mean[f] += row[f];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= n as f64;
                }
                // Population standard deviation, two-pass for accuracy.
                let mut var = [0.0; FEATURE_COUNT];
                for row in rows {
                    for f in 0..FEATURE_COUNT {
                        let d = row[f] - mean[f];
                        var[f] += d * d;
                    }
                }
                let mut std = [0.0; FEATURE_COUNT];
                for f in 0..FEATURE_COUNT {
                    // A constant column is exactly degenerate even when the
                    // rounded mean drifts an ulp away from the value.
                    if lo[f] == hi[f] {
                        mean[f] = lo[f];
                        std[f] = 0.0;
                    } else {
                        std[f] = (var[f] / n as f64).sqrt();
                    }
                }
                (mean, std)
            }
        };
        Ok(Scaler {
            kind,
            a,
            b,
            fitted_on: n,
        })
    }

    fn denom(&self, f: usize) -> f64 {
        match self.kind {
            ScalerKind::MinMax => self.b[f] - self.a[f],
            ScalerKind::Standard => self.b[f],
        }
    }

    /// Scales one feature vector. Out-of-range inputs are not clamped;
    /// degenerate features (max == min or std == 0) map to 0.
    pub fn transform(&self, features: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for f in 0..FEATURE_COUNT {
            let d = self.denom(f);
            out[f] = if d == 0.0 {
                0.0
            } else {
                (features[f] - self.a[f]) / d
            };
        }
        out
    }

    /// Exact algebraic inverse of [`Scaler::transform`] for non-degenerate
    /// features; degenerate features return the stored constant.
    pub fn inverse(&self, scaled: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for f in 0..FEATURE_COUNT {
            let d = self.denom(f);
            out[f] = if d == 0.0 {
                self.a[f]
            } else {
                scaled[f] * d + self.a[f]
            };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(features: [f64; FEATURE_COUNT]) -> FeatureRow {
        FeatureRow {
            bucket_start: 0,
            node_id: "n1".into(),
            features,
            filled: [true; FEATURE_COUNT],
        }
    }

    fn rows_from_feature0(values: &[f64]) -> Vec<FeatureRow> {
        values.iter().map(|&v| row([v, v, v, v, v])).collect()
    }

    #[test]
    fn minmax_fit_stores_extrema() {
        let rows = rows_from_feature0(&[0.0, 5.0, 10.0]);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        assert_eq!(s.a[0], 0.0);
        assert_eq!(s.b[0], 10.0);
        assert_eq!(s.fitted_on, 3);
    }

    #[test]
    fn standard_fit_uses_population_std() {
        let rows = rows_from_feature0(&[2.0, 6.0]);
        let s = Scaler::fit(ScalerKind::Standard, &rows).unwrap();
        assert_eq!(s.a[0], 4.0);
        assert_eq!(s.b[0], 2.0);
    }

    #[test]
    fn constant_columns_are_exactly_degenerate_for_standard() {
        // summing n copies and dividing by n can round the mean an ulp away
        // from the constant; the fit must still report std == 0 exactly
        for c in [0.1, 1.0 / 3.0, 9.87e4, -7.77e-3, 8452495638529.0 / 123.0] {
            for n in [2usize, 3, 5, 7] {
                let rows = rows_from_feature0(&vec![c; n]);
                let s = Scaler::fit(ScalerKind::Standard, &rows).unwrap();
                assert_eq!(s.b[0], 0.0, "c={c} n={n}");
                assert_eq!(s.a[0], c);
                assert_eq!(s.transform(&[c + 123.0; FEATURE_COUNT])[0], 0.0);
                assert_eq!(s.inverse(&[42.0; FEATURE_COUNT])[0], c);
            }
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            Scaler::fit(ScalerKind::MinMax, &[]),
            Err(PreprocessError::EmptyInput)
        ));
    }

    #[test]
    fn transform_examples() {
        let rows = rows_from_feature0(&[0.0, 10.0]);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        assert_eq!(s.transform(&[5.0; FEATURE_COUNT])[0], 0.5);

        let rows = rows_from_feature0(&[2.0, 6.0]);
        let s = Scaler::fit(ScalerKind::Standard, &rows).unwrap();
        assert_eq!(s.transform(&[8.0; FEATURE_COUNT])[0], 2.0);

        let rows = rows_from_feature0(&[7.0]);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        assert_eq!(s.transform(&[7.0; FEATURE_COUNT])[0], 0.0);
    }

    #[test]
    fn inverse_examples() {
        let rows = rows_from_feature0(&[0.0, 10.0]);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        assert_eq!(s.inverse(&[0.5; FEATURE_COUNT])[0], 5.0);

        let rows = rows_from_feature0(&[2.0, 6.0]);
        let s = Scaler::fit(ScalerKind::Standard, &rows).unwrap();
        assert_eq!(s.inverse(&[2.0; FEATURE_COUNT])[0], 8.0);

        let rows = rows_from_feature0(&[7.0]);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        assert_eq!(s.inverse(&[123.0; FEATURE_COUNT])[0], 7.0);
    }

    #[test]
    fn out_of_range_values_are_not_clamped() {
        let rows = rows_from_feature0(&[0.0, 10.0]);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        assert_eq!(s.transform(&[20.0; FEATURE_COUNT])[0], 2.0);
        assert_eq!(s.transform(&[-10.0; FEATURE_COUNT])[0], -1.0);
    }

    #[test]
    fn minmax_transform_of_fitting_data_is_in_unit_interval() {
        let values = [3.0, -2.0, 7.5, 0.1, 4.4];
        let rows = rows_from_feature0(&values);
        let s = Scaler::fit(ScalerKind::MinMax, &rows).unwrap();
        for r in &rows {
            let t = s.transform(&r.features);
            for f in 0..FEATURE_COUNT {
                assert!((0.0..=1.0).contains(&t[f]));
            }
        }
    }

    #[test]
    fn standard_transform_of_fitting_data_is_zero_mean_unit_std() {
        let values = [3.0, -2.0, 7.5, 0.1, 4.4, 9.9, -3.3];
        let rows = rows_from_feature0(&values);
        let s = Scaler::fit(ScalerKind::Standard, &rows).unwrap();
        let scaled: Vec<f64> = rows.iter().map(|r| s.transform(&r.features)[0]).collect();
        let n = scaled.len() as f64;
        let mean = scaled.iter().sum::<f64>() / n;
        let var = scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-9);
        assert!((var.sqrt() - 1.0).abs() <= 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn inverse_of_transform_is_identity(
            base in proptest::collection::vec(-1e6f64..1e6, 2..50),
            probe in -1e6f64..1e6,
            standard in proptest::bool::ANY,
        ) {
            let rows = rows_from_feature0(&base);
            let kind = if standard { ScalerKind::Standard } else { ScalerKind::MinMax };
            let s = Scaler::fit(kind, &rows).unwrap();
            let v = [probe; FEATURE_COUNT];
            let round = s.inverse(&s.transform(&v));
            for f in 0..FEATURE_COUNT {
                if s.denom(f) != 0.0 {
                    let tol = 1e-9 * v[f].abs().max(1.0);
                    proptest::prop_assert!((round[f] - v[f]).abs() <= tol);
                }
            }
        }
    }
}
