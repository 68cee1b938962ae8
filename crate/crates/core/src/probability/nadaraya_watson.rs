use serde::{Deserialize, Serialize};

use super::{FeatureScaler, ProbabilityModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Kernel-weighted mean of the training indicators over scaled `(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NwModel {
    pub scaler: FeatureScaler,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub bandwidth: f64,
    pub kernel: KernelSpec,
}

impl NwModel {
    pub fn predict(&self, t: f64, x: &[f64]) -> Result<f64> {
        let q = self.scaler.transform(t, x)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (p, &y) in self.points.iter().zip(&self.labels) {
            let w = self.kernel.unnormalized_between(&q, p, self.bandwidth);
            num += w * y;
            den += w;
        }
        if den > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::EmptyNeighborhood)
        }
    }
}

pub fn fit_nadaraya_watson(data: &Dataset, b: f64, kernel: &KernelSpec) -> Result<ProbabilityModel> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {b}")));
    }
    let scaler = FeatureScaler::fit(data);
    let (points, labels) = scaler.design(data)?;
    Ok(ProbabilityModel::NadarayaWatson(NwModel { scaler, points, labels, bandwidth: b, kernel: *kernel }))
}

/// Logs a warning when the probability bandwidth does not exceed the
/// estimator bandwidth; the consistency argument needs `h` small relative to `b`.
pub fn check_bandwidth_order(b: f64, h: f64) -> bool {
    let ok = b > h;
    if !ok {
        log::warn!("probability bandwidth {b} is not larger than estimator bandwidth {h}");
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_events_predict_one() {
        let d = Dataset::from_hard(&[1.0, 2.0, 3.0], &[vec![0.0], vec![0.5], vec![1.0]], &[true; 3]).unwrap();
        let m = fit_nadaraya_watson(&d, 0.8, &KernelSpec::default()).unwrap();
        for t in [1.0, 1.7, 2.9] {
            assert_eq!(m.predict(t, &[0.4]).unwrap(), 1.0);
        }
    }

    #[test]
    fn isolated_point_returns_its_label() {
        let d = Dataset::from_hard(&[0.0, 10.0], &[vec![0.0], vec![1.0]], &[false, true]).unwrap();
        let m = fit_nadaraya_watson(&d, 0.5, &KernelSpec::default()).unwrap();
        assert_eq!(m.predict(10.0, &[1.0]).unwrap(), 1.0);
        assert_eq!(m.predict(0.0, &[0.0]).unwrap(), 0.0);
        assert_eq!(m.predict(5.0, &[0.5]), Err(Error::EmptyNeighborhood));
    }

    #[test]
    fn three_point_hand_computation() {
        // Scaled features: (0, 0), (0.5, 1), (1, 0.5); query at raw (1, 0) -> (0.5, 0).
        let d = Dataset::from_hard(&[0.0, 1.0, 2.0], &[vec![0.0], vec![2.0], vec![1.0]], &[true, false, true]).unwrap();
        let m = fit_nadaraya_watson(&d, 1.0, &KernelSpec::default()).unwrap();
        let k = |r2: f64| if r2 < 1.0 { (1.0 - r2) * (1.0 - r2) } else { 0.0 };
        let (w0, w1, w2) = (k(0.25), k(1.0), k(0.25 + 0.25));
        let expected = (w0 + w2) / (w0 + w1 + w2);
        assert!((m.predict(1.0, &[0.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_order_warning() {
        assert!(check_bandwidth_order(0.5, 0.3));
        assert!(!check_bandwidth_order(0.3, 0.3));
    }
}
