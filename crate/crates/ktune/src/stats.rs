//! Summary statistics and kernel-density estimates over best-of-run times.

use std::f64::consts::PI;
use std::io::Write;

/// Points at which the density is sampled.
pub const DENSITY_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentStats {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub bandwidth: f64,
    /// `(x, density)` over `[min, max]`, normalized to unit trapezoid area.
    pub density: Vec<(f64, f64)>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
/// Returns `None` when the samples have no spread.
pub fn silverman_bandwidth(samples: &[f64]) -> Option<f64> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = [sd, iqr / 1.34]
        .into_iter()
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    spread.is_finite().then(|| 0.9 * spread * (n as f64).powf(-0.2))
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

impl ExperimentStats {
    /// `None` for an empty sample or non-finite values.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_dev = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let (lo, hi, bandwidth) = match silverman_bandwidth(samples) {
            Some(h) if max > min => (min, max, h),
            _ => {
                // No spread: a narrow bump around the single value.
                let half = if mean != 0.0 { 0.01 * mean.abs() } else { 0.01 };
                (mean - half, mean + half, half / 3.0)
            }
        };
        let step = (hi - lo) / (DENSITY_POINTS - 1) as f64;
        let norm = 1.0 / (n * bandwidth * (2.0 * PI).sqrt());
        let mut density: Vec<(f64, f64)> = (0..DENSITY_POINTS)
            .map(|i| {
                let x = if i == DENSITY_POINTS - 1 {
                    hi
                } else {
                    lo + step * i as f64
                };
                let y = samples
                    .iter()
                    .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                    .sum::<f64>()
                    * norm;
                (x, y)
            })
            .collect();
        let area = trapezoid(&density);
        if area > 0.0 {
            density.iter_mut().for_each(|p| p.1 /= area);
        }
        Some(ExperimentStats {
            samples: samples.to_vec(),
            mean,
            std_dev,
            min,
            max,
            bandwidth,
            density,
        })
    }

    /// `statistic,value` rows, then a `density_x,density_y` header and the
    /// sampled density.
    pub fn write_csv(&self, writer: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["statistic", "value"])?;
        let rows = [
            ("runs", self.samples.len().to_string()),
            ("mean", self.mean.to_string()),
            ("std", self.std_dev.to_string()),
            ("min", self.min.to_string()),
            ("max", self.max.to_string()),
            ("bandwidth", self.bandwidth.to_string()),
        ];
        for (name, value) in rows {
            w.write_record([name, value.as_str()])?;
        }
        w.write_record(["density_x", "density_y"])?;
        for (x, y) in &self.density {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
