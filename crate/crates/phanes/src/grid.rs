//! Core raster types: grayscale images, binary masks, score maps.

use crate::error::{PhanesError, Result};
use ndarray::Array2;

/// Grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Array2<f64>,
    pub id: String,
}

impl Image {
    pub fn new(pixels: Array2<f64>, id: impl Into<String>) -> Result<Self> {
        let img = Image { pixels, id: id.into() };
        img.validate()?;
        Ok(img)
    }

    /// Checks the type invariants: finite values inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for &v in self.pixels.iter() {
            if !v.is_finite() {
                return Err(PhanesError::InvalidInput(format!(
                    "image {:?} contains non-finite values",
                    self.id
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(PhanesError::InvalidInput(format!(
                    "image {:?} has value {v} outside [0,1]",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.pixels.dim();
        (s.0, s.1)
    }
}

/// Binary mask aligned to an image; `true` marks flagged pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub values: Array2<bool>,
}

impl BinaryMask {
    pub fn new(values: Array2<bool>) -> Self {
        BinaryMask { values }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        BinaryMask { values: Array2::from_elem((h, w), false) }
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.values.dim();
        (s.0, s.1)
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&b| !b)
    }

    /// Flagged fraction of all pixels.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    /// 0/1 view used by arithmetic (compositing, loss weighting).
    pub fn to_f64(&self) -> Array2<f64> {
        self.values.map(|&b| if b { 1.0 } else { 0.0 })
    }

    /// Morphological dilation with a square radius-`r` structuring element.
    pub fn dilate(&self, r: usize) -> Self {
        let (h, w) = self.shape();
        let mut out = Array2::from_elem((h, w), false);
        for y in 0..h {
            for x in 0..w {
                if !self.values[(y, x)] {
                    continue;
                }
                let y0 = y.saturating_sub(r);
                let x0 = x.saturating_sub(r);
                for yy in y0..=(y + r).min(h - 1) {
                    for xx in x0..=(x + r).min(w - 1) {
                        out[(yy, xx)] = true;
                    }
                }
            }
        }
        BinaryMask { values: out }
    }
}

/// Nonnegative per-pixel anomaly scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub values: Array2<f64>,
}

impl ScoreMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for &v in values.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(PhanesError::InvalidInput(format!(
                    "score map contains invalid value {v}"
                )));
            }
        }
        Ok(ScoreMap { values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ScoreMap { values: Array2::zeros((h, w)) }
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.values.dim();
        (s.0, s.1)
    }
}

/// Percentile with linear interpolation between closest ranks, the
/// convention pinned for every percentile in the pipeline:
/// `rank = p/100 * (n-1)`, value interpolated between the two bracketing
/// order statistics.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(PhanesError::InvalidInput("percentile of empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(PhanesError::InvalidInput(format!("percentile {p} outside [0,100]")));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
    let n = sorted.len();
    if n == 1 {
        return Ok(sorted[0]);
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn percentile_interpolates_between_ranks() {
        let v = vec![0.0, 1.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0).unwrap(), 1.5);
        assert_eq!(percentile(&v, 0.0).unwrap(), 0.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
    }

    #[test]
    fn percentile_pooled_hundred() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let t = percentile(&v, 99.0).unwrap();
        assert!((t - 98.01).abs() < 1e-12);
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(array![[0.0, 1.5]], "bad").is_err());
        assert!(Image::new(array![[0.0, f64::NAN]], "nan").is_err());
        assert!(Image::new(array![[0.0, 1.0]], "ok").is_ok());
    }

    #[test]
    fn mask_dilate_grows_by_radius() {
        let mut m = BinaryMask::zeros(5, 5);
        m.values[(2, 2)] = true;
        let d = m.dilate(1);
        assert_eq!(d.count(), 9);
        assert!(d.values[(1, 1)] && d.values[(3, 3)]);
        assert!(!d.values[(0, 0)]);
    }
}
