//! HU windowing: affine map of a (width, level) HU range onto [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Window width in HU.
    pub width: f64,
    /// Window level (center) in HU.
    pub level: f64,
}

impl WindowSpec {
    /// Abdomen protocol: width 400, level 40.
    pub fn abdomen() -> Self {
        Self {
            width: 400.0,
            level: 40.0,
        }
    }

    /// Chest protocol: width 1500, level -600.
    pub fn chest() -> Self {
        Self {
            width: 1500.0,
            level: -600.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width <= 0.0 || !self.width.is_finite() {
            return Err(Error::arg(format!("window width {} must be > 0", self.width)));
        }
        Ok(())
    }

    pub fn lower_hu(&self) -> f64 {
        self.level - self.width / 2.0
    }

    /// `clamp((hu - (level - width/2)) / width, 0, 1)`.
    pub fn normalize(&self, hu: f64) -> f64 {
        ((hu - self.lower_hu()) / self.width).clamp(0.0, 1.0)
    }

    /// Inverse of [`WindowSpec::normalize`] for in-window values.
    pub fn denormalize(&self, v: f64) -> f64 {
        self.lower_hu() + v * self.width
    }

    /// Normalizes a whole HU buffer.
    pub fn normalize_all(&self, hu: &[f32]) -> Vec<f32> {
        hu.iter().map(|&v| self.normalize(v as f64) as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_center_maps_to_half() {
        let w = WindowSpec::abdomen();
        assert!((w.normalize(40.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn abdomen_lower_bound_is_zero() {
        // level - width/2 = 40 - 200 = -160
        let w = WindowSpec::abdomen();
        assert_eq!(w.normalize(-160.0), 0.0);
        assert!(w.normalize(-161.0) == 0.0, "below-window clamps");
        assert!(w.normalize(241.0) == 1.0, "above-window clamps");
    }

    #[test]
    fn round_trip_identity_in_window() {
        let w = WindowSpec::chest();
        let mut hu = w.lower_hu();
        while hu <= w.lower_hu() + w.width {
            let rt = w.denormalize(w.normalize(hu));
            assert!((rt - hu).abs() < 1e-4, "round trip at {hu} gave {rt}");
            hu += 37.3;
        }
    }

    #[test]
    fn zero_width_rejected() {
        assert!(WindowSpec { width: 0.0, level: 0.0 }.validate().is_err());
        assert!(WindowSpec { width: -5.0, level: 0.0 }.validate().is_err());
    }
}
