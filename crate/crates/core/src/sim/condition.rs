//! Rendering conditions standing in for weather and lighting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Clear,
    Rain,
    Fog,
    Dusk,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Clear, Preset::Rain, Preset::Fog, Preset::Dusk];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Clear => "clear",
            Preset::Rain => "rain",
            Preset::Fog => "fog",
            Preset::Dusk => "dusk",
        }
    }

    /// Brightness range, noise range and allowed blur radii.
    fn ranges(self) -> ((f64, f64), (f64, f64), &'static [u8]) {
        match self {
            Preset::Clear => ((0.9, 1.2), (0.0, 0.02), &[0]),
            Preset::Rain => ((0.6, 0.9), (0.04, 0.1), &[1]),
            Preset::Fog => ((0.7, 1.0), (0.0, 0.04), &[2]),
            Preset::Dusk => ((0.4, 0.6), (0.02, 0.06), &[0, 1]),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub preset: Preset,
    pub brightness: f64,
    pub noise_sigma: f64,
    pub blur_radius: u8,
}

impl Condition {
    pub const BRIGHTNESS: (f64, f64) = (0.4, 1.2);
    pub const NOISE: (f64, f64) = (0.0, 0.1);

    /// Clear preset with no perturbation.
    pub fn neutral() -> Self {
        Self { preset: Preset::Clear, brightness: 1.0, noise_sigma: 0.0, blur_radius: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (Self::BRIGHTNESS.0..=Self::BRIGHTNESS.1).contains(&self.brightness)
            && (Self::NOISE.0..=Self::NOISE.1).contains(&self.noise_sigma)
            && self.blur_radius <= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("condition out of range: {self:?}")))
        }
    }

    pub fn sample_preset<R: Rng + ?Sized>(preset: Preset, rng: &mut R) -> Self {
        let ((b0, b1), (n0, n1), blurs) = preset.ranges();
        Self {
            preset,
            brightness: rng.random_range(b0..=b1),
            noise_sigma: rng.random_range(n0..=n1),
            blur_radius: blurs[rng.random_range(0..blurs.len())],
        }
    }
}

/// Uniform preset, then uniform parameters within that preset's ranges.
pub fn sample_condition<R: Rng + ?Sized>(rng: &mut R) -> Condition {
    let preset = Preset::ALL[rng.random_range(0..4)];
    Condition::sample_preset(preset, rng)
}
