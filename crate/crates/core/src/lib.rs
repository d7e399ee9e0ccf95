//! Panorama synthesis from four sparse compass-rose views.
//!
//! The pipeline has two stages. A small classifier estimates the shared
//! field of view of the four inputs relative to a 90° cube face; the views are
//! then embedded into their cube faces at that scale and warped into an
//! equirectangular panorama, which a three-scale conditional GAN completes.
//!
//! Modules:
//! - [`geometry`]: direction/pixel mappings, equirect↔cubemap resampling,
//!   perspective rendering and FOV-constrained view embedding.
//! - [`dataset`]: sample generation, scale pyramids and the on-disk manifest.
//! - [`nn`]: the small CPU tensor engine (conv, instance norm, Adam, losses).
//! - [`fov`], [`generator`], [`discriminator`]: the three networks.
//! - [`training`]: stage-wise optimization, checkpoints and inference.
//! - [`metrics`]: SSIM, PSNR and evaluation reports.

pub mod checkpoint;
pub mod dataset;
pub mod demo;
pub mod discriminator;
mod error;
pub mod fov;
pub mod generator;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

/// One level of the three-scale hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Small,
    Medium,
    Large,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Small, Stage::Medium, Stage::Large];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Small => "small",
            Stage::Medium => "medium",
            Stage::Large => "large",
        }
    }

    /// Short suffix used in parameter-group names (`s`, `m`, `l`).
    pub fn suffix(self) -> &'static str {
        match self {
            Stage::Small => "s",
            Stage::Medium => "m",
            Stage::Large => "l",
        }
    }

    /// Equirect height at this scale; width is always twice the height.
    pub fn height(self) -> usize {
        match self {
            Stage::Small => 128,
            Stage::Medium => 256,
            Stage::Large => 512,
        }
    }

    pub fn previous(self) -> Option<Stage> {
        match self {
            Stage::Small => None,
            Stage::Medium => Some(Stage::Small),
            Stage::Large => Some(Stage::Medium),
        }
    }

    /// This stage and every stage below it, smallest first.
    pub fn up_to(self) -> &'static [Stage] {
        &Self::ALL[..=self.index()]
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" | "s" => Ok(Stage::Small),
            "medium" | "m" => Ok(Stage::Medium),
            "large" | "l" => Ok(Stage::Large),
            other => Err(Error::InvalidArgument(format!("unknown stage `{other}`"))),
        }
    }
}
