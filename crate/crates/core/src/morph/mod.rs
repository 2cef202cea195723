//! Landmark-based complete and splicing morphs.

mod landmarks;
mod triangulate;
mod warp;

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use landmarks::{ChromaLandmarker, LandmarkSet, Landmarker, INNER_FACE_START, MIRROR_INDEX, N_LANDMARKS};
pub use triangulate::{border_points, triangulate};
pub use warp::{anchored, splice_mask, splice_morph, warp_blend, FEATHER_RADIUS, FEATHER_SIGMA};

use crate::dataset::{ImageKind, ImageRef};
use crate::error::{Error, Result};
use crate::imaging::load_rgb;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphMode {
    Complete,
    Splicing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpliceRecipient {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphRecipe {
    pub source_a: ImageRef,
    pub source_b: ImageRef,
    pub alpha: f64,
    pub mode: MorphMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splice_recipient: Option<SpliceRecipient>,
    #[serde(default)]
    pub seed: u64,
    /// Output path, relative to the dataset root.
    pub output: String,
}

impl MorphRecipe {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if (self.mode == MorphMode::Splicing) != self.splice_recipient.is_some() {
            return Err(Error::InvalidInput("splice_recipient must be set exactly for splicing morphs".into()));
        }
        for s in [&self.source_a, &self.source_b] {
            if s.kind == ImageKind::Morph {
                return Err(Error::InvalidInput(format!("morph source {} is itself a morph", s.path)));
            }
        }
        if self.source_a.contributors == self.source_b.contributors {
            return Err(Error::InvalidInput("morph sources share a subject".into()));
        }
        Ok(())
    }

    /// Manifest entry of the produced image.
    pub fn image_ref(&self) -> ImageRef {
        let mut contributors: Vec<String> = self
            .source_a
            .contributors
            .iter()
            .chain(&self.source_b.contributors)
            .cloned()
            .collect();
        contributors.dedup();
        ImageRef::morph(self.output.clone(), contributors)
    }
}

/// Complete morph, or its splice into the chosen recipient.
pub fn synthesize(
    recipe: &MorphRecipe,
    img_a: &RgbImage,
    lm_a: &LandmarkSet,
    img_b: &RgbImage,
    lm_b: &LandmarkSet,
) -> Result<RgbImage> {
    recipe.validate()?;
    let morph = warp_blend(img_a, lm_a, img_b, lm_b, recipe.alpha)?;
    match recipe.splice_recipient {
        None => Ok(morph),
        Some(SpliceRecipient::A) => splice_morph(&morph, img_a, lm_a),
        Some(SpliceRecipient::B) => splice_morph(&morph, img_b, lm_b),
    }
}

/// Loads both sources from `root`, locates landmarks and synthesizes the morph.
pub fn run_recipe(recipe: &MorphRecipe, root: &Path, landmarker: &dyn Landmarker) -> Result<RgbImage> {
    let load = |r: &ImageRef| -> Result<(RgbImage, LandmarkSet)> {
        let path = root.join(&r.path);
        let img = load_rgb(&path)?;
        let lm = landmarker.locate(&img, &path.display().to_string())?;
        Ok((img, lm))
    };
    let (a, la) = load(&recipe.source_a)?;
    let (b, lb) = load(&recipe.source_b)?;
    synthesize(recipe, &a, &la, &b, &lb)
}
