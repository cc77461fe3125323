use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Network sizes. Rotations are always decoded from the 6D continuous
/// representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub token_dim: usize,
    /// Scene tokens per side.
    pub grid_size: usize,
    pub image_res: usize,
    pub hand_crop_res: usize,
    /// Side of the square hand-crop patches.
    pub hand_patch: usize,
    /// Crop side as a multiple of the longer box side.
    pub crop_expansion: f64,
    pub n_encoder_layers: usize,
    pub n_hand_layers: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub state_len: usize,
    pub max_hands: usize,
    pub freeze_hand_encoder: bool,
    pub template_seed: u64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            token_dim: 64,
            grid_size: 8,
            image_res: 128,
            hand_crop_res: 32,
            hand_patch: 8,
            crop_expansion: 1.5,
            n_encoder_layers: 2,
            n_hand_layers: 2,
            n_decoder_layers: 2,
            n_heads: 4,
            mlp_ratio: 2,
            state_len: 16,
            max_hands: 2,
            freeze_hand_encoder: true,
            template_seed: 0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that exercises every pathway; used by the
    /// gradient checks.
    pub fn tiny() -> Self {
        Self {
            token_dim: 8,
            grid_size: 2,
            image_res: 8,
            hand_crop_res: 4,
            hand_patch: 2,
            n_encoder_layers: 1,
            n_hand_layers: 1,
            n_decoder_layers: 1,
            n_heads: 2,
            state_len: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("token_dim", self.token_dim),
            ("grid_size", self.grid_size),
            ("image_res", self.image_res),
            ("hand_crop_res", self.hand_crop_res),
            ("hand_patch", self.hand_patch),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_hand_layers", self.n_hand_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("n_heads", self.n_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("state_len", self.state_len),
            ("max_hands", self.max_hands),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.token_dim % self.n_heads != 0 {
            return Err(Error::Config(format!("token_dim {} not divisible by n_heads {}", self.token_dim, self.n_heads)));
        }
        if self.image_res % self.grid_size != 0 {
            return Err(Error::Config(format!("image_res {} not divisible by grid_size {}", self.image_res, self.grid_size)));
        }
        if self.hand_crop_res % self.hand_patch != 0 {
            return Err(Error::Config(format!(
                "hand_crop_res {} not divisible by hand_patch {}",
                self.hand_crop_res, self.hand_patch
            )));
        }
        if !(self.crop_expansion > 0.0) {
            return Err(Error::Config("crop_expansion must be positive".into()));
        }
        Ok(())
    }

    /// Pixels per scene token along each axis.
    pub fn scene_patch(&self) -> usize {
        self.image_res / self.grid_size
    }

    pub fn n_scene_tokens(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn n_hand_tokens(&self) -> usize {
        let s = self.hand_crop_res / self.hand_patch;
        s * s
    }
}
