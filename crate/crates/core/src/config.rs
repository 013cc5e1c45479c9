//! Model and training configuration.

use serde::{Deserialize, Serialize};

/// Architecture and rendering knobs. Defaults are the desk-scale profile;
/// the full-scale values from the reference setup stay reachable through
/// config (512-d embeddings, 32 feature channels, 128^2 images).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    /// Shared embedding width for text, image and identity encoders.
    pub embed_dim: usize,
    pub z_dim: usize,
    pub w_dim: usize,
    pub map_hidden: usize,

    /// Tri-plane channel count C.
    pub plane_channels: usize,
    /// Tri-plane resolution R.
    pub plane_res: usize,
    /// Channels of the decoded per-point feature.
    pub feature_channels: usize,
    pub decoder_hidden: usize,

    /// Backbone starts from a learned constant at this resolution.
    pub backbone_base: usize,
    pub backbone_channels: Vec<usize>,
    pub upsampler_hidden: usize,
    pub disc_channels: Vec<usize>,
    pub disc_feat: usize,

    /// Final image resolution (dataset and discriminator side).
    pub final_res: usize,
    /// Neural rendering resolution at the start/end of the ramp.
    pub render_res_start: usize,
    pub render_res_end: usize,
    pub n_samples: usize,

    pub near: f64,
    pub far: f64,
    pub cam_radius: f64,
    pub focal: f64,
    pub background: [f64; 3],

    /// Side length of part crops fed to the part feature extractor.
    pub part_res: usize,
    /// Region grid used to parse images without ground-truth masks.
    pub part_grid: usize,
    /// Regions with a smaller foreground fraction are dropped (0 keeps all).
    pub part_min_frac: f64,
    /// Attention dimension d of the fine-grained alignment module.
    pub part_feat_dim: usize,
    pub attn_heads: usize,

    /// Whether camera parameters condition the mapping network.
    pub camera_cond: bool,

    pub iso_level: f64,
    pub mesh_grid_res: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            z_dim: 64,
            w_dim: 128,
            map_hidden: 128,
            plane_channels: 16,
            plane_res: 32,
            feature_channels: 8,
            decoder_hidden: 32,
            backbone_base: 4,
            backbone_channels: vec![64, 64, 48, 48],
            upsampler_hidden: 24,
            disc_channels: vec![24, 48, 64],
            disc_feat: 64,
            final_res: 32,
            render_res_start: 16,
            render_res_end: 32,
            n_samples: 32,
            near: 1.5,
            far: 4.5,
            cam_radius: 3.0,
            focal: 1.7,
            background: [1.0, 1.0, 1.0],
            part_res: 32,
            part_grid: 3,
            part_min_frac: 0.0,
            part_feat_dim: 64,
            attn_heads: 4,
            camera_cond: true,
            iso_level: 10.0,
            mesh_grid_res: 48,
        }
    }
}

/// Training loop configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub lambda_r1: f64,
    pub tau: f64,

    /// Discriminator input blur: sigma decays linearly from `blur_sigma0`
    /// to zero over the first `blur_images` images.
    pub blur_sigma0: f64,
    pub blur_images: usize,
    /// Neural rendering resolution ramps from start to end over this many
    /// images.
    pub res_ramp_images: usize,

    pub seed: u64,

    /// Per-term loss weights (the minimax objective writes them all at 1).
    pub w_adv: f64,
    pub w_cl: f64,
    pub w_fg: f64,

    /// Drop the extra 1/n factor inside each contrastive summand.
    pub standard_infonce: bool,
    /// Keep only the positive term of the attribute BCE (ablation).
    pub positive_only_bce: bool,

    pub ckpt_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            steps: 2000,
            lr_d: 0.002,
            lr_g: 0.0025,
            lambda_r1: 1.0,
            tau: 0.07,
            blur_sigma0: 1.5,
            blur_images: 20_000,
            res_ramp_images: 50_000,
            seed: 0,
            w_adv: 1.0,
            w_cl: 1.0,
            w_fg: 1.0,
            standard_infonce: false,
            positive_only_bce: false,
            ckpt_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.batch == 0 {
            return Err(crate::Error::InvalidArgument("batch must be positive".into()));
        }
        if self.lr_d <= 0.0 || self.lr_g <= 0.0 || self.tau <= 0.0 {
            return Err(crate::Error::InvalidArgument(
                "learning rates and tau must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stable hash of the configuration pair, recorded in checkpoints and
/// provenance files.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    use sha2::{Digest, Sha256};
    let blob = serde_json::to_vec(&(model, train)).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&blob);
    hex_of(&h.finalize())
}

pub(crate) fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Load a `ModelConfig`/`TrainConfig` pair from a TOML file with
/// `[model]` and `[train]` sections (both optional).
pub fn load_config_file(path: &std::path::Path) -> crate::Result<(ModelConfig, TrainConfig)> {
    #[derive(Deserialize, Default)]
    #[serde(default)]
    struct FileCfg {
        model: ModelConfig,
        train: TrainConfig,
    }
    let text = std::fs::read_to_string(path)?;
    let cfg: FileCfg =
        toml::from_str(&text).map_err(|e| crate::Error::InvalidArgument(format!("config: {e}")))?;
    Ok((cfg.model, cfg.train))
}
