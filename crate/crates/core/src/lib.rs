//! Text-guided 3D face generation at desk scale.
//!
//! A text-conditioned tri-plane generator trained adversarially from
//! text-image pairs, with contrastive and part-level alignment losses,
//! inference-time directional guidance, and evaluation metrics. All
//! pretrained components (text/image/identity encoders, face parsing)
//! have deterministic toy stand-ins behind plug-in interfaces.

pub mod config;
pub mod data;
pub mod encoders;
pub mod guidance;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod parsing;
pub mod renderer;
pub mod training;
pub mod triplane;
pub mod util;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("empty text")]
    EmptyText,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("no parts found")]
    NoParts,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("style prompts indistinguishable")]
    DegeneratePrompts,
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
