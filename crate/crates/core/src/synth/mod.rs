//! Synthetic warped-document generation.

pub mod dataset;
pub mod mesh;
pub mod pages;
pub mod sample;

pub use dataset::{generate_dataset, generate_sample, read_dataset, Dataset, KindMix, ManifestRecord, SynthConfig};
pub use mesh::{densify, kernel, perturb_mesh, PerturbRanges, Perturbation, SparseMesh, WarpKind};
pub use pages::{synthetic_page, synthetic_texture, ImageSource};
pub use sample::{
    edge_ground_truth, reconstruction_ssim, synthesize_sample, DocumentSample, Placement, PlacementRanges, WarpRecord, WarpSpec,
};
