//! Saliency segmentation of synthetic light-field scenes learned from a
//! single noisy label per scene.

pub mod gradcore;
pub mod synthdata;
pub mod fusion;
pub mod forgetting;
pub mod noiseloss;
pub mod evalkit;
pub mod trainer;
pub mod cli;
