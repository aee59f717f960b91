//! Helpers shared by the integration test targets. Each target uses a subset.
#![allow(dead_code)]

pub mod clustering;
pub mod contrastive;
pub mod gradcheck;
pub mod motifs;
