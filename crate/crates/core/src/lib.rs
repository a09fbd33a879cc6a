//! CycleGAN-based fundus artifact reduction with no-reference quality scoring.

pub mod checkpoint;
pub mod data;
pub mod iqa;
pub mod models;
pub mod nn;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod trainer;
