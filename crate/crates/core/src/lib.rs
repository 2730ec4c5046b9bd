pub mod camera;
pub mod coherence;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod project;
pub mod rasterizer;
pub mod sac;
pub mod train;
pub mod synth;
