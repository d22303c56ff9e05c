pub mod assignment;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scene_gen;
pub mod sinkhorn;
pub mod vi;
pub mod ransac;
pub mod learning;
pub mod bench;
pub mod io;
pub mod render;
