pub mod numcore;
pub mod seeds;
pub mod skeldata;
pub mod backbone;
pub mod metrics;
pub mod detectors;
pub mod harness;
