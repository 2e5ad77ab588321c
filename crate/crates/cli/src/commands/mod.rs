pub mod calibrate;
pub mod eval;
pub mod pipeline;
pub mod synth;
pub mod sweep;
pub mod thresholds;
pub mod train;
pub mod verify;
