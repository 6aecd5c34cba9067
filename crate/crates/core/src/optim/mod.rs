//! Training: losses, Adam, photometric calibration, gradient checks and the
//! fitting loop.

pub mod adam;
pub mod calibration;
pub mod fit;
pub mod gradcheck;
pub mod loss;

pub use adam::{adam_step, AdamParams, AdamState, LrSchedule};
pub use calibration::{calibrate_images, calibrate_solve, calibration_residual, CalibrationFit, CalibrationMap, CalibrationNet};
pub use fit::{evaluate_views, fit_scene, write_metrics_log, FitConfig, FitResult, HoldoutEval, MetricsRow, Trainer, View, METRICS_HEADER};
pub use gradcheck::{check_input_gradients, check_param_gradients, GradCheckEntry, FD_REL_TOL, FD_STEP};
pub use loss::{loss_total, LossBreakdown, LossInputs, LossOutput, LossWeights, WHITE_DIRECTIONS};
