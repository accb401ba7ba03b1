//! Experiment configuration, problem synthesis, runs and comparison tables.

mod config;
mod images;
mod run;

pub use config::{
    apply_override, AlgorithmConfig, CgConfig, DenoiserConfig, EquivariantModeConfig, ExperimentConfig, KernelSource,
    MethodConfig, NlmConfig, ScheduleConfig, TaskConfig, ViscosityOperatorConfig, VistaConfig,
};
pub use images::{bicubic_upsample, builtin_image, load_ground_truth, BUILTIN_NAMES, BUILTIN_PREFIX};
pub use run::{
    build_denoiser, build_problem, build_viscosity, compare, mean_std, run, CompareRow, CompareTable, ImageRun,
    RunSummary, ViscosityOperator,
};
