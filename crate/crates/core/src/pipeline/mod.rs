//! Run configuration, model bundles and the command implementations
//! behind the `ladv` binary.

mod bundle;
mod commands;
mod config;
pub mod selftest;

pub use bundle::{
    classifier_names, AdmissionReport, ModelBundle, ADMISSION_FILE, CHECKPOINT_DIR, MAX_RECON_LINF,
    MIN_ACCURACY, MIN_ROW_DISTANCE,
};
pub use commands::{
    attack_targets, cmd_attack, cmd_eval, cmd_gen_data, cmd_selftest, cmd_train, ensure_trained, read_admission,
    read_attack_records, AttackOverrides, EvalOutcome, ATTACK_DIR, ATTACK_RUN_FILE, GEN_DATA_FILE,
    RECORDS_FILE, REPORT_DIR,
};
pub use config::{
    DataConfig, EvalConfig, ModelsConfig, PathsConfig, RunConfig, TrainSection, WORKDIR_ENV,
};
