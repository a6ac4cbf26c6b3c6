//! The `smerf` command-line pipeline: generate, train, attribute, evaluate, report.

pub mod config;
pub mod output;
pub mod stages;
pub mod store;

use smerf_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

/// Process exit code for an error that ended a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<stages::Unverified>().is_some() {
            return EXIT_TRAINING;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Domain(_) | Error::Usage(_) => EXIT_CONFIG,
                Error::TrainingFailure { .. } | Error::Divergence(_) => EXIT_TRAINING,
                Error::Integrity(_) | Error::Format(_) => EXIT_INTEGRITY,
                _ => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into()).into()), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Integrity("x".into()).into()), EXIT_INTEGRITY);
        let wrapped = anyhow::Error::new(Error::Format("x".into())).context("reading");
        assert_eq!(exit_code(&wrapped), EXIT_INTEGRITY);
        assert_eq!(exit_code(&stages::Unverified("m".into()).into()), EXIT_TRAINING);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), EXIT_OTHER);
    }
}
