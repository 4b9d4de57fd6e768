//! Pipeline driver behind the `netimpute` binary.

pub mod commands;
pub mod config;

use netimpute::evaluate::CvError;
use netimpute::impute::ImputeError;
use netimpute::synth::{OracleError, SynthError};

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

fn numerical_impute(e: &ImputeError) -> bool {
    matches!(e, ImputeError::NonFinite { .. })
}

/// 2 for non-finite values or a singular oracle anywhere in the chain, else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<ImputeError>() {
            return numerical_impute(e);
        }
        if let Some(CvError::Impute { source, .. }) = cause.downcast_ref::<CvError>() {
            return numerical_impute(source);
        }
        if let Some(SynthError::Oracle(OracleError::Singular)) = cause.downcast_ref::<SynthError>() {
            return true;
        }
        matches!(cause.downcast_ref::<OracleError>(), Some(OracleError::Singular))
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;
    use netimpute::{AggregationWindow, EdgeId};

    #[test]
    fn classifies_numerical_failures() {
        let nf = ImputeError::NonFinite {
            edge: EdgeId("e1".into()),
            epoch: 3,
        };
        let wrapped = Err::<(), _>(nf).context("window all:all:all").unwrap_err();
        assert_eq!(exit_code(&wrapped), EXIT_NUMERICAL);
        let cv = anyhow::Error::from(CvError::Impute {
            fold: 0,
            window: AggregationWindow::ALL,
            source: ImputeError::NonFinite {
                edge: EdgeId("e1".into()),
                epoch: 1,
            },
        });
        assert_eq!(exit_code(&cv), EXIT_NUMERICAL);
        assert_eq!(exit_code(&anyhow::Error::from(OracleError::Singular)), EXIT_NUMERICAL);
        assert_eq!(
            exit_code(&anyhow::Error::from(ImputeError::NoWeights)),
            EXIT_VALIDATION
        );
        assert_eq!(exit_code(&anyhow::anyhow!("missing file")), EXIT_VALIDATION);
    }
}
