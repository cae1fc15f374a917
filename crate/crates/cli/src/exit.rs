//! Exit-status contract: 0 success, 2 usage or configuration errors, 3 data
//! and I/O errors, 4 numeric failures. Argument parsing rejections also exit
//! with 2, so every "the operator asked for something invalid" path shares a
//! code.

use micseg_data::DataError;
use micseg_model::ModelError;
use micseg_train::TrainError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn code_for(err: &TrainError) -> i32 {
    match err {
        TrainError::Config(_) | TrainError::UnknownCase { .. } | TrainError::EmptySplit(_) => {
            EXIT_USAGE
        }
        TrainError::Model(ModelError::Config(_)) => EXIT_USAGE,
        TrainError::Data(DataError::Config(_)) => EXIT_USAGE,
        TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradients { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_are_distinct() {
        let usage = TrainError::Config("x".into());
        let data = TrainError::Io(std::io::Error::other("x"));
        let numeric = TrainError::NonFiniteLoss { step: 1, value: f64::NAN };
        assert_eq!(code_for(&usage), 2);
        assert_eq!(code_for(&data), 3);
        assert_eq!(code_for(&numeric), 4);
    }

    #[test]
    fn nested_config_errors_count_as_usage() {
        let model = TrainError::Model(ModelError::Config("bad".into()));
        let data = TrainError::Data(DataError::Config("bad".into()));
        assert_eq!(code_for(&model), 2);
        assert_eq!(code_for(&data), 2);
    }
}
