#include "unlearn/errors.hpp"

namespace unlearn {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::non_finite_loss: return "NonFiniteLoss";
        case ErrorCode::empty_batch: return "EmptyBatch";
        case ErrorCode::dimension_mismatch: return "DimensionMismatch";
        case ErrorCode::no_convergence: return "NoConvergence";
        case ErrorCode::not_positive_definite: return "NotPositiveDefinite";
        case ErrorCode::parse_error: return "ParseError";
        case ErrorCode::count_mismatch: return "CountMismatch";
        case ErrorCode::bad_label: return "BadLabel";
        case ErrorCode::unsupported_version: return "UnsupportedVersion";
        case ErrorCode::invariant_violation: return "InvariantViolation";
        case ErrorCode::bad_ratio: return "BadRatio";
        case ErrorCode::empty_forget_set: return "EmptyForgetSet";
        case ErrorCode::non_finite_update: return "NonFiniteUpdate";
        case ErrorCode::bad_step: return "BadStep";
        case ErrorCode::pool_too_small: return "PoolTooSmall";
        case ErrorCode::spec_mismatch: return "SpecMismatch";
        case ErrorCode::diverged: return "Diverged";
        case ErrorCode::empty_dataset: return "EmptyDataset";
        case ErrorCode::bad_config: return "BadConfig";
    }
    return "UnknownError";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace unlearn
