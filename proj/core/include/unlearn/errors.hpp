#pragma once

#include <stdexcept>
#include <string>

namespace unlearn {

/// Error identities raised across the library. Callers match on the code.
enum class ErrorCode {
    non_finite_loss,
    empty_batch,
    dimension_mismatch,
    no_convergence,
    not_positive_definite,
    parse_error,
    count_mismatch,
    bad_label,
    unsupported_version,
    invariant_violation,
    bad_ratio,
    empty_forget_set,
    non_finite_update,
    bad_step,
    pool_too_small,
    spec_mismatch,
    diverged,
    empty_dataset,
    bad_config,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace unlearn
