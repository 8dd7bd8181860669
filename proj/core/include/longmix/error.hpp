#pragma once

#include <stdexcept>
#include <string>

namespace longmix {

// Every recoverable defect in inputs, specs, or numerics maps to one code so
// callers (and the CLI exit-code policy) can branch without string matching.
// Model non-convergence is deliberately NOT an error: it is a first-class
// result carried by FitResult::convergence.
enum class ErrorCode {
    MissingColumn,
    NonNumericField,
    InvalidBorough,
    InvalidSeason,
    UnbalancedPanel,
    InconsistentWeather,
    EmptyInput,
    NotEnoughCompletePairs,
    OutOfRange,
    EmptyStratum,
    UnknownColumn,
    UnknownModel,
    RankDeficientFixed,
    EmptyTermList,
    CrossedGroups,
    RhoOutOfRange,
    NonPositiveSigma,
    DimensionMismatch,
    SingularInformation,
    DecodeFailure,
    NumericalBreakdown,
    KOutOfRange,
    ConstantColumn,
    MissingScores,
    IncomparableFits,
    IoFailure,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace longmix
