#pragma once

#include <stdexcept>
#include <string>

namespace hcft {

// Every failure the library can raise, as a stable code the caller can
// switch on. Messages carry the human-readable context.
enum class Err {
    // tensor / autodiff
    ShapeMismatch,
    NotScalar,
    TapeConsumed,
    NonFinite,
    // nn primitives
    KernelTooLarge,
    ChannelMismatch,
    HeadDivisibility,
    SequenceTooLong,
    InvalidRate,
    // model
    ConfigIncompatible,
    GeometryMismatch,
    MissingCheckpoint,
    BadCheckpoint,
    // signal io
    BadMagic,
    TruncatedRecord,
    InconsistentHeader,
    DegenerateScale,
    Unquantizable,
    RaggedRows,
    NonNumericCell,
    NoRecordings,
    // preprocess
    EdgeOutOfRange,
    OrderUnsupported,
    SeriesTooShort,
    WindowTooLong,
    UnsortedAnnotations,
    SingleSubject,
    ClassTooSmall,
    // metrics
    EmptyMatrix,
    NoPositives,
    NoNegatives,
    ZeroDuration,
    OneClassOnly,
    // train
    LabelOutOfRange,
    // config / cli
    BadConfig,
    IoFailure,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& what)
        : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}

    Err code() const noexcept { return code_; }

private:
    Err code_;
};

[[noreturn]] inline void raise(Err code, const std::string& what) { throw Error(code, what); }

} // namespace hcft
