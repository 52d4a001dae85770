#include "hcft/error.hpp"

namespace hcft {

const char* err_name(Err e) {
    switch (e) {
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::NotScalar: return "NotScalar";
        case Err::TapeConsumed: return "TapeConsumed";
        case Err::NonFinite: return "NonFinite";
        case Err::KernelTooLarge: return "KernelTooLarge";
        case Err::ChannelMismatch: return "ChannelMismatch";
        case Err::HeadDivisibility: return "HeadDivisibility";
        case Err::SequenceTooLong: return "SequenceTooLong";
        case Err::InvalidRate: return "InvalidRate";
        case Err::ConfigIncompatible: return "ConfigIncompatible";
        case Err::GeometryMismatch: return "GeometryMismatch";
        case Err::MissingCheckpoint: return "MissingCheckpoint";
        case Err::BadCheckpoint: return "BadCheckpoint";
        case Err::BadMagic: return "BadMagic";
        case Err::TruncatedRecord: return "TruncatedRecord";
        case Err::InconsistentHeader: return "InconsistentHeader";
        case Err::DegenerateScale: return "DegenerateScale";
        case Err::Unquantizable: return "Unquantizable";
        case Err::RaggedRows: return "RaggedRows";
        case Err::NonNumericCell: return "NonNumericCell";
        case Err::NoRecordings: return "NoRecordings";
        case Err::EdgeOutOfRange: return "EdgeOutOfRange";
        case Err::OrderUnsupported: return "OrderUnsupported";
        case Err::SeriesTooShort: return "SeriesTooShort";
        case Err::WindowTooLong: return "WindowTooLong";
        case Err::UnsortedAnnotations: return "UnsortedAnnotations";
        case Err::SingleSubject: return "SingleSubject";
        case Err::ClassTooSmall: return "ClassTooSmall";
        case Err::EmptyMatrix: return "EmptyMatrix";
        case Err::NoPositives: return "NoPositives";
        case Err::NoNegatives: return "NoNegatives";
        case Err::ZeroDuration: return "ZeroDuration";
        case Err::OneClassOnly: return "OneClassOnly";
        case Err::LabelOutOfRange: return "LabelOutOfRange";
        case Err::BadConfig: return "BadConfig";
        case Err::IoFailure: return "IoFailure";
    }
    return "UnknownError";
}

} // namespace hcft
