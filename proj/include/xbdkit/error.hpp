#pragma once

#include <stdexcept>
#include <string>

namespace xbdkit {

// Base for everything this library throws. Subclasses map onto the CLI
// exit codes: IoError -> 3, all other Error subclasses -> 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MalformedWkt : Error {
    using Error::Error;
};

struct MultiPolygonUnsupported : Error {
    using Error::Error;
};

struct LabelParseError : Error {
    using Error::Error;
};

struct DecodeError : Error {
    using Error::Error;
};

struct SchemaError : Error {
    using Error::Error;
};

struct UnknownSampleId : Error {
    using Error::Error;
};

struct EmptyMatrix : Error {
    using Error::Error;
};

struct NonFiniteLoss : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace xbdkit
