#pragma once

#include <stdexcept>
#include <string>

namespace grq {

// Base class for everything this library throws on purpose.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/operation shape disagreement.
struct dimension_error : error {
    using error::error;
};

// API precondition broken (empty history, non-scalar backward seed, ...).
struct contract_error : error {
    using error::error;
};

// Input that is structurally valid but degenerate (e.g. layer_norm over < 2 features).
struct degenerate_input_error : error {
    using error::error;
};

// Bad user-supplied configuration or generator spec.
struct validation_error : error {
    using error::error;
};

// Training diverged or produced non-finite values.
struct numeric_error : error {
    using error::error;
};

// On-disk artifact problems. `kind` distinguishes what exactly was rejected
// so callers (and tests) can tell a checksum failure from a shape failure.
enum class format_error_kind {
    bad_magic,
    bad_version,
    bad_header,
    bad_checksum,
    bad_shape,
    truncated,
    io,
};

struct format_error : error {
    format_error_kind kind;
    format_error(format_error_kind k, const std::string& msg) : error(msg), kind(k) {}
};

inline const char* to_string(format_error_kind k) {
    switch (k) {
        case format_error_kind::bad_magic: return "bad_magic";
        case format_error_kind::bad_version: return "bad_version";
        case format_error_kind::bad_header: return "bad_header";
        case format_error_kind::bad_checksum: return "bad_checksum";
        case format_error_kind::bad_shape: return "bad_shape";
        case format_error_kind::truncated: return "truncated";
        case format_error_kind::io: return "io";
    }
    return "unknown";
}

}  // namespace grq
