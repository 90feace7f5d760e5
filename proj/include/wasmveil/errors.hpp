#pragma once

#include <stdexcept>
#include <string>

namespace wasmveil
{
/// Malformed or unsupported input bytes.
struct DecodeError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// A Module that violates its own invariants and cannot be serialized.
struct EncodeError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// A body that fails to type-check where a typed derivation was required.
struct TypeError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// An obfuscation pass declined to transform its input.
struct PassError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};
}  // namespace wasmveil
