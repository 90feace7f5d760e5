#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace wasmveil
{
template <typename T>
struct LebResult
{
    T value;
    std::size_t next;
};

/// Decodes an unsigned LEB128 value starting at `pos`. Throws DecodeError on
/// truncation or when the encoding does not fit in 64 bits.
LebResult<std::uint64_t> read_uleb128(std::span<const std::uint8_t> bytes, std::size_t pos);

LebResult<std::int64_t> read_sleb128(std::span<const std::uint8_t> bytes, std::size_t pos);

/// Like read_uleb128 but also rejects values wider than `bits`.
LebResult<std::uint64_t> read_uleb128_bits(
    std::span<const std::uint8_t> bytes, std::size_t pos, unsigned bits);

LebResult<std::int64_t> read_sleb128_bits(
    std::span<const std::uint8_t> bytes, std::size_t pos, unsigned bits);

void write_uleb128(std::vector<std::uint8_t>& out, std::uint64_t value);
void write_sleb128(std::vector<std::uint8_t>& out, std::int64_t value);

std::vector<std::uint8_t> write_uleb128(std::uint64_t value);
std::vector<std::uint8_t> write_sleb128(std::int64_t value);
}  // namespace wasmveil
