#include "wasmveil/leb128.hpp"
#include "wasmveil/errors.hpp"
#include <string>

namespace wasmveil
{
namespace
{
constexpr unsigned max_leb_bytes = 10;

[[noreturn]] void truncated(std::size_t pos)
{
    throw DecodeError{"truncated LEB128 at offset " + std::to_string(pos)};
}
}  // namespace

LebResult<std::uint64_t> read_uleb128(std::span<const std::uint8_t> bytes, std::size_t pos)
{
    return read_uleb128_bits(bytes, pos, 64);
}

LebResult<std::uint64_t> read_uleb128_bits(
    std::span<const std::uint8_t> bytes, std::size_t pos, unsigned bits)
{
    std::uint64_t result = 0;
    unsigned shift = 0;
    const auto start = pos;
    for (unsigned i = 0; i < max_leb_bytes; ++i)
    {
        if (pos >= bytes.size())
            truncated(start);
        const std::uint8_t byte = bytes[pos++];
        const std::uint64_t payload = byte & 0x7F;
        if (shift == 63 && payload > 1)
            throw DecodeError{"LEB128 overflows 64 bits at offset " + std::to_string(start)};
        result |= payload << shift;
        if ((byte & 0x80) == 0)
        {
            if (bits < 64 && (result >> bits) != 0)
                throw DecodeError{"LEB128 value exceeds " + std::to_string(bits) +
                                  " bits at offset " + std::to_string(start)};
            return {result, pos};
        }
        shift += 7;
    }
    throw DecodeError{"LEB128 longer than 10 bytes at offset " + std::to_string(start)};
}

LebResult<std::int64_t> read_sleb128(std::span<const std::uint8_t> bytes, std::size_t pos)
{
    return read_sleb128_bits(bytes, pos, 64);
}

LebResult<std::int64_t> read_sleb128_bits(
    std::span<const std::uint8_t> bytes, std::size_t pos, unsigned bits)
{
    std::uint64_t result = 0;
    unsigned shift = 0;
    const auto start = pos;
    for (unsigned i = 0; i < max_leb_bytes; ++i)
    {
        if (pos >= bytes.size())
            truncated(start);
        const std::uint8_t byte = bytes[pos++];
        if (shift < 64)
            result |= static_cast<std::uint64_t>(byte & 0x7F) << shift;
        shift += 7;
        if ((byte & 0x80) == 0)
        {
            if (shift < 64 && (byte & 0x40) != 0)
                result |= ~std::uint64_t{0} << shift;
            const auto value = static_cast<std::int64_t>(result);
            if (bits < 64)
            {
                const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
                const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
                if (value < lo || value > hi)
                    throw DecodeError{"signed LEB128 exceeds " + std::to_string(bits) +
                                      " bits at offset " + std::to_string(start)};
            }
            if (shift > 64)
            {
                // The final byte of a 10-byte encoding may only carry sign bits.
                const bool negative = value < 0;
                const std::uint8_t expected = negative ? 0x7F : 0x00;
                if (byte != expected)
                    throw DecodeError{
                        "signed LEB128 overflows 64 bits at offset " + std::to_string(start)};
            }
            return {value, pos};
        }
    }
    throw DecodeError{"LEB128 longer than 10 bytes at offset " + std::to_string(start)};
}

void write_uleb128(std::vector<std::uint8_t>& out, std::uint64_t value)
{
    do
    {
        std::uint8_t byte = value & 0x7F;
        value >>= 7;
        if (value != 0)
            byte |= 0x80;
        out.push_back(byte);
    } while (value != 0);
}

void write_sleb128(std::vector<std::uint8_t>& out, std::int64_t value)
{
    bool more = true;
    while (more)
    {
        std::uint8_t byte = value & 0x7F;
        value >>= 7;  // arithmetic shift
        const bool sign_bit = (byte & 0x40) != 0;
        if ((value == 0 && !sign_bit) || (value == -1 && sign_bit))
            more = false;
        else
            byte |= 0x80;
        out.push_back(byte);
    }
}

std::vector<std::uint8_t> write_uleb128(std::uint64_t value)
{
    std::vector<std::uint8_t> out;
    write_uleb128(out, value);
    return out;
}

std::vector<std::uint8_t> write_sleb128(std::int64_t value)
{
    std::vector<std::uint8_t> out;
    write_sleb128(out, value);
    return out;
}
}  // namespace wasmveil
