#pragma once

#include "wasmveil/module.hpp"
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace wasmveil
{
inline constexpr std::uint8_t wasm_magic[4] = {0x00, 0x61, 0x73, 0x6D};
inline constexpr std::uint8_t wasm_version[4] = {0x01, 0x00, 0x00, 0x00};

/// Decodes a core v1 binary. Code bodies are fully decoded into instructions;
/// custom sections are kept verbatim together with their position.
/// Throws DecodeError.
Module decode_module(std::span<const std::uint8_t> bytes);

/// Serializes `m` with minimal LEB128 everywhere; empty sections are omitted.
/// Throws EncodeError when a module-level index is out of range.
Bytes encode_module(const Module& m);

/// Encodes one instruction (no nesting checks).
void encode_instr(Bytes& out, const Instr& instr);

/// Encoded size of a function body's instruction stream (no locals/size prefix).
std::size_t encoded_size(const InstrSeq& body);

struct NameEntry
{
    std::uint32_t index = 0;
    std::string name;

    bool operator==(const NameEntry&) const = default;
};

/// Function-name subsection of the "name" custom section:
///   0x01 || len_sec || count || (idx || len_name || name)*
/// Other subsections are carried as opaque bytes around it.
struct NameData
{
    Bytes prefix;  // subsections preceding the function-name subsection
    bool has_function_names = false;
    std::vector<NameEntry> entries;
    Bytes suffix;  // subsections following it

    std::uint32_t count() const { return static_cast<std::uint32_t>(entries.size()); }
    /// Byte length of the subsection content (len_sec).
    std::uint32_t section_length() const;

    bool operator==(const NameData&) const = default;
};

/// Parses a "name" custom-section payload (the bytes after the section name).
/// Throws DecodeError.
NameData parse_name_section(std::span<const std::uint8_t> payload);

/// Exact inverse of parse_name_section for canonical (minimal LEB128) input.
Bytes encode_name_section(const NameData& names);
}  // namespace wasmveil
