#pragma once

#include "wasmveil/module.hpp"
#include "wasmveil/pass.hpp"
#include "wasmveil/rng.hpp"
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace wasmveil
{
/// Positional XOR keystream: key_byte(a) = keystream[a mod L].
/// L must divide 8 so helpers can rotate one 64-bit word of key material.
struct MemKey
{
    std::vector<std::uint8_t> keystream;

    /// Derives an L-byte keystream from `seed`; never all-zero.
    static MemKey from_seed(std::uint64_t seed, std::size_t length = 8);

    std::uint8_t key_byte(std::uint64_t addr) const { return keystream[addr % keystream.size()]; }
    /// 64-bit little-endian word whose byte i is key_byte(i).
    std::uint64_t word() const;
    /// Throws PassError unless L is 1, 2, 4 or 8 and some byte is nonzero.
    void check() const;
};

/// Shape of one load or store, with its static offset.
struct MemAccessSpec
{
    std::uint32_t offset = 0;
    bool is_signed = false;
    unsigned len = 32;  // bits
    ValType type = ValType::i32;
    bool is_store = false;

    static MemAccessSpec of(const Instr& instr);
    /// The unique MVP opcode with this shape.
    Opcode opcode() const;
};

/// Indices of functions injected by the memory pass.
struct MemHelpers
{
    std::map<Opcode, std::uint32_t> by_opcode;
    std::optional<std::uint32_t> grow;
    std::uint32_t init = 0;

    std::set<std::uint32_t> all() const;
};

/// XOR every data byte at absolute address a with key_byte(a).
/// Throws PassError on non-constant or overlapping segments.
Module encrypt_data_segments(Module m, const MemKey& key);

/// Adds one decrypting/encrypting helper per memory opcode present, an
/// enc_grow wrapper when memory.grow occurs, and an init function (made the
/// start function) filling non-segment bytes of the initial memory with key
/// material. Throws PassError for imported or multiple memories.
std::pair<Module, MemHelpers> synthesize_mem_helpers(Module m, const MemKey& key);

/// Replaces loads/stores with `i32.const offset; call helper` and
/// memory.grow with `call enc_grow`, in every function except the helpers.
Module rewrite_mem_instructions(Module m, const MemHelpers& helpers);

/// Full memory pass. Returns the module unchanged when it has no memory.
Module obfuscate_memory(Module m, const MemKey& key, PassContext* ctx = nullptr);

enum class RenameSpace : std::uint8_t
{
    export_,
    import,
    funcname,
};

std::string_view to_string(RenameSpace space) noexcept;

struct RenameEntry
{
    RenameSpace space = RenameSpace::export_;
    std::uint32_t index = 0;
    std::string original;
    std::string renamed;

    bool operator==(const RenameEntry&) const = default;
};

struct RenameMap
{
    std::vector<RenameEntry> entries;

    /// Renamed value for `original` in `space`, if it was renamed.
    std::optional<std::string> lookup(RenameSpace space, std::string_view original) const;
    void append(const RenameMap& other);
    /// JSON array of {space, index, original, renamed}.
    std::string to_json() const;
};

/// Replaces every function name in each "name" section with a distinct
/// random alphanumeric string of the same byte length, patching bytes in
/// place so every length field and the encoded size stay identical.
std::pair<Module, RenameMap> obfuscate_function_names(Module m, Rng& rng);

inline const std::set<std::string> default_export_allowlist{"memory", "_start"};
inline const std::set<std::string> protected_import_modules{"wasi_snapshot_preview1", "wasi_unstable"};

/// Renames exports outside `allowlist` to unique random strings of length
/// 8-16. With `rename_imports`, also renames import names whose module is
/// not protected.
std::pair<Module, RenameMap> obfuscate_exports(Module m, Rng& rng,
    const std::set<std::string>& allowlist = default_export_allowlist, bool rename_imports = false);
}  // namespace wasmveil
