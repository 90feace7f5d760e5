#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace wasmveil
{
/// Locals feeding opaque predicates in one function.
struct PredicateLocals
{
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    /// i64 scratch for the Collatz iteration, allocated on first use.
    std::optional<std::uint32_t> a;
    /// True when x/y are fresh zero-initialized locals rather than parameters.
    bool synthetic = false;
};

/// State shared by passes run over one module.
struct PassContext
{
    /// Functions added by passes; never rewritten by later passes.
    std::set<std::uint32_t> injected;
    std::optional<std::uint32_t> collatz_function;
    std::map<std::uint32_t, PredicateLocals> predicate_locals;
    /// Human-readable remarks (skipped functions, clamped counts, ...).
    std::vector<std::string> notes;
};
}  // namespace wasmveil
