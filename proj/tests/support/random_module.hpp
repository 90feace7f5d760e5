#pragma once

#include "wasmveil/module.hpp"
#include "wasmveil/rng.hpp"
#include <cstdint>

namespace wasmveil::test
{
struct RandomModuleOptions
{
    /// Allow table, memory and global imports (the interpreter links only
    /// function imports).
    bool non_function_imports = true;
    /// Allow branches back to loop headers; without them every run terminates.
    bool backward_branches = true;
    /// Allow `unreachable` and value-carrying branches that make the stack
    /// polymorphic.
    bool polymorphic = true;
    std::uint32_t max_functions = 6;
    std::uint32_t max_depth = 3;
};

/// A random module that passes validation: type-directed bodies over all MVP
/// instruction classes, plus every section kind and custom sections at
/// arbitrary positions.
Module random_module(Rng& rng, const RandomModuleOptions& options = {});
}  // namespace wasmveil::test
