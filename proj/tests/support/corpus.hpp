#pragma once

#include "wasmveil/module.hpp"
#include <string>
#include <vector>

namespace wasmveil::test
{
struct Fixture
{
    std::string name;
    Module module;
    /// Exported entry point exercised by differential runs.
    std::string entry = "run";
};

/// Hand-built fixture modules covering arithmetic, floats, control flow,
/// memory (including uninitialized reads and growth), calls, tables, globals,
/// host output and traps.
const std::vector<Fixture>& corpus();

const Fixture& fixture(const std::string& name);
}  // namespace wasmveil::test
