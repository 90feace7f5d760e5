#pragma once

#include "wasmveil/module.hpp"
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace wasmveil
{
inline constexpr std::uint64_t default_fuel = 100'000'000;
inline constexpr std::uint32_t wasm_page_size = 65536;

/// A typed WebAssembly value holding its exact bit pattern
/// (32-bit values are zero-extended).
struct Value
{
    ValType type = ValType::i32;
    std::uint64_t bits = 0;

    static Value i32(std::int32_t v) { return {ValType::i32, static_cast<std::uint32_t>(v)}; }
    static Value i64(std::int64_t v) { return {ValType::i64, static_cast<std::uint64_t>(v)}; }
    static Value f32(float v);
    static Value f64(double v);
    static Value zero(ValType t) { return {t, 0}; }

    std::int32_t as_i32() const { return static_cast<std::int32_t>(static_cast<std::uint32_t>(bits)); }
    std::int64_t as_i64() const { return static_cast<std::int64_t>(bits); }
    float as_f32() const;
    double as_f64() const;

    bool is_nan() const;

    /// Bit-exact equality.
    bool operator==(const Value&) const = default;
};

/// Equality with NaNs of the same type considered equal regardless of payload.
bool equivalent(const Value& a, const Value& b);

std::string to_string(const Value& v);

enum class TrapKind : std::uint8_t
{
    unreachable,
    memory_out_of_bounds,
    integer_divide_by_zero,
    integer_overflow,
    invalid_conversion,
    indirect_call_type_mismatch,
    undefined_element,
    uninitialized_element,
    stack_exhausted,
    host,
};

std::string_view to_string(TrapKind kind) noexcept;

struct ExecResult
{
    enum class Status : std::uint8_t
    {
        ok,
        trap,
        fuel_exhausted,
    };

    Status status = Status::ok;
    std::vector<Value> values;
    TrapKind trap = TrapKind::unreachable;
    std::uint64_t steps = 0;

    bool ok() const { return status == Status::ok; }
};

class Instance;

/// Host function outcome: result values, or a trap.
using HostResult = std::variant<std::vector<Value>, TrapKind>;
using HostFunction = std::function<HostResult(std::span<const Value> args, Instance& inst)>;

/// Host functions keyed by (module, name).
struct ImportStubs
{
    std::map<std::pair<std::string, std::string>, HostFunction> functions;
    /// Used for function imports with no explicit entry, when set.
    std::optional<HostFunction> fallback;

    ImportStubs& add(std::string module, std::string name, HostFunction fn);

    static HostFunction trap_on_call();
    static HostFunction constant_return(std::vector<Value> values);
    /// Appends every argument to Instance::output and returns zero values.
    static HostFunction capture_output(std::vector<ValType> results = {});

    /// Stubs for the conventional fixture environment: env.emit captures,
    /// anything else traps.
    static ImportStubs standard();
};

/// Import resolution failure.
struct LinkError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// Fuel ran out while running the start function.
struct OutOfFuel : std::runtime_error
{
    OutOfFuel() : std::runtime_error{"fuel exhausted"} {}
};

/// Trap raised while instantiating (segment bounds or start function).
struct InstantiationTrap : std::runtime_error
{
    TrapKind kind;
    explicit InstantiationTrap(TrapKind k);
};

class Instance
{
public:
    const Module& module() const { return *module_; }

    std::vector<std::uint8_t> memory;
    std::optional<std::uint32_t> memory_max_pages;
    std::vector<std::optional<std::uint32_t>> table;
    std::vector<Value> globals;
    /// Values captured by output stubs, in call order.
    std::vector<Value> output;
    /// Total instructions executed by this instance.
    std::uint64_t steps = 0;
    /// Called before each instruction of a defined function with the call
    /// depth of its frame and the raw bits of that frame's locals.
    std::function<void(std::uint32_t func, std::uint32_t pc, unsigned depth, std::span<const std::uint64_t> locals)>
        observer;

private:
    friend Instance instantiate(const Module&, const ImportStubs&, std::uint64_t);
    friend class Machine;

    struct CompiledFunction
    {
        std::vector<std::uint32_t> end_of;   // matching end for block/loop/if
        std::vector<std::uint32_t> else_of;  // else position for if (or end)
        std::vector<ValType> locals;         // params then declared locals
        std::uint32_t param_count = 0;
    };

    std::shared_ptr<const Module> module_;
    std::vector<HostFunction> host_functions_;
    std::vector<CompiledFunction> compiled_;
};

/// Builds an instance: globals, memory (zeroed, then data segments), table
/// (elem segments), then runs the start function. Throws LinkError or
/// InstantiationTrap.
Instance instantiate(const Module& m, const ImportStubs& stubs, std::uint64_t fuel = default_fuel);

ExecResult invoke(Instance& inst, std::uint32_t func, std::span<const Value> args,
    std::uint64_t fuel = default_fuel);

/// Invokes an exported function. Throws std::invalid_argument when the
/// export is missing or arguments do not match its type.
ExecResult invoke(Instance& inst, std::string_view export_name, std::span<const Value> args,
    std::uint64_t fuel = default_fuel);

struct DifferentialOptions
{
    std::uint64_t fuel = default_fuel;
    ImportStubs stubs = ImportStubs::standard();
    /// Entry name in the second module when it differs (renamed exports).
    std::optional<std::string> renamed_entry;
};

struct DifferentialVerdict
{
    enum class Outcome : std::uint8_t
    {
        equal,
        divergent,
        inconclusive,
    };

    Outcome outcome = Outcome::equal;
    /// First differing (or fuel-exhausted) argument vector.
    std::optional<std::size_t> vector_index;
    std::string detail;
    std::uint64_t steps_original = 0;
    std::uint64_t steps_obfuscated = 0;

    bool equal() const { return outcome == Outcome::equal; }
};

/// Runs `entry` on fresh instances of both modules for every argument vector
/// and compares result values, trap kinds and captured output.
DifferentialVerdict differential_check(const Module& original, const Module& obfuscated,
    const std::string& entry, std::span<const std::vector<Value>> arg_vectors,
    const DifferentialOptions& options = {});
}  // namespace wasmveil
