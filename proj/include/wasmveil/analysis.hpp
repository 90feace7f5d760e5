#pragma once

#include "wasmveil/module.hpp"
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wasmveil
{
/// Operand-stack slot type; nullopt is the indeterminate type that only
/// appears on a polymorphic (unreachable) stack.
using StackSlot = std::optional<ValType>;

/// Operand stack at a program point, bottom first. `polymorphic` is set after
/// unreachable/br/br_table/return until the enclosing construct ends.
struct StackState
{
    std::vector<StackSlot> types;
    bool polymorphic = false;

    std::size_t height() const { return types.size(); }
    bool operator==(const StackState&) const = default;
};

struct InstrStates
{
    StackState pre;
    StackState post;

    bool operator==(const InstrStates&) const = default;
};

/// Typing context of one function body.
struct FuncContext
{
    const Module* module = nullptr;
    std::vector<ValType> locals;  // parameters then declared locals
    std::vector<ValType> results;

    static FuncContext of(const Module& m, std::uint32_t func);
};

struct ValidationError
{
    /// Function index for body errors; nullopt for module-level errors.
    std::optional<std::uint32_t> function;
    /// Instruction index within the body, when applicable.
    std::optional<std::size_t> instr;
    std::string message;

    std::string to_string() const;
};

struct ValidationReport
{
    std::vector<ValidationError> errors;

    bool ok() const { return errors.empty(); }
};

/// Core-spec MVP validation, including the polymorphic-stack typing rules.
ValidationReport validate_module(const Module& m);

/// Per-instruction operand stack states of `body`, starting from `entry`.
/// The body is typed in the outermost (function) frame of `ctx`; it may stop
/// before that frame's closing `end`. Throws TypeError on ill-typed input.
std::vector<InstrStates> compute_stack_states(
    std::span<const Instr> body, const FuncContext& ctx, const StackState& entry = {});

std::vector<InstrStates> compute_stack_states(const Module& m, std::uint32_t func);

/// Largest operand stack height over all program points of `region`.
std::size_t max_stack_height(
    std::span<const Instr> region, const FuncContext& ctx, const StackState& entry = {});

enum class BlockKind : std::uint8_t
{
    function_body,
    block,
    loop,
    if_,
};

struct BlockNode
{
    BlockKind kind = BlockKind::function_body;
    std::size_t start = 0;  // index of the opening instruction (0 for the body)
    std::size_t end = 0;    // index of the matching `end`
    std::optional<std::size_t> else_at;
    std::uint32_t label_arity = 0;
    std::vector<BlockNode> children;
};

/// Nesting tree of a function body (which must end with its closing `end`).
/// Throws TypeError when block/loop/if and end are unbalanced.
BlockNode build_block_tree(std::span<const Instr> body);

/// Deepest structured nesting; a body without block/loop/if has depth 0.
std::uint32_t max_nesting_depth(std::span<const Instr> body);

/// Index of the `end` matching the structured instruction at `open`.
std::size_t matching_end(std::span<const Instr> body, std::size_t open);

struct ModuleMetrics
{
    std::map<std::string, std::uint64_t> opcode_counts;
    std::uint64_t instruction_count = 0;
    std::uint64_t call_count = 0;
    std::uint64_t call_indirect_count = 0;
    std::uint64_t elem_entry_count = 0;
    std::uint32_t function_count = 0;
    std::uint32_t max_nesting_depth = 0;
    /// Number of block/loop/if constructs opened at each nesting layer
    /// (layer 1 = directly inside a function body).
    std::map<std::uint32_t, std::uint64_t> nesting_histogram;
    std::uint64_t byte_size = 0;

    bool operator==(const ModuleMetrics&) const = default;
};

ModuleMetrics count_metrics(const Module& m);

/// Line-oriented `key=value` rendering.
std::string to_key_value(const ModuleMetrics& metrics);
}  // namespace wasmveil
