#pragma once

#include "wasmveil/analysis.hpp"
#include "wasmveil/module.hpp"
#include "wasmveil/pass.hpp"
#include "wasmveil/rng.hpp"
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace wasmveil
{
/// A contiguous instruction region with its operand-stack interface.
struct CodeBlock
{
    InstrSeq instrs;
    StackState entry;
    StackState exit;
    std::uint32_t source_func = 0;
};

struct SplitPlan
{
    std::uint32_t num = 1;
    /// Cut positions (instruction indices into the original block).
    std::vector<std::size_t> cut_points;
    /// (stack slot, type) -> local index holding that slot across a cut.
    std::map<std::pair<std::uint32_t, ValType>, std::uint32_t> saved_locals;
    std::size_t max_len = 0;
};

/// Top-level positions of `cb` where a cut is allowed: boundaries between
/// atomic units (nested constructs are single units) with a known stack.
std::vector<std::size_t> eligible_cuts(const CodeBlock& cb, const Module& m);

/// Splits `cb` into `num` blocks at evenly spread eligible cuts. Every block
/// but the last ends by saving the whole operand stack into locals (top
/// first); every block but the first starts by restoring it (bottom first).
/// New locals are appended to cb.source_func. Throws PassError.
std::vector<CodeBlock> split_code_block(
    const CodeBlock& cb, std::uint32_t num, Module& m, SplitPlan* plan = nullptr);

/// Same, with explicit cut positions (each must be eligible).
std::vector<CodeBlock> split_code_block_at(
    const CodeBlock& cb, std::span<const std::size_t> cuts, Module& m, SplitPlan* plan = nullptr);

CodeBlock assemble_sequential(std::span<const CodeBlock> cbs);
/// `cond` must leave one i32 on top of its entry stack; both arms take no
/// operands and yield the same (at most one) result.
CodeBlock assemble_if_else(const CodeBlock& cond, const CodeBlock& then_cb, const CodeBlock& else_cb);
/// block; loop; cond; i32.eqz; br_if 1; body; br 0; end; end
CodeBlock assemble_while(const CodeBlock& cond, const CodeBlock& body);
/// Nested blocks around an identity br_table: selector value k runs case k,
/// anything else (default = count) skips all cases. With `break_after_case`
/// each case leaves the switch; otherwise it falls through to the next.
CodeBlock assemble_switch_case(
    const CodeBlock& selector, std::span<const CodeBlock> cases, bool break_after_case = true);

enum class PredicateMode : std::uint8_t
{
    none,
    o1,
    o2,
};

struct FlattenPlan
{
    std::vector<std::uint32_t> original_order;
    /// shuffled_order[p] is the case placed at switch position p.
    std::vector<std::uint32_t> shuffled_order;
    std::uint32_t jump_flag_local = 0;
    std::uint32_t exit_sentinel = 0;
    /// Label depth each case branches through to reach the loop.
    std::vector<std::uint32_t> case_nesting;
    /// Instruction range of the flattened region in the original body.
    std::size_t region_begin = 0;
    std::size_t region_end = 0;
    std::uint32_t predicates = 0;
};

/// Flattens the longest eligible top-level region of defined function
/// `func`. Returns nullopt (and adds a note) when nothing is eligible.
std::optional<FlattenPlan> flatten_function(Module& m, std::uint32_t func, std::uint32_t num_blocks,
    Rng& rng, PredicateMode mode, PassContext& ctx);

/// flatten_function over every defined function not injected by a pass.
Module flatten_module(Module m, std::uint32_t num_blocks, Rng& rng, PredicateMode mode, PassContext& ctx);

enum class OpaqueMode : std::uint8_t
{
    constant,
    simple,
    collatz_o1,
    collatz_o2,
};

struct AliasReport
{
    std::uint32_t candidates = 0;
    std::uint32_t rewritten = 0;
    std::uint32_t new_elem_entries = 0;
};

/// Rewrites round-half-up(pct% of) candidate `call` sites into
/// `<index>; call_indirect (type t)`. Throws PassError.
Module alias_disrupt(Module m, unsigned pct, Rng& rng, OpaqueMode mode, PassContext& ctx,
    AliasReport* report = nullptr);

/// Adds (or reuses) the i64 -> i64 single Collatz step function.
std::uint32_t gen_collatz_function(Module& m, PassContext& ctx);

struct CollatzSpec
{
    std::uint32_t m = 1;
    std::uint32_t n = 1;
    std::uint32_t c = 1;
    std::uint32_t x = 0;  // i32 local
    std::uint32_t y = 0;  // i32 local
    std::uint32_t a = 0;  // i64 scratch local
    std::uint32_t collatz_function = 0;
    std::int32_t target = 1;

    /// Random positive coefficients for the given locals and target.
    static CollatzSpec random(Rng& rng, const PredicateLocals& locals, std::uint32_t collatz_function,
        std::int32_t target);
};

/// a = zext((m*x + n*y + c) | 1); while collatz(a) > 1: a = collatz(a);
/// pushes collatz(a) + (target - 1). Throws PassError when target <= 0.
InstrSeq gen_collatz_constant(const CollatzSpec& spec);

/// Pushes x*(x-1) % 2, which is 0 for every x.
InstrSeq gen_simple_opaque_zero(std::uint32_t x_local);

/// Predicate inputs of `func`: its first two i32 parameters, or fresh locals.
PredicateLocals& predicate_locals(Module& m, std::uint32_t func, PassContext& ctx, bool need_scratch);

/// Instructions pushing the i32 `value` through a Collatz construction
/// (value <= 0 is built as target 1 - value, then adjusted).
InstrSeq collatz_value(Module& m, std::uint32_t func, std::int32_t value, Rng& rng, PassContext& ctx);
}  // namespace wasmveil
