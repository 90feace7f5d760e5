#include "wasmveil/analysis.hpp"
#include "wasmveil/binary.hpp"
#include "wasmveil/errors.hpp"
#include <sstream>

namespace wasmveil
{
namespace
{
bool opens_block(Opcode op)
{
    return op == Opcode::block || op == Opcode::loop || op == Opcode::if_;
}

BlockKind kind_of(Opcode op)
{
    switch (op)
    {
    case Opcode::loop:
        return BlockKind::loop;
    case Opcode::if_:
        return BlockKind::if_;
    default:
        return BlockKind::block;
    }
}
}  // namespace

BlockNode build_block_tree(std::span<const Instr> body)
{
    BlockNode root;
    std::vector<BlockNode*> open{&root};
    for (std::size_t i = 0; i < body.size(); ++i)
    {
        const auto& ins = body[i];
        if (open.empty())
            throw TypeError{"instruction " + std::to_string(i) + " after the closing end"};
        auto& top = *open.back();
        if (opens_block(ins.op))
        {
            BlockNode child;
            child.kind = kind_of(ins.op);
            child.start = i;
            child.label_arity = (ins.block_type && ins.op != Opcode::loop) ? 1 : 0;
            top.children.push_back(std::move(child));
            open.push_back(&top.children.back());
        }
        else if (ins.op == Opcode::else_)
        {
            if (top.kind != BlockKind::if_ || top.else_at)
                throw TypeError{"else without matching if at instruction " + std::to_string(i)};
            top.else_at = i;
        }
        else if (ins.op == Opcode::end)
        {
            top.end = i;
            open.pop_back();
        }
    }
    if (!open.empty())
        throw TypeError{"unbalanced structured instructions: missing end"};
    return root;
}

std::uint32_t max_nesting_depth(std::span<const Instr> body)
{
    std::uint32_t depth = 0;
    std::uint32_t best = 0;
    for (const auto& ins : body)
    {
        if (opens_block(ins.op))
            best = std::max(best, ++depth);
        else if (ins.op == Opcode::end)
        {
            if (depth == 0)
                continue;  // the function's closing end
            --depth;
        }
    }
    return best;
}

std::size_t matching_end(std::span<const Instr> body, std::size_t open)
{
    std::size_t depth = 0;
    for (std::size_t i = open; i < body.size(); ++i)
    {
        if (opens_block(body[i].op))
            ++depth;
        else if (body[i].op == Opcode::end && --depth == 0)
            return i;
    }
    throw TypeError{"no matching end for instruction " + std::to_string(open)};
}

ModuleMetrics count_metrics(const Module& m)
{
    ModuleMetrics r;
    r.function_count = m.function_count();
    for (const auto& fb : m.code)
    {
        std::uint32_t depth = 0;
        for (const auto& ins : fb.body)
        {
            ++r.instruction_count;
            ++r.opcode_counts[std::string{opcode_name(ins.op)}];
            if (ins.op == Opcode::call)
                ++r.call_count;
            else if (ins.op == Opcode::call_indirect)
                ++r.call_indirect_count;
            if (opens_block(ins.op))
            {
                ++depth;
                ++r.nesting_histogram[depth];
                r.max_nesting_depth = std::max(r.max_nesting_depth, depth);
            }
            else if (ins.op == Opcode::end && depth > 0)
                --depth;
        }
    }
    for (const auto& seg : m.elems)
        r.elem_entry_count += seg.functions.size();
    r.byte_size = encode_module(m).size();
    return r;
}

std::string to_key_value(const ModuleMetrics& metrics)
{
    std::ostringstream os;
    os << "byte_size=" << metrics.byte_size << '\n'
       << "function_count=" << metrics.function_count << '\n'
       << "instruction_count=" << metrics.instruction_count << '\n'
       << "call=" << metrics.call_count << '\n'
       << "call_indirect=" << metrics.call_indirect_count << '\n'
       << "elem_entries=" << metrics.elem_entry_count << '\n'
       << "max_nesting_depth=" << metrics.max_nesting_depth << '\n';
    for (const auto& [depth, count] : metrics.nesting_histogram)
        os << "nesting." << depth << '=' << count << '\n';
    for (const auto& [name, count] : metrics.opcode_counts)
        os << "opcode." << name << '=' << count << '\n';
    return os.str();
}
}  // namespace wasmveil
