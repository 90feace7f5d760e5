#include "wasmveil/code_obf.hpp"
#include "wasmveil/errors.hpp"
#include <algorithm>

namespace wasmveil
{
Module alias_disrupt(Module m, unsigned pct, Rng& rng, OpaqueMode mode, PassContext& ctx, AliasReport* report)
{
    if (pct > 100)
        throw PassError{"alias percentage must be within 0-100"};

    struct Site
    {
        std::uint32_t func;
        std::size_t pc;
    };
    std::vector<Site> candidates;
    const auto imported = m.imported_function_count();
    const auto count = m.function_count();
    for (auto f = imported; f < count; ++f)
    {
        if (ctx.injected.count(f))
            continue;
        const auto& body = m.body_of(f).body;
        for (std::size_t pc = 0; pc < body.size(); ++pc)
            if (body[pc].op == Opcode::call && !ctx.injected.count(body[pc].index))
                candidates.push_back({f, pc});
    }

    AliasReport local_report;
    auto& rep = report ? *report : local_report;
    rep = {};
    rep.candidates = static_cast<std::uint32_t>(candidates.size());
    const auto n = candidates.size();
    const auto chosen_count = (pct * n + 50) / 100;
    if (chosen_count == 0)
        return m;

    // Partial Fisher-Yates: the first chosen_count entries form the sample.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    for (std::size_t i = 0; i < chosen_count; ++i)
        std::swap(order[i], order[i + rng.below(n - i)]);
    order.resize(chosen_count);
    std::sort(order.begin(), order.end());

    if (m.imported_table_count() != 0)
        throw PassError{"imported tables cannot host alias entries"};
    if (m.tables.empty())
        m.tables.push_back(TableType{Limits{0, 0}});
    auto& limits = m.tables.front().limits;

    // Final table image after instantiation (later segments overwrite earlier).
    std::map<std::uint32_t, std::uint32_t> image;
    for (std::size_t i = 0; i < m.elems.size(); ++i)
    {
        const auto off = constant_offset(m.elems[i].offset);
        if (!off)
            throw PassError{"elem segment " + std::to_string(i) + " has a non-constant offset"};
        for (std::size_t j = 0; j < m.elems[i].functions.size(); ++j)
            image[static_cast<std::uint32_t>(*off + j)] = m.elems[i].functions[j];
    }
    std::map<std::uint32_t, std::uint32_t> slot_of;
    for (const auto& [slot, func] : image)
        slot_of.emplace(func, slot);

    ElemSegment added;
    const auto base = limits.min;
    for (const auto idx : order)
    {
        const auto callee = m.body_of(candidates[idx].func).body[candidates[idx].pc].index;
        if (slot_of.count(callee))
            continue;
        slot_of[callee] = base + static_cast<std::uint32_t>(added.functions.size());
        added.functions.push_back(callee);
    }
    if (!added.functions.empty())
    {
        added.offset = make_offset_expr(base);
        rep.new_elem_entries = static_cast<std::uint32_t>(added.functions.size());
        limits.min += rep.new_elem_entries;
        if (limits.max && *limits.max < limits.min)
            limits.max = limits.min;
        m.elems.push_back(std::move(added));
    }

    std::size_t next = 0;
    while (next < order.size())
    {
        const auto func = candidates[order[next]].func;
        const InstrSeq body = m.body_of(func).body;
        InstrSeq out;
        out.reserve(body.size() + 4);
        std::uint32_t site_number = 0;
        for (std::size_t pc = 0; pc < body.size(); ++pc)
        {
            const bool rewrite = next < order.size() && candidates[order[next]].func == func &&
                                 candidates[order[next]].pc == pc;
            if (!rewrite)
            {
                out.push_back(body[pc]);
                continue;
            }
            ++next;
            const auto callee = body[pc].index;
            const auto slot = static_cast<std::int32_t>(slot_of.at(callee));
            const bool use_collatz =
                mode == OpaqueMode::collatz_o2 || (mode == OpaqueMode::collatz_o1 && site_number < 2);
            if (use_collatz)
            {
                auto seq = collatz_value(m, func, slot, rng, ctx);
                out.insert(out.end(), seq.begin(), seq.end());
            }
            else if (mode == OpaqueMode::constant)
                out.push_back(ins::i32_const(slot));
            else
            {
                auto seq = gen_simple_opaque_zero(predicate_locals(m, func, ctx, false).x);
                out.insert(out.end(), seq.begin(), seq.end());
                out.push_back(ins::i32_const(slot));
                out.push_back(ins::op(Opcode::i32_add));
            }
            out.push_back(ins::call_indirect(m.function_type_index(callee)));
            ++site_number;
            ++rep.rewritten;
        }
        m.body_of(func).body = std::move(out);
    }
    return m;
}
}  // namespace wasmveil
