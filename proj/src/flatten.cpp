#include "wasmveil/code_obf.hpp"
#include "wasmveil/errors.hpp"
#include <algorithm>
#include <numeric>

namespace wasmveil
{
namespace
{
using O = Opcode;

bool opens(Opcode op)
{
    return op == O::block || op == O::loop || op == O::if_;
}

/// True when a branch in `instrs` targets a label outside them (`return`
/// does not count: it leaves the function from any depth).
bool has_outward_branch(std::span<const Instr> instrs)
{
    std::uint32_t depth = 0;
    for (const auto& in : instrs)
    {
        if (opens(in.op))
            ++depth;
        else if (in.op == O::end)
        {
            if (depth == 0)
                return true;
            --depth;
        }
        else if (in.op == O::br || in.op == O::br_if)
        {
            if (in.index >= depth)
                return true;
        }
        else if (in.op == O::br_table)
        {
            if (in.index >= depth)
                return true;
            for (const auto t : in.targets)
                if (t >= depth)
                    return true;
        }
    }
    return false;
}

bool known(const StackState& s)
{
    return !s.polymorphic &&
           std::all_of(s.types.begin(), s.types.end(), [](const StackSlot& t) { return t.has_value(); });
}

/// Lazily allocated locals, one per (stack slot, type).
class SlotLocals
{
public:
    SlotLocals(Module& m, std::uint32_t func, std::map<std::pair<std::uint32_t, ValType>, std::uint32_t>& map)
      : m_{m}, func_{func}, map_{map}
    {}

    std::uint32_t get(std::uint32_t slot, ValType type)
    {
        const auto key = std::make_pair(slot, type);
        const auto it = map_.find(key);
        if (it != map_.end())
            return it->second;
        const auto idx = m_.append_local(func_, type);
        map_.emplace(key, idx);
        return idx;
    }

    /// Pops the whole stack into locals, top first.
    void save(InstrSeq& out, const StackState& s)
    {
        for (auto slot = static_cast<std::uint32_t>(s.types.size()); slot-- > 0;)
            out.push_back(ins::local_set(get(slot, *s.types[slot])));
    }

    /// Pushes the saved stack back, bottom first.
    void restore(InstrSeq& out, const StackState& s)
    {
        for (std::uint32_t slot = 0; slot < s.types.size(); ++slot)
            out.push_back(ins::local_get(get(slot, *s.types[slot])));
    }

private:
    Module& m_;
    std::uint32_t func_;
    std::map<std::pair<std::uint32_t, ValType>, std::uint32_t>& map_;
};

std::vector<InstrStates> region_states(const CodeBlock& cb, const Module& m)
{
    if (cb.entry.polymorphic)
        throw PassError{"cannot split a block with a polymorphic entry stack"};
    try
    {
        return compute_stack_states(cb.instrs, FuncContext::of(m, cb.source_func), cb.entry);
    }
    catch (const TypeError& e)
    {
        throw PassError{std::string{"code block does not type-check: "} + e.what()};
    }
}

/// Evenly spread choice of num-1 cuts among the eligible ones.
std::vector<std::size_t> spread_cuts(const std::vector<std::size_t>& eligible, std::uint32_t num)
{
    std::vector<std::size_t> cuts;
    const auto e = eligible.size();
    for (std::uint32_t j = 1; j < num; ++j)
        cuts.push_back(eligible[j * (e + 1) / num - 1]);
    return cuts;
}

StackState state_at(const std::vector<InstrStates>& states, std::size_t pos, const CodeBlock& cb)
{
    return pos < states.size() ? states[pos].pre : (states.empty() ? cb.entry : states.back().post);
}

bool same_interface(const StackState& a, const StackState& b)
{
    return a.polymorphic || b.polymorphic || a.types == b.types;
}

StackState with_slot(StackState s, ValType t)
{
    s.types.push_back(t);
    return s;
}

const StackState i32_only{{ValType::i32}, false};
}  // namespace

std::vector<std::size_t> eligible_cuts(const CodeBlock& cb, const Module& m)
{
    if (has_outward_branch(cb.instrs))
        throw PassError{"code block contains an outward branch"};
    const auto states = region_states(cb, m);
    std::vector<std::size_t> cuts;
    std::uint32_t depth = 0;
    for (std::size_t i = 0; i < cb.instrs.size(); ++i)
    {
        if (i > 0 && depth == 0 && known(states[i].pre))
            cuts.push_back(i);
        if (opens(cb.instrs[i].op))
            ++depth;
        else if (cb.instrs[i].op == O::end)
            --depth;
    }
    return cuts;
}

std::vector<CodeBlock> split_code_block_at(
    const CodeBlock& cb, std::span<const std::size_t> cuts, Module& m, SplitPlan* plan)
{
    const auto eligible = eligible_cuts(cb, m);
    for (std::size_t i = 0; i < cuts.size(); ++i)
    {
        if (i > 0 && cuts[i] <= cuts[i - 1])
            throw PassError{"cut points must be strictly increasing"};
        if (!std::binary_search(eligible.begin(), eligible.end(), cuts[i]))
            throw PassError{"position " + std::to_string(cuts[i]) + " is not an eligible cut"};
    }
    const auto states = region_states(cb, m);

    SplitPlan local_plan;
    auto& p = plan ? *plan : local_plan;
    p.num = static_cast<std::uint32_t>(cuts.size() + 1);
    p.cut_points.assign(cuts.begin(), cuts.end());
    p.max_len = max_stack_height(cb.instrs, FuncContext::of(m, cb.source_func), cb.entry);
    SlotLocals slots{m, cb.source_func, p.saved_locals};

    std::vector<std::size_t> bounds{0};
    bounds.insert(bounds.end(), cuts.begin(), cuts.end());
    bounds.push_back(cb.instrs.size());

    std::vector<CodeBlock> out;
    for (std::size_t j = 0; j + 1 < bounds.size(); ++j)
    {
        CodeBlock part;
        part.source_func = cb.source_func;
        const bool first = j == 0;
        const bool last = j + 2 == bounds.size();
        if (!first)
            slots.restore(part.instrs, state_at(states, bounds[j], cb));
        part.instrs.insert(part.instrs.end(), cb.instrs.begin() + static_cast<std::ptrdiff_t>(bounds[j]),
            cb.instrs.begin() + static_cast<std::ptrdiff_t>(bounds[j + 1]));
        if (!last)
            slots.save(part.instrs, state_at(states, bounds[j + 1], cb));
        part.entry = first ? cb.entry : StackState{};
        part.exit = last ? cb.exit : StackState{};
        out.push_back(std::move(part));
    }
    return out;
}

std::vector<CodeBlock> split_code_block(const CodeBlock& cb, std::uint32_t num, Module& m, SplitPlan* plan)
{
    if (num == 0)
        throw PassError{"split count must be at least 1"};
    const auto eligible = eligible_cuts(cb, m);
    if (num - 1 > eligible.size())
        throw PassError{"split count " + std::to_string(num) + " exceeds the " +
                        std::to_string(eligible.size() + 1) + " available blocks"};
    const auto cuts = spread_cuts(eligible, num);
    return split_code_block_at(cb, cuts, m, plan);
}

CodeBlock assemble_sequential(std::span<const CodeBlock> cbs)
{
    CodeBlock out;
    if (cbs.empty())
        return out;
    out.entry = cbs.front().entry;
    out.source_func = cbs.front().source_func;
    for (std::size_t i = 0; i < cbs.size(); ++i)
    {
        if (i > 0 && !same_interface(cbs[i - 1].exit, cbs[i].entry))
            throw PassError{"sequential blocks have mismatched interfaces"};
        out.instrs.insert(out.instrs.end(), cbs[i].instrs.begin(), cbs[i].instrs.end());
    }
    out.exit = cbs.back().exit;
    return out;
}

CodeBlock assemble_if_else(const CodeBlock& cond, const CodeBlock& then_cb, const CodeBlock& else_cb)
{
    if (cond.exit.polymorphic || cond.exit != with_slot(cond.entry, ValType::i32))
        throw PassError{"if-else condition must push exactly one i32"};
    if (then_cb.entry.height() != 0 || else_cb.entry.height() != 0)
        throw PassError{"if-else arms cannot take operands"};
    const auto& result = then_cb.exit.polymorphic ? else_cb.exit : then_cb.exit;
    if (!same_interface(then_cb.exit, else_cb.exit) || result.height() > 1)
        throw PassError{"if-else arms must yield the same single result"};
    std::optional<ValType> bt;
    if (result.height() == 1)
        bt = result.types[0];

    CodeBlock out;
    out.source_func = cond.source_func;
    out.entry = cond.entry;
    out.instrs = cond.instrs;
    out.instrs.push_back(ins::if_(bt));
    out.instrs.insert(out.instrs.end(), then_cb.instrs.begin(), then_cb.instrs.end());
    out.instrs.push_back(ins::else_());
    out.instrs.insert(out.instrs.end(), else_cb.instrs.begin(), else_cb.instrs.end());
    out.instrs.push_back(ins::end());
    out.exit = cond.entry;
    if (bt)
        out.exit.types.push_back(*bt);
    return out;
}

CodeBlock assemble_while(const CodeBlock& cond, const CodeBlock& body)
{
    if (cond.entry.height() != 0 || (!cond.exit.polymorphic && cond.exit != i32_only))
        throw PassError{"while condition must take nothing and push one i32"};
    if (body.entry.height() != 0 || (!body.exit.polymorphic && body.exit.height() != 0))
        throw PassError{"while body must leave the stack unchanged"};
    CodeBlock out;
    out.source_func = cond.source_func;
    out.instrs.push_back(ins::block());
    out.instrs.push_back(ins::loop());
    out.instrs.insert(out.instrs.end(), cond.instrs.begin(), cond.instrs.end());
    out.instrs.push_back(ins::op(O::i32_eqz));
    out.instrs.push_back(ins::br_if(1));
    out.instrs.insert(out.instrs.end(), body.instrs.begin(), body.instrs.end());
    out.instrs.push_back(ins::br(0));
    out.instrs.push_back(ins::end());
    out.instrs.push_back(ins::end());
    return out;
}

CodeBlock assemble_switch_case(const CodeBlock& selector, std::span<const CodeBlock> cases, bool break_after_case)
{
    if (cases.empty())
        throw PassError{"switch-case needs at least one case"};
    if (selector.entry.height() != 0 || selector.exit != i32_only)
        throw PassError{"switch selector must take nothing and push one i32"};
    for (const auto& c : cases)
        if (c.entry.height() != 0 || (!c.exit.polymorphic && c.exit.height() != 0))
            throw PassError{"switch cases must leave the stack unchanged"};

    const auto n = static_cast<std::uint32_t>(cases.size());
    CodeBlock out;
    out.source_func = selector.source_func;
    auto& b = out.instrs;
    for (std::uint32_t i = 0; i < n + 1; ++i)
        b.push_back(ins::block());
    b.insert(b.end(), selector.instrs.begin(), selector.instrs.end());
    std::vector<std::uint32_t> table(n);
    std::iota(table.begin(), table.end(), 0u);
    b.push_back(ins::br_table(std::move(table), n));
    b.push_back(ins::end());
    for (std::uint32_t p = 0; p < n; ++p)
    {
        b.insert(b.end(), cases[p].instrs.begin(), cases[p].instrs.end());
        if (break_after_case && p + 1 < n && !cases[p].exit.polymorphic)
            b.push_back(ins::br(n - 1 - p));
        b.push_back(ins::end());
    }
    return out;
}

namespace
{
struct Region
{
    std::size_t begin = 0;
    std::size_t end = 0;
    std::uint32_t units = 0;
};

/// Maximal top-level runs of units that can be moved under extra nesting.
std::vector<Region> candidate_regions(const InstrSeq& body, const std::vector<InstrStates>& states)
{
    std::vector<Region> regions;
    Region current;
    auto close = [&](std::size_t at) {
        if (current.units > 0)
        {
            current.end = at;
            regions.push_back(current);
        }
        current = {};
    };
    const auto last = body.size() - 1;  // the function's closing end
    std::size_t i = 0;
    while (i < last)
    {
        const auto op = body[i].op;
        const auto next = opens(op) ? matching_end(body, i) + 1 : i + 1;
        const bool breaker = op == O::br || op == O::br_if || op == O::br_table || op == O::return_ ||
                             op == O::unreachable ||
                             (opens(op) && has_outward_branch(std::span{body}.subspan(i, next - i)));
        if (breaker)
            close(i);
        else
        {
            if (current.units == 0)
            {
                if (!known(states[i].pre))
                {
                    i = next;
                    continue;
                }
                current.begin = i;
            }
            ++current.units;
        }
        i = next;
    }
    close(last);
    return regions;
}
}  // namespace

std::optional<FlattenPlan> flatten_function(
    Module& m, std::uint32_t func, std::uint32_t num_blocks, Rng& rng, PredicateMode mode, PassContext& ctx)
{
    if (num_blocks < 2)
        throw PassError{"flattening needs at least 2 blocks"};
    const auto tag = "function " + std::to_string(func) + ": ";
    const InstrSeq body = m.body_of(func).body;
    const auto states = compute_stack_states(m, func);

    const Region* best = nullptr;
    const auto regions = candidate_regions(body, states);
    for (const auto& r : regions)
        if (r.units >= 2 && (!best || r.units > best->units))
            best = &r;
    if (!best)
    {
        ctx.notes.push_back(tag + "no eligible region, left unchanged");
        return std::nullopt;
    }

    CodeBlock cb;
    cb.source_func = func;
    cb.instrs.assign(body.begin() + static_cast<std::ptrdiff_t>(best->begin),
        body.begin() + static_cast<std::ptrdiff_t>(best->end));
    cb.entry = states[best->begin].pre;
    cb.exit = states[best->end].pre;

    auto n = num_blocks;
    if (mode == PredicateMode::o2)
        n = std::max<std::uint32_t>(n, static_cast<std::uint32_t>((cb.instrs.size() + 9) / 10));
    if (n > best->units)
    {
        ctx.notes.push_back(tag + "block count clamped from " + std::to_string(n) + " to " +
                            std::to_string(best->units));
        n = best->units;
    }

    const auto eligible = eligible_cuts(cb, m);
    const auto cuts = spread_cuts(eligible, n);
    const auto rstates = region_states(cb, m);

    FlattenPlan plan;
    plan.region_begin = best->begin;
    plan.region_end = best->end;
    std::map<std::pair<std::uint32_t, ValType>, std::uint32_t> saved;
    SlotLocals slots{m, func, saved};

    std::vector<std::size_t> bounds{0};
    bounds.insert(bounds.end(), cuts.begin(), cuts.end());
    bounds.push_back(cb.instrs.size());

    plan.jump_flag_local = m.append_local(func, ValType::i32);
    plan.exit_sentinel = n;
    plan.original_order.resize(n);
    std::iota(plan.original_order.begin(), plan.original_order.end(), 0u);
    plan.shuffled_order = plan.original_order;
    rng.shuffle(plan.shuffled_order);
    std::vector<std::uint32_t> position(n);
    for (std::uint32_t p = 0; p < n; ++p)
        position[plan.shuffled_order[p]] = p;
    plan.case_nesting.resize(n);

    const auto jf = plan.jump_flag_local;
    auto assign = [&](InstrSeq& out, std::uint32_t value, bool predicate) {
        if (predicate)
        {
            auto seq = collatz_value(m, func, static_cast<std::int32_t>(value), rng, ctx);
            out.insert(out.end(), seq.begin(), seq.end());
            ++plan.predicates;
        }
        else
            out.push_back(ins::i32_const(static_cast<std::int32_t>(value)));
        out.push_back(ins::local_set(jf));
    };

    std::vector<CodeBlock> by_position(n);
    for (std::uint32_t c = 0; c < n; ++c)
    {
        const auto p = position[c];
        CodeBlock k;
        k.source_func = func;
        slots.restore(k.instrs, state_at(rstates, bounds[c], cb));
        k.instrs.insert(k.instrs.end(), cb.instrs.begin() + static_cast<std::ptrdiff_t>(bounds[c]),
            cb.instrs.begin() + static_cast<std::ptrdiff_t>(bounds[c + 1]));
        slots.save(k.instrs, state_at(rstates, bounds[c + 1], cb));
        const auto successor = c + 1 < n ? position[c + 1] : plan.exit_sentinel;
        const bool predicate = mode == PredicateMode::o2 || (mode == PredicateMode::o1 && c < 2);
        assign(k.instrs, successor, predicate);
        plan.case_nesting[c] = n - p;
        k.instrs.push_back(ins::br(n - p));
        k.exit.polymorphic = true;
        by_position[p] = std::move(k);
    }

    CodeBlock selector;
    selector.source_func = func;
    selector.instrs.push_back(ins::local_get(jf));
    selector.exit = i32_only;

    auto cond = assemble_switch_case(selector, by_position, false);
    cond.instrs.push_back(ins::local_get(jf));
    cond.instrs.push_back(ins::i32_const(static_cast<std::int32_t>(plan.exit_sentinel)));
    cond.instrs.push_back(ins::op(O::i32_ne));
    cond.exit = i32_only;
    CodeBlock empty;
    empty.source_func = func;
    const auto loop = assemble_while(cond, empty);

    InstrSeq out(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(best->begin));
    slots.save(out, cb.entry);
    assign(out, position[0], mode == PredicateMode::o2);
    out.insert(out.end(), loop.instrs.begin(), loop.instrs.end());
    slots.restore(out, cb.exit);
    out.insert(out.end(), body.begin() + static_cast<std::ptrdiff_t>(best->end), body.end());
    m.body_of(func).body = std::move(out);
    return plan;
}

Module flatten_module(Module m, std::uint32_t num_blocks, Rng& rng, PredicateMode mode, PassContext& ctx)
{
    const auto imported = m.imported_function_count();
    const auto count = m.function_count();
    for (auto f = imported; f < count; ++f)
        if (!ctx.injected.count(f))
            flatten_function(m, f, num_blocks, rng, mode, ctx);
    return m;
}
}  // namespace wasmveil
