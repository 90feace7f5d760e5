#include "support/trace.hpp"

namespace wasmveil::test
{
std::optional<std::uint32_t> dispatcher_pc(const Module& m, std::uint32_t func, std::uint32_t jump_flag)
{
    const auto& body = m.body_of(func).body;
    for (std::uint32_t i = 0; i + 1 < body.size(); ++i)
        if (body[i].op == Opcode::local_get && body[i].index == jump_flag && body[i + 1].op == Opcode::br_table)
            return i;
    return std::nullopt;
}

bool has_loop_wrapped_dispatcher(const Module& m, std::uint32_t func, std::uint32_t jump_flag)
{
    const auto pc = dispatcher_pc(m, func, jump_flag);
    if (!pc)
        return false;
    const auto& body = m.body_of(func).body;
    // Walk outwards from the br_table: some enclosing construct must be a loop.
    std::uint32_t pending_ends = 0;
    for (auto i = static_cast<std::int64_t>(*pc); i >= 0; --i)
    {
        const auto op = body[static_cast<std::size_t>(i)].op;
        if (op == Opcode::end)
            ++pending_ends;
        else if (op == Opcode::block || op == Opcode::loop || op == Opcode::if_)
        {
            if (pending_ends > 0)
                --pending_ends;
            else if (op == Opcode::loop)
                return true;
        }
    }
    return false;
}

CaseOrderReport check_case_order(const Module& m, const std::map<std::uint32_t, FlattenPlan>& plans,
    const std::string& entry, std::span<const Value> args, const ImportStubs& stubs)
{
    struct Site
    {
        std::uint32_t pc;
        const FlattenPlan* plan;
    };
    std::map<std::uint32_t, Site> sites;
    for (const auto& [func, plan] : plans)
        if (const auto pc = dispatcher_pc(m, func, plan.jump_flag_local))
            sites.emplace(func, Site{*pc, &plan});

    CaseOrderReport report;
    if (sites.size() != plans.size())
    {
        report.ok = false;
        report.problem = "dispatcher not found";
        return report;
    }

    // Next expected case per live (function, depth) frame.
    std::map<std::pair<std::uint32_t, unsigned>, std::uint32_t> frames;
    auto fail = [&](std::string msg) {
        if (report.ok)
        {
            report.ok = false;
            report.problem = std::move(msg);
        }
    };

    auto inst = instantiate(m, stubs);
    inst.observer = [&](std::uint32_t func, std::uint32_t pc, unsigned depth, std::span<const std::uint64_t> locals) {
        const auto key = std::make_pair(func, depth);
        if (pc == 0)
        {
            // A new frame replaces whatever an earlier (returned) one left behind.
            frames.erase(key);
            return;
        }
        const auto it = sites.find(func);
        if (it == sites.end() || it->second.pc != pc)
            return;
        const auto& plan = *it->second.plan;
        const auto n = static_cast<std::uint32_t>(plan.shuffled_order.size());
        const auto jf = static_cast<std::uint32_t>(locals[plan.jump_flag_local]);
        auto& next = frames[key];
        if (jf == plan.exit_sentinel)
        {
            if (next != n)
                fail("function " + std::to_string(func) + " exited after " + std::to_string(next) + " cases");
            ++report.completed_frames;
            next = n + 1;
            return;
        }
        if (jf >= n)
        {
            fail("jump flag " + std::to_string(jf) + " out of range");
            return;
        }
        const auto c = plan.shuffled_order[jf];
        if (c != next)
            fail("function " + std::to_string(func) + " ran case " + std::to_string(c) + ", expected " +
                 std::to_string(next));
        ++next;
        ++report.case_visits;
    };
    invoke(inst, entry, args);
    return report;
}
}  // namespace wasmveil::test
