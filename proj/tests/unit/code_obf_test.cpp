#include "wasmveil/analysis.hpp"
#include "wasmveil/code_obf.hpp"
#include "wasmveil/errors.hpp"
#include "wasmveil/interp.hpp"
#include "wasmveil/pipeline.hpp"
#include "support/builder.hpp"
#include "support/corpus.hpp"
#include "support/trace.hpp"
#include <algorithm>
#include <gtest/gtest.h>
#include <numeric>
#include <set>

using namespace wasmveil;
using namespace wasmveil::ins;
using namespace wasmveil::test;
using O = Opcode;

namespace
{
constexpr auto I32 = ValType::i32;
constexpr auto I64 = ValType::i64;

const StackState empty_stack{};
const StackState one_i32{{I32}, false};

/// Module with `run` as function 0 and the given body (without `end`).
Module single(FuncType type, std::vector<ValType> locals, InstrSeq body)
{
    ModuleBuilder b;
    b.export_function("run", b.function("run", type, std::move(locals), std::move(body)));
    return b.build(false);
}

CodeBlock block_of(InstrSeq instrs, StackState entry, StackState exit, std::uint32_t func = 0)
{
    CodeBlock cb;
    cb.instrs = std::move(instrs);
    cb.entry = std::move(entry);
    cb.exit = std::move(exit);
    cb.source_func = func;
    return cb;
}

std::uint32_t declared_locals(const Module& m, std::uint32_t func)
{
    std::uint32_t total = 0;
    for (const auto& g : m.body_of(func).locals)
        total += g.count;
    return total;
}

void install(Module& m, std::uint32_t func, InstrSeq body)
{
    body.push_back(end());
    m.body_of(func).body = std::move(body);
}

ExecResult run(const Module& m, std::vector<Value> args = {})
{
    auto inst = instantiate(m, ImportStubs::standard());
    return invoke(inst, "run", args);
}

std::int32_t run_i32(const Module& m, std::vector<Value> args = {})
{
    const auto r = run(m, std::move(args));
    EXPECT_TRUE(r.ok());
    return r.values.empty() ? 0 : r.values[0].as_i32();
}

std::uint32_t export_index(const Module& m, const std::string& name)
{
    for (const auto& e : m.exports)
        if (e.name == name)
            return e.index;
    throw std::runtime_error("no export " + name);
}

std::vector<std::vector<Value>> vectors_for(const Module& m, const std::string& entry, std::uint64_t seed, int count)
{
    Rng rng{seed};
    const auto& type = m.function_type(export_index(m, entry));
    std::vector<std::vector<Value>> out;
    for (int i = 0; i < count; ++i)
        out.push_back(random_arguments(type, rng));
    return out;
}

// Split

TEST(Split, SavesTopFirstAndRestoresBottomFirst)
{
    auto m = single({{}, {I32}}, {}, {i32_const(1), i32_const(2), op(O::i32_add)});
    const auto cb = block_of({i32_const(1), i32_const(2), op(O::i32_add)}, empty_stack, one_i32);
    SplitPlan plan;
    const std::vector<std::size_t> cuts{2};
    const auto parts = split_code_block_at(cb, cuts, m, &plan);
    ASSERT_EQ(parts.size(), 2u);
    EXPECT_EQ(parts[0].instrs, (InstrSeq{i32_const(1), i32_const(2), local_set(0), local_set(1)}));
    EXPECT_EQ(parts[1].instrs, (InstrSeq{local_get(1), local_get(0), op(O::i32_add)}));
    EXPECT_EQ(plan.num, 2u);
    EXPECT_EQ(plan.cut_points, cuts);
    EXPECT_EQ(plan.max_len, 2u);
    EXPECT_EQ(plan.saved_locals.size(), 2u);
    EXPECT_EQ(plan.saved_locals.at({1, I32}), 0u);
    EXPECT_EQ(plan.saved_locals.at({0, I32}), 1u);
    EXPECT_EQ(declared_locals(m, 0), 2u);

    install(m, 0, assemble_sequential(parts).instrs);
    EXPECT_TRUE(validate_module(m).ok());
    EXPECT_EQ(run_i32(m), 3);
}

TEST(Split, CountOneIsIdentity)
{
    auto m = single({{}, {I32}}, {}, {i32_const(1), i32_const(2), op(O::i32_add)});
    const auto cb = block_of({i32_const(1), i32_const(2), op(O::i32_add)}, empty_stack, one_i32);
    const auto parts = split_code_block(cb, 1, m);
    ASSERT_EQ(parts.size(), 1u);
    EXPECT_EQ(parts[0].instrs, cb.instrs);
    EXPECT_TRUE(m.body_of(0).locals.empty());
}

TEST(Split, NestedConstructsAreAtomic)
{
    const InstrSeq body{i32_const(4), block(I32), i32_const(5), end(), op(O::i32_mul)};
    auto m = single({{}, {I32}}, {}, body);
    const auto cb = block_of(body, empty_stack, one_i32);
    EXPECT_EQ(eligible_cuts(cb, m), (std::vector<std::size_t>{1, 4}));
    const std::vector<std::size_t> inside{2};
    EXPECT_THROW(split_code_block_at(cb, inside, m), PassError);
}

TEST(Split, Errors)
{
    const InstrSeq body{i32_const(1), i32_const(2), op(O::i32_add)};
    auto m = single({{}, {I32}}, {}, body);
    const auto cb = block_of(body, empty_stack, one_i32);
    EXPECT_THROW(split_code_block(cb, 0, m), PassError);
    EXPECT_THROW(split_code_block(cb, 4, m), PassError);
    const std::vector<std::size_t> unordered{2, 1};
    EXPECT_THROW(split_code_block_at(cb, unordered, m), PassError);

    auto poly = cb;
    poly.entry.polymorphic = true;
    EXPECT_THROW(split_code_block(poly, 2, m), PassError);

    const auto outward = block_of({i32_const(1), br(0)}, empty_stack, one_i32);
    EXPECT_THROW(eligible_cuts(outward, m), PassError);

    const auto ill_typed = block_of({i64_const(1), i32_const(2), op(O::i32_add)}, empty_stack, one_i32);
    EXPECT_THROW(eligible_cuts(ill_typed, m), PassError);
}

TEST(Split, RandomStraightLineDifferential)
{
    Rng rng{7};
    for (int trial = 0; trial < 200; ++trial)
    {
        // i32 expression soup over two parameters, leaving one value.
        InstrSeq body;
        std::size_t height = 0;
        const auto len = rng.between(2, 40);
        for (std::uint64_t i = 0; i < len || height != 1; ++i)
        {
            const bool must_reduce = height >= 6 || (i >= len && height > 1);
            if (!must_reduce && (height < 2 || rng.below(2) == 0))
            {
                if (rng.below(2) == 0)
                    body.push_back(i32_const(static_cast<std::int32_t>(rng.next())));
                else
                    body.push_back(local_get(static_cast<std::uint32_t>(rng.below(2))));
                ++height;
            }
            else
            {
                static constexpr O binops[] = {O::i32_add, O::i32_sub, O::i32_mul, O::i32_xor, O::i32_rotl};
                body.push_back(op(binops[rng.below(std::size(binops))]));
                --height;
            }
        }
        const Module original = single({{I32, I32}, {I32}}, {}, body);
        auto m = original;
        const auto cb = block_of(body, empty_stack, one_i32);
        const auto eligible = eligible_cuts(cb, m);
        const auto num = static_cast<std::uint32_t>(rng.between(1, eligible.size() + 1));
        const auto parts = split_code_block(cb, num, m);
        ASSERT_EQ(parts.size(), num);
        install(m, 0, assemble_sequential(parts).instrs);
        ASSERT_TRUE(validate_module(m).ok());
        const auto vectors = vectors_for(original, "run", static_cast<std::uint64_t>(trial), 5);
        EXPECT_TRUE(differential_check(original, m, "run", vectors).equal()) << "trial " << trial;
    }
}

// Combinators

TEST(Combinators, IfElseTakesThenArmOnTrue)
{
    auto m = single({{}, {I32}}, {}, {i32_const(0)});
    const auto cond = block_of({i32_const(1)}, empty_stack, one_i32);
    const auto a = block_of({i32_const(10)}, empty_stack, one_i32);
    const auto b = block_of({i32_const(20)}, empty_stack, one_i32);
    const auto out = assemble_if_else(cond, a, b);
    EXPECT_EQ(out.exit, one_i32);
    install(m, 0, out.instrs);
    EXPECT_EQ(run_i32(m), 10);

    const auto f = block_of({i32_const(0)}, empty_stack, one_i32);
    install(m, 0, assemble_if_else(f, a, b).instrs);
    EXPECT_EQ(run_i32(m), 20);

    const auto wrong = block_of({i64_const(0)}, empty_stack, StackState{{I64}, false});
    EXPECT_THROW(assemble_if_else(cond, a, wrong), PassError);
}

TEST(Combinators, WhileFalseRunsBodyZeroTimes)
{
    auto m = single({{}, {I32}}, {I32}, {i32_const(0)});
    const auto body = block_of(
        {local_get(0), i32_const(1), op(O::i32_add), local_set(0)}, empty_stack, empty_stack);
    auto never = assemble_while(block_of({i32_const(0)}, empty_stack, one_i32), body).instrs;
    never.push_back(local_get(0));
    install(m, 0, never);
    EXPECT_EQ(run_i32(m), 0);

    auto five = assemble_while(
        block_of({local_get(0), i32_const(5), op(O::i32_lt_s)}, empty_stack, one_i32), body)
                    .instrs;
    five.push_back(local_get(0));
    install(m, 0, five);
    EXPECT_EQ(run_i32(m), 5);
}

TEST(Combinators, SwitchRunsSelectedCase)
{
    auto m = single({{I32}, {I32}}, {I32}, {i32_const(0)});
    auto add = [](std::int32_t v) {
        return block_of({local_get(1), i32_const(v), op(O::i32_add), local_set(1)}, empty_stack, empty_stack);
    };
    const std::vector<CodeBlock> cases{add(1), add(10), add(100)};
    const auto selector = block_of({local_get(0)}, empty_stack, one_i32);

    auto breaking = assemble_switch_case(selector, cases).instrs;
    breaking.push_back(local_get(1));
    install(m, 0, breaking);
    ASSERT_TRUE(validate_module(m).ok());
    EXPECT_EQ(run_i32(m, {Value::i32(2)}), 100);
    EXPECT_EQ(run_i32(m, {Value::i32(0)}), 1);
    EXPECT_EQ(run_i32(m, {Value::i32(3)}), 0);
    EXPECT_EQ(run_i32(m, {Value::i32(-1)}), 0);

    auto falling = assemble_switch_case(selector, cases, false).instrs;
    falling.push_back(local_get(1));
    install(m, 0, falling);
    EXPECT_EQ(run_i32(m, {Value::i32(1)}), 110);
    EXPECT_EQ(run_i32(m, {Value::i32(0)}), 111);

    EXPECT_THROW(assemble_switch_case(selector, {}), PassError);
    const auto bad_selector = block_of({i64_const(0)}, empty_stack, StackState{{I64}, false});
    EXPECT_THROW(assemble_switch_case(bad_selector, cases), PassError);
}

// Flatten

/// run(x, y) -> i32 as twelve statements updating local 2.
Module straight_line()
{
    InstrSeq body;
    for (std::int32_t k = 1; k <= 12; ++k)
    {
        body.push_back(local_get(2));
        body.push_back(local_get(k % 2 == 0 ? 0 : 1));
        body.push_back(i32_const(k));
        body.push_back(op(k % 3 == 0 ? O::i32_mul : O::i32_add));
        body.push_back(op(O::i32_xor));
        body.push_back(local_set(2));
    }
    body.push_back(local_get(2));
    return single({{I32, I32}, {I32}}, {I32}, body);
}

TEST(Flatten, DispatcherInsideLoop)
{
    const auto original = straight_line();
    auto m = original;
    Rng rng{1};
    PassContext ctx;
    const auto plan = flatten_function(m, 0, 5, rng, PredicateMode::none, ctx);
    ASSERT_TRUE(plan);
    ASSERT_TRUE(validate_module(m).ok());
    EXPECT_TRUE(has_loop_wrapped_dispatcher(m, 0, plan->jump_flag_local));
    EXPECT_FALSE(has_loop_wrapped_dispatcher(original, 0, plan->jump_flag_local));

    EXPECT_EQ(plan->shuffled_order.size(), 5u);
    auto sorted = plan->shuffled_order;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, plan->original_order);
    EXPECT_EQ(plan->exit_sentinel, 5u);
    EXPECT_EQ(plan->region_begin, 0u);
    EXPECT_EQ(plan->predicates, 0u);

    const auto& body = m.body_of(0).body;
    const auto pc = dispatcher_pc(m, 0, plan->jump_flag_local);
    ASSERT_TRUE(pc);
    const auto& table = body[*pc + 1];
    EXPECT_EQ(table.targets, (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(table.index, 5u);
    EXPECT_GT(max_nesting_depth(body), max_nesting_depth(original.body_of(0).body));
}

TEST(Flatten, CaseNestingFollowsPosition)
{
    auto m = straight_line();
    Rng rng{2};
    PassContext ctx;
    const auto plan = flatten_function(m, 0, 8, rng, PredicateMode::none, ctx);
    ASSERT_TRUE(plan);
    const auto n = static_cast<std::uint32_t>(plan->shuffled_order.size());
    std::vector<std::uint32_t> by_position(n);
    for (std::uint32_t p = 0; p < n; ++p)
        by_position[p] = plan->case_nesting[plan->shuffled_order[p]];
    for (std::uint32_t p = 0; p < n; ++p)
        EXPECT_EQ(by_position[p], n - p);
    EXPECT_TRUE(std::is_sorted(by_position.rbegin(), by_position.rend()));

    // Every case's closing br carries its recorded depth.
    std::multiset<std::uint32_t> brs;
    for (const auto& in : m.body_of(0).body)
        if (in.op == O::br && in.index >= 1 && in.index <= n)
            brs.insert(in.index);
    for (std::uint32_t d = 1; d <= n; ++d)
        EXPECT_GE(brs.count(d), 1u) << d;
}

TEST(Flatten, CasesRunInOriginalOrder)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        const auto original = straight_line();
        auto m = original;
        Rng rng{seed};
        PassContext ctx;
        const auto plan = flatten_function(m, 0, 2 + static_cast<std::uint32_t>(seed % 10), rng,
            seed % 3 == 0 ? PredicateMode::o1 : PredicateMode::none, ctx);
        ASSERT_TRUE(plan);
        const std::map<std::uint32_t, FlattenPlan> plans{{0, *plan}};
        const std::vector<Value> args{Value::i32(static_cast<std::int32_t>(seed)), Value::i32(-3)};
        const auto report = check_case_order(m, plans, "run", args);
        EXPECT_TRUE(report.ok) << report.problem;
        EXPECT_EQ(report.completed_frames, 1u);
        EXPECT_EQ(report.case_visits, plan->shuffled_order.size());
    }
}

TEST(Flatten, TwoBlocksOnSixInstructions)
{
    const InstrSeq body{local_get(0), i32_const(3), op(O::i32_mul), local_tee(1), i32_const(1), op(O::i32_add)};
    auto m = single({{I32}, {I32}}, {I32}, body);
    const auto original = m;
    Rng rng{3};
    PassContext ctx;
    const auto plan = flatten_function(m, 0, 2, rng, PredicateMode::none, ctx);
    ASSERT_TRUE(plan);
    EXPECT_EQ(plan->shuffled_order.size(), 2u);
    EXPECT_EQ(run_i32(m, {Value::i32(5)}), 16);
    EXPECT_TRUE(differential_check(original, m, "run", vectors_for(original, "run", 1, 20)).equal());
}

TEST(Flatten, ClampsAndSkips)
{
    auto m = straight_line();
    Rng rng{4};
    PassContext ctx;
    EXPECT_THROW(flatten_function(m, 0, 1, rng, PredicateMode::none, ctx), PassError);
    const auto plan = flatten_function(m, 0, 1000, rng, PredicateMode::none, ctx);
    ASSERT_TRUE(plan);
    EXPECT_EQ(plan->shuffled_order.size(), 73u);
    ASSERT_FALSE(ctx.notes.empty());
    EXPECT_NE(ctx.notes.back().find("clamped"), std::string::npos);

    auto tiny = single({{}, {}}, {}, {op(O::nop)});
    PassContext tiny_ctx;
    EXPECT_FALSE(flatten_function(tiny, 0, 5, rng, PredicateMode::none, tiny_ctx));
    EXPECT_EQ(tiny_ctx.notes.size(), 1u);
}

TEST(Flatten, PredicatesPerMode)
{
    for (const auto mode : {PredicateMode::o1, PredicateMode::o2})
    {
        const auto original = straight_line();
        auto m = original;
        Rng rng{5};
        PassContext ctx;
        const auto plan = flatten_function(m, 0, 6, rng, mode, ctx);
        ASSERT_TRUE(plan);
        ASSERT_TRUE(ctx.collatz_function);
        EXPECT_TRUE(ctx.injected.count(*ctx.collatz_function));
        const auto n = plan->shuffled_order.size();
        if (mode == PredicateMode::o1)
            EXPECT_EQ(plan->predicates, 2u);
        else
        {
            EXPECT_GE(n, 8u);  // 73 instructions need at least ceil(73 / 10) cases
            EXPECT_EQ(plan->predicates, n + 1);
        }
        ASSERT_TRUE(validate_module(m).ok());
        EXPECT_TRUE(differential_check(original, m, "run", vectors_for(original, "run", 9, 20)).equal());
    }
}

class FlattenCorpus : public ::testing::TestWithParam<std::tuple<std::uint32_t, CollatzMode>>
{};

TEST_P(FlattenCorpus, PreservesBehaviourAndOrder)
{
    const auto [n, collatz] = GetParam();
    for (const auto& fx : corpus())
    {
        ObfConfig cfg;
        cfg.flatten = n;
        cfg.collatz = collatz;
        cfg.seed = n * 31 + static_cast<unsigned>(collatz);
        const auto result = obfuscate(fx.module, cfg);
        ASSERT_TRUE(validate_module(result.module).ok()) << fx.name;
        const auto vectors = vectors_for(fx.module, fx.entry, n, 20);
        const auto verdict = differential_check(fx.module, result.module, fx.entry, vectors);
        EXPECT_TRUE(verdict.equal()) << fx.name << ": " << verdict.detail;
        for (const auto& args : vectors)
        {
            const auto report = check_case_order(result.module, result.flatten_plans, fx.entry, args);
            EXPECT_TRUE(report.ok) << fx.name << ": " << report.problem;
        }
        for (const auto& [func, plan] : result.flatten_plans)
            EXPECT_TRUE(has_loop_wrapped_dispatcher(result.module, func, plan.jump_flag_local)) << fx.name;
    }
}

std::string flatten_case_name(const ::testing::TestParamInfo<FlattenCorpus::ParamType>& info)
{
    static constexpr const char* modes[] = {"plain", "o1", "o2"};
    return "n" + std::to_string(std::get<0>(info.param)) + "_" + modes[static_cast<int>(std::get<1>(info.param))];
}

INSTANTIATE_TEST_SUITE_P(Counts, FlattenCorpus,
    ::testing::Combine(::testing::Values(5u, 10u, 20u),
        ::testing::Values(CollatzMode::none, CollatzMode::o1, CollatzMode::o2)),
    flatten_case_name);

// Alias

/// Callee of every static call site in order: `call f` or `i32.const k; call_indirect`.
std::vector<std::uint32_t> call_targets(const Module& m, std::uint32_t func)
{
    std::map<std::uint32_t, std::uint32_t> table;
    for (const auto& seg : m.elems)
    {
        const auto off = constant_offset(seg.offset);
        for (std::size_t j = 0; j < seg.functions.size(); ++j)
            table[static_cast<std::uint32_t>(*off + j)] = seg.functions[j];
    }
    std::vector<std::uint32_t> out;
    const auto& body = m.body_of(func).body;
    for (std::size_t pc = 0; pc < body.size(); ++pc)
    {
        if (body[pc].op == O::call)
            out.push_back(body[pc].index);
        else if (body[pc].op == O::call_indirect && pc > 0 && body[pc - 1].op == O::i32_const)
        {
            const auto callee = table.at(static_cast<std::uint32_t>(body[pc - 1].value));
            EXPECT_EQ(m.function_type_index(callee), body[pc].index);
            out.push_back(callee);
        }
    }
    return out;
}

TEST(Alias, RewritesExactShareOfTwentyCalls)
{
    const auto original = fixture("calls20").module;
    const auto before = count_metrics(original);
    ASSERT_EQ(before.call_count, 20u);
    for (const auto [pct, expected] : std::vector<std::pair<unsigned, std::uint64_t>>{
             {0, 0}, {25, 5}, {50, 10}, {100, 20}})
    {
        Rng rng{pct};
        PassContext ctx;
        AliasReport report;
        const auto m = alias_disrupt(original, pct, rng, OpaqueMode::constant, ctx, &report);
        const auto after = count_metrics(m);
        EXPECT_EQ(report.candidates, 20u);
        EXPECT_EQ(report.rewritten, expected) << pct;
        EXPECT_EQ(after.call_indirect_count - before.call_indirect_count, expected);
        EXPECT_EQ(before.call_count - after.call_count, expected);
        EXPECT_EQ(after.elem_entry_count - before.elem_entry_count, report.new_elem_entries);
        if (pct == 100)
            EXPECT_EQ(report.new_elem_entries, 5u);
        if (pct == 0)
            EXPECT_EQ(m, original);
        ASSERT_TRUE(validate_module(m).ok());
        for (auto f = m.imported_function_count(); f < m.function_count(); ++f)
            EXPECT_EQ(call_targets(m, f), call_targets(original, f));
        EXPECT_TRUE(differential_check(original, m, "run", vectors_for(original, "run", pct, 20)).equal());
    }
}

TEST(Alias, ReusesExistingTableSlots)
{
    const auto original = fixture("indirect").module;
    Rng rng{1};
    PassContext ctx;
    AliasReport report;
    const auto m = alias_disrupt(original, 100, rng, OpaqueMode::constant, ctx, &report);
    EXPECT_EQ(report.rewritten, report.candidates);
    ASSERT_TRUE(validate_module(m).ok());
    for (auto f = m.imported_function_count(); f < m.function_count(); ++f)
        EXPECT_EQ(call_targets(m, f), call_targets(original, f));
    EXPECT_TRUE(differential_check(original, m, "run", vectors_for(original, "run", 2, 20)).equal());
}

TEST(Alias, OpaqueModesPreserveBehaviour)
{
    const auto original = fixture("calls20").module;
    for (const auto mode : {OpaqueMode::simple, OpaqueMode::collatz_o1, OpaqueMode::collatz_o2})
    {
        Rng rng{11};
        PassContext ctx;
        AliasReport report;
        const auto m = alias_disrupt(original, 100, rng, mode, ctx, &report);
        EXPECT_EQ(report.rewritten, 20u);
        ASSERT_TRUE(validate_module(m).ok());
        const auto verdict = differential_check(original, m, "run", vectors_for(original, "run", 3, 20));
        EXPECT_TRUE(verdict.equal()) << verdict.detail;
        EXPECT_EQ(ctx.collatz_function.has_value(), mode != OpaqueMode::simple);
    }
}

TEST(Alias, Refusals)
{
    auto m = fixture("calls20").module;
    Rng rng{1};
    PassContext ctx;
    EXPECT_THROW(alias_disrupt(m, 101, rng, OpaqueMode::constant, ctx), PassError);

    m.imports.insert(m.imports.begin(), Import{"env", "table", ExternKind::table, 0, TableType{Limits{1, std::nullopt}}, {}, {}});
    EXPECT_THROW(alias_disrupt(m, 50, rng, OpaqueMode::constant, ctx), PassError);
}

// Opaque constructions

Module collatz_harness(CollatzSpec spec)
{
    PassContext ctx;
    auto m = single({{I32, I32}, {I32}}, {I64}, {i32_const(0)});
    spec.x = 0;
    spec.y = 1;
    spec.a = 2;
    spec.collatz_function = gen_collatz_function(m, ctx);
    install(m, 0, gen_collatz_constant(spec));
    return m;
}

TEST(Collatz, StepFunction)
{
    auto m = single({{I64}, {I64}}, {}, {local_get(0)});
    PassContext ctx;
    const auto f = gen_collatz_function(m, ctx);
    EXPECT_EQ(gen_collatz_function(m, ctx), f);
    EXPECT_TRUE(ctx.injected.count(f));
    install(m, 0, {local_get(0), call(f)});
    ASSERT_TRUE(validate_module(m).ok());
    auto step = [&](std::int64_t v) { return run(m, {Value::i64(v)}).values.at(0).as_i64(); };
    EXPECT_EQ(step(6), 3);
    EXPECT_EQ(step(7), 22);
    std::int64_t v = 27;
    int steps = 0;
    while (v != 1)
    {
        v = step(v);
        ++steps;
    }
    EXPECT_EQ(steps, 111);
}

TEST(Collatz, ConstantReachesTarget)
{
    CollatzSpec spec;
    spec.m = 5;
    spec.n = 9;
    spec.c = 7;
    spec.target = 3;
    const auto m = collatz_harness(spec);
    ASSERT_TRUE(validate_module(m).ok());
    EXPECT_EQ(run_i32(m, {Value::i32(4), Value::i32(-2)}), 3);

    spec.target = 1;
    const auto zero_inputs = collatz_harness(spec);
    EXPECT_EQ(run_i32(zero_inputs, {Value::i32(0), Value::i32(0)}), 1);

    spec.target = 0;
    EXPECT_THROW(gen_collatz_constant(spec), PassError);
    spec.target = -4;
    EXPECT_THROW(gen_collatz_constant(spec), PassError);
}

TEST(Collatz, RandomTuples)
{
    Rng rng{42};
    for (int i = 0; i < 1000; ++i)
    {
        CollatzSpec spec;
        spec.m = static_cast<std::uint32_t>(rng.between(1, 0x7FFFFFFF));
        spec.n = static_cast<std::uint32_t>(rng.between(1, 0x7FFFFFFF));
        spec.c = static_cast<std::uint32_t>(rng.between(1, 0x7FFFFFFF));
        spec.target = static_cast<std::int32_t>(rng.between(1, 1000));
        const auto m = collatz_harness(spec);
        const auto x = static_cast<std::int32_t>(rng.next());
        const auto y = static_cast<std::int32_t>(rng.next());
        EXPECT_EQ(run_i32(m, {Value::i32(x), Value::i32(y)}), spec.target) << i;
    }
}

TEST(Collatz, ValueHandlesNonPositive)
{
    for (const std::int32_t value : {-7, 0, 1, 9})
    {
        auto m = single({{I32, I32}, {I32}}, {}, {i32_const(0)});
        Rng rng{static_cast<std::uint64_t>(value + 100)};
        PassContext ctx;
        install(m, 0, collatz_value(m, 0, value, rng, ctx));
        ASSERT_TRUE(validate_module(m).ok());
        EXPECT_EQ(run_i32(m, {Value::i32(123), Value::i32(-456)}), value);
        EXPECT_FALSE(ctx.predicate_locals.at(0).synthetic);
    }
}

TEST(Collatz, SyntheticLocalsWithoutParameters)
{
    auto m = single({{}, {I32}}, {}, {i32_const(0)});
    Rng rng{1};
    PassContext ctx;
    install(m, 0, collatz_value(m, 0, 5, rng, ctx));
    EXPECT_TRUE(ctx.predicate_locals.at(0).synthetic);
    EXPECT_EQ(declared_locals(m, 0), 3u);
    EXPECT_EQ(run_i32(m), 5);
}

TEST(SimplePredicate, AlwaysZero)
{
    auto m = single({{I32}, {I32}}, {}, gen_simple_opaque_zero(0));
    ASSERT_TRUE(validate_module(m).ok());
    auto inst = instantiate(m, ImportStubs::standard());
    for (std::uint32_t i = 0; i < (1u << 16); ++i)
    {
        const auto x = static_cast<std::int32_t>(i * 65537u + (i << 7));
        const std::vector<Value> args{Value::i32(x)};
        ASSERT_EQ(invoke(inst, "run", args).values.at(0).as_i32(), 0) << x;
    }
}
}  // namespace
