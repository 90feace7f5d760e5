#include "wasmveil/code_obf.hpp"
#include "wasmveil/errors.hpp"

namespace wasmveil
{
using O = Opcode;

std::uint32_t gen_collatz_function(Module& m, PassContext& ctx)
{
    if (ctx.collatz_function)
        return *ctx.collatz_function;
    FuncBody f;
    auto& b = f.body;
    b.push_back(ins::local_get(0));
    b.push_back(ins::i64_const(1));
    b.push_back(ins::op(O::i64_and));
    b.push_back(ins::op(O::i64_eqz));
    b.push_back(ins::if_(ValType::i64));
    b.push_back(ins::local_get(0));
    b.push_back(ins::i64_const(1));
    b.push_back(ins::op(O::i64_shr_u));
    b.push_back(ins::else_());
    b.push_back(ins::local_get(0));
    b.push_back(ins::i64_const(3));
    b.push_back(ins::op(O::i64_mul));
    b.push_back(ins::i64_const(1));
    b.push_back(ins::op(O::i64_add));
    b.push_back(ins::end());
    b.push_back(ins::end());
    const auto idx = m.add_function(m.intern_type({{ValType::i64}, {ValType::i64}}), std::move(f));
    ctx.collatz_function = idx;
    ctx.injected.insert(idx);
    return idx;
}

CollatzSpec CollatzSpec::random(
    Rng& rng, const PredicateLocals& locals, std::uint32_t collatz_function, std::int32_t target)
{
    if (!locals.a)
        throw PassError{"Collatz construction needs an i64 scratch local"};
    CollatzSpec s;
    s.m = static_cast<std::uint32_t>(rng.between(1, 0x7FFFFFFF));
    s.n = static_cast<std::uint32_t>(rng.between(1, 0x7FFFFFFF));
    s.c = static_cast<std::uint32_t>(rng.between(1, 0x7FFFFFFF));
    s.x = locals.x;
    s.y = locals.y;
    s.a = *locals.a;
    s.collatz_function = collatz_function;
    s.target = target;
    return s;
}

InstrSeq gen_collatz_constant(const CollatzSpec& spec)
{
    if (spec.target <= 0)
        throw PassError{"Collatz target must be positive"};
    auto i32c = [](std::uint32_t v) { return ins::i32_const(static_cast<std::int32_t>(v)); };
    return {
        ins::local_get(spec.x),
        i32c(spec.m),
        ins::op(O::i32_mul),
        ins::local_get(spec.y),
        i32c(spec.n),
        ins::op(O::i32_mul),
        ins::op(O::i32_add),
        i32c(spec.c),
        ins::op(O::i32_add),
        ins::i32_const(1),
        ins::op(O::i32_or),
        ins::op(O::i64_extend_i32_u),
        ins::local_set(spec.a),
        ins::block(),
        ins::loop(),
        ins::local_get(spec.a),
        ins::call(spec.collatz_function),
        ins::local_tee(spec.a),
        ins::i64_const(1),
        ins::op(O::i64_le_u),
        ins::br_if(1),
        ins::br(0),
        ins::end(),
        ins::end(),
        ins::local_get(spec.a),
        ins::op(O::i32_wrap_i64),
        ins::i32_const(spec.target - 1),
        ins::op(O::i32_add),
    };
}

InstrSeq gen_simple_opaque_zero(std::uint32_t x_local)
{
    return {
        ins::local_get(x_local),
        ins::local_get(x_local),
        ins::i32_const(1),
        ins::op(O::i32_sub),
        ins::op(O::i32_mul),
        ins::i32_const(2),
        ins::op(O::i32_rem_u),
    };
}

PredicateLocals& predicate_locals(Module& m, std::uint32_t func, PassContext& ctx, bool need_scratch)
{
    auto it = ctx.predicate_locals.find(func);
    if (it == ctx.predicate_locals.end())
    {
        PredicateLocals locals;
        std::vector<std::uint32_t> params;
        const auto& type = m.function_type(func);
        for (std::uint32_t i = 0; i < type.params.size() && params.size() < 2; ++i)
            if (type.params[i] == ValType::i32)
                params.push_back(i);
        while (params.size() < 2)
        {
            params.push_back(m.append_local(func, ValType::i32));
            locals.synthetic = true;
        }
        locals.x = params[0];
        locals.y = params[1];
        if (locals.synthetic)
            ctx.notes.push_back("function " + std::to_string(func) +
                                ": opaque predicates use fresh locals (fewer than two i32 parameters)");
        it = ctx.predicate_locals.emplace(func, locals).first;
    }
    if (need_scratch && !it->second.a)
        it->second.a = m.append_local(func, ValType::i64);
    return it->second;
}

InstrSeq collatz_value(Module& m, std::uint32_t func, std::int32_t value, Rng& rng, PassContext& ctx)
{
    const auto collatz = gen_collatz_function(m, ctx);
    const auto& locals = predicate_locals(m, func, ctx, true);
    if (value >= 1)
        return gen_collatz_constant(CollatzSpec::random(rng, locals, collatz, value));
    auto seq = gen_collatz_constant(CollatzSpec::random(rng, locals, collatz, 1));
    seq.push_back(ins::i32_const(value - 1));
    seq.push_back(ins::op(O::i32_add));
    return seq;
}
}  // namespace wasmveil
