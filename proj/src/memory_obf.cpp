#include "wasmveil/data_obf.hpp"
#include "wasmveil/errors.hpp"
#include <algorithm>
#include <array>

namespace wasmveil
{
namespace
{
using O = Opcode;

struct Interval
{
    std::uint64_t begin;
    std::uint64_t end;
};

/// Absolute byte ranges of the data segments, sorted; rejects
/// non-constant offsets and overlaps.
std::vector<Interval> segment_intervals(const Module& m)
{
    std::vector<Interval> out;
    for (std::size_t i = 0; i < m.data.size(); ++i)
    {
        const auto off = constant_offset(m.data[i].offset);
        if (!off)
            throw PassError{"data segment " + std::to_string(i) + " has a non-constant offset"};
        if (!m.data[i].bytes.empty())
            out.push_back({*off, *off + m.data[i].bytes.size()});
    }
    std::sort(out.begin(), out.end(), [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].begin < out[i - 1].end)
            throw PassError{"overlapping data segments"};
    return out;
}

Instr i64c(std::uint64_t v)
{
    return ins::i64_const(static_cast<std::int64_t>(v));
}

/// ea = zext(base) + zext(off) into local `ea`; an address past 4 GiB takes
/// a load that is certain to trap out of bounds, as the original access would.
void emit_effective_address(InstrSeq& out, std::uint32_t base, std::uint32_t off, std::uint32_t ea)
{
    out.push_back(ins::local_get(base));
    out.push_back(ins::op(O::i64_extend_i32_u));
    out.push_back(ins::local_get(off));
    out.push_back(ins::op(O::i64_extend_i32_u));
    out.push_back(ins::op(O::i64_add));
    out.push_back(ins::local_tee(ea));
    out.push_back(i64c(0xFFFFFFFFu));
    out.push_back(ins::op(O::i64_gt_u));
    out.push_back(ins::if_());
    out.push_back(ins::i32_const(0));
    out.push_back(ins::mem(O::i32_load, 0xFFFFFFFFu));
    out.push_back(ins::op(O::drop));
    out.push_back(ins::end());
}

/// Pushes the key bytes for address `ea` as one i64 (byte i = key_byte(ea + i)).
void emit_key(InstrSeq& out, std::uint64_t word, std::uint32_t ea)
{
    out.push_back(i64c(word));
    out.push_back(ins::local_get(ea));
    out.push_back(i64c(7));
    out.push_back(ins::op(O::i64_and));
    out.push_back(i64c(3));
    out.push_back(ins::op(O::i64_shl));
    out.push_back(ins::op(O::i64_rotr));
}

Opcode raw_load(unsigned width)
{
    switch (width)
    {
    case 1:
        return O::i64_load8_u;
    case 2:
        return O::i64_load16_u;
    case 4:
        return O::i64_load32_u;
    default:
        return O::i64_load;
    }
}

Opcode raw_store(unsigned width)
{
    switch (width)
    {
    case 1:
        return O::i64_store8;
    case 2:
        return O::i64_store16;
    case 4:
        return O::i64_store32;
    default:
        return O::i64_store;
    }
}

FuncBody load_helper(Opcode op, std::uint64_t word)
{
    const auto shape = memory_access_shape(op);
    FuncBody f;
    f.locals.push_back({1, ValType::i64});
    auto& b = f.body;
    emit_effective_address(b, 0, 1, 2);
    b.push_back(ins::local_get(2));
    b.push_back(ins::op(O::i32_wrap_i64));
    b.push_back(ins::mem(raw_load(shape.width), 0, 0));
    emit_key(b, word, 2);
    b.push_back(ins::op(O::i64_xor));
    if (shape.width < 8)
    {
        const unsigned shift = 64 - 8 * shape.width;
        if (shape.is_signed)
        {
            b.push_back(i64c(shift));
            b.push_back(ins::op(O::i64_shl));
            b.push_back(i64c(shift));
            b.push_back(ins::op(O::i64_shr_s));
        }
        else
        {
            b.push_back(i64c((std::uint64_t{1} << (8 * shape.width)) - 1));
            b.push_back(ins::op(O::i64_and));
        }
    }
    switch (shape.type)
    {
    case ValType::i32:
        b.push_back(ins::op(O::i32_wrap_i64));
        break;
    case ValType::f32:
        b.push_back(ins::op(O::i32_wrap_i64));
        b.push_back(ins::op(O::f32_reinterpret_i32));
        break;
    case ValType::f64:
        b.push_back(ins::op(O::f64_reinterpret_i64));
        break;
    case ValType::i64:
        break;
    }
    b.push_back(ins::end());
    return f;
}

FuncBody store_helper(Opcode op, std::uint64_t word)
{
    const auto shape = memory_access_shape(op);
    FuncBody f;
    f.locals.push_back({1, ValType::i64});
    auto& b = f.body;
    emit_effective_address(b, 0, 2, 3);
    b.push_back(ins::local_get(3));
    b.push_back(ins::op(O::i32_wrap_i64));
    b.push_back(ins::local_get(1));
    switch (shape.type)
    {
    case ValType::i32:
        b.push_back(ins::op(O::i64_extend_i32_u));
        break;
    case ValType::f32:
        b.push_back(ins::op(O::i32_reinterpret_f32));
        b.push_back(ins::op(O::i64_extend_i32_u));
        break;
    case ValType::f64:
        b.push_back(ins::op(O::i64_reinterpret_f64));
        break;
    case ValType::i64:
        break;
    }
    emit_key(b, word, 3);
    b.push_back(ins::op(O::i64_xor));
    b.push_back(ins::mem(raw_store(shape.width), 0, 0));
    b.push_back(ins::end());
    return f;
}

/// Fills [addr, end) with the key word using 8-byte stores; both bounds are
/// multiples of 8 so the key rotation is zero.
void emit_fill_loop(InstrSeq& b, std::uint32_t addr, std::uint32_t end, std::uint64_t word)
{
    b.push_back(ins::block());
    b.push_back(ins::loop());
    b.push_back(ins::local_get(addr));
    b.push_back(ins::local_get(end));
    b.push_back(ins::op(O::i64_ge_u));
    b.push_back(ins::br_if(1));
    b.push_back(ins::local_get(addr));
    b.push_back(ins::op(O::i32_wrap_i64));
    b.push_back(i64c(word));
    b.push_back(ins::mem(O::i64_store, 0, 0));
    b.push_back(ins::local_get(addr));
    b.push_back(i64c(8));
    b.push_back(ins::op(O::i64_add));
    b.push_back(ins::local_set(addr));
    b.push_back(ins::br(0));
    b.push_back(ins::end());
    b.push_back(ins::end());
}

FuncBody grow_helper(std::uint64_t word)
{
    // params: delta; locals: old pages (i32), addr, end (i64)
    FuncBody f;
    f.locals.push_back({1, ValType::i32});
    f.locals.push_back({2, ValType::i64});
    auto& b = f.body;
    b.push_back(ins::local_get(0));
    b.push_back(ins::op(O::memory_grow));
    b.push_back(ins::local_tee(1));
    b.push_back(ins::i32_const(-1));
    b.push_back(ins::op(O::i32_ne));
    b.push_back(ins::if_());
    b.push_back(ins::local_get(1));
    b.push_back(ins::op(O::i64_extend_i32_u));
    b.push_back(i64c(16));
    b.push_back(ins::op(O::i64_shl));
    b.push_back(ins::local_set(2));
    b.push_back(ins::local_get(1));
    b.push_back(ins::op(O::i64_extend_i32_u));
    b.push_back(ins::local_get(0));
    b.push_back(ins::op(O::i64_extend_i32_u));
    b.push_back(ins::op(O::i64_add));
    b.push_back(i64c(16));
    b.push_back(ins::op(O::i64_shl));
    b.push_back(ins::local_set(3));
    emit_fill_loop(b, 2, 3, word);
    b.push_back(ins::end());
    b.push_back(ins::local_get(1));
    b.push_back(ins::end());
    return f;
}

FuncBody init_function(const Module& m, const MemKey& key, std::optional<std::uint32_t> original_start)
{
    FuncBody f;
    f.locals.push_back({2, ValType::i64});
    auto& b = f.body;
    const std::uint64_t memory_size = std::uint64_t{m.memories.front().min} * 65536;
    const auto word = key.word();

    auto byte_store = [&](std::uint64_t a) {
        b.push_back(ins::i32_const(static_cast<std::int32_t>(a)));
        b.push_back(ins::i32_const(key.key_byte(a)));
        b.push_back(ins::mem(O::i32_store8, 0));
    };
    auto fill = [&](std::uint64_t s, std::uint64_t e) {
        if (s >= e)
            return;
        const auto s8 = std::min((s + 7) & ~std::uint64_t{7}, e);
        const auto e8 = std::max(e & ~std::uint64_t{7}, s8);
        for (auto a = s; a < s8; ++a)
            byte_store(a);
        if (s8 < e8)
        {
            b.push_back(i64c(s8));
            b.push_back(ins::local_set(0));
            b.push_back(i64c(e8));
            b.push_back(ins::local_set(1));
            emit_fill_loop(b, 0, 1, word);
        }
        for (auto a = e8; a < e; ++a)
            byte_store(a);
    };

    std::uint64_t cursor = 0;
    for (const auto& seg : segment_intervals(m))
    {
        fill(cursor, std::min(seg.begin, memory_size));
        cursor = std::max(cursor, seg.end);
    }
    fill(cursor, memory_size);

    if (original_start)
        b.push_back(ins::call(*original_start));
    b.push_back(ins::end());
    return f;
}
}  // namespace

MemKey MemKey::from_seed(std::uint64_t seed, std::size_t length)
{
    Rng rng{seed};
    MemKey key;
    do
    {
        key.keystream.assign(length, 0);
        for (auto& byte : key.keystream)
            byte = static_cast<std::uint8_t>(rng.below(256));
    } while (std::all_of(key.keystream.begin(), key.keystream.end(), [](auto v) { return v == 0; }));
    key.check();
    return key;
}

std::uint64_t MemKey::word() const
{
    std::uint64_t w = 0;
    for (unsigned i = 0; i < 8; ++i)
        w |= std::uint64_t{key_byte(i)} << (8 * i);
    return w;
}

void MemKey::check() const
{
    const auto l = keystream.size();
    if (l != 1 && l != 2 && l != 4 && l != 8)
        throw PassError{"keystream length must be 1, 2, 4 or 8"};
    if (std::all_of(keystream.begin(), keystream.end(), [](auto v) { return v == 0; }))
        throw PassError{"keystream must not be all zero"};
}

MemAccessSpec MemAccessSpec::of(const Instr& instr)
{
    if (!is_memory_access(instr.op))
        throw PassError{"not a memory access: " + std::string{opcode_name(instr.op)}};
    const auto shape = memory_access_shape(instr.op);
    return {instr.mem.offset, shape.is_signed, shape.width * 8, shape.type, wasmveil::is_store(instr.op)};
}

Opcode MemAccessSpec::opcode() const
{
    for (unsigned b = 0x28; b <= 0x3E; ++b)
    {
        const auto op = static_cast<Opcode>(b);
        const auto shape = memory_access_shape(op);
        if (wasmveil::is_store(op) == is_store && shape.type == type && shape.width * 8 == len &&
            (is_store || shape.is_signed == is_signed))
            return op;
    }
    throw PassError{"no memory opcode with this shape"};
}

std::set<std::uint32_t> MemHelpers::all() const
{
    std::set<std::uint32_t> s{init};
    for (const auto& [op, f] : by_opcode)
        s.insert(f);
    if (grow)
        s.insert(*grow);
    return s;
}

Module encrypt_data_segments(Module m, const MemKey& key)
{
    key.check();
    segment_intervals(m);
    for (auto& seg : m.data)
    {
        const std::uint64_t base = *constant_offset(seg.offset);
        for (std::size_t i = 0; i < seg.bytes.size(); ++i)
            seg.bytes[i] ^= key.key_byte(base + i);
    }
    return m;
}

std::pair<Module, MemHelpers> synthesize_mem_helpers(Module m, const MemKey& key)
{
    key.check();
    if (m.imported_memory_count() != 0)
        throw PassError{"imported memory cannot be obfuscated"};
    if (m.memories.size() != 1)
        throw PassError{"memory obfuscation needs exactly one memory"};
    segment_intervals(m);

    std::set<Opcode> used;
    bool grows = false;
    for (const auto& fb : m.code)
        for (const auto& in : fb.body)
        {
            if (is_memory_access(in.op))
                used.insert(in.op);
            grows = grows || in.op == O::memory_grow;
        }

    const auto word = key.word();
    const auto I = ValType::i32;
    MemHelpers helpers;
    for (const auto op : used)
    {
        const auto shape = memory_access_shape(op);
        if (is_load(op))
        {
            const auto t = m.intern_type({{I, I}, {shape.type}});
            helpers.by_opcode[op] = m.add_function(t, load_helper(op, word));
        }
        else
        {
            const auto t = m.intern_type({{I, shape.type, I}, {}});
            helpers.by_opcode[op] = m.add_function(t, store_helper(op, word));
        }
    }
    if (grows)
        helpers.grow = m.add_function(m.intern_type({{I}, {I}}), grow_helper(word));

    auto init = init_function(m, key, m.start);
    helpers.init = m.add_function(m.intern_type({{}, {}}), std::move(init));
    m.start = helpers.init;
    return {std::move(m), std::move(helpers)};
}

Module rewrite_mem_instructions(Module m, const MemHelpers& helpers)
{
    const auto skip = helpers.all();
    const auto imported = m.imported_function_count();
    for (std::uint32_t i = 0; i < m.code.size(); ++i)
    {
        if (skip.count(imported + i))
            continue;
        auto& body = m.code[i].body;
        InstrSeq out;
        out.reserve(body.size());
        for (auto& in : body)
        {
            if (is_memory_access(in.op))
            {
                const auto it = helpers.by_opcode.find(in.op);
                if (it == helpers.by_opcode.end())
                    throw PassError{"no helper for " + std::string{opcode_name(in.op)}};
                out.push_back(ins::i32_const(static_cast<std::int32_t>(in.mem.offset)));
                out.push_back(ins::call(it->second));
            }
            else if (in.op == O::memory_grow)
            {
                if (!helpers.grow)
                    throw PassError{"no helper for memory.grow"};
                out.push_back(ins::call(*helpers.grow));
            }
            else
                out.push_back(std::move(in));
        }
        body = std::move(out);
    }
    return m;
}

Module obfuscate_memory(Module m, const MemKey& key, PassContext* ctx)
{
    if (m.memory_count() == 0)
        return m;
    auto [with_helpers, helpers] = synthesize_mem_helpers(std::move(m), key);
    auto out = encrypt_data_segments(rewrite_mem_instructions(std::move(with_helpers), helpers), key);
    if (ctx)
        for (const auto f : helpers.all())
            ctx->injected.insert(f);
    return out;
}
}  // namespace wasmveil
