#include "wasmveil/binary.hpp"
#include "wasmveil/errors.hpp"
#include "wasmveil/leb128.hpp"
#include <string>

namespace wasmveil
{
namespace
{
void put_u32(Bytes& out, std::uint32_t v)
{
    write_uleb128(out, v);
}

void put_name(Bytes& out, std::string_view name)
{
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
}

void put_limits(Bytes& out, const Limits& l)
{
    if (l.max)
    {
        out.push_back(0x01);
        put_u32(out, l.min);
        put_u32(out, *l.max);
    }
    else
    {
        out.push_back(0x00);
        put_u32(out, l.min);
    }
}

void put_global_type(Bytes& out, const GlobalType& g)
{
    out.push_back(static_cast<std::uint8_t>(g.type));
    out.push_back(g.is_mutable ? 1 : 0);
}

void put_expr(Bytes& out, const InstrSeq& expr)
{
    for (const auto& i : expr)
        encode_instr(out, i);
}

void section(Bytes& out, SectionId id, const Bytes& content)
{
    out.push_back(static_cast<std::uint8_t>(id));
    put_u32(out, static_cast<std::uint32_t>(content.size()));
    out.insert(out.end(), content.begin(), content.end());
}

template <typename T, typename F>
Bytes vec(const std::vector<T>& items, F&& each)
{
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& item : items)
        each(out, item);
    return out;
}

void check(bool ok, const std::string& what)
{
    if (!ok)
        throw EncodeError{what};
}

void check_indices(const Module& m)
{
    const auto nfuncs = m.function_count();
    check(m.functions.size() == m.code.size(), "function and code counts differ");
    for (const auto& imp : m.imports)
        if (imp.kind == ExternKind::function)
            check(imp.type_index < m.types.size(), "import type index out of range");
    for (const auto t : m.functions)
        check(t < m.types.size(), "function type index " + std::to_string(t) + " out of range");
    for (const auto& e : m.exports)
    {
        std::uint32_t bound = 0;
        switch (e.kind)
        {
        case ExternKind::function:
            bound = nfuncs;
            break;
        case ExternKind::table:
            bound = m.table_count();
            break;
        case ExternKind::memory:
            bound = m.memory_count();
            break;
        case ExternKind::global:
            bound = m.global_count();
            break;
        }
        check(e.index < bound, "export '" + e.name + "' index out of range");
    }
    if (m.start)
        check(*m.start < nfuncs, "start function index out of range");
    for (const auto& seg : m.elems)
        for (const auto f : seg.functions)
            check(f < nfuncs, "element function index " + std::to_string(f) + " out of range");
}
}  // namespace

void encode_instr(Bytes& out, const Instr& i)
{
    out.push_back(static_cast<std::uint8_t>(i.op));
    switch (immediate_kind(i.op))
    {
    case ImmediateKind::none:
        break;
    case ImmediateKind::block_type:
        out.push_back(i.block_type ? static_cast<std::uint8_t>(*i.block_type) : 0x40);
        break;
    case ImmediateKind::label:
    case ImmediateKind::function:
    case ImmediateKind::local:
    case ImmediateKind::global:
        put_u32(out, i.index);
        break;
    case ImmediateKind::label_table:
        put_u32(out, static_cast<std::uint32_t>(i.targets.size()));
        for (const auto t : i.targets)
            put_u32(out, t);
        put_u32(out, i.index);
        break;
    case ImmediateKind::type_and_table:
        put_u32(out, i.index);
        out.push_back(0x00);
        break;
    case ImmediateKind::memarg:
        put_u32(out, i.mem.align);
        put_u32(out, i.mem.offset);
        break;
    case ImmediateKind::memory_reserved:
        out.push_back(0x00);
        break;
    case ImmediateKind::i32:
        write_sleb128(out, static_cast<std::int32_t>(static_cast<std::uint32_t>(i.value)));
        break;
    case ImmediateKind::i64:
        write_sleb128(out, static_cast<std::int64_t>(i.value));
        break;
    case ImmediateKind::f32:
        for (int b = 0; b < 4; ++b)
            out.push_back(static_cast<std::uint8_t>(i.value >> (8 * b)));
        break;
    case ImmediateKind::f64:
        for (int b = 0; b < 8; ++b)
            out.push_back(static_cast<std::uint8_t>(i.value >> (8 * b)));
        break;
    }
}

std::size_t encoded_size(const InstrSeq& body)
{
    Bytes out;
    put_expr(out, body);
    return out.size();
}

Bytes encode_module(const Module& m)
{
    check_indices(m);

    Bytes out(std::begin(wasm_magic), std::end(wasm_magic));
    out.insert(out.end(), std::begin(wasm_version), std::end(wasm_version));

    auto customs_after = [&](SectionId id) {
        for (const auto& c : m.customs)
        {
            if (c.after != id)
                continue;
            Bytes content;
            put_name(content, c.name);
            content.insert(content.end(), c.payload.begin(), c.payload.end());
            section(out, SectionId::custom, content);
        }
    };

    auto emit = [&](SectionId id, bool present, auto&& build) {
        if (present)
            section(out, id, build());
        customs_after(id);
    };

    customs_after(SectionId::custom);

    emit(SectionId::type, !m.types.empty(), [&] {
        return vec(m.types, [](Bytes& o, const FuncType& t) {
            o.push_back(0x60);
            put_u32(o, static_cast<std::uint32_t>(t.params.size()));
            for (auto p : t.params)
                o.push_back(static_cast<std::uint8_t>(p));
            put_u32(o, static_cast<std::uint32_t>(t.results.size()));
            for (auto r : t.results)
                o.push_back(static_cast<std::uint8_t>(r));
        });
    });
    emit(SectionId::import, !m.imports.empty(), [&] {
        return vec(m.imports, [](Bytes& o, const Import& imp) {
            put_name(o, imp.module);
            put_name(o, imp.name);
            o.push_back(static_cast<std::uint8_t>(imp.kind));
            switch (imp.kind)
            {
            case ExternKind::function:
                put_u32(o, imp.type_index);
                break;
            case ExternKind::table:
                o.push_back(0x70);
                put_limits(o, imp.table.limits);
                break;
            case ExternKind::memory:
                put_limits(o, imp.memory);
                break;
            case ExternKind::global:
                put_global_type(o, imp.global);
                break;
            }
        });
    });
    emit(SectionId::function, !m.functions.empty(),
        [&] { return vec(m.functions, [](Bytes& o, std::uint32_t t) { put_u32(o, t); }); });
    emit(SectionId::table, !m.tables.empty(), [&] {
        return vec(m.tables, [](Bytes& o, const TableType& t) {
            o.push_back(0x70);
            put_limits(o, t.limits);
        });
    });
    emit(SectionId::memory, !m.memories.empty(),
        [&] { return vec(m.memories, [](Bytes& o, const Limits& l) { put_limits(o, l); }); });
    emit(SectionId::global, !m.globals.empty(), [&] {
        return vec(m.globals, [](Bytes& o, const Global& g) {
            put_global_type(o, g.type);
            put_expr(o, g.init);
        });
    });
    emit(SectionId::export_, !m.exports.empty(), [&] {
        return vec(m.exports, [](Bytes& o, const Export& e) {
            put_name(o, e.name);
            o.push_back(static_cast<std::uint8_t>(e.kind));
            put_u32(o, e.index);
        });
    });
    emit(SectionId::start, m.start.has_value(), [&] {
        Bytes o;
        put_u32(o, *m.start);
        return o;
    });
    emit(SectionId::element, !m.elems.empty(), [&] {
        return vec(m.elems, [](Bytes& o, const ElemSegment& seg) {
            put_u32(o, seg.table_index);
            put_expr(o, seg.offset);
            put_u32(o, static_cast<std::uint32_t>(seg.functions.size()));
            for (auto f : seg.functions)
                put_u32(o, f);
        });
    });
    emit(SectionId::code, !m.code.empty(), [&] {
        return vec(m.code, [](Bytes& o, const FuncBody& fb) {
            Bytes body;
            put_u32(body, static_cast<std::uint32_t>(fb.locals.size()));
            for (const auto& g : fb.locals)
            {
                put_u32(body, g.count);
                body.push_back(static_cast<std::uint8_t>(g.type));
            }
            put_expr(body, fb.body);
            put_u32(o, static_cast<std::uint32_t>(body.size()));
            o.insert(o.end(), body.begin(), body.end());
        });
    });
    emit(SectionId::data, !m.data.empty(), [&] {
        return vec(m.data, [](Bytes& o, const DataSegment& seg) {
            put_u32(o, seg.memory_index);
            put_expr(o, seg.offset);
            put_u32(o, static_cast<std::uint32_t>(seg.bytes.size()));
            o.insert(o.end(), seg.bytes.begin(), seg.bytes.end());
        });
    });
    return out;
}
}  // namespace wasmveil
