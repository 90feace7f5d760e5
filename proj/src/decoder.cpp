#include "wasmveil/binary.hpp"
#include "wasmveil/errors.hpp"
#include "wasmveil/leb128.hpp"
#include <algorithm>
#include <cstring>
#include <string>

namespace wasmveil
{
namespace
{
std::string hex_byte(std::uint8_t b)
{
    static constexpr char digits[] = "0123456789abcdef";
    return std::string{"0x"} + digits[b >> 4] + digits[b & 0xF];
}

class Reader
{
public:
    Reader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end)
      : bytes_{bytes}, pos_{pos}, end_{end}
    {}

    std::size_t pos() const { return pos_; }
    bool at_end() const { return pos_ >= end_; }
    std::size_t remaining() const { return end_ - pos_; }

    std::uint8_t u8()
    {
        if (pos_ >= end_)
            fail("unexpected end of input");
        return bytes_[pos_++];
    }

    std::uint32_t u32()
    {
        const auto r = read_uleb128_bits(window(), pos_, 32);
        pos_ = r.next;
        return static_cast<std::uint32_t>(r.value);
    }

    std::int32_t s32()
    {
        const auto r = read_sleb128_bits(window(), pos_, 32);
        pos_ = r.next;
        return static_cast<std::int32_t>(r.value);
    }

    std::int64_t s64()
    {
        const auto r = read_sleb128(window(), pos_);
        pos_ = r.next;
        return r.value;
    }

    std::uint64_t fixed(unsigned width)
    {
        if (end_ - pos_ < width)
            fail("truncated constant");
        std::uint64_t v = 0;
        for (unsigned i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }

    Bytes raw(std::size_t n)
    {
        if (end_ - pos_ < n)
            fail("length " + std::to_string(n) + " exceeds remaining input");
        Bytes out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
            bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    void skip(std::size_t n)
    {
        if (end_ - pos_ < n)
            fail("length " + std::to_string(n) + " exceeds remaining input");
        pos_ += n;
    }

    std::string name()
    {
        const auto len = u32();
        const auto b = raw(len);
        return {b.begin(), b.end()};
    }

    ValType valtype()
    {
        const auto at = pos_;
        const auto b = u8();
        const auto t = valtype_from_byte(b);
        if (!t)
            fail_at(at, "invalid value type " + hex_byte(b));
        return *t;
    }

    Limits limits()
    {
        const auto flag = u8();
        Limits l;
        if (flag == 0x00)
            l.min = u32();
        else if (flag == 0x01)
        {
            l.min = u32();
            l.max = u32();
        }
        else
            fail("invalid limits flag " + hex_byte(flag));
        return l;
    }

    [[noreturn]] void fail(const std::string& msg) const { fail_at(pos_, msg); }

    [[noreturn]] static void fail_at(std::size_t at, const std::string& msg)
    {
        throw DecodeError{msg + " (offset " + std::to_string(at) + ")"};
    }

private:
    std::span<const std::uint8_t> window() const { return bytes_.subspan(0, end_); }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_;
    std::size_t end_;
};

class ModuleDecoder
{
public:
    explicit ModuleDecoder(std::span<const std::uint8_t> bytes) : bytes_{bytes} {}

    Module run()
    {
        if (bytes_.size() < 8 || std::memcmp(bytes_.data(), wasm_magic, 4) != 0)
            throw DecodeError{"bad magic: not a WebAssembly binary"};
        if (std::memcmp(bytes_.data() + 4, wasm_version, 4) != 0)
            throw DecodeError{"unsupported binary version"};

        Reader top{bytes_, 8, bytes_.size()};
        SectionId last = SectionId::custom;
        std::optional<std::vector<std::uint32_t>> declared_functions;
        while (!top.at_end())
        {
            const auto id_pos = top.pos();
            const auto id = top.u8();
            const auto size = top.u32();
            const auto start = top.pos();
            if (bytes_.size() - start < size)
                Reader::fail_at(id_pos, "section size " + std::to_string(size) + " exceeds input");
            Reader r{bytes_, start, start + size};

            if (id == 0)
            {
                CustomSection c;
                c.name = r.name();
                c.payload = r.raw(start + size - r.pos());
                c.after = last;
                m_.customs.push_back(std::move(c));
            }
            else
            {
                if (id > static_cast<std::uint8_t>(SectionId::data))
                    Reader::fail_at(id_pos, "unknown section id " + std::to_string(id));
                if (id <= static_cast<std::uint8_t>(last))
                    Reader::fail_at(id_pos, "section " + std::to_string(id) + " out of order");
                last = static_cast<SectionId>(id);
                section(static_cast<SectionId>(id), r);
                if (!r.at_end())
                    r.fail("section " + std::to_string(id) + " size mismatch");
            }
            top = Reader{bytes_, start + size, bytes_.size()};
        }
        if (m_.functions.size() != m_.code.size())
            throw DecodeError{"function and code section counts differ (" +
                              std::to_string(m_.functions.size()) + " vs " +
                              std::to_string(m_.code.size()) + ")"};
        return std::move(m_);
    }

private:
    template <typename F>
    void vec(Reader& r, F&& each)
    {
        const auto n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i)
            each(i);
    }

    void section(SectionId id, Reader& r)
    {
        switch (id)
        {
        case SectionId::type:
            vec(r, [&](auto) {
                if (const auto form = r.u8(); form != 0x60)
                    r.fail("expected functype 0x60, got " + hex_byte(form));
                FuncType t;
                vec(r, [&](auto) { t.params.push_back(r.valtype()); });
                vec(r, [&](auto) { t.results.push_back(r.valtype()); });
                if (t.results.size() > 1)
                    r.fail("multi-value results are not supported");
                m_.types.push_back(std::move(t));
            });
            break;
        case SectionId::import:
            vec(r, [&](auto) {
                Import imp;
                imp.module = r.name();
                imp.name = r.name();
                const auto kind = r.u8();
                switch (kind)
                {
                case 0x00:
                    imp.kind = ExternKind::function;
                    imp.type_index = r.u32();
                    break;
                case 0x01:
                    imp.kind = ExternKind::table;
                    imp.table = table_type(r);
                    break;
                case 0x02:
                    imp.kind = ExternKind::memory;
                    imp.memory = r.limits();
                    break;
                case 0x03:
                    imp.kind = ExternKind::global;
                    imp.global = global_type(r);
                    break;
                default:
                    r.fail("invalid import kind " + hex_byte(kind));
                }
                m_.imports.push_back(std::move(imp));
            });
            break;
        case SectionId::function:
            vec(r, [&](auto) { m_.functions.push_back(r.u32()); });
            break;
        case SectionId::table:
            vec(r, [&](auto) { m_.tables.push_back(table_type(r)); });
            break;
        case SectionId::memory:
            vec(r, [&](auto) { m_.memories.push_back(r.limits()); });
            break;
        case SectionId::global:
            vec(r, [&](auto) {
                Global g;
                g.type = global_type(r);
                g.init = expr(r, std::nullopt);
                m_.globals.push_back(std::move(g));
            });
            break;
        case SectionId::export_:
            vec(r, [&](auto) {
                Export e;
                e.name = r.name();
                const auto kind = r.u8();
                if (kind > 3)
                    r.fail("invalid export kind " + hex_byte(kind));
                e.kind = static_cast<ExternKind>(kind);
                e.index = r.u32();
                m_.exports.push_back(std::move(e));
            });
            break;
        case SectionId::start:
            m_.start = r.u32();
            break;
        case SectionId::element:
            vec(r, [&](auto) {
                ElemSegment seg;
                seg.table_index = r.u32();
                if (seg.table_index != 0)
                    r.fail("unsupported element segment form " + std::to_string(seg.table_index));
                seg.offset = expr(r, std::nullopt);
                vec(r, [&](auto) { seg.functions.push_back(r.u32()); });
                m_.elems.push_back(std::move(seg));
            });
            break;
        case SectionId::code:
            vec(r, [&](std::uint32_t i) {
                const auto size = r.u32();
                const auto start = r.pos();
                r.skip(size);
                Reader body{bytes_, start, start + size};
                FuncBody fb;
                vec(body, [&](auto) {
                    LocalGroup g;
                    g.count = body.u32();
                    g.type = body.valtype();
                    fb.locals.push_back(g);
                });
                const auto func_index = m_.imported_function_count() + i;
                fb.body = expr(body, func_index);
                if (!body.at_end())
                    body.fail("trailing bytes after function body " + std::to_string(func_index));
                m_.code.push_back(std::move(fb));
            });
            break;
        case SectionId::data:
            vec(r, [&](auto) {
                DataSegment seg;
                seg.memory_index = r.u32();
                if (seg.memory_index != 0)
                    r.fail("unsupported data segment form " + std::to_string(seg.memory_index));
                seg.offset = expr(r, std::nullopt);
                const auto n = r.u32();
                seg.bytes = r.raw(n);
                m_.data.push_back(std::move(seg));
            });
            break;
        case SectionId::custom:
            break;
        }
    }

    static TableType table_type(Reader& r)
    {
        if (const auto elem = r.u8(); elem != 0x70)
            r.fail("unsupported table element type " + hex_byte(elem));
        return TableType{r.limits()};
    }

    static GlobalType global_type(Reader& r)
    {
        GlobalType g;
        g.type = r.valtype();
        const auto mut = r.u8();
        if (mut > 1)
            r.fail("invalid global mutability " + hex_byte(mut));
        g.is_mutable = mut == 1;
        return g;
    }

    /// Reads instructions up to and including the `end` closing depth 0.
    InstrSeq expr(Reader& r, std::optional<std::uint32_t> func_index)
    {
        InstrSeq out;
        std::vector<Opcode> open;  // structured opcodes awaiting their end
        while (true)
        {
            const auto at = r.pos();
            const auto byte = r.u8();
            if (!is_mvp_opcode(byte))
            {
                std::string where = func_index ? " in function " + std::to_string(*func_index)
                                               : std::string{" in constant expression"};
                Reader::fail_at(at, "unsupported opcode " + hex_byte(byte) + where);
            }
            Instr ins;
            ins.op = static_cast<Opcode>(byte);
            switch (immediate_kind(ins.op))
            {
            case ImmediateKind::none:
                break;
            case ImmediateKind::block_type:
            {
                const auto bt = r.u8();
                if (bt != 0x40)
                {
                    const auto t = valtype_from_byte(bt);
                    if (!t)
                        Reader::fail_at(at, "unsupported block type " + hex_byte(bt));
                    ins.block_type = *t;
                }
                break;
            }
            case ImmediateKind::label:
            case ImmediateKind::function:
            case ImmediateKind::local:
            case ImmediateKind::global:
                ins.index = r.u32();
                break;
            case ImmediateKind::label_table:
            {
                const auto n = r.u32();
                if (n > r.remaining())
                    r.fail("br_table target count exceeds input");
                for (std::uint32_t i = 0; i < n; ++i)
                    ins.targets.push_back(r.u32());
                ins.index = r.u32();
                break;
            }
            case ImmediateKind::type_and_table:
                ins.index = r.u32();
                if (const auto reserved = r.u8(); reserved != 0)
                    r.fail("call_indirect reserved byte must be zero");
                break;
            case ImmediateKind::memarg:
                ins.mem.align = r.u32();
                ins.mem.offset = r.u32();
                break;
            case ImmediateKind::memory_reserved:
                if (const auto reserved = r.u8(); reserved != 0)
                    r.fail("memory instruction reserved byte must be zero");
                break;
            case ImmediateKind::i32:
                ins.value = static_cast<std::uint32_t>(r.s32());
                break;
            case ImmediateKind::i64:
                ins.value = static_cast<std::uint64_t>(r.s64());
                break;
            case ImmediateKind::f32:
                ins.value = r.fixed(4);
                break;
            case ImmediateKind::f64:
                ins.value = r.fixed(8);
                break;
            }

            const auto op = ins.op;
            out.push_back(std::move(ins));
            if (op == Opcode::block || op == Opcode::loop || op == Opcode::if_)
                open.push_back(op);
            else if (op == Opcode::else_)
            {
                if (open.empty() || open.back() != Opcode::if_)
                    Reader::fail_at(at, "else without matching if");
                open.back() = Opcode::else_;
            }
            else if (op == Opcode::end)
            {
                if (open.empty())
                    return out;
                open.pop_back();
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    Module m_;
};
}  // namespace

Module decode_module(std::span<const std::uint8_t> bytes)
{
    return ModuleDecoder{bytes}.run();
}
}  // namespace wasmveil
