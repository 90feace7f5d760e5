#pragma once

#include "wasmveil/opcodes.hpp"
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace wasmveil
{
using Bytes = std::vector<std::uint8_t>;

struct FuncType
{
    std::vector<ValType> params;
    std::vector<ValType> results;

    bool operator==(const FuncType&) const = default;
};

struct Limits
{
    std::uint32_t min = 0;
    std::optional<std::uint32_t> max;

    bool operator==(const Limits&) const = default;
};

/// MVP tables always hold funcref.
struct TableType
{
    Limits limits;

    bool operator==(const TableType&) const = default;
};

struct GlobalType
{
    ValType type = ValType::i32;
    bool is_mutable = false;

    bool operator==(const GlobalType&) const = default;
};

enum class ExternKind : std::uint8_t
{
    function = 0,
    table = 1,
    memory = 2,
    global = 3,
};

std::string_view to_string(ExternKind kind) noexcept;

struct MemArg
{
    std::uint32_t align = 0;
    std::uint32_t offset = 0;

    bool operator==(const MemArg&) const = default;
};

/// One instruction in a flat body. Structured opcodes (block/loop/if) are
/// followed by their nested instructions and closed by a matching `end`;
/// an if's alternative arm starts at its `else`.
struct Instr
{
    Opcode op = Opcode::nop;
    /// block/loop/if result; nullopt is the empty block type.
    std::optional<ValType> block_type;
    /// Label depth, local/global/function index, call_indirect type index,
    /// or br_table default label.
    std::uint32_t index = 0;
    MemArg mem;
    /// Constant bit pattern: i32/f32 in the low 32 bits, zero-extended.
    std::uint64_t value = 0;
    /// br_table label vector (excluding the default).
    std::vector<std::uint32_t> targets;

    bool operator==(const Instr&) const = default;
};

using InstrSeq = std::vector<Instr>;

namespace ins
{
Instr op(Opcode code);
Instr i32_const(std::int32_t v);
Instr i64_const(std::int64_t v);
Instr f32_const(float v);
Instr f64_const(double v);
Instr local_get(std::uint32_t idx);
Instr local_set(std::uint32_t idx);
Instr local_tee(std::uint32_t idx);
Instr global_get(std::uint32_t idx);
Instr global_set(std::uint32_t idx);
Instr call(std::uint32_t func);
Instr call_indirect(std::uint32_t type_idx);
Instr br(std::uint32_t depth);
Instr br_if(std::uint32_t depth);
Instr br_table(std::vector<std::uint32_t> targets, std::uint32_t default_target);
Instr block(std::optional<ValType> result = std::nullopt);
Instr loop(std::optional<ValType> result = std::nullopt);
Instr if_(std::optional<ValType> result = std::nullopt);
Instr else_();
Instr end();
/// Load or store with the opcode's natural alignment.
Instr mem(Opcode code, std::uint32_t offset = 0);
Instr mem(Opcode code, std::uint32_t offset, std::uint32_t align);
}  // namespace ins

struct Import
{
    std::string module;
    std::string name;
    ExternKind kind = ExternKind::function;
    std::uint32_t type_index = 0;  // function imports
    TableType table;               // table imports
    Limits memory;                 // memory imports
    GlobalType global;             // global imports

    bool operator==(const Import&) const = default;
};

struct Export
{
    std::string name;
    ExternKind kind = ExternKind::function;
    std::uint32_t index = 0;

    bool operator==(const Export&) const = default;
};

struct Global
{
    GlobalType type;
    InstrSeq init;  // constant expression, terminated by `end`

    bool operator==(const Global&) const = default;
};

struct ElemSegment
{
    std::uint32_t table_index = 0;
    InstrSeq offset;  // constant expression, terminated by `end`
    std::vector<std::uint32_t> functions;

    bool operator==(const ElemSegment&) const = default;
};

struct DataSegment
{
    std::uint32_t memory_index = 0;
    InstrSeq offset;  // constant expression, terminated by `end`
    Bytes bytes;

    bool operator==(const DataSegment&) const = default;
};

struct LocalGroup
{
    std::uint32_t count = 0;
    ValType type = ValType::i32;

    bool operator==(const LocalGroup&) const = default;
};

struct FuncBody
{
    /// Declared locals, run-length grouped exactly as encoded.
    std::vector<LocalGroup> locals;
    /// Body instructions including the final `end`.
    InstrSeq body;

    bool operator==(const FuncBody&) const = default;
};

enum class SectionId : std::uint8_t
{
    custom = 0,
    type = 1,
    import = 2,
    function = 3,
    table = 4,
    memory = 5,
    global = 6,
    export_ = 7,
    start = 8,
    element = 9,
    code = 10,
    data = 11,
};

struct CustomSection
{
    std::string name;
    Bytes payload;
    /// Id of the last non-custom section preceding this one in the binary
    /// (SectionId::custom when it precedes them all).
    SectionId after = SectionId::custom;

    bool operator==(const CustomSection&) const = default;
};

struct Module
{
    std::vector<FuncType> types;
    std::vector<Import> imports;
    std::vector<std::uint32_t> functions;  // type index per defined function
    std::vector<TableType> tables;
    std::vector<Limits> memories;
    std::vector<Global> globals;
    std::vector<Export> exports;
    std::optional<std::uint32_t> start;
    std::vector<ElemSegment> elems;
    std::vector<FuncBody> code;
    std::vector<DataSegment> data;
    std::vector<CustomSection> customs;

    bool operator==(const Module&) const = default;

    std::uint32_t imported_function_count() const;
    std::uint32_t imported_global_count() const;
    std::uint32_t imported_table_count() const;
    std::uint32_t imported_memory_count() const;

    std::uint32_t function_count() const;
    std::uint32_t global_count() const;
    std::uint32_t table_count() const;
    std::uint32_t memory_count() const;

    /// Type index of function `func` in the joint import+defined index space.
    std::uint32_t function_type_index(std::uint32_t func) const;
    const FuncType& function_type(std::uint32_t func) const;
    GlobalType global_type(std::uint32_t global) const;

    /// Parameters followed by declared locals of defined function `func`.
    std::vector<ValType> local_types(std::uint32_t func) const;

    /// Appends a declared local to defined function `func` and returns its
    /// local index.
    std::uint32_t append_local(std::uint32_t func, ValType type);

    /// Returns an index for `type`, reusing an identical existing entry.
    std::uint32_t intern_type(const FuncType& type);

    /// Appends a defined function and returns its function index.
    std::uint32_t add_function(std::uint32_t type_index, FuncBody body);

    FuncBody& body_of(std::uint32_t func);
    const FuncBody& body_of(std::uint32_t func) const;

    const CustomSection* find_custom(std::string_view name) const;
    CustomSection* find_custom(std::string_view name);
};

/// Value of a constant offset expression `i32.const k; end`, if it has that shape.
std::optional<std::uint32_t> constant_offset(const InstrSeq& expr);

InstrSeq make_offset_expr(std::uint32_t offset);
}  // namespace wasmveil
