#include "wasmveil/module.hpp"
#include "wasmveil/errors.hpp"
#include <algorithm>
#include <bit>
#include <stdexcept>
#include <string>

namespace wasmveil
{
std::string_view to_string(ExternKind kind) noexcept
{
    switch (kind)
    {
    case ExternKind::function:
        return "func";
    case ExternKind::table:
        return "table";
    case ExternKind::memory:
        return "memory";
    case ExternKind::global:
        return "global";
    }
    return "?";
}

namespace ins
{
Instr op(Opcode code)
{
    Instr i;
    i.op = code;
    return i;
}

Instr i32_const(std::int32_t v)
{
    auto i = op(Opcode::i32_const);
    i.value = static_cast<std::uint32_t>(v);
    return i;
}

Instr i64_const(std::int64_t v)
{
    auto i = op(Opcode::i64_const);
    i.value = static_cast<std::uint64_t>(v);
    return i;
}

Instr f32_const(float v)
{
    auto i = op(Opcode::f32_const);
    i.value = std::bit_cast<std::uint32_t>(v);
    return i;
}

Instr f64_const(double v)
{
    auto i = op(Opcode::f64_const);
    i.value = std::bit_cast<std::uint64_t>(v);
    return i;
}

namespace
{
Instr indexed(Opcode code, std::uint32_t idx)
{
    auto i = op(code);
    i.index = idx;
    return i;
}

Instr structured(Opcode code, std::optional<ValType> result)
{
    auto i = op(code);
    i.block_type = result;
    return i;
}
}  // namespace

Instr local_get(std::uint32_t idx)
{
    return indexed(Opcode::local_get, idx);
}
Instr local_set(std::uint32_t idx)
{
    return indexed(Opcode::local_set, idx);
}
Instr local_tee(std::uint32_t idx)
{
    return indexed(Opcode::local_tee, idx);
}
Instr global_get(std::uint32_t idx)
{
    return indexed(Opcode::global_get, idx);
}
Instr global_set(std::uint32_t idx)
{
    return indexed(Opcode::global_set, idx);
}
Instr call(std::uint32_t func)
{
    return indexed(Opcode::call, func);
}
Instr call_indirect(std::uint32_t type_idx)
{
    return indexed(Opcode::call_indirect, type_idx);
}
Instr br(std::uint32_t depth)
{
    return indexed(Opcode::br, depth);
}
Instr br_if(std::uint32_t depth)
{
    return indexed(Opcode::br_if, depth);
}

Instr br_table(std::vector<std::uint32_t> targets, std::uint32_t default_target)
{
    auto i = indexed(Opcode::br_table, default_target);
    i.targets = std::move(targets);
    return i;
}

Instr block(std::optional<ValType> result)
{
    return structured(Opcode::block, result);
}
Instr loop(std::optional<ValType> result)
{
    return structured(Opcode::loop, result);
}
Instr if_(std::optional<ValType> result)
{
    return structured(Opcode::if_, result);
}
Instr else_()
{
    return op(Opcode::else_);
}
Instr end()
{
    return op(Opcode::end);
}

Instr mem(Opcode code, std::uint32_t offset)
{
    const auto width = memory_access_shape(code).width;
    return mem(code, offset, static_cast<std::uint32_t>(std::countr_zero(width)));
}

Instr mem(Opcode code, std::uint32_t offset, std::uint32_t align)
{
    auto i = op(code);
    i.mem = {align, offset};
    return i;
}
}  // namespace ins

namespace
{
std::uint32_t count_imports(const std::vector<Import>& imports, ExternKind kind)
{
    return static_cast<std::uint32_t>(std::count_if(
        imports.begin(), imports.end(), [kind](const Import& i) { return i.kind == kind; }));
}

std::string out_of_range(const char* what, std::uint32_t idx)
{
    return std::string{what} + " index " + std::to_string(idx) + " out of range";
}
}  // namespace

std::uint32_t Module::imported_function_count() const
{
    return count_imports(imports, ExternKind::function);
}
std::uint32_t Module::imported_global_count() const
{
    return count_imports(imports, ExternKind::global);
}
std::uint32_t Module::imported_table_count() const
{
    return count_imports(imports, ExternKind::table);
}
std::uint32_t Module::imported_memory_count() const
{
    return count_imports(imports, ExternKind::memory);
}

std::uint32_t Module::function_count() const
{
    return imported_function_count() + static_cast<std::uint32_t>(functions.size());
}
std::uint32_t Module::global_count() const
{
    return imported_global_count() + static_cast<std::uint32_t>(globals.size());
}
std::uint32_t Module::table_count() const
{
    return imported_table_count() + static_cast<std::uint32_t>(tables.size());
}
std::uint32_t Module::memory_count() const
{
    return imported_memory_count() + static_cast<std::uint32_t>(memories.size());
}

std::uint32_t Module::function_type_index(std::uint32_t func) const
{
    std::uint32_t seen = 0;
    for (const auto& imp : imports)
    {
        if (imp.kind != ExternKind::function)
            continue;
        if (seen == func)
            return imp.type_index;
        ++seen;
    }
    const auto local = func - seen;
    if (local >= functions.size())
        throw std::out_of_range{out_of_range("function", func)};
    return functions[local];
}

const FuncType& Module::function_type(std::uint32_t func) const
{
    const auto idx = function_type_index(func);
    if (idx >= types.size())
        throw std::out_of_range{out_of_range("type", idx)};
    return types[idx];
}

GlobalType Module::global_type(std::uint32_t global) const
{
    std::uint32_t seen = 0;
    for (const auto& imp : imports)
    {
        if (imp.kind != ExternKind::global)
            continue;
        if (seen == global)
            return imp.global;
        ++seen;
    }
    const auto local = global - seen;
    if (local >= globals.size())
        throw std::out_of_range{out_of_range("global", global)};
    return globals[local].type;
}

std::vector<ValType> Module::local_types(std::uint32_t func) const
{
    auto result = function_type(func).params;
    for (const auto& group : body_of(func).locals)
        result.insert(result.end(), group.count, group.type);
    return result;
}

std::uint32_t Module::append_local(std::uint32_t func, ValType type)
{
    const auto index = static_cast<std::uint32_t>(local_types(func).size());
    auto& locals = body_of(func).locals;
    if (!locals.empty() && locals.back().type == type)
        ++locals.back().count;
    else
        locals.push_back({1, type});
    return index;
}

std::uint32_t Module::intern_type(const FuncType& type)
{
    const auto it = std::find(types.begin(), types.end(), type);
    if (it != types.end())
        return static_cast<std::uint32_t>(it - types.begin());
    types.push_back(type);
    return static_cast<std::uint32_t>(types.size() - 1);
}

std::uint32_t Module::add_function(std::uint32_t type_index, FuncBody body)
{
    functions.push_back(type_index);
    code.push_back(std::move(body));
    return function_count() - 1;
}

FuncBody& Module::body_of(std::uint32_t func)
{
    const auto imported = imported_function_count();
    if (func < imported || func - imported >= code.size())
        throw std::out_of_range{out_of_range("defined function", func)};
    return code[func - imported];
}

const FuncBody& Module::body_of(std::uint32_t func) const
{
    return const_cast<Module*>(this)->body_of(func);
}

const CustomSection* Module::find_custom(std::string_view name) const
{
    for (const auto& c : customs)
        if (c.name == name)
            return &c;
    return nullptr;
}

CustomSection* Module::find_custom(std::string_view name)
{
    for (auto& c : customs)
        if (c.name == name)
            return &c;
    return nullptr;
}

std::optional<std::uint32_t> constant_offset(const InstrSeq& expr)
{
    if (expr.size() == 2 && expr[0].op == Opcode::i32_const && expr[1].op == Opcode::end)
        return static_cast<std::uint32_t>(expr[0].value);
    return std::nullopt;
}

InstrSeq make_offset_expr(std::uint32_t offset)
{
    return {ins::i32_const(static_cast<std::int32_t>(offset)), ins::end()};
}
}  // namespace wasmveil
