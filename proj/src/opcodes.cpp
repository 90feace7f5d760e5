#include "wasmveil/opcodes.hpp"
#include <array>

namespace wasmveil
{
namespace
{
struct OpcodeTable
{
    std::array<bool, 256> valid{};
    std::array<std::string_view, 256> names{};

    constexpr OpcodeTable()
    {
#define WASMVEIL_FILL(id, byte, text) \
    valid[byte] = true;               \
    names[byte] = text;
        WASMVEIL_OPCODES(WASMVEIL_FILL)
#undef WASMVEIL_FILL
    }
};

constexpr OpcodeTable table{};

constexpr OpSignature sig(std::optional<ValType> result)
{
    OpSignature s;
    s.result = result;
    return s;
}

constexpr OpSignature sig(ValType a, std::optional<ValType> result)
{
    OpSignature s;
    s.param_count = 1;
    s.params[0] = a;
    s.result = result;
    return s;
}

constexpr OpSignature sig(ValType a, ValType b, std::optional<ValType> result)
{
    OpSignature s;
    s.param_count = 2;
    s.params[0] = a;
    s.params[1] = b;
    s.result = result;
    return s;
}

bool in(Opcode op, Opcode lo, Opcode hi)
{
    return op >= lo && op <= hi;
}
}  // namespace

std::string_view to_string(ValType type) noexcept
{
    switch (type)
    {
    case ValType::i32:
        return "i32";
    case ValType::i64:
        return "i64";
    case ValType::f32:
        return "f32";
    case ValType::f64:
        return "f64";
    }
    return "?";
}

std::optional<ValType> valtype_from_byte(std::uint8_t byte) noexcept
{
    switch (byte)
    {
    case 0x7F:
    case 0x7E:
    case 0x7D:
    case 0x7C:
        return static_cast<ValType>(byte);
    default:
        return std::nullopt;
    }
}

bool is_mvp_opcode(std::uint8_t byte) noexcept
{
    return table.valid[byte];
}

std::string_view opcode_name(Opcode op) noexcept
{
    return table.names[static_cast<std::uint8_t>(op)];
}

ImmediateKind immediate_kind(Opcode op) noexcept
{
    switch (op)
    {
    case Opcode::block:
    case Opcode::loop:
    case Opcode::if_:
        return ImmediateKind::block_type;
    case Opcode::br:
    case Opcode::br_if:
        return ImmediateKind::label;
    case Opcode::br_table:
        return ImmediateKind::label_table;
    case Opcode::call:
        return ImmediateKind::function;
    case Opcode::call_indirect:
        return ImmediateKind::type_and_table;
    case Opcode::local_get:
    case Opcode::local_set:
    case Opcode::local_tee:
        return ImmediateKind::local;
    case Opcode::global_get:
    case Opcode::global_set:
        return ImmediateKind::global;
    case Opcode::memory_size:
    case Opcode::memory_grow:
        return ImmediateKind::memory_reserved;
    case Opcode::i32_const:
        return ImmediateKind::i32;
    case Opcode::i64_const:
        return ImmediateKind::i64;
    case Opcode::f32_const:
        return ImmediateKind::f32;
    case Opcode::f64_const:
        return ImmediateKind::f64;
    default:
        return is_memory_access(op) ? ImmediateKind::memarg : ImmediateKind::none;
    }
}

MemoryAccessShape memory_access_shape(Opcode op) noexcept
{
    using V = ValType;
    switch (op)
    {
    case Opcode::i32_load:
    case Opcode::i32_store:
        return {V::i32, 4, false};
    case Opcode::i64_load:
    case Opcode::i64_store:
        return {V::i64, 8, false};
    case Opcode::f32_load:
    case Opcode::f32_store:
        return {V::f32, 4, false};
    case Opcode::f64_load:
    case Opcode::f64_store:
        return {V::f64, 8, false};
    case Opcode::i32_load8_s:
        return {V::i32, 1, true};
    case Opcode::i32_load8_u:
    case Opcode::i32_store8:
        return {V::i32, 1, false};
    case Opcode::i32_load16_s:
        return {V::i32, 2, true};
    case Opcode::i32_load16_u:
    case Opcode::i32_store16:
        return {V::i32, 2, false};
    case Opcode::i64_load8_s:
        return {V::i64, 1, true};
    case Opcode::i64_load8_u:
    case Opcode::i64_store8:
        return {V::i64, 1, false};
    case Opcode::i64_load16_s:
        return {V::i64, 2, true};
    case Opcode::i64_load16_u:
    case Opcode::i64_store16:
        return {V::i64, 2, false};
    case Opcode::i64_load32_s:
        return {V::i64, 4, true};
    case Opcode::i64_load32_u:
    case Opcode::i64_store32:
        return {V::i64, 4, false};
    default:
        return {V::i32, 0, false};
    }
}

std::optional<OpSignature> fixed_signature(Opcode op) noexcept
{
    using V = ValType;
    using O = Opcode;
    constexpr auto I = V::i32;
    constexpr auto L = V::i64;
    constexpr auto F = V::f32;
    constexpr auto D = V::f64;

    if (is_load(op))
        return sig(I, memory_access_shape(op).type);
    if (is_store(op))
        return sig(I, memory_access_shape(op).type, std::nullopt);

    switch (op)
    {
    case O::memory_size:
        return sig(I);
    case O::memory_grow:
        return sig(I, I);
    case O::i32_const:
        return sig(I);
    case O::i64_const:
        return sig(L);
    case O::f32_const:
        return sig(F);
    case O::f64_const:
        return sig(D);
    case O::i32_eqz:
        return sig(I, I);
    case O::i64_eqz:
        return sig(L, I);
    case O::i32_wrap_i64:
        return sig(L, I);
    case O::i32_trunc_f32_s:
    case O::i32_trunc_f32_u:
        return sig(F, I);
    case O::i32_trunc_f64_s:
    case O::i32_trunc_f64_u:
        return sig(D, I);
    case O::i64_extend_i32_s:
    case O::i64_extend_i32_u:
        return sig(I, L);
    case O::i64_trunc_f32_s:
    case O::i64_trunc_f32_u:
        return sig(F, L);
    case O::i64_trunc_f64_s:
    case O::i64_trunc_f64_u:
        return sig(D, L);
    case O::f32_convert_i32_s:
    case O::f32_convert_i32_u:
        return sig(I, F);
    case O::f32_convert_i64_s:
    case O::f32_convert_i64_u:
        return sig(L, F);
    case O::f32_demote_f64:
        return sig(D, F);
    case O::f64_convert_i32_s:
    case O::f64_convert_i32_u:
        return sig(I, D);
    case O::f64_convert_i64_s:
    case O::f64_convert_i64_u:
        return sig(L, D);
    case O::f64_promote_f32:
        return sig(F, D);
    case O::i32_reinterpret_f32:
        return sig(F, I);
    case O::i64_reinterpret_f64:
        return sig(D, L);
    case O::f32_reinterpret_i32:
        return sig(I, F);
    case O::f64_reinterpret_i64:
        return sig(L, D);
    default:
        break;
    }

    if (in(op, O::i32_eq, O::i32_ge_u))
        return sig(I, I, I);
    if (in(op, O::i64_eq, O::i64_ge_u))
        return sig(L, L, I);
    if (in(op, O::f32_eq, O::f32_ge))
        return sig(F, F, I);
    if (in(op, O::f64_eq, O::f64_ge))
        return sig(D, D, I);
    if (in(op, O::i32_clz, O::i32_popcnt))
        return sig(I, I);
    if (in(op, O::i32_add, O::i32_rotr))
        return sig(I, I, I);
    if (in(op, O::i64_clz, O::i64_popcnt))
        return sig(L, L);
    if (in(op, O::i64_add, O::i64_rotr))
        return sig(L, L, L);
    if (in(op, O::f32_abs, O::f32_sqrt))
        return sig(F, F);
    if (in(op, O::f32_add, O::f32_copysign))
        return sig(F, F, F);
    if (in(op, O::f64_abs, O::f64_sqrt))
        return sig(D, D);
    if (in(op, O::f64_add, O::f64_copysign))
        return sig(D, D, D);
    return std::nullopt;
}
}  // namespace wasmveil
