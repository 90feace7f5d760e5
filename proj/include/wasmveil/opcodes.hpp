#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace wasmveil
{
// X(identifier, byte, text name)
#define WASMVEIL_OPCODES(X)                         \
    X(unreachable, 0x00, "unreachable")             \
    X(nop, 0x01, "nop")                             \
    X(block, 0x02, "block")                         \
    X(loop, 0x03, "loop")                           \
    X(if_, 0x04, "if")                              \
    X(else_, 0x05, "else")                          \
    X(end, 0x0B, "end")                             \
    X(br, 0x0C, "br")                               \
    X(br_if, 0x0D, "br_if")                         \
    X(br_table, 0x0E, "br_table")                   \
    X(return_, 0x0F, "return")                      \
    X(call, 0x10, "call")                           \
    X(call_indirect, 0x11, "call_indirect")         \
    X(drop, 0x1A, "drop")                           \
    X(select, 0x1B, "select")                       \
    X(local_get, 0x20, "local.get")                 \
    X(local_set, 0x21, "local.set")                 \
    X(local_tee, 0x22, "local.tee")                 \
    X(global_get, 0x23, "global.get")               \
    X(global_set, 0x24, "global.set")               \
    X(i32_load, 0x28, "i32.load")                   \
    X(i64_load, 0x29, "i64.load")                   \
    X(f32_load, 0x2A, "f32.load")                   \
    X(f64_load, 0x2B, "f64.load")                   \
    X(i32_load8_s, 0x2C, "i32.load8_s")             \
    X(i32_load8_u, 0x2D, "i32.load8_u")             \
    X(i32_load16_s, 0x2E, "i32.load16_s")           \
    X(i32_load16_u, 0x2F, "i32.load16_u")           \
    X(i64_load8_s, 0x30, "i64.load8_s")             \
    X(i64_load8_u, 0x31, "i64.load8_u")             \
    X(i64_load16_s, 0x32, "i64.load16_s")           \
    X(i64_load16_u, 0x33, "i64.load16_u")           \
    X(i64_load32_s, 0x34, "i64.load32_s")           \
    X(i64_load32_u, 0x35, "i64.load32_u")           \
    X(i32_store, 0x36, "i32.store")                 \
    X(i64_store, 0x37, "i64.store")                 \
    X(f32_store, 0x38, "f32.store")                 \
    X(f64_store, 0x39, "f64.store")                 \
    X(i32_store8, 0x3A, "i32.store8")               \
    X(i32_store16, 0x3B, "i32.store16")             \
    X(i64_store8, 0x3C, "i64.store8")               \
    X(i64_store16, 0x3D, "i64.store16")             \
    X(i64_store32, 0x3E, "i64.store32")             \
    X(memory_size, 0x3F, "memory.size")             \
    X(memory_grow, 0x40, "memory.grow")             \
    X(i32_const, 0x41, "i32.const")                 \
    X(i64_const, 0x42, "i64.const")                 \
    X(f32_const, 0x43, "f32.const")                 \
    X(f64_const, 0x44, "f64.const")                 \
    X(i32_eqz, 0x45, "i32.eqz")                     \
    X(i32_eq, 0x46, "i32.eq")                       \
    X(i32_ne, 0x47, "i32.ne")                       \
    X(i32_lt_s, 0x48, "i32.lt_s")                   \
    X(i32_lt_u, 0x49, "i32.lt_u")                   \
    X(i32_gt_s, 0x4A, "i32.gt_s")                   \
    X(i32_gt_u, 0x4B, "i32.gt_u")                   \
    X(i32_le_s, 0x4C, "i32.le_s")                   \
    X(i32_le_u, 0x4D, "i32.le_u")                   \
    X(i32_ge_s, 0x4E, "i32.ge_s")                   \
    X(i32_ge_u, 0x4F, "i32.ge_u")                   \
    X(i64_eqz, 0x50, "i64.eqz")                     \
    X(i64_eq, 0x51, "i64.eq")                       \
    X(i64_ne, 0x52, "i64.ne")                       \
    X(i64_lt_s, 0x53, "i64.lt_s")                   \
    X(i64_lt_u, 0x54, "i64.lt_u")                   \
    X(i64_gt_s, 0x55, "i64.gt_s")                   \
    X(i64_gt_u, 0x56, "i64.gt_u")                   \
    X(i64_le_s, 0x57, "i64.le_s")                   \
    X(i64_le_u, 0x58, "i64.le_u")                   \
    X(i64_ge_s, 0x59, "i64.ge_s")                   \
    X(i64_ge_u, 0x5A, "i64.ge_u")                   \
    X(f32_eq, 0x5B, "f32.eq")                       \
    X(f32_ne, 0x5C, "f32.ne")                       \
    X(f32_lt, 0x5D, "f32.lt")                       \
    X(f32_gt, 0x5E, "f32.gt")                       \
    X(f32_le, 0x5F, "f32.le")                       \
    X(f32_ge, 0x60, "f32.ge")                       \
    X(f64_eq, 0x61, "f64.eq")                       \
    X(f64_ne, 0x62, "f64.ne")                       \
    X(f64_lt, 0x63, "f64.lt")                       \
    X(f64_gt, 0x64, "f64.gt")                       \
    X(f64_le, 0x65, "f64.le")                       \
    X(f64_ge, 0x66, "f64.ge")                       \
    X(i32_clz, 0x67, "i32.clz")                     \
    X(i32_ctz, 0x68, "i32.ctz")                     \
    X(i32_popcnt, 0x69, "i32.popcnt")               \
    X(i32_add, 0x6A, "i32.add")                     \
    X(i32_sub, 0x6B, "i32.sub")                     \
    X(i32_mul, 0x6C, "i32.mul")                     \
    X(i32_div_s, 0x6D, "i32.div_s")                 \
    X(i32_div_u, 0x6E, "i32.div_u")                 \
    X(i32_rem_s, 0x6F, "i32.rem_s")                 \
    X(i32_rem_u, 0x70, "i32.rem_u")                 \
    X(i32_and, 0x71, "i32.and")                     \
    X(i32_or, 0x72, "i32.or")                       \
    X(i32_xor, 0x73, "i32.xor")                     \
    X(i32_shl, 0x74, "i32.shl")                     \
    X(i32_shr_s, 0x75, "i32.shr_s")                 \
    X(i32_shr_u, 0x76, "i32.shr_u")                 \
    X(i32_rotl, 0x77, "i32.rotl")                   \
    X(i32_rotr, 0x78, "i32.rotr")                   \
    X(i64_clz, 0x79, "i64.clz")                     \
    X(i64_ctz, 0x7A, "i64.ctz")                     \
    X(i64_popcnt, 0x7B, "i64.popcnt")               \
    X(i64_add, 0x7C, "i64.add")                     \
    X(i64_sub, 0x7D, "i64.sub")                     \
    X(i64_mul, 0x7E, "i64.mul")                     \
    X(i64_div_s, 0x7F, "i64.div_s")                 \
    X(i64_div_u, 0x80, "i64.div_u")                 \
    X(i64_rem_s, 0x81, "i64.rem_s")                 \
    X(i64_rem_u, 0x82, "i64.rem_u")                 \
    X(i64_and, 0x83, "i64.and")                     \
    X(i64_or, 0x84, "i64.or")                       \
    X(i64_xor, 0x85, "i64.xor")                     \
    X(i64_shl, 0x86, "i64.shl")                     \
    X(i64_shr_s, 0x87, "i64.shr_s")                 \
    X(i64_shr_u, 0x88, "i64.shr_u")                 \
    X(i64_rotl, 0x89, "i64.rotl")                   \
    X(i64_rotr, 0x8A, "i64.rotr")                   \
    X(f32_abs, 0x8B, "f32.abs")                     \
    X(f32_neg, 0x8C, "f32.neg")                     \
    X(f32_ceil, 0x8D, "f32.ceil")                   \
    X(f32_floor, 0x8E, "f32.floor")                 \
    X(f32_trunc, 0x8F, "f32.trunc")                 \
    X(f32_nearest, 0x90, "f32.nearest")             \
    X(f32_sqrt, 0x91, "f32.sqrt")                   \
    X(f32_add, 0x92, "f32.add")                     \
    X(f32_sub, 0x93, "f32.sub")                     \
    X(f32_mul, 0x94, "f32.mul")                     \
    X(f32_div, 0x95, "f32.div")                     \
    X(f32_min, 0x96, "f32.min")                     \
    X(f32_max, 0x97, "f32.max")                     \
    X(f32_copysign, 0x98, "f32.copysign")           \
    X(f64_abs, 0x99, "f64.abs")                     \
    X(f64_neg, 0x9A, "f64.neg")                     \
    X(f64_ceil, 0x9B, "f64.ceil")                   \
    X(f64_floor, 0x9C, "f64.floor")                 \
    X(f64_trunc, 0x9D, "f64.trunc")                 \
    X(f64_nearest, 0x9E, "f64.nearest")             \
    X(f64_sqrt, 0x9F, "f64.sqrt")                   \
    X(f64_add, 0xA0, "f64.add")                     \
    X(f64_sub, 0xA1, "f64.sub")                     \
    X(f64_mul, 0xA2, "f64.mul")                     \
    X(f64_div, 0xA3, "f64.div")                     \
    X(f64_min, 0xA4, "f64.min")                     \
    X(f64_max, 0xA5, "f64.max")                     \
    X(f64_copysign, 0xA6, "f64.copysign")           \
    X(i32_wrap_i64, 0xA7, "i32.wrap_i64")           \
    X(i32_trunc_f32_s, 0xA8, "i32.trunc_f32_s")     \
    X(i32_trunc_f32_u, 0xA9, "i32.trunc_f32_u")     \
    X(i32_trunc_f64_s, 0xAA, "i32.trunc_f64_s")     \
    X(i32_trunc_f64_u, 0xAB, "i32.trunc_f64_u")     \
    X(i64_extend_i32_s, 0xAC, "i64.extend_i32_s")   \
    X(i64_extend_i32_u, 0xAD, "i64.extend_i32_u")   \
    X(i64_trunc_f32_s, 0xAE, "i64.trunc_f32_s")     \
    X(i64_trunc_f32_u, 0xAF, "i64.trunc_f32_u")     \
    X(i64_trunc_f64_s, 0xB0, "i64.trunc_f64_s")     \
    X(i64_trunc_f64_u, 0xB1, "i64.trunc_f64_u")     \
    X(f32_convert_i32_s, 0xB2, "f32.convert_i32_s") \
    X(f32_convert_i32_u, 0xB3, "f32.convert_i32_u") \
    X(f32_convert_i64_s, 0xB4, "f32.convert_i64_s") \
    X(f32_convert_i64_u, 0xB5, "f32.convert_i64_u") \
    X(f32_demote_f64, 0xB6, "f32.demote_f64")       \
    X(f64_convert_i32_s, 0xB7, "f64.convert_i32_s") \
    X(f64_convert_i32_u, 0xB8, "f64.convert_i32_u") \
    X(f64_convert_i64_s, 0xB9, "f64.convert_i64_s") \
    X(f64_convert_i64_u, 0xBA, "f64.convert_i64_u") \
    X(f64_promote_f32, 0xBB, "f64.promote_f32")     \
    X(i32_reinterpret_f32, 0xBC, "i32.reinterpret_f32") \
    X(i64_reinterpret_f64, 0xBD, "i64.reinterpret_f64") \
    X(f32_reinterpret_i32, 0xBE, "f32.reinterpret_i32") \
    X(f64_reinterpret_i64, 0xBF, "f64.reinterpret_i64")

/// Core v1 (MVP) instruction set. Every opcode is a single byte.
enum class Opcode : std::uint8_t
{
#define WASMVEIL_ENUM(id, byte, text) id = byte,
    WASMVEIL_OPCODES(WASMVEIL_ENUM)
#undef WASMVEIL_ENUM
};

enum class ValType : std::uint8_t
{
    i32 = 0x7F,
    i64 = 0x7E,
    f32 = 0x7D,
    f64 = 0x7C,
};

std::string_view to_string(ValType type) noexcept;
std::optional<ValType> valtype_from_byte(std::uint8_t byte) noexcept;

/// True when `byte` names an MVP opcode.
bool is_mvp_opcode(std::uint8_t byte) noexcept;

std::string_view opcode_name(Opcode op) noexcept;

/// Number of distinct MVP opcodes.
inline constexpr std::size_t opcode_count = 0
#define WASMVEIL_COUNT(id, byte, text) +1
    WASMVEIL_OPCODES(WASMVEIL_COUNT)
#undef WASMVEIL_COUNT
    ;

enum class ImmediateKind : std::uint8_t
{
    none,
    block_type,
    label,
    label_table,
    function,
    type_and_table,
    local,
    global,
    memarg,
    memory_reserved,
    i32,
    i64,
    f32,
    f64,
};

ImmediateKind immediate_kind(Opcode op) noexcept;

inline bool is_load(Opcode op) noexcept
{
    return op >= Opcode::i32_load && op <= Opcode::i64_load32_u;
}

inline bool is_store(Opcode op) noexcept
{
    return op >= Opcode::i32_store && op <= Opcode::i64_store32;
}

inline bool is_memory_access(Opcode op) noexcept
{
    return is_load(op) || is_store(op);
}

/// Shape of a plain load/store: value type, access width in bytes and,
/// for narrow loads, whether the value is sign-extended.
struct MemoryAccessShape
{
    ValType type;
    unsigned width;
    bool is_signed;
};

MemoryAccessShape memory_access_shape(Opcode op) noexcept;

/// Fixed operand/result signature of a non-control, non-variable opcode
/// (numeric ops, constants, loads, stores, memory.size/grow).
struct OpSignature
{
    std::uint8_t param_count = 0;
    ValType params[3]{};
    std::optional<ValType> result;
};

/// Returns the fixed signature for `op`, or nullopt for opcodes whose typing
/// depends on context (control, calls, locals, globals, drop, select).
std::optional<OpSignature> fixed_signature(Opcode op) noexcept;
}  // namespace wasmveil
