#include "wasmveil/interp.hpp"
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace wasmveil
{
namespace
{
constexpr unsigned max_call_depth = 1000;
/// Interpreter resource cap on linear memory (128 MiB); growth past it fails.
constexpr std::uint32_t interpreter_page_cap = 2048;

struct Trap
{
    TrapKind kind;
};

[[noreturn]] void trap(TrapKind kind)
{
    throw Trap{kind};
}

float f32_of(std::uint64_t bits)
{
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits));
}
double f64_of(std::uint64_t bits)
{
    return std::bit_cast<double>(bits);
}
std::uint64_t bits_of(float f)
{
    return std::bit_cast<std::uint32_t>(f);
}
std::uint64_t bits_of(double d)
{
    return std::bit_cast<std::uint64_t>(d);
}

template <typename F>
F wasm_min(F a, F b)
{
    if (std::isnan(a) || std::isnan(b))
        return a + b;
    if (a == b)
        return std::signbit(a) ? a : b;
    return a < b ? a : b;
}

template <typename F>
F wasm_max(F a, F b)
{
    if (std::isnan(a) || std::isnan(b))
        return a + b;
    if (a == b)
        return std::signbit(a) ? b : a;
    return a > b ? a : b;
}

/// Checked float-to-integer truncation; bounds are exclusive and exact in double.
template <typename I>
I trunc_to(double x, double lower, double upper)
{
    if (std::isnan(x))
        trap(TrapKind::invalid_conversion);
    if (!(x > lower && x < upper))
        trap(TrapKind::integer_overflow);
    return static_cast<I>(std::trunc(x));
}

std::int32_t trunc_i32_s(double x)
{
    return trunc_to<std::int32_t>(x, -2147483649.0, 2147483648.0);
}
std::uint32_t trunc_i32_u(double x)
{
    return trunc_to<std::uint32_t>(x, -1.0, 4294967296.0);
}
std::int64_t trunc_i64_s(double x)
{
    if (std::isnan(x))
        trap(TrapKind::invalid_conversion);
    if (!(x >= -9223372036854775808.0 && x < 9223372036854775808.0))
        trap(TrapKind::integer_overflow);
    return static_cast<std::int64_t>(std::trunc(x));
}
std::uint64_t trunc_i64_u(double x)
{
    return trunc_to<std::uint64_t>(x, -1.0, 18446744073709551616.0);
}
}  // namespace

Value Value::f32(float v)
{
    return {ValType::f32, bits_of(v)};
}
Value Value::f64(double v)
{
    return {ValType::f64, bits_of(v)};
}
float Value::as_f32() const
{
    return f32_of(bits);
}
double Value::as_f64() const
{
    return f64_of(bits);
}

bool Value::is_nan() const
{
    if (type == ValType::f32)
        return std::isnan(as_f32());
    if (type == ValType::f64)
        return std::isnan(as_f64());
    return false;
}

bool equivalent(const Value& a, const Value& b)
{
    if (a.type != b.type)
        return false;
    if (a.is_nan() && b.is_nan())
        return true;
    return a.bits == b.bits;
}

std::string to_string(const Value& v)
{
    switch (v.type)
    {
    case ValType::i32:
        return "i32:" + std::to_string(v.as_i32());
    case ValType::i64:
        return "i64:" + std::to_string(v.as_i64());
    case ValType::f32:
        return "f32:" + std::to_string(v.as_f32());
    case ValType::f64:
        return "f64:" + std::to_string(v.as_f64());
    }
    return "?";
}

std::string_view to_string(TrapKind kind) noexcept
{
    switch (kind)
    {
    case TrapKind::unreachable:
        return "unreachable";
    case TrapKind::memory_out_of_bounds:
        return "out of bounds memory access";
    case TrapKind::integer_divide_by_zero:
        return "integer divide by zero";
    case TrapKind::integer_overflow:
        return "integer overflow";
    case TrapKind::invalid_conversion:
        return "invalid conversion to integer";
    case TrapKind::indirect_call_type_mismatch:
        return "indirect call type mismatch";
    case TrapKind::undefined_element:
        return "undefined element";
    case TrapKind::uninitialized_element:
        return "uninitialized element";
    case TrapKind::stack_exhausted:
        return "call stack exhausted";
    case TrapKind::host:
        return "host trap";
    }
    return "?";
}

InstantiationTrap::InstantiationTrap(TrapKind k)
  : std::runtime_error{"instantiation trap: " + std::string{to_string(k)}}, kind{k}
{}

ImportStubs& ImportStubs::add(std::string module, std::string name, HostFunction fn)
{
    functions[{std::move(module), std::move(name)}] = std::move(fn);
    return *this;
}

HostFunction ImportStubs::trap_on_call()
{
    return [](std::span<const Value>, Instance&) -> HostResult { return TrapKind::host; };
}

HostFunction ImportStubs::constant_return(std::vector<Value> values)
{
    return [values = std::move(values)](
               std::span<const Value>, Instance&) -> HostResult { return values; };
}

HostFunction ImportStubs::capture_output(std::vector<ValType> results)
{
    return [results = std::move(results)](std::span<const Value> args, Instance& inst) -> HostResult {
        inst.output.insert(inst.output.end(), args.begin(), args.end());
        std::vector<Value> out;
        for (const auto t : results)
            out.push_back(Value::zero(t));
        return out;
    };
}

ImportStubs ImportStubs::standard()
{
    ImportStubs stubs;
    stubs.add("env", "emit", capture_output());
    stubs.fallback = trap_on_call();
    return stubs;
}

class Machine
{
public:
    Machine(Instance& inst, std::uint64_t fuel) : inst_{inst}, m_{*inst.module_}, fuel_{fuel}
    {
        imported_ = m_.imported_function_count();
        for (std::uint32_t f = 0; f < m_.function_count(); ++f)
            types_.push_back(&m_.function_type(f));
        stack_.reserve(1024);
    }

    std::uint64_t fuel_left() const { return fuel_; }

    std::vector<Value> call(std::uint32_t func, std::span<const Value> args)
    {
        for (const auto& a : args)
            stack_.push_back(a.bits);
        execute(func, 0);
        const auto& results = types_[func]->results;
        std::vector<Value> out(results.size());
        for (std::size_t i = results.size(); i-- > 0;)
            out[i] = {results[i], pop()};
        return out;
    }

private:
    struct Label
    {
        std::uint32_t target;
        std::uint32_t arity;
        std::size_t height;
    };

    std::uint64_t pop()
    {
        const auto v = stack_.back();
        stack_.pop_back();
        return v;
    }
    void push(std::uint64_t v) { stack_.push_back(v); }

    std::uint32_t pop_u32() { return static_cast<std::uint32_t>(pop()); }
    std::int32_t pop_i32() { return static_cast<std::int32_t>(pop_u32()); }
    void push_u32(std::uint32_t v) { push(v); }
    void push_i32(std::int32_t v) { push(static_cast<std::uint32_t>(v)); }
    void push_bool(bool b) { push(b ? 1 : 0); }

    std::uint8_t* address(std::uint32_t base, std::uint32_t offset, unsigned width)
    {
        const std::uint64_t ea = static_cast<std::uint64_t>(base) + offset;
        if (ea + width > inst_.memory.size())
            trap(TrapKind::memory_out_of_bounds);
        return inst_.memory.data() + ea;
    }

    std::uint64_t load_raw(std::uint32_t base, std::uint32_t offset, unsigned width)
    {
        std::uint64_t v = 0;
        std::memcpy(&v, address(base, offset, width), width);  // little-endian host
        return v;
    }

    void store_raw(std::uint32_t base, std::uint32_t offset, unsigned width, std::uint64_t v)
    {
        std::memcpy(address(base, offset, width), &v, width);
    }

    void call_host(std::uint32_t func)
    {
        const auto& type = *types_[func];
        std::vector<Value> args(type.params.size());
        for (std::size_t i = args.size(); i-- > 0;)
            args[i] = {type.params[i], pop()};
        auto result = inst_.host_functions_[func](args, inst_);
        if (const auto* kind = std::get_if<TrapKind>(&result))
            trap(*kind);
        for (const auto& v : std::get<std::vector<Value>>(result))
            push(v.bits);
    }

    void call_indirect(std::uint32_t type_index, unsigned depth)
    {
        const auto slot = pop_u32();
        if (slot >= inst_.table.size())
            trap(TrapKind::undefined_element);
        const auto entry = inst_.table[slot];
        if (!entry)
            trap(TrapKind::uninitialized_element);
        if (*types_[*entry] != m_.types[type_index])
            trap(TrapKind::indirect_call_type_mismatch);
        execute(*entry, depth + 1);
    }

    void execute(std::uint32_t func, unsigned depth);

    Instance& inst_;
    const Module& m_;
    std::uint64_t fuel_;
    std::uint32_t imported_ = 0;
    std::vector<const FuncType*> types_;
    std::vector<std::uint64_t> stack_;
    std::vector<std::uint64_t> locals_;
    std::vector<Label> labels_;

    friend ExecResult invoke(Instance&, std::uint32_t, std::span<const Value>, std::uint64_t);
};

void Machine::execute(std::uint32_t func, unsigned depth)
{
    if (depth >= max_call_depth)
        trap(TrapKind::stack_exhausted);
    if (func < imported_)
    {
        call_host(func);
        return;
    }

    const auto& cf = inst_.compiled_[func - imported_];
    const auto& body = m_.code[func - imported_].body;
    const auto& type = *types_[func];

    const auto local_base = locals_.size();
    locals_.resize(local_base + cf.locals.size(), 0);
    for (std::size_t i = cf.param_count; i-- > 0;)
        locals_[local_base + i] = pop();

    const auto label_base = labels_.size();
    const auto body_end = static_cast<std::uint32_t>(body.size());
    labels_.push_back({body_end, static_cast<std::uint32_t>(type.results.size()), stack_.size()});

    auto branch = [&](std::uint32_t label_depth) -> std::uint32_t {
        const auto label = labels_[labels_.size() - 1 - label_depth];
        if (label.arity != 0)
            stack_[label.height] = stack_.back();
        stack_.resize(label.height + label.arity);
        labels_.resize(labels_.size() - 1 - label_depth);
        return label.target;
    };

    std::uint32_t pc = 0;
    while (pc < body_end)
    {
        if (fuel_ == 0)
            throw OutOfFuel{};
        --fuel_;
        if (inst_.observer)
            inst_.observer(
                func, pc, depth, std::span<const std::uint64_t>{locals_}.subspan(local_base, cf.locals.size()));

        const Instr& in = body[pc];
        using O = Opcode;
        switch (in.op)
        {
        case O::unreachable:
            trap(TrapKind::unreachable);
        case O::nop:
            break;
        case O::block:
            labels_.push_back({cf.end_of[pc] + 1, in.block_type ? 1u : 0u, stack_.size()});
            break;
        case O::loop:
            labels_.push_back({pc, 0, stack_.size()});
            break;
        case O::if_:
        {
            const auto cond = pop_u32();
            labels_.push_back({cf.end_of[pc] + 1, in.block_type ? 1u : 0u, stack_.size()});
            if (cond == 0)
            {
                const auto alt = cf.else_of[pc];
                pc = body[alt].op == O::else_ ? alt + 1 : alt;
                continue;
            }
            break;
        }
        case O::else_:
            // Reached at the end of the then-arm.
            pc = cf.end_of[pc];
            continue;
        case O::end:
            labels_.pop_back();
            break;
        case O::br:
            pc = branch(in.index);
            continue;
        case O::br_if:
            if (pop_u32() != 0)
            {
                pc = branch(in.index);
                continue;
            }
            break;
        case O::br_table:
        {
            const auto i = pop_u32();
            pc = branch(i < in.targets.size() ? in.targets[i] : in.index);
            continue;
        }
        case O::return_:
            pc = branch(static_cast<std::uint32_t>(labels_.size() - 1 - label_base));
            continue;
        case O::call:
            execute(in.index, depth + 1);
            break;
        case O::call_indirect:
            call_indirect(in.index, depth);
            break;
        case O::drop:
            pop();
            break;
        case O::select:
        {
            const auto c = pop_u32();
            const auto b = pop();
            const auto a = pop();
            push(c != 0 ? a : b);
            break;
        }
        case O::local_get:
            push(locals_[local_base + in.index]);
            break;
        case O::local_set:
            locals_[local_base + in.index] = pop();
            break;
        case O::local_tee:
            locals_[local_base + in.index] = stack_.back();
            break;
        case O::global_get:
            push(inst_.globals[in.index].bits);
            break;
        case O::global_set:
            inst_.globals[in.index].bits = pop();
            break;

        case O::i32_load:
        case O::f32_load:
        case O::i64_load32_u:
            push(load_raw(pop_u32(), in.mem.offset, 4));
            break;
        case O::i64_load:
        case O::f64_load:
            push(load_raw(pop_u32(), in.mem.offset, 8));
            break;
        case O::i32_load8_s:
            push_i32(static_cast<std::int8_t>(load_raw(pop_u32(), in.mem.offset, 1)));
            break;
        case O::i32_load8_u:
        case O::i64_load8_u:
            push(load_raw(pop_u32(), in.mem.offset, 1));
            break;
        case O::i32_load16_s:
            push_i32(static_cast<std::int16_t>(load_raw(pop_u32(), in.mem.offset, 2)));
            break;
        case O::i32_load16_u:
        case O::i64_load16_u:
            push(load_raw(pop_u32(), in.mem.offset, 2));
            break;
        case O::i64_load8_s:
            push(static_cast<std::uint64_t>(
                static_cast<std::int64_t>(static_cast<std::int8_t>(load_raw(pop_u32(), in.mem.offset, 1)))));
            break;
        case O::i64_load16_s:
            push(static_cast<std::uint64_t>(
                static_cast<std::int64_t>(static_cast<std::int16_t>(load_raw(pop_u32(), in.mem.offset, 2)))));
            break;
        case O::i64_load32_s:
            push(static_cast<std::uint64_t>(
                static_cast<std::int64_t>(static_cast<std::int32_t>(load_raw(pop_u32(), in.mem.offset, 4)))));
            break;
        case O::i32_store:
        case O::f32_store:
        case O::i64_store32:
        {
            const auto v = pop();
            store_raw(pop_u32(), in.mem.offset, 4, v);
            break;
        }
        case O::i64_store:
        case O::f64_store:
        {
            const auto v = pop();
            store_raw(pop_u32(), in.mem.offset, 8, v);
            break;
        }
        case O::i32_store8:
        case O::i64_store8:
        {
            const auto v = pop();
            store_raw(pop_u32(), in.mem.offset, 1, v);
            break;
        }
        case O::i32_store16:
        case O::i64_store16:
        {
            const auto v = pop();
            store_raw(pop_u32(), in.mem.offset, 2, v);
            break;
        }
        case O::memory_size:
            push_u32(static_cast<std::uint32_t>(inst_.memory.size() / wasm_page_size));
            break;
        case O::memory_grow:
        {
            const auto delta = pop_u32();
            const auto old_pages = static_cast<std::uint32_t>(inst_.memory.size() / wasm_page_size);
            const std::uint64_t wanted = static_cast<std::uint64_t>(old_pages) + delta;
            const std::uint64_t cap =
                std::min<std::uint64_t>(inst_.memory_max_pages.value_or(65536), interpreter_page_cap);
            if (wanted > cap)
                push_i32(-1);
            else
            {
                inst_.memory.resize(wanted * wasm_page_size, 0);
                push_u32(old_pages);
            }
            break;
        }
        case O::i32_const:
        case O::i64_const:
        case O::f32_const:
        case O::f64_const:
            push(in.value);
            break;

#define UN_I32(OPC, EXPR)           \
    case O::OPC:                    \
    {                               \
        const std::uint32_t a = pop_u32(); \
        push_u32(EXPR);             \
        break;                      \
    }
#define BIN_I32(OPC, EXPR)          \
    case O::OPC:                    \
    {                               \
        const std::uint32_t b = pop_u32(); \
        const std::uint32_t a = pop_u32(); \
        push_u32(EXPR);             \
        break;                      \
    }
#define UN_I64(OPC, EXPR)           \
    case O::OPC:                    \
    {                               \
        const std::uint64_t a = pop(); \
        push(EXPR);                 \
        break;                      \
    }
#define BIN_I64(OPC, EXPR)          \
    case O::OPC:                    \
    {                               \
        const std::uint64_t b = pop(); \
        const std::uint64_t a = pop(); \
        push(EXPR);                 \
        break;                      \
    }
#define UN_F32(OPC, EXPR)                \
    case O::OPC:                         \
    {                                    \
        const float a = f32_of(pop());   \
        push(bits_of(static_cast<float>(EXPR))); \
        break;                           \
    }
#define BIN_F32(OPC, EXPR)               \
    case O::OPC:                         \
    {                                    \
        const float b = f32_of(pop());   \
        const float a = f32_of(pop());   \
        push(bits_of(static_cast<float>(EXPR))); \
        break;                           \
    }
#define UN_F64(OPC, EXPR)                 \
    case O::OPC:                          \
    {                                     \
        const double a = f64_of(pop());   \
        push(bits_of(static_cast<double>(EXPR))); \
        break;                            \
    }
#define BIN_F64(OPC, EXPR)                \
    case O::OPC:                          \
    {                                     \
        const double b = f64_of(pop());   \
        const double a = f64_of(pop());   \
        push(bits_of(static_cast<double>(EXPR))); \
        break;                            \
    }
#define CMP_F32(OPC, EXPR)               \
    case O::OPC:                         \
    {                                    \
        const float b = f32_of(pop());   \
        const float a = f32_of(pop());   \
        push_bool(EXPR);                 \
        break;                           \
    }
#define CMP_F64(OPC, EXPR)                \
    case O::OPC:                          \
    {                                     \
        const double b = f64_of(pop());   \
        const double a = f64_of(pop());   \
        push_bool(EXPR);                  \
        break;                            \
    }

            UN_I32(i32_eqz, a == 0 ? 1u : 0u)
            BIN_I32(i32_eq, a == b)
            BIN_I32(i32_ne, a != b)
            BIN_I32(i32_lt_s, static_cast<std::int32_t>(a) < static_cast<std::int32_t>(b))
            BIN_I32(i32_lt_u, a < b)
            BIN_I32(i32_gt_s, static_cast<std::int32_t>(a) > static_cast<std::int32_t>(b))
            BIN_I32(i32_gt_u, a > b)
            BIN_I32(i32_le_s, static_cast<std::int32_t>(a) <= static_cast<std::int32_t>(b))
            BIN_I32(i32_le_u, a <= b)
            BIN_I32(i32_ge_s, static_cast<std::int32_t>(a) >= static_cast<std::int32_t>(b))
            BIN_I32(i32_ge_u, a >= b)

            UN_I64(i64_eqz, a == 0 ? 1u : 0u)
            BIN_I64(i64_eq, a == b ? 1u : 0u)
            BIN_I64(i64_ne, a != b ? 1u : 0u)
            BIN_I64(i64_lt_s, static_cast<std::int64_t>(a) < static_cast<std::int64_t>(b) ? 1u : 0u)
            BIN_I64(i64_lt_u, a < b ? 1u : 0u)
            BIN_I64(i64_gt_s, static_cast<std::int64_t>(a) > static_cast<std::int64_t>(b) ? 1u : 0u)
            BIN_I64(i64_gt_u, a > b ? 1u : 0u)
            BIN_I64(i64_le_s, static_cast<std::int64_t>(a) <= static_cast<std::int64_t>(b) ? 1u : 0u)
            BIN_I64(i64_le_u, a <= b ? 1u : 0u)
            BIN_I64(i64_ge_s, static_cast<std::int64_t>(a) >= static_cast<std::int64_t>(b) ? 1u : 0u)
            BIN_I64(i64_ge_u, a >= b ? 1u : 0u)

            CMP_F32(f32_eq, a == b)
            CMP_F32(f32_ne, a != b)
            CMP_F32(f32_lt, a < b)
            CMP_F32(f32_gt, a > b)
            CMP_F32(f32_le, a <= b)
            CMP_F32(f32_ge, a >= b)
            CMP_F64(f64_eq, a == b)
            CMP_F64(f64_ne, a != b)
            CMP_F64(f64_lt, a < b)
            CMP_F64(f64_gt, a > b)
            CMP_F64(f64_le, a <= b)
            CMP_F64(f64_ge, a >= b)

            UN_I32(i32_clz, static_cast<std::uint32_t>(std::countl_zero(a)))
            UN_I32(i32_ctz, static_cast<std::uint32_t>(std::countr_zero(a)))
            UN_I32(i32_popcnt, static_cast<std::uint32_t>(std::popcount(a)))
            BIN_I32(i32_add, a + b)
            BIN_I32(i32_sub, a - b)
            BIN_I32(i32_mul, a * b)
        case O::i32_div_s:
        {
            const auto b = pop_i32();
            const auto a = pop_i32();
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            if (a == std::numeric_limits<std::int32_t>::min() && b == -1)
                trap(TrapKind::integer_overflow);
            push_i32(a / b);
            break;
        }
        case O::i32_div_u:
        {
            const auto b = pop_u32();
            const auto a = pop_u32();
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            push_u32(a / b);
            break;
        }
        case O::i32_rem_s:
        {
            const auto b = pop_i32();
            const auto a = pop_i32();
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            push_i32(b == -1 ? 0 : a % b);
            break;
        }
        case O::i32_rem_u:
        {
            const auto b = pop_u32();
            const auto a = pop_u32();
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            push_u32(a % b);
            break;
        }
            BIN_I32(i32_and, a & b)
            BIN_I32(i32_or, a | b)
            BIN_I32(i32_xor, a ^ b)
            BIN_I32(i32_shl, a << (b & 31))
            BIN_I32(i32_shr_s, static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (b & 31)))
            BIN_I32(i32_shr_u, a >> (b & 31))
            BIN_I32(i32_rotl, std::rotl(a, static_cast<int>(b & 31)))
            BIN_I32(i32_rotr, std::rotr(a, static_cast<int>(b & 31)))

            UN_I64(i64_clz, static_cast<std::uint64_t>(std::countl_zero(a)))
            UN_I64(i64_ctz, static_cast<std::uint64_t>(std::countr_zero(a)))
            UN_I64(i64_popcnt, static_cast<std::uint64_t>(std::popcount(a)))
            BIN_I64(i64_add, a + b)
            BIN_I64(i64_sub, a - b)
            BIN_I64(i64_mul, a * b)
        case O::i64_div_s:
        {
            const auto b = static_cast<std::int64_t>(pop());
            const auto a = static_cast<std::int64_t>(pop());
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            if (a == std::numeric_limits<std::int64_t>::min() && b == -1)
                trap(TrapKind::integer_overflow);
            push(static_cast<std::uint64_t>(a / b));
            break;
        }
        case O::i64_div_u:
        {
            const auto b = pop();
            const auto a = pop();
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            push(a / b);
            break;
        }
        case O::i64_rem_s:
        {
            const auto b = static_cast<std::int64_t>(pop());
            const auto a = static_cast<std::int64_t>(pop());
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            push(static_cast<std::uint64_t>(b == -1 ? 0 : a % b));
            break;
        }
        case O::i64_rem_u:
        {
            const auto b = pop();
            const auto a = pop();
            if (b == 0)
                trap(TrapKind::integer_divide_by_zero);
            push(a % b);
            break;
        }
            BIN_I64(i64_and, a & b)
            BIN_I64(i64_or, a | b)
            BIN_I64(i64_xor, a ^ b)
            BIN_I64(i64_shl, a << (b & 63))
            BIN_I64(i64_shr_s, static_cast<std::uint64_t>(static_cast<std::int64_t>(a) >> (b & 63)))
            BIN_I64(i64_shr_u, a >> (b & 63))
            BIN_I64(i64_rotl, std::rotl(a, static_cast<int>(b & 63)))
            BIN_I64(i64_rotr, std::rotr(a, static_cast<int>(b & 63)))

        case O::f32_abs:
            push(pop() & 0x7FFFFFFFu);
            break;
        case O::f32_neg:
            push((pop() ^ 0x80000000u) & 0xFFFFFFFFu);
            break;
            UN_F32(f32_ceil, std::ceil(a))
            UN_F32(f32_floor, std::floor(a))
            UN_F32(f32_trunc, std::trunc(a))
            UN_F32(f32_nearest, std::nearbyint(a))
            UN_F32(f32_sqrt, std::sqrt(a))
            BIN_F32(f32_add, a + b)
            BIN_F32(f32_sub, a - b)
            BIN_F32(f32_mul, a * b)
            BIN_F32(f32_div, a / b)
            BIN_F32(f32_min, wasm_min(a, b))
            BIN_F32(f32_max, wasm_max(a, b))
        case O::f32_copysign:
        {
            const auto b = pop();
            const auto a = pop();
            push((a & 0x7FFFFFFFu) | (b & 0x80000000u));
            break;
        }
        case O::f64_abs:
            push(pop() & 0x7FFFFFFFFFFFFFFFull);
            break;
        case O::f64_neg:
            push(pop() ^ 0x8000000000000000ull);
            break;
            UN_F64(f64_ceil, std::ceil(a))
            UN_F64(f64_floor, std::floor(a))
            UN_F64(f64_trunc, std::trunc(a))
            UN_F64(f64_nearest, std::nearbyint(a))
            UN_F64(f64_sqrt, std::sqrt(a))
            BIN_F64(f64_add, a + b)
            BIN_F64(f64_sub, a - b)
            BIN_F64(f64_mul, a * b)
            BIN_F64(f64_div, a / b)
            BIN_F64(f64_min, wasm_min(a, b))
            BIN_F64(f64_max, wasm_max(a, b))
        case O::f64_copysign:
        {
            const auto b = pop();
            const auto a = pop();
            push((a & 0x7FFFFFFFFFFFFFFFull) | (b & 0x8000000000000000ull));
            break;
        }

        case O::i32_wrap_i64:
            push(pop() & 0xFFFFFFFFu);
            break;
        case O::i32_trunc_f32_s:
            push_i32(trunc_i32_s(f32_of(pop())));
            break;
        case O::i32_trunc_f32_u:
            push_u32(trunc_i32_u(f32_of(pop())));
            break;
        case O::i32_trunc_f64_s:
            push_i32(trunc_i32_s(f64_of(pop())));
            break;
        case O::i32_trunc_f64_u:
            push_u32(trunc_i32_u(f64_of(pop())));
            break;
        case O::i64_extend_i32_s:
            push(static_cast<std::uint64_t>(static_cast<std::int64_t>(pop_i32())));
            break;
        case O::i64_extend_i32_u:
            push(pop_u32());
            break;
        case O::i64_trunc_f32_s:
            push(static_cast<std::uint64_t>(trunc_i64_s(f32_of(pop()))));
            break;
        case O::i64_trunc_f32_u:
            push(trunc_i64_u(f32_of(pop())));
            break;
        case O::i64_trunc_f64_s:
            push(static_cast<std::uint64_t>(trunc_i64_s(f64_of(pop()))));
            break;
        case O::i64_trunc_f64_u:
            push(trunc_i64_u(f64_of(pop())));
            break;
        case O::f32_convert_i32_s:
            push(bits_of(static_cast<float>(pop_i32())));
            break;
        case O::f32_convert_i32_u:
            push(bits_of(static_cast<float>(pop_u32())));
            break;
        case O::f32_convert_i64_s:
            push(bits_of(static_cast<float>(static_cast<std::int64_t>(pop()))));
            break;
        case O::f32_convert_i64_u:
            push(bits_of(static_cast<float>(pop())));
            break;
        case O::f32_demote_f64:
            push(bits_of(static_cast<float>(f64_of(pop()))));
            break;
        case O::f64_convert_i32_s:
            push(bits_of(static_cast<double>(pop_i32())));
            break;
        case O::f64_convert_i32_u:
            push(bits_of(static_cast<double>(pop_u32())));
            break;
        case O::f64_convert_i64_s:
            push(bits_of(static_cast<double>(static_cast<std::int64_t>(pop()))));
            break;
        case O::f64_convert_i64_u:
            push(bits_of(static_cast<double>(pop())));
            break;
        case O::f64_promote_f32:
            push(bits_of(static_cast<double>(f32_of(pop()))));
            break;
        case O::i32_reinterpret_f32:
        case O::i64_reinterpret_f64:
        case O::f32_reinterpret_i32:
        case O::f64_reinterpret_i64:
            break;

#undef UN_I32
#undef BIN_I32
#undef UN_I64
#undef BIN_I64
#undef UN_F32
#undef BIN_F32
#undef UN_F64
#undef BIN_F64
#undef CMP_F32
#undef CMP_F64
        }
        ++pc;
    }

    labels_.resize(label_base);
    locals_.resize(local_base);
}

namespace
{
Value eval_const(const InstrSeq& expr, const std::vector<Value>& globals)
{
    const auto& i = expr.at(0);
    switch (i.op)
    {
    case Opcode::i32_const:
        return {ValType::i32, i.value};
    case Opcode::i64_const:
        return {ValType::i64, i.value};
    case Opcode::f32_const:
        return {ValType::f32, i.value};
    case Opcode::f64_const:
        return {ValType::f64, i.value};
    case Opcode::global_get:
        return globals.at(i.index);
    default:
        throw LinkError{"unsupported constant expression"};
    }
}

void run_start(Instance& inst, std::uint32_t func, std::uint64_t fuel);
}  // namespace

Instance instantiate(const Module& m, const ImportStubs& stubs, std::uint64_t fuel)
{
    Instance inst;
    inst.module_ = std::make_shared<const Module>(m);
    const Module& mod = *inst.module_;

    for (const auto& imp : mod.imports)
    {
        if (imp.kind != ExternKind::function)
            throw LinkError{"unsupported import kind for " + imp.module + "." + imp.name};
        const auto it = stubs.functions.find({imp.module, imp.name});
        if (it != stubs.functions.end())
            inst.host_functions_.push_back(it->second);
        else if (stubs.fallback)
            inst.host_functions_.push_back(*stubs.fallback);
        else
            throw LinkError{"unmatched import " + imp.module + "." + imp.name};
    }

    for (const auto& g : mod.globals)
        inst.globals.push_back(eval_const(g.init, inst.globals));

    if (!mod.memories.empty())
    {
        const auto& lim = mod.memories.front();
        if (lim.min > interpreter_page_cap)
            throw LinkError{"initial memory exceeds the interpreter cap"};
        inst.memory.assign(static_cast<std::size_t>(lim.min) * wasm_page_size, 0);
        inst.memory_max_pages = lim.max;
    }
    if (!mod.tables.empty())
        inst.table.assign(mod.tables.front().limits.min, std::nullopt);

    const auto imported = mod.imported_function_count();
    for (std::uint32_t i = 0; i < mod.code.size(); ++i)
    {
        const auto& body = mod.code[i].body;
        Instance::CompiledFunction cf;
        cf.locals = mod.local_types(imported + i);
        cf.param_count = static_cast<std::uint32_t>(mod.function_type(imported + i).params.size());
        cf.end_of.assign(body.size(), 0);
        cf.else_of.assign(body.size(), 0);
        std::vector<std::uint32_t> open;
        for (std::uint32_t pc = 0; pc < body.size(); ++pc)
        {
            const auto op = body[pc].op;
            if (op == Opcode::block || op == Opcode::loop || op == Opcode::if_)
                open.push_back(pc);
            else if (op == Opcode::else_ && !open.empty())
            {
                cf.else_of[open.back()] = pc;
                cf.end_of[pc] = open.back();  // patched below to the end
            }
            else if (op == Opcode::end && !open.empty())
            {
                const auto start = open.back();
                open.pop_back();
                cf.end_of[start] = pc;
                if (body[start].op == Opcode::if_)
                {
                    if (cf.else_of[start] == 0)
                        cf.else_of[start] = pc;
                    else
                        cf.end_of[cf.else_of[start]] = pc;
                }
            }
        }
        inst.compiled_.push_back(std::move(cf));
    }

    // MVP semantics: bounds-check every segment before writing any.
    std::vector<std::uint32_t> elem_offsets;
    for (const auto& seg : mod.elems)
    {
        const auto off = eval_const(seg.offset, inst.globals).bits & 0xFFFFFFFFu;
        if (off + seg.functions.size() > inst.table.size())
            throw InstantiationTrap{TrapKind::undefined_element};
        elem_offsets.push_back(static_cast<std::uint32_t>(off));
    }
    std::vector<std::uint32_t> data_offsets;
    for (const auto& seg : mod.data)
    {
        const auto off = eval_const(seg.offset, inst.globals).bits & 0xFFFFFFFFu;
        if (off + seg.bytes.size() > inst.memory.size())
            throw InstantiationTrap{TrapKind::memory_out_of_bounds};
        data_offsets.push_back(static_cast<std::uint32_t>(off));
    }
    for (std::size_t i = 0; i < mod.elems.size(); ++i)
        for (std::size_t j = 0; j < mod.elems[i].functions.size(); ++j)
            inst.table[elem_offsets[i] + j] = mod.elems[i].functions[j];
    for (std::size_t i = 0; i < mod.data.size(); ++i)
        std::copy(mod.data[i].bytes.begin(), mod.data[i].bytes.end(),
            inst.memory.begin() + data_offsets[i]);

    if (mod.start)
        run_start(inst, *mod.start, fuel);
    return inst;
}

namespace
{
void run_start(Instance& inst, std::uint32_t func, std::uint64_t fuel)
{
    const auto r = invoke(inst, func, {}, fuel);
    if (r.status == ExecResult::Status::trap)
        throw InstantiationTrap{r.trap};
    if (r.status == ExecResult::Status::fuel_exhausted)
        throw OutOfFuel{};
}
}  // namespace

ExecResult invoke(Instance& inst, std::uint32_t func, std::span<const Value> args, std::uint64_t fuel)
{
    const auto& type = inst.module().function_type(func);
    if (args.size() != type.params.size())
        throw std::invalid_argument{"argument count mismatch"};
    for (std::size_t i = 0; i < args.size(); ++i)
        if (args[i].type != type.params[i])
            throw std::invalid_argument{"argument " + std::to_string(i) + " has the wrong type"};

    Machine machine{inst, fuel};
    ExecResult r;
    try
    {
        r.values = machine.call(func, args);
        r.status = ExecResult::Status::ok;
    }
    catch (const Trap& t)
    {
        r.status = ExecResult::Status::trap;
        r.trap = t.kind;
    }
    catch (const OutOfFuel&)
    {
        r.status = ExecResult::Status::fuel_exhausted;
    }
    r.steps = fuel - machine.fuel_left();
    inst.steps += r.steps;
    return r;
}

ExecResult invoke(Instance& inst, std::string_view export_name, std::span<const Value> args,
    std::uint64_t fuel)
{
    for (const auto& e : inst.module().exports)
        if (e.kind == ExternKind::function && e.name == export_name)
            return invoke(inst, e.index, args, fuel);
    throw std::invalid_argument{"no exported function '" + std::string{export_name} + "'"};
}

namespace
{
struct Observation
{
    enum class Kind : std::uint8_t
    {
        link_error,
        instantiation_trap,
        ran,
    };
    Kind kind = Kind::ran;
    TrapKind instantiation_trap = TrapKind::unreachable;
    ExecResult result;
    std::vector<Value> output;
    std::string link_message;
    std::uint64_t steps = 0;
};

Observation observe(const Module& m, const std::string& entry, const std::vector<Value>& args,
    const DifferentialOptions& options)
{
    Observation o;
    try
    {
        auto inst = instantiate(m, options.stubs, options.fuel);
        const auto start_steps = inst.steps;
        o.result = invoke(inst, entry, args, options.fuel);
        o.output = inst.output;
        o.steps = start_steps + o.result.steps;
    }
    catch (const InstantiationTrap& t)
    {
        o.kind = Observation::Kind::instantiation_trap;
        o.instantiation_trap = t.kind;
    }
    catch (const OutOfFuel&)
    {
        o.result.status = ExecResult::Status::fuel_exhausted;
    }
    catch (const LinkError& e)
    {
        o.kind = Observation::Kind::link_error;
        o.link_message = e.what();
    }
    return o;
}

bool same_values(const std::vector<Value>& a, const std::vector<Value>& b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!equivalent(a[i], b[i]))
            return false;
    return true;
}

std::string describe(const Observation& o)
{
    switch (o.kind)
    {
    case Observation::Kind::link_error:
        return "link error (" + o.link_message + ")";
    case Observation::Kind::instantiation_trap:
        return "instantiation trap: " + std::string{to_string(o.instantiation_trap)};
    case Observation::Kind::ran:
        break;
    }
    switch (o.result.status)
    {
    case ExecResult::Status::trap:
        return "trap: " + std::string{to_string(o.result.trap)};
    case ExecResult::Status::fuel_exhausted:
        return "fuel exhausted";
    case ExecResult::Status::ok:
        break;
    }
    std::string s = "values [";
    for (std::size_t i = 0; i < o.result.values.size(); ++i)
        s += (i ? ", " : "") + to_string(o.result.values[i]);
    s += "] output [";
    for (std::size_t i = 0; i < o.output.size(); ++i)
        s += (i ? ", " : "") + to_string(o.output[i]);
    return s + "]";
}
}  // namespace

DifferentialVerdict differential_check(const Module& original, const Module& obfuscated,
    const std::string& entry, std::span<const std::vector<Value>> arg_vectors,
    const DifferentialOptions& options)
{
    DifferentialVerdict verdict;
    const auto& obf_entry = options.renamed_entry ? *options.renamed_entry : entry;
    for (std::size_t i = 0; i < arg_vectors.size(); ++i)
    {
        const auto a = observe(original, entry, arg_vectors[i], options);
        const auto b = observe(obfuscated, obf_entry, arg_vectors[i], options);
        verdict.steps_original += a.steps;
        verdict.steps_obfuscated += b.steps;

        const bool fuel_out = (a.kind == Observation::Kind::ran &&
                                  a.result.status == ExecResult::Status::fuel_exhausted) ||
                              (b.kind == Observation::Kind::ran &&
                                  b.result.status == ExecResult::Status::fuel_exhausted);
        if (fuel_out)
        {
            verdict.outcome = DifferentialVerdict::Outcome::inconclusive;
            verdict.vector_index = i;
            verdict.detail = "fuel exhausted: original " + describe(a) + "; obfuscated " + describe(b);
            return verdict;
        }

        bool same = a.kind == b.kind;
        if (same && a.kind == Observation::Kind::instantiation_trap)
            same = a.instantiation_trap == b.instantiation_trap;
        if (same && a.kind == Observation::Kind::ran)
        {
            same = a.result.status == b.result.status && same_values(a.output, b.output);
            if (same && a.result.status == ExecResult::Status::trap)
                same = a.result.trap == b.result.trap;
            if (same && a.result.status == ExecResult::Status::ok)
                same = same_values(a.result.values, b.result.values);
        }
        if (!same)
        {
            verdict.outcome = DifferentialVerdict::Outcome::divergent;
            verdict.vector_index = i;
            verdict.detail = "original " + describe(a) + "; obfuscated " + describe(b);
            return verdict;
        }
    }
    return verdict;
}
}  // namespace wasmveil
