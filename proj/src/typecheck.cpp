#include "wasmveil/analysis.hpp"
#include "wasmveil/errors.hpp"
#include <set>
#include <string>

namespace wasmveil
{
namespace
{
constexpr std::uint32_t max_memory_pages = 65536;

std::string slot_name(StackSlot s)
{
    return s ? std::string{to_string(*s)} : std::string{"unknown"};
}

/// Index spaces needed to type instructions, resolved once per module.
struct ModuleIndex
{
    const Module* module = nullptr;
    std::vector<std::uint32_t> function_types;
    std::vector<GlobalType> globals;
    bool has_memory = false;
    bool has_table = false;

    explicit ModuleIndex(const Module& m) : module{&m}
    {
        for (const auto& imp : m.imports)
        {
            if (imp.kind == ExternKind::function)
                function_types.push_back(imp.type_index);
            else if (imp.kind == ExternKind::global)
                globals.push_back(imp.global);
        }
        function_types.insert(function_types.end(), m.functions.begin(), m.functions.end());
        for (const auto& g : m.globals)
            globals.push_back(g.type);
        has_memory = m.memory_count() > 0;
        has_table = m.table_count() > 0;
    }
};

/// Incremental implementation of the core validation algorithm.
class TypeChecker
{
public:
    TypeChecker(const ModuleIndex& index, const std::vector<ValType>& locals,
        const std::vector<ValType>& results, const StackState& entry)
      : index_{index}, locals_{locals}
    {
        std::optional<ValType> result;
        if (!results.empty())
            result = results.front();
        vals_ = entry.types;
        ctrls_.push_back({BlockKind::function_body, result, 0, entry.polymorphic});
    }

    bool finished() const { return ctrls_.empty(); }

    StackState state() const
    {
        return {vals_, !ctrls_.empty() && ctrls_.back().unreachable};
    }

    void step(const Instr& ins)
    {
        if (ctrls_.empty())
            fail("instruction after the end of the function");

        using O = Opcode;
        switch (ins.op)
        {
        case O::unreachable:
            set_unreachable();
            return;
        case O::nop:
            return;
        case O::block:
            push_ctrl(BlockKind::block, ins.block_type);
            return;
        case O::loop:
            push_ctrl(BlockKind::loop, ins.block_type);
            return;
        case O::if_:
            pop_expect(ValType::i32);
            push_ctrl(BlockKind::if_, ins.block_type);
            ctrls_.back().in_then = true;
            return;
        case O::else_:
        {
            if (ctrls_.back().kind != BlockKind::if_ || !ctrls_.back().in_then)
                fail("else without matching if");
            const auto frame = pop_ctrl();
            push_ctrl(BlockKind::if_, frame.result);
            return;
        }
        case O::end:
        {
            const auto frame = pop_ctrl();
            if (frame.kind == BlockKind::if_ && frame.in_then && frame.result)
                fail("if with a result type requires an else arm");
            if (frame.result)
                vals_.push_back(*frame.result);
            return;
        }
        case O::br:
            pop_label(label(ins.index));
            set_unreachable();
            return;
        case O::br_if:
        {
            pop_expect(ValType::i32);
            const auto types = label(ins.index);
            pop_label(types);
            if (types)
                vals_.push_back(*types);
            return;
        }
        case O::br_table:
        {
            pop_expect(ValType::i32);
            const auto arity = label(ins.index);
            for (const auto t : ins.targets)
                if (label(t) != arity)
                    fail("br_table targets have inconsistent label types");
            pop_label(arity);
            set_unreachable();
            return;
        }
        case O::return_:
            pop_label(ctrls_.front().result);
            set_unreachable();
            return;
        case O::call:
        {
            if (ins.index >= index_.function_types.size())
                fail("call to unknown function " + std::to_string(ins.index));
            apply(index_.module->types.at(index_.function_types[ins.index]));
            return;
        }
        case O::call_indirect:
        {
            if (!index_.has_table)
                fail("call_indirect requires a table");
            if (ins.index >= index_.module->types.size())
                fail("call_indirect with unknown type " + std::to_string(ins.index));
            pop_expect(ValType::i32);
            apply(index_.module->types[ins.index]);
            return;
        }
        case O::drop:
            pop_any();
            return;
        case O::select:
        {
            pop_expect(ValType::i32);
            const auto t1 = pop_any();
            const auto t2 = pop_any();
            if (t1 && t2 && t1 != t2)
                fail("select operands differ: " + slot_name(t1) + " vs " + slot_name(t2));
            vals_.push_back(t1 ? t1 : t2);
            return;
        }
        case O::local_get:
            vals_.push_back(local(ins.index));
            return;
        case O::local_set:
            pop_expect(local(ins.index));
            return;
        case O::local_tee:
        {
            const auto t = local(ins.index);
            pop_expect(t);
            vals_.push_back(t);
            return;
        }
        case O::global_get:
            vals_.push_back(global(ins.index).type);
            return;
        case O::global_set:
        {
            const auto g = global(ins.index);
            if (!g.is_mutable)
                fail("global.set of immutable global " + std::to_string(ins.index));
            pop_expect(g.type);
            return;
        }
        default:
            break;
        }

        if (is_memory_access(ins.op) || ins.op == O::memory_size || ins.op == O::memory_grow)
        {
            if (!index_.has_memory)
                fail(std::string{opcode_name(ins.op)} + " requires a memory");
            if (is_memory_access(ins.op))
            {
                const auto width = memory_access_shape(ins.op).width;
                if (ins.mem.align >= 32 || (1u << ins.mem.align) > width)
                    fail("alignment 2^" + std::to_string(ins.mem.align) +
                         " exceeds natural alignment of " + std::string{opcode_name(ins.op)});
            }
        }

        const auto sig = fixed_signature(ins.op);
        if (!sig)
            fail("unsupported opcode " + std::string{opcode_name(ins.op)});
        for (int i = sig->param_count - 1; i >= 0; --i)
            pop_expect(sig->params[i]);
        if (sig->result)
            vals_.push_back(*sig->result);
    }

    [[noreturn]] static void fail(const std::string& msg) { throw TypeError{msg}; }

private:
    struct Frame
    {
        BlockKind kind;
        std::optional<ValType> result;
        std::size_t height;
        bool unreachable;
        bool in_then = false;
    };

    void push_ctrl(BlockKind kind, std::optional<ValType> result)
    {
        ctrls_.push_back({kind, result, vals_.size(), false});
    }

    Frame pop_ctrl()
    {
        const auto frame = ctrls_.back();
        if (frame.result)
            pop_expect(*frame.result);
        if (vals_.size() != frame.height)
            fail("type mismatch: " + std::to_string(vals_.size() - frame.height) +
                 " extra value(s) on the stack at end of block");
        ctrls_.pop_back();
        return frame;
    }

    void set_unreachable()
    {
        vals_.resize(ctrls_.back().height);
        ctrls_.back().unreachable = true;
    }

    StackSlot pop_any()
    {
        const auto& frame = ctrls_.back();
        if (vals_.size() == frame.height)
        {
            if (frame.unreachable)
                return std::nullopt;
            fail("type mismatch: operand stack underflow");
        }
        const auto t = vals_.back();
        vals_.pop_back();
        return t;
    }

    void pop_expect(StackSlot expected)
    {
        const auto actual = pop_any();
        if (actual && expected && actual != expected)
            fail("type mismatch: expected " + slot_name(expected) + ", got " + slot_name(actual));
    }

    /// Label type of the frame `depth` levels out; loops carry no values.
    std::optional<ValType> label(std::uint32_t depth) const
    {
        if (depth >= ctrls_.size())
            fail("branch depth " + std::to_string(depth) + " exceeds nesting");
        const auto& frame = ctrls_[ctrls_.size() - 1 - depth];
        return frame.kind == BlockKind::loop ? std::nullopt : frame.result;
    }

    void pop_label(std::optional<ValType> types)
    {
        if (types)
            pop_expect(*types);
    }

    void apply(const FuncType& type)
    {
        for (auto it = type.params.rbegin(); it != type.params.rend(); ++it)
            pop_expect(*it);
        for (const auto r : type.results)
            vals_.push_back(r);
    }

    ValType local(std::uint32_t idx) const
    {
        if (idx >= locals_.size())
            fail("local index " + std::to_string(idx) + " out of range");
        return locals_[idx];
    }

    GlobalType global(std::uint32_t idx) const
    {
        if (idx >= index_.globals.size())
            fail("global index " + std::to_string(idx) + " out of range");
        return index_.globals[idx];
    }

    const ModuleIndex& index_;
    const std::vector<ValType>& locals_;
    std::vector<StackSlot> vals_;
    std::vector<Frame> ctrls_;
};

std::vector<InstrStates> run_states(std::span<const Instr> body, const ModuleIndex& index,
    const FuncContext& ctx, const StackState& entry)
{
    TypeChecker tc{index, ctx.locals, ctx.results, entry};
    std::vector<InstrStates> states;
    states.reserve(body.size());
    for (std::size_t i = 0; i < body.size(); ++i)
    {
        InstrStates s;
        s.pre = tc.state();
        try
        {
            tc.step(body[i]);
        }
        catch (const TypeError& e)
        {
            throw TypeError{"instruction " + std::to_string(i) + " (" +
                            std::string{opcode_name(body[i].op)} + "): " + e.what()};
        }
        s.post = tc.state();
        states.push_back(std::move(s));
    }
    return states;
}

class ModuleValidator
{
public:
    explicit ModuleValidator(const Module& m) : m_{m}, index_{m} {}

    ValidationReport run()
    {
        check_imports();
        check_declarations();
        check_exports();
        check_start();
        check_segments();
        check_code();
        return std::move(report_);
    }

private:
    void error(std::string msg)
    {
        report_.errors.push_back({std::nullopt, std::nullopt, std::move(msg)});
    }

    void check_limits(const Limits& l, std::optional<std::uint32_t> cap, const std::string& what)
    {
        if (l.max && *l.max < l.min)
            error(what + " limits: max below min");
        if (cap && (l.min > *cap || (l.max && *l.max > *cap)))
            error(what + " limits exceed " + std::to_string(*cap) + " pages");
    }

    void check_imports()
    {
        for (const auto& imp : m_.imports)
        {
            const auto what = "import " + imp.module + "." + imp.name;
            switch (imp.kind)
            {
            case ExternKind::function:
                if (imp.type_index >= m_.types.size())
                    error(what + ": type index out of range");
                break;
            case ExternKind::table:
                check_limits(imp.table.limits, std::nullopt, what);
                break;
            case ExternKind::memory:
                check_limits(imp.memory, max_memory_pages, what);
                break;
            case ExternKind::global:
                break;
            }
        }
    }

    void check_declarations()
    {
        if (m_.functions.size() != m_.code.size())
            error("function and code section counts differ");
        for (std::size_t i = 0; i < m_.functions.size(); ++i)
            if (m_.functions[i] >= m_.types.size())
                error("function " + std::to_string(m_.imported_function_count() + i) +
                      ": type index out of range");
        if (m_.table_count() > 1)
            error("multiple tables");
        if (m_.memory_count() > 1)
            error("multiple memories");
        for (const auto& t : m_.tables)
            check_limits(t.limits, std::nullopt, "table");
        for (const auto& mem : m_.memories)
            check_limits(mem, max_memory_pages, "memory");

        const auto imported_globals = m_.imported_global_count();
        for (std::size_t i = 0; i < m_.globals.size(); ++i)
            check_const_expr(m_.globals[i].init, m_.globals[i].type.type,
                "global " + std::to_string(imported_globals + i), imported_globals);
    }

    void check_const_expr(const InstrSeq& expr, ValType expected, const std::string& what,
        std::uint32_t visible_globals)
    {
        if (expr.size() != 2 || expr[1].op != Opcode::end)
        {
            error(what + ": constant expression must be a single instruction");
            return;
        }
        const auto& i = expr[0];
        std::optional<ValType> produced;
        switch (i.op)
        {
        case Opcode::i32_const:
            produced = ValType::i32;
            break;
        case Opcode::i64_const:
            produced = ValType::i64;
            break;
        case Opcode::f32_const:
            produced = ValType::f32;
            break;
        case Opcode::f64_const:
            produced = ValType::f64;
            break;
        case Opcode::global_get:
            if (i.index >= visible_globals)
            {
                error(what + ": constant expression may only read imported globals");
                return;
            }
            if (index_.globals[i.index].is_mutable)
            {
                error(what + ": constant expression reads a mutable global");
                return;
            }
            produced = index_.globals[i.index].type;
            break;
        default:
            error(what + ": non-constant instruction " + std::string{opcode_name(i.op)});
            return;
        }
        if (produced != expected)
            error(what + ": constant expression has type " + std::string{to_string(*produced)} +
                  ", expected " + std::string{to_string(expected)});
    }

    void check_exports()
    {
        std::set<std::string> names;
        for (const auto& e : m_.exports)
        {
            if (!names.insert(e.name).second)
                error("duplicate export name '" + e.name + "'");
            std::uint32_t bound = 0;
            switch (e.kind)
            {
            case ExternKind::function:
                bound = m_.function_count();
                break;
            case ExternKind::table:
                bound = m_.table_count();
                break;
            case ExternKind::memory:
                bound = m_.memory_count();
                break;
            case ExternKind::global:
                bound = m_.global_count();
                break;
            }
            if (e.index >= bound)
                error("export '" + e.name + "' index out of range");
        }
    }

    void check_start()
    {
        if (!m_.start)
            return;
        if (*m_.start >= index_.function_types.size())
        {
            error("start function index out of range");
            return;
        }
        const auto& t = m_.types.at(index_.function_types[*m_.start]);
        if (!t.params.empty() || !t.results.empty())
            error("start function must have type [] -> []");
    }

    void check_segments()
    {
        const auto globals = m_.imported_global_count();
        for (std::size_t i = 0; i < m_.elems.size(); ++i)
        {
            const auto& seg = m_.elems[i];
            const auto what = "element segment " + std::to_string(i);
            if (seg.table_index >= m_.table_count())
                error(what + ": unknown table");
            check_const_expr(seg.offset, ValType::i32, what, globals);
            for (const auto f : seg.functions)
                if (f >= m_.function_count())
                    error(what + ": function index " + std::to_string(f) + " out of range");
        }
        for (std::size_t i = 0; i < m_.data.size(); ++i)
        {
            const auto& seg = m_.data[i];
            const auto what = "data segment " + std::to_string(i);
            if (seg.memory_index >= m_.memory_count())
                error(what + ": unknown memory");
            check_const_expr(seg.offset, ValType::i32, what, globals);
        }
    }

    void check_code()
    {
        const auto imported = m_.imported_function_count();
        const auto n = std::min(m_.functions.size(), m_.code.size());
        for (std::uint32_t i = 0; i < n; ++i)
        {
            const auto func = imported + i;
            if (m_.functions[i] >= m_.types.size())
                continue;
            const auto ctx = FuncContext::of(m_, func);
            const auto& body = m_.code[i].body;
            TypeChecker tc{index_, ctx.locals, ctx.results, {}};
            std::size_t at = 0;
            try
            {
                for (; at < body.size(); ++at)
                    tc.step(body[at]);
                if (!tc.finished())
                    report_.errors.push_back({func, body.size(), "function body missing end"});
            }
            catch (const TypeError& e)
            {
                report_.errors.push_back({func, at, e.what()});
            }
        }
    }

    const Module& m_;
    ModuleIndex index_;
    ValidationReport report_;
};
}  // namespace

FuncContext FuncContext::of(const Module& m, std::uint32_t func)
{
    FuncContext ctx;
    ctx.module = &m;
    ctx.locals = m.local_types(func);
    ctx.results = m.function_type(func).results;
    return ctx;
}

std::string ValidationError::to_string() const
{
    std::string s;
    if (function)
        s += "function " + std::to_string(*function);
    if (instr)
        s += (s.empty() ? "" : ", ") + std::string{"instruction "} + std::to_string(*instr);
    return s.empty() ? message : s + ": " + message;
}

ValidationReport validate_module(const Module& m)
{
    return ModuleValidator{m}.run();
}

std::vector<InstrStates> compute_stack_states(
    std::span<const Instr> body, const FuncContext& ctx, const StackState& entry)
{
    if (ctx.module == nullptr)
        throw TypeError{"function context without a module"};
    const ModuleIndex index{*ctx.module};
    return run_states(body, index, ctx, entry);
}

std::vector<InstrStates> compute_stack_states(const Module& m, std::uint32_t func)
{
    return compute_stack_states(m.body_of(func).body, FuncContext::of(m, func));
}

std::size_t max_stack_height(
    std::span<const Instr> region, const FuncContext& ctx, const StackState& entry)
{
    std::size_t best = entry.height();
    for (const auto& s : compute_stack_states(region, ctx, entry))
        best = std::max({best, s.pre.height(), s.post.height()});
    return best;
}
}  // namespace wasmveil
