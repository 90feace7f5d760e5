#include "wasmveil/pipeline.hpp"
#include "wasmveil/binary.hpp"
#include "wasmveil/errors.hpp"
#include <json.hpp>
#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>

namespace wasmveil
{
namespace
{
/// Independent per-pass seeds derived from the configured seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

PredicateMode predicate_mode(CollatzMode c)
{
    switch (c)
    {
    case CollatzMode::o1:
        return PredicateMode::o1;
    case CollatzMode::o2:
        return PredicateMode::o2;
    case CollatzMode::none:
        break;
    }
    return PredicateMode::none;
}

OpaqueMode opaque_mode(CollatzMode c)
{
    switch (c)
    {
    case CollatzMode::o1:
        return OpaqueMode::collatz_o1;
    case CollatzMode::o2:
        return OpaqueMode::collatz_o2;
    case CollatzMode::none:
        break;
    }
    return OpaqueMode::constant;
}

nlohmann::json metrics_json(const ModuleMetrics& mm)
{
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [depth, n] : mm.nesting_histogram)
        hist[std::to_string(depth)] = n;
    return {
        {"byte_size", mm.byte_size},
        {"instruction_count", mm.instruction_count},
        {"function_count", mm.function_count},
        {"call_count", mm.call_count},
        {"call_indirect_count", mm.call_indirect_count},
        {"elem_entry_count", mm.elem_entry_count},
        {"max_nesting_depth", mm.max_nesting_depth},
        {"nesting_histogram", hist},
        {"opcode_counts", mm.opcode_counts},
    };
}

double ratio(std::uint64_t after, std::uint64_t before)
{
    if (before == 0)
        return after == 0 ? 1.0 : INFINITY;
    return static_cast<double>(after) / static_cast<double>(before);
}

Bytes read_file(const std::string& path)
{
    std::ifstream in{path, std::ios::binary};
    if (!in)
        throw std::runtime_error{"cannot open " + path};
    return Bytes{std::istreambuf_iterator<char>{in}, std::istreambuf_iterator<char>{}};
}

void write_file(const std::string& path, const std::string& data)
{
    std::ofstream out{path, std::ios::binary};
    if (!out.write(data.data(), static_cast<std::streamsize>(data.size())))
        throw std::runtime_error{"cannot write " + path};
}

void write_file(const std::string& path, const Bytes& data)
{
    write_file(path, std::string(data.begin(), data.end()));
}
}  // namespace

void ObfConfig::check() const
{
    if (alias_pct && *alias_pct > 100)
        throw ConfigError{"--alias must be within 0-100"};
    if (flatten && *flatten < 2)
        throw ConfigError{"--flatten needs at least 2 blocks"};
    if (collatz != CollatzMode::none && !flatten && !alias_pct)
        throw ConfigError{"--collatz requires --flatten or --alias"};
}

std::string ObfConfig::label() const
{
    std::string s;
    auto add = [&](const std::string& part) { s += (s.empty() ? "" : "+") + part; };
    if (name)
        add("name");
    if (exports)
        add("exports");
    if (alias_pct)
        add("alias" + std::to_string(*alias_pct));
    if (flatten)
        add("flatten" + std::to_string(*flatten));
    if (memory)
        add("memory");
    if (collatz == CollatzMode::o1)
        add("collatz-o1");
    if (collatz == CollatzMode::o2)
        add("collatz-o2");
    return s.empty() ? "identity" : s;
}

PipelineResult obfuscate(const Module& input, const ObfConfig& cfg)
{
    cfg.check();
    PipelineResult r{input, {}, {}, {}, 0, {}};
    if (cfg.name)
    {
        Rng rng{derive_seed(cfg.seed, 1)};
        auto [m, map] = obfuscate_function_names(std::move(r.module), rng);
        r.module = std::move(m);
        r.renames.append(map);
    }
    if (cfg.exports)
    {
        Rng rng{derive_seed(cfg.seed, 2)};
        auto [m, map] = obfuscate_exports(std::move(r.module), rng, cfg.allowlist, cfg.rename_imports);
        r.module = std::move(m);
        r.renames.append(map);
    }
    if (cfg.alias_pct)
    {
        Rng rng{derive_seed(cfg.seed, 3)};
        r.module = alias_disrupt(std::move(r.module), *cfg.alias_pct, rng, opaque_mode(cfg.collatz), r.context, &r.alias);
    }
    if (cfg.flatten)
    {
        Rng rng{derive_seed(cfg.seed, 4)};
        const auto imported = r.module.imported_function_count();
        const auto count = r.module.function_count();
        for (auto f = imported; f < count; ++f)
            if (!r.context.injected.count(f))
                if (auto plan = flatten_function(r.module, f, *cfg.flatten, rng, predicate_mode(cfg.collatz), r.context))
                {
                    ++r.flattened_functions;
                    r.flatten_plans.emplace(f, std::move(*plan));
                }
    }
    if (cfg.memory)
        r.module = obfuscate_memory(std::move(r.module), MemKey::from_seed(cfg.key_seed), &r.context);
    return r;
}

std::vector<Value> random_arguments(const FuncType& type, Rng& rng)
{
    std::vector<Value> args;
    for (const auto t : type.params)
    {
        const bool small = rng.below(4) == 0;
        const auto raw = rng.next();
        const auto smallv = static_cast<std::int64_t>(rng.below(33)) - 16;
        switch (t)
        {
        case ValType::i32:
            args.push_back(small ? Value::i32(static_cast<std::int32_t>(smallv)) : Value{t, raw & 0xFFFFFFFFu});
            break;
        case ValType::i64:
            args.push_back(small ? Value::i64(smallv) : Value{t, raw});
            break;
        case ValType::f32:
            args.push_back(small ? Value::f32(static_cast<float>(smallv) / 4) : Value{t, raw & 0xFFFFFFFFu});
            break;
        case ValType::f64:
            args.push_back(small ? Value::f64(static_cast<double>(smallv) / 4) : Value{t, raw});
            break;
        }
    }
    return args;
}

std::string metrics_report(const Module& before, const Module& after, const ObfConfig& cfg,
    const std::optional<StepMeasurement>& steps, const std::vector<std::string>& notes)
{
    const auto b = count_metrics(before);
    const auto a = count_metrics(after);
    nlohmann::json doc{
        {"config", cfg.label()},
        {"before", metrics_json(b)},
        {"after", metrics_json(a)},
        {"size_ratio", ratio(a.byte_size, b.byte_size)},
        {"instruction_ratio", ratio(a.instruction_count, b.instruction_count)},
        {"call_indirect_delta", static_cast<std::int64_t>(a.call_indirect_count) -
                                    static_cast<std::int64_t>(b.call_indirect_count)},
        {"elem_delta",
            static_cast<std::int64_t>(a.elem_entry_count) - static_cast<std::int64_t>(b.elem_entry_count)},
        {"notes", notes},
    };
    if (steps)
        doc["steps"] = {
            {"entry", steps->entry},
            {"before", steps->steps_before},
            {"after", steps->steps_after},
            {"ratio", ratio(steps->steps_after, steps->steps_before)},
            {"verdict", steps->verdict},
        };
    return doc.dump(2) + "\n";
}

void emit_metrics(const Module& before, const Module& after, const std::string& path, const ObfConfig& cfg,
    const std::optional<StepMeasurement>& steps, const std::vector<std::string>& notes)
{
    write_file(path, metrics_report(before, after, cfg, steps, notes));
}

int run_pipeline(const std::string& input, const ObfConfig& cfg, const OutputPaths& out, std::ostream& err)
{
    try
    {
        cfg.check();
    }
    catch (const ConfigError& e)
    {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }

    Bytes bytes;
    try
    {
        bytes = read_file(input);
    }
    catch (const std::exception& e)
    {
        err << "error: " << e.what() << "\n";
        return exit_io;
    }

    Module original;
    try
    {
        original = decode_module(bytes);
    }
    catch (const DecodeError& e)
    {
        err << "error: " << input << ": " << e.what() << "\n";
        return exit_invalid_input;
    }
    if (const auto report = validate_module(original); !report.ok())
    {
        err << "error: " << input << " does not validate: " << report.errors.front().to_string() << "\n";
        return exit_invalid_input;
    }

    PipelineResult result;
    try
    {
        result = obfuscate(original, cfg);
    }
    catch (const PassError& e)
    {
        err << "error: pass refused: " << e.what() << "\n";
        return exit_pass_refused;
    }
    if (const auto report = validate_module(result.module); !report.ok())
    {
        err << "error: obfuscated module fails validation (not written): " << report.errors.front().to_string()
            << "\n";
        return exit_pass_refused;
    }

    std::optional<StepMeasurement> steps;
    if (out.probe)
    {
        const auto entry = *out.probe;
        const Export* ex = nullptr;
        for (const auto& e : original.exports)
            if (e.kind == ExternKind::function && e.name == entry)
                ex = &e;
        if (!ex)
        {
            err << "error: --probe: no exported function '" << entry << "'\n";
            return exit_usage;
        }
        Rng rng{derive_seed(cfg.seed, 99)};
        std::vector<std::vector<Value>> vectors;
        for (int i = 0; i < 16; ++i)
            vectors.push_back(random_arguments(original.function_type(ex->index), rng));
        DifferentialOptions opts;
        opts.renamed_entry = result.renames.lookup(RenameSpace::export_, entry);
        const auto v = differential_check(original, result.module, entry, vectors, opts);
        steps = StepMeasurement{entry, v.steps_original, v.steps_obfuscated,
            v.outcome == DifferentialVerdict::Outcome::equal       ? "equal"
            : v.outcome == DifferentialVerdict::Outcome::divergent ? "divergent"
                                                                   : "inconclusive"};
    }

    try
    {
        write_file(out.output, cfg.any_pass() ? encode_module(result.module) : bytes);
        if (out.rename_map)
            write_file(*out.rename_map, result.renames.to_json());
        if (out.metrics)
            emit_metrics(original, result.module, *out.metrics, cfg, steps, result.context.notes);
    }
    catch (const std::exception& e)
    {
        err << "error: " << e.what() << "\n";
        return exit_io;
    }
    return exit_ok;
}
}  // namespace wasmveil
