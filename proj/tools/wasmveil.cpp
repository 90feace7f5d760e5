#include "wasmveil/pipeline.hpp"
#include <CLI11.hpp>
#include <iostream>
#include <sstream>

namespace
{
std::uint64_t parse_hex(const std::string& text)
{
    std::size_t used = 0;
    const auto v = std::stoull(text, &used, 16);
    if (used != text.size())
        throw std::invalid_argument{"not a hex number: " + text};
    return v;
}
}  // namespace

int main(int argc, char** argv)
{
    using namespace wasmveil;

    CLI::App app{"wasmveil: WebAssembly binary obfuscator"};
    ObfConfig cfg;
    OutputPaths out;
    std::string input;
    std::string seed_hex = "0";
    std::string key_hex;
    std::string collatz;
    std::string allowlist;
    std::string rename_map;
    std::string metrics;
    std::string probe;
    std::uint32_t flatten = 0;
    unsigned alias = 0;

    app.add_option("input", input, "input .wasm file")->required();
    app.add_option("-o,--output", out.output, "output .wasm file")->required();
    app.add_flag("--name", cfg.name, "obfuscate function names in the name section");
    app.add_flag("--exports", cfg.exports, "rename exports");
    app.add_flag("--imports", cfg.rename_imports, "with --exports, also rename unprotected imports");
    app.add_flag("--mem", cfg.memory, "encrypt linear memory");
    auto* flatten_opt = app.add_option("--flatten", flatten, "flatten functions into N blocks");
    auto* alias_opt = app.add_option("--alias", alias, "rewrite P% of calls as indirect calls");
    app.add_option("--collatz", collatz, "Collatz opaque predicates: o1 or o2")
        ->check(CLI::IsMember({"o1", "o2", "O1", "O2"}));
    app.add_option("--seed", seed_hex, "RNG seed (hex)");
    app.add_option("--key", key_hex, "memory keystream seed (hex); defaults to the RNG seed");
    app.add_option("--allowlist", allowlist, "comma-separated export names to keep");
    app.add_option("--rename-map", rename_map, "write the rename map (JSON)");
    app.add_option("--metrics", metrics, "write the metrics report (JSON)");
    app.add_option("--probe", probe, "export run on both modules to measure step overhead");

    try
    {
        app.parse(argc, argv);
        cfg.seed = parse_hex(seed_hex);
        cfg.key_seed = key_hex.empty() ? cfg.seed : parse_hex(key_hex);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    }

    if (flatten_opt->count())
        cfg.flatten = flatten;
    if (alias_opt->count())
        cfg.alias_pct = alias;
    if (collatz == "o1" || collatz == "O1")
        cfg.collatz = CollatzMode::o1;
    else if (collatz == "o2" || collatz == "O2")
        cfg.collatz = CollatzMode::o2;
    if (!allowlist.empty())
    {
        cfg.allowlist.clear();
        std::stringstream ss{allowlist};
        for (std::string item; std::getline(ss, item, ',');)
            if (!item.empty())
                cfg.allowlist.insert(item);
    }
    if (!rename_map.empty())
        out.rename_map = rename_map;
    if (!metrics.empty())
        out.metrics = metrics;
    if (!probe.empty())
        out.probe = probe;

    return run_pipeline(input, cfg, out, std::cerr);
}
