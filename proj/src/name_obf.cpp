#include "wasmveil/data_obf.hpp"
#include "wasmveil/errors.hpp"
#include "wasmveil/leb128.hpp"
#include <json.hpp>
#include <set>

namespace wasmveil
{
namespace
{
constexpr int max_attempts = 1000;

std::uint64_t uleb(const Bytes& p, std::size_t& pos)
{
    const auto r = read_uleb128_bits(p, pos, 32);
    pos = r.next;
    return r.value;
}

struct NameSlot
{
    std::uint32_t index;
    std::size_t pos;
    std::size_t length;
};

/// Locations of the function names inside a "name" payload.
std::vector<NameSlot> function_name_slots(const Bytes& payload)
{
    std::vector<NameSlot> slots;
    try
    {
        std::size_t pos = 0;
        while (pos < payload.size())
        {
            const auto id = payload[pos++];
            const auto size = uleb(payload, pos);
            if (size > payload.size() - pos)
                throw PassError{"malformed name section: subsection overruns payload"};
            const auto sub_end = pos + size;
            if (id == 1)
            {
                auto count = uleb(payload, pos);
                while (count-- > 0)
                {
                    const auto index = static_cast<std::uint32_t>(uleb(payload, pos));
                    const auto len = uleb(payload, pos);
                    if (len > sub_end - pos)
                        throw PassError{"malformed name section: name overruns subsection"};
                    slots.push_back({index, pos, len});
                    pos += len;
                }
                if (pos != sub_end)
                    throw PassError{"malformed name section: function names length mismatch"};
            }
            pos = sub_end;
        }
    }
    catch (const DecodeError& e)
    {
        throw PassError{std::string{"malformed name section: "} + e.what()};
    }
    return slots;
}
}  // namespace

std::string_view to_string(RenameSpace space) noexcept
{
    switch (space)
    {
    case RenameSpace::export_:
        return "export";
    case RenameSpace::import:
        return "import";
    case RenameSpace::funcname:
        return "funcname";
    }
    return "?";
}

std::optional<std::string> RenameMap::lookup(RenameSpace space, std::string_view original) const
{
    for (const auto& e : entries)
        if (e.space == space && e.original == original)
            return e.renamed;
    return std::nullopt;
}

void RenameMap::append(const RenameMap& other)
{
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

std::string RenameMap::to_json() const
{
    auto doc = nlohmann::json::array();
    for (const auto& e : entries)
        doc.push_back({{"space", to_string(e.space)}, {"index", e.index}, {"original", e.original},
            {"renamed", e.renamed}});
    return doc.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

std::pair<Module, RenameMap> obfuscate_function_names(Module m, Rng& rng)
{
    RenameMap map;
    for (auto& custom : m.customs)
    {
        if (custom.name != "name")
            continue;
        auto& payload = custom.payload;
        const auto slots = function_name_slots(payload);
        std::map<std::size_t, std::set<std::string>> taken;  // by length
        for (const auto& s : slots)
            taken[s.length].insert(std::string(payload.begin() + s.pos, payload.begin() + s.pos + s.length));
        for (const auto& s : slots)
        {
            if (s.length == 0)
                continue;
            const std::string original(payload.begin() + s.pos, payload.begin() + s.pos + s.length);
            std::string renamed;
            for (int attempt = 0;; ++attempt)
            {
                if (attempt == max_attempts)
                    throw PassError{"cannot find a fresh name of length " + std::to_string(s.length)};
                renamed = rng.alphanumeric(s.length);
                if (!taken[s.length].count(renamed))
                    break;
            }
            taken[s.length].insert(renamed);
            std::copy(renamed.begin(), renamed.end(), payload.begin() + s.pos);
            map.entries.push_back({RenameSpace::funcname, s.index, original, renamed});
        }
    }
    return {std::move(m), std::move(map)};
}

std::pair<Module, RenameMap> obfuscate_exports(
    Module m, Rng& rng, const std::set<std::string>& allowlist, bool rename_imports)
{
    RenameMap map;
    std::set<std::string> taken;
    for (const auto& e : m.exports)
        taken.insert(e.name);

    auto fresh = [&](std::set<std::string>& used) {
        for (int attempt = 0; attempt < max_attempts; ++attempt)
        {
            auto s = rng.alphanumeric(rng.between(8, 16));
            if (used.insert(s).second)
                return s;
        }
        throw PassError{"cannot find a fresh export name"};
    };

    for (std::uint32_t i = 0; i < m.exports.size(); ++i)
    {
        auto& e = m.exports[i];
        if (allowlist.count(e.name))
            continue;
        auto renamed = fresh(taken);
        map.entries.push_back({RenameSpace::export_, i, e.name, renamed});
        e.name = std::move(renamed);
    }

    if (rename_imports)
    {
        std::set<std::string> used;
        for (const auto& imp : m.imports)
            used.insert(imp.name);
        for (std::uint32_t i = 0; i < m.imports.size(); ++i)
        {
            auto& imp = m.imports[i];
            if (protected_import_modules.count(imp.module))
                continue;
            auto renamed = fresh(used);
            map.entries.push_back({RenameSpace::import, i, imp.name, renamed});
            imp.name = std::move(renamed);
        }
    }
    return {std::move(m), std::move(map)};
}
}  // namespace wasmveil
