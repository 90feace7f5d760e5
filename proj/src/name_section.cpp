#include "wasmveil/binary.hpp"
#include "wasmveil/errors.hpp"
#include "wasmveil/leb128.hpp"
#include <string>

namespace wasmveil
{
namespace
{
constexpr std::uint8_t function_names_id = 1;

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t& pos)
{
    const auto r = read_uleb128_bits(bytes, pos, 32);
    pos = r.next;
    return static_cast<std::uint32_t>(r.value);
}

std::size_t leb_size(std::uint64_t v)
{
    std::size_t n = 1;
    while (v >= 0x80)
    {
        v >>= 7;
        ++n;
    }
    return n;
}
}  // namespace

std::uint32_t NameData::section_length() const
{
    std::size_t len = leb_size(entries.size());
    for (const auto& e : entries)
        len += leb_size(e.index) + leb_size(e.name.size()) + e.name.size();
    return static_cast<std::uint32_t>(len);
}

NameData parse_name_section(std::span<const std::uint8_t> payload)
{
    NameData nd;
    std::size_t pos = 0;
    while (pos < payload.size())
    {
        const auto sub_start = pos;
        const auto id = payload[pos++];
        const auto len = read_u32(payload, pos);
        if (payload.size() - pos < len)
            throw DecodeError{"name subsection " + std::to_string(id) + " declares " +
                              std::to_string(len) + " bytes but only " +
                              std::to_string(payload.size() - pos) + " remain"};
        const auto content_end = pos + len;

        if (id != function_names_id || nd.has_function_names)
        {
            auto& sink = nd.has_function_names ? nd.suffix : nd.prefix;
            sink.insert(sink.end(), payload.begin() + static_cast<std::ptrdiff_t>(sub_start),
                payload.begin() + static_cast<std::ptrdiff_t>(content_end));
            pos = content_end;
            continue;
        }

        nd.has_function_names = true;
        const auto content = payload.subspan(0, content_end);
        const auto count = read_u32(content, pos);
        for (std::uint32_t i = 0; i < count; ++i)
        {
            NameEntry e;
            e.index = read_u32(content, pos);
            const auto name_len = read_u32(content, pos);
            if (content_end - pos < name_len)
                throw DecodeError{"function name " + std::to_string(e.index) +
                                  " overruns the function-name subsection"};
            e.name.assign(payload.begin() + static_cast<std::ptrdiff_t>(pos),
                payload.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
            pos += name_len;
            nd.entries.push_back(std::move(e));
        }
        if (pos != content_end)
            throw DecodeError{"function-name subsection length " + std::to_string(len) +
                              " inconsistent with its " + std::to_string(pos - (content_end - len)) +
                              " bytes of content"};
    }
    return nd;
}

Bytes encode_name_section(const NameData& nd)
{
    Bytes out = nd.prefix;
    if (nd.has_function_names)
    {
        out.push_back(function_names_id);
        write_uleb128(out, nd.section_length());
        write_uleb128(out, nd.entries.size());
        for (const auto& e : nd.entries)
        {
            write_uleb128(out, e.index);
            write_uleb128(out, e.name.size());
            out.insert(out.end(), e.name.begin(), e.name.end());
        }
    }
    out.insert(out.end(), nd.suffix.begin(), nd.suffix.end());
    return out;
}
}  // namespace wasmveil
