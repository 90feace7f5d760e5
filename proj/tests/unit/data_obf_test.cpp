#include "wasmveil/analysis.hpp"
#include "wasmveil/binary.hpp"
#include "wasmveil/data_obf.hpp"
#include "wasmveil/errors.hpp"
#include "wasmveil/interp.hpp"
#include "wasmveil/pipeline.hpp"
#include "support/builder.hpp"
#include "support/corpus.hpp"
#include <algorithm>
#include <gtest/gtest.h>
#include <json.hpp>
#include <set>

using namespace wasmveil;
using namespace wasmveil::ins;
using namespace wasmveil::test;
using O = Opcode;

namespace
{
constexpr auto I32 = ValType::i32;
constexpr auto I64 = ValType::i64;

Module data_module(std::uint32_t offset, const std::string& bytes)
{
    ModuleBuilder b;
    b.memory(1);
    b.data(offset, bytes);
    return b.build(false);
}

/// Module exporting `run` with the given body over one page of memory.
Module memory_program(FuncType type, InstrSeq body, std::vector<std::pair<std::uint32_t, Bytes>> data = {})
{
    ModuleBuilder b;
    b.memory(1, 4);
    for (auto& [off, bytes] : data)
        b.data(off, bytes);
    b.export_function("run", b.function("run", type, {I32}, std::move(body)));
    return b.build();
}

ExecResult run(const Module& m, std::vector<Value> args = {})
{
    auto inst = instantiate(m, ImportStubs::standard());
    return invoke(inst, "run", args);
}

std::vector<std::vector<Value>> vectors_for(const Module& m, const std::string& entry, std::uint64_t seed)
{
    std::uint32_t func = 0;
    for (const auto& e : m.exports)
        if (e.name == entry)
            func = e.index;
    Rng rng{seed};
    std::vector<std::vector<Value>> out;
    for (int i = 0; i < 100; ++i)
        out.push_back(random_arguments(m.function_type(func), rng));
    return out;
}

std::size_t count_memory_ops(const Module& m, const std::set<std::uint32_t>& skip)
{
    std::size_t n = 0;
    for (std::uint32_t f = m.imported_function_count(); f < m.function_count(); ++f)
        if (!skip.count(f))
            for (const auto& in : m.body_of(f).body)
                n += is_memory_access(in.op) || in.op == O::memory_grow;
    return n;
}
}  // namespace

TEST(data_obf, encrypt_examples)
{
    const auto a = encrypt_data_segments(data_module(0, "A"), MemKey{{0x5A}});
    EXPECT_EQ(a.data[0].bytes, (Bytes{0x1B}));

    const auto ab = encrypt_data_segments(data_module(0, "AB"), MemKey{{0xFF, 0xFF}});
    EXPECT_EQ(ab.data[0].bytes, (Bytes{0xBE, 0xBD}));

    // Positional: the key byte depends on the absolute address.
    const MemKey key{{1, 2, 3, 4}};
    const auto shifted = encrypt_data_segments(data_module(6, std::string(4, '\0')), key);
    EXPECT_EQ(shifted.data[0].bytes, (Bytes{3, 4, 1, 2}));
}

TEST(data_obf, encrypt_is_an_involution)
{
    const auto key = MemKey::from_seed(77);
    for (const auto& f : corpus())
    {
        if (f.module.data.empty())
            continue;
        const auto twice = encrypt_data_segments(encrypt_data_segments(f.module, key), key);
        EXPECT_EQ(twice.data, f.module.data) << f.name;
    }
}

TEST(data_obf, encrypt_refusals)
{
    auto m = data_module(0, "abcd");
    m.data.push_back({0, make_offset_expr(2), Bytes{1, 2, 3}});
    EXPECT_THROW(encrypt_data_segments(m, MemKey::from_seed(1)), PassError);

    auto g = data_module(0, "abcd");
    g.globals.push_back({{I32, false}, {i32_const(0), end()}});
    g.data[0].offset = {global_get(0), end()};
    EXPECT_THROW(encrypt_data_segments(g, MemKey::from_seed(1)), PassError);
}

TEST(data_obf, key_derivation)
{
    const auto k = MemKey::from_seed(5);
    EXPECT_EQ(k.keystream.size(), 8u);
    EXPECT_EQ(k.keystream, MemKey::from_seed(5).keystream);
    EXPECT_NE(k.keystream, MemKey::from_seed(6).keystream);
    EXPECT_EQ(MemKey::from_seed(5, 2).keystream.size(), 2u);
    for (std::uint64_t seed = 0; seed < 200; ++seed)
    {
        const auto one = MemKey::from_seed(seed, 1);
        EXPECT_NE(one.keystream[0], 0) << seed;
    }
    EXPECT_EQ((MemKey{{1, 2}}.word()), 0x0201020102010201u);
    EXPECT_THROW((MemKey{{1, 2, 3}}.check()), PassError);
    EXPECT_THROW((MemKey{{0, 0}}.check()), PassError);
    EXPECT_THROW((MemKey{{}}.check()), PassError);
}

TEST(data_obf, access_spec_covers_every_opcode)
{
    int n = 0;
    for (unsigned b = 0; b < 256; ++b)
    {
        if (!is_mvp_opcode(static_cast<std::uint8_t>(b)) || !is_memory_access(static_cast<Opcode>(b)))
            continue;
        ++n;
        const auto op = static_cast<Opcode>(b);
        const auto spec = MemAccessSpec::of(mem(op, 12));
        EXPECT_EQ(spec.offset, 12u);
        EXPECT_EQ(spec.opcode(), op);
        EXPECT_EQ(spec.is_store, is_store(op));
        EXPECT_LE(spec.len, spec.type == I32 || spec.type == ValType::f32 ? 32u : 64u);
    }
    EXPECT_EQ(n, 23);
    EXPECT_THROW(MemAccessSpec::of(op(O::nop)), PassError);
}

TEST(data_obf, helper_examples)
{
    const auto key = MemKey::from_seed(3);
    // store8 0x7F, then load8_u
    const auto m1 = memory_program({{}, {I32}},
        {i32_const(50), i32_const(0x7F), mem(O::i32_store8), i32_const(50), mem(O::i32_load8_u)});
    const auto o1 = obfuscate_memory(m1, key);
    ASSERT_TRUE(validate_module(o1).ok());
    auto inst = instantiate(o1, {});
    const auto r1 = invoke(inst, "run", std::vector<Value>{});
    EXPECT_EQ(r1.values[0], Value::i32(0x7F));
    EXPECT_EQ(inst.memory[50], 0x7F ^ key.key_byte(50));

    const auto m2 = memory_program({{}, {I32}}, {i32_const(10), mem(O::i32_load8_s)}, {{10, Bytes{0x80}}});
    EXPECT_EQ(run(obfuscate_memory(m2, key)).values[0], Value::i32(-128));

    const auto m3 = memory_program({{}, {I64}}, {i32_const(0), mem(O::i64_load, 3)},
        {{3, Bytes{1, 2, 3, 4, 5, 6, 7, 8}}});
    EXPECT_EQ(run(m3).values[0], Value::i64(0x0807060504030201));
    EXPECT_EQ(run(obfuscate_memory(m3, key)).values[0], Value::i64(0x0807060504030201));

    // Wide store, narrow reads at every byte offset.
    const auto m4 = memory_program({{I32}, {I32}},
        {i32_const(5), local_get(0), mem(O::i32_store), i32_const(5), mem(O::i32_load8_u, 1), i32_const(8),
            mem(O::i32_load16_s), op(O::i32_add), i32_const(4), mem(O::i32_load16_u, 1), op(O::i32_add)});
    const auto o4 = obfuscate_memory(m4, key);
    for (auto v : {0x11223344, -1, 0x7F80FF01})
        EXPECT_EQ(run(o4, {Value::i32(v)}).values, run(m4, {Value::i32(v)}).values);
}

TEST(data_obf, store_then_load_at_100_is_equivalent)
{
    const auto m = memory_program({{I32}, {I32}},
        {i32_const(100), local_get(0), mem(O::i32_store), i32_const(100), mem(O::i32_load)});
    const auto o = obfuscate_memory(m, MemKey::from_seed(11));
    EXPECT_TRUE(differential_check(m, o, "run", vectors_for(m, "run", 1)).equal());
}

TEST(data_obf, rewrite_leaves_no_memory_opcodes_outside_helpers)
{
    const auto key = MemKey::from_seed(4);
    for (const auto& f : corpus())
    {
        if (f.module.memory_count() == 0)
            continue;
        auto [with_helpers, helpers] = synthesize_mem_helpers(encrypt_data_segments(f.module, key), key);
        const auto out = rewrite_mem_instructions(with_helpers, helpers);
        EXPECT_EQ(count_memory_ops(out, helpers.all()), 0u) << f.name;
        EXPECT_TRUE(validate_module(out).ok()) << f.name;
        EXPECT_EQ(out.start, helpers.init);
        // Helpers exist only for opcodes the module uses.
        std::set<Opcode> used;
        for (const auto& body : f.module.code)
            for (const auto& in : body.body)
                if (is_memory_access(in.op))
                    used.insert(in.op);
        EXPECT_EQ(helpers.by_opcode.size(), used.size()) << f.name;
    }
}

TEST(data_obf, rewrite_without_memory_instructions_is_identity)
{
    ModuleBuilder b;
    b.memory(1);
    b.export_function("run", b.function("f", {{I32}, {I32}}, {}, {local_get(0), i32_const(1), op(O::i32_add)}));
    const auto m = b.build();
    const auto key = MemKey::from_seed(1);
    auto [with_helpers, helpers] = synthesize_mem_helpers(m, key);
    EXPECT_TRUE(helpers.by_opcode.empty());
    const auto out = rewrite_mem_instructions(with_helpers, helpers);
    EXPECT_EQ(out.code[0], m.code[0]);

    // No memory at all: the pass is a no-op.
    const auto& add = fixture("add").module;
    EXPECT_EQ(encode_module(obfuscate_memory(add, key)), encode_module(add));
}

TEST(data_obf, refuses_unsupported_memories)
{
    ModuleBuilder b;
    b.import_function("env", "f", {{}, {}});
    auto m = b.build(false);
    m.imports.push_back({"env", "mem", ExternKind::memory, 0, {}, Limits{1, std::nullopt}, {}});
    EXPECT_THROW(obfuscate_memory(m, MemKey::from_seed(1)), PassError);

    auto two = data_module(0, "x");
    two.memories.push_back(Limits{1, std::nullopt});
    EXPECT_THROW(synthesize_mem_helpers(two, MemKey::from_seed(1)), PassError);
}

TEST(data_obf, corpus_semantic_consistency)
{
    for (std::uint64_t seed : {1u, 2u})
    {
        const auto key = MemKey::from_seed(seed * 1000 + 7);
        for (const auto& f : corpus())
        {
            if (f.module.memory_count() == 0)
                continue;
            const auto o = obfuscate_memory(f.module, key);
            ASSERT_TRUE(validate_module(o).ok()) << f.name;
            const auto v = differential_check(f.module, o, f.entry, vectors_for(f.module, f.entry, seed));
            EXPECT_TRUE(v.equal()) << f.name << ": " << v.detail;
        }
    }
}

TEST(data_obf, short_keystreams_are_consistent)
{
    for (std::size_t len : {1u, 2u, 4u})
    {
        const auto key = MemKey::from_seed(99, len);
        for (const char* name : {"memory_rw", "uninit_read", "grow", "sort"})
        {
            const auto& f = fixture(name);
            const auto v = differential_check(f.module, obfuscate_memory(f.module, key), f.entry,
                vectors_for(f.module, f.entry, 5));
            EXPECT_TRUE(v.equal()) << name << " L=" << len << ": " << v.detail;
        }
    }
}

TEST(data_obf, uninitialized_memory_reads_match_after_obfuscation)
{
    const auto& f = fixture("uninit_read");
    const auto key = MemKey::from_seed(12);
    const auto o = obfuscate_memory(f.module, key);
    auto inst = instantiate(o, {});
    // Never-written bytes hold key material, not zeros.
    EXPECT_EQ(inst.memory[5000], key.key_byte(5000));
    EXPECT_EQ(inst.memory[131071], key.key_byte(131071));
    const auto r = invoke(inst, "run", std::vector<Value>{Value::i32(5000)});
    const auto plain = run(f.module, {Value::i32(5000)});
    EXPECT_EQ(r.values, plain.values);
}

TEST(data_obf, grown_pages_are_key_filled)
{
    const auto& f = fixture("grow");
    const auto key = MemKey::from_seed(13);
    const auto o = obfuscate_memory(f.module, key);
    auto inst = instantiate(o, {});
    const auto r = invoke(inst, "run", std::vector<Value>{Value::i32(1)});
    ASSERT_TRUE(r.ok());
    ASSERT_EQ(inst.memory.size(), 2u * 65536);
    EXPECT_EQ(inst.memory[65536 + 7], key.key_byte(65536 + 7));
    EXPECT_EQ(r.values, run(f.module, {Value::i32(1)}).values);
    EXPECT_EQ(run(o, {Value::i32(0)}).trap, TrapKind::memory_out_of_bounds);
}

TEST(data_obf, confidentiality)
{
    const auto key = MemKey::from_seed(0xC0FFEE);
    for (const auto& f : corpus())
    {
        const auto bytes = encode_module(obfuscate_memory(f.module, key));
        for (const auto& seg : f.module.data)
        {
            if (seg.bytes.size() < 16)
                continue;
            for (std::size_t i = 0; i + 8 <= seg.bytes.size(); ++i)
            {
                const auto it = std::search(bytes.begin(), bytes.end(), seg.bytes.begin() + i,
                    seg.bytes.begin() + i + 8);
                EXPECT_EQ(it, bytes.end()) << f.name << " leaks plaintext at segment offset " << i;
            }
        }
    }
}

TEST(data_obf, function_names_same_length)
{
    ModuleBuilder b;
    b.function("init", {{}, {}}, {}, {});
    b.function("step", {{}, {}}, {}, {});
    b.function("f", {{}, {}}, {}, {});
    b.function("main", {{}, {}}, {}, {});
    const auto m = b.build();
    Rng rng{1};
    const auto [out, map] = obfuscate_function_names(m, rng);
    ASSERT_EQ(map.entries.size(), 4u);
    const auto nd = parse_name_section(out.find_custom("name")->payload);
    const auto before = parse_name_section(m.find_custom("name")->payload);
    EXPECT_EQ(nd.section_length(), before.section_length());
    EXPECT_EQ(nd.count(), before.count());
    ASSERT_EQ(nd.entries.size(), 4u);
    EXPECT_EQ(nd.entries[3].index, 3u);
    EXPECT_EQ(nd.entries[3].name.size(), 4u);
    EXPECT_NE(nd.entries[3].name, "main");
    EXPECT_EQ(map.lookup(RenameSpace::funcname, "main"), nd.entries[3].name);
    std::set<std::string> seen;
    for (const auto& e : map.entries)
    {
        EXPECT_EQ(e.space, RenameSpace::funcname);
        EXPECT_EQ(e.original.size(), e.renamed.size());
        EXPECT_TRUE(seen.insert(e.renamed).second);
        EXPECT_TRUE(std::all_of(e.renamed.begin(), e.renamed.end(), [](char c) { return std::isalnum(c); }));
    }
    EXPECT_EQ(encode_module(out).size(), encode_module(m).size());
}

TEST(data_obf, function_names_size_identity_on_corpus)
{
    Rng rng{2};
    for (const auto& f : corpus())
    {
        const auto [out, map] = obfuscate_function_names(f.module, rng);
        EXPECT_EQ(encode_module(out).size(), encode_module(f.module).size()) << f.name;
        EXPECT_FALSE(map.entries.empty()) << f.name;
    }
}

TEST(data_obf, function_names_without_section)
{
    Rng rng{3};
    const auto m = ModuleBuilder{}.build(false);
    const auto [out, map] = obfuscate_function_names(m, rng);
    EXPECT_EQ(out, m);
    EXPECT_TRUE(map.entries.empty());
}

TEST(data_obf, function_names_preserve_non_minimal_lengths)
{
    // count and len_sec padded to two bytes each; patching keeps them as-is.
    auto m = ModuleBuilder{}.build(false);
    m.types.push_back({});
    m.functions.push_back(0);
    m.code.push_back({{}, {end()}});
    m.customs.push_back({"name", from_hex("01 88 00 81 00 00 04 6d 61 69 6e"), SectionId::code});
    const auto before = encode_module(m);
    Rng rng{4};
    const auto [out, map] = obfuscate_function_names(m, rng);
    const auto after = encode_module(out);
    EXPECT_EQ(after.size(), before.size());
    ASSERT_EQ(map.entries.size(), 1u);
    EXPECT_EQ(map.entries[0].renamed.size(), 4u);

    m.customs[0].payload = from_hex("01 09 01 00 04 6d 61 69 6e");
    EXPECT_THROW(obfuscate_function_names(m, rng), PassError);
}

TEST(data_obf, export_renaming)
{
    ModuleBuilder b;
    b.memory(1);
    b.export_function("md5_hash", b.function("h", {{}, {}}, {}, {}));
    b.export_function("_start", b.function("s", {{}, {}}, {}, {}));
    const auto m = b.build();
    Rng rng{5};
    const auto [out, map] = obfuscate_exports(m, rng);
    ASSERT_EQ(map.entries.size(), 1u);
    EXPECT_EQ(map.entries[0].space, RenameSpace::export_);
    EXPECT_EQ(map.entries[0].original, "md5_hash");
    const auto renamed = map.entries[0].renamed;
    EXPECT_GE(renamed.size(), 8u);
    EXPECT_LE(renamed.size(), 16u);
    std::set<std::string> names;
    for (const auto& e : out.exports)
        names.insert(e.name);
    EXPECT_TRUE(names.count("memory"));
    EXPECT_TRUE(names.count("_start"));
    EXPECT_TRUE(names.count(renamed));
    EXPECT_FALSE(names.count("md5_hash"));
}

TEST(data_obf, import_renaming_is_opt_in_and_skips_wasi)
{
    ModuleBuilder b;
    b.import_function("wasi_snapshot_preview1", "fd_write", {{I32}, {}});
    b.import_function("env", "emit", {{I32}, {}});
    const auto m = b.build();
    Rng rng{6};
    const auto [same, none] = obfuscate_exports(m, rng);
    EXPECT_EQ(same.imports, m.imports);

    const auto [out, map] = obfuscate_exports(m, rng, default_export_allowlist, true);
    EXPECT_EQ(out.imports[0].name, "fd_write");
    EXPECT_NE(out.imports[1].name, "emit");
    EXPECT_EQ(out.imports[1].module, "env");
    EXPECT_EQ(map.lookup(RenameSpace::import, "emit"), out.imports[1].name);
    EXPECT_FALSE(map.lookup(RenameSpace::import, "fd_write"));
}

TEST(data_obf, rename_completeness_on_corpus)
{
    Rng rng{7};
    for (const auto& f : corpus())
    {
        const auto [out, map] = obfuscate_exports(f.module, rng);
        std::set<std::string> renamed;
        for (const auto& e : map.entries)
        {
            EXPECT_TRUE(renamed.insert(e.renamed).second) << f.name;
            const auto& orig = f.module.exports[std::find_if(f.module.exports.begin(), f.module.exports.end(),
                [&](const Export& x) { return x.name == e.original; }) - f.module.exports.begin()];
            EXPECT_EQ(out.exports[e.index].index, orig.index);
        }
        for (const auto& e : out.exports)
            EXPECT_TRUE(default_export_allowlist.count(e.name) || renamed.count(e.name)) << f.name << " " << e.name;
        EXPECT_TRUE(validate_module(out).ok());
    }
}

TEST(data_obf, rename_map_json)
{
    RenameMap map;
    map.entries.push_back({RenameSpace::export_, 2, "run", "Xy12abCD"});
    map.entries.push_back({RenameSpace::funcname, 0, "main", "q9Zr"});
    const auto doc = nlohmann::json::parse(map.to_json());
    ASSERT_TRUE(doc.is_array());
    ASSERT_EQ(doc.size(), 2u);
    EXPECT_EQ(doc[0]["space"], "export");
    EXPECT_EQ(doc[0]["index"], 2);
    EXPECT_EQ(doc[0]["original"], "run");
    EXPECT_EQ(doc[0]["renamed"], "Xy12abCD");
    EXPECT_EQ(doc[1]["space"], "funcname");
}
