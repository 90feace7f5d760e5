#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace wasmveil
{
/// Seeded generator. Every draw goes through below() so results do not depend
/// on the standard library's distribution implementations.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_{seed} {}

    std::uint64_t next() { return engine_(); }

    /// Uniform value in [0, n); n must be nonzero.
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do
            v = engine_();
        while (v >= limit);
        return v % n;
    }

    /// Uniform value in [lo, hi].
    std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

    template <typename T>
    void shuffle(std::vector<T>& items)
    {
        for (std::size_t i = items.size(); i > 1; --i)
            std::swap(items[i - 1], items[below(i)]);
    }

    std::string alphanumeric(std::size_t length)
    {
        static constexpr char alphabet[] =
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
        std::string s(length, 'a');
        for (auto& c : s)
            c = alphabet[below(sizeof(alphabet) - 1)];
        return s;
    }

private:
    std::mt19937_64 engine_;
};
}  // namespace wasmveil
