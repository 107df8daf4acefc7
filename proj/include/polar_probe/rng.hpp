#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

namespace polar {

/// Seeded generator with platform-independent draws.
///
/// The standard distributions are implementation-defined, so the integer, real
/// and normal draws are derived from the raw mt19937_64 stream here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform real in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal draw (Box-Muller, second variate cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    /// Derive an independent stream for a sub-task.
    Rng fork(std::uint64_t salt) { return Rng(next() ^ (salt * 0x9E3779B97F4A7C15ULL)); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// `count` distinct indices from [0, n), uniformly without replacement, in draw order.
/// Returns all of [0, n) in order when count >= n.
inline std::vector<std::uint64_t> sample_without_replacement(Rng& rng, std::uint64_t n,
                                                             std::uint64_t count) {
    std::vector<std::uint64_t> out;
    if (count >= n) {
        out.resize(n);
        for (std::uint64_t i = 0; i < n; ++i) out[i] = i;
        return out;
    }
    out.reserve(count);
    if (count * 4 > n) {
        // dense: partial Fisher-Yates
        std::vector<std::uint64_t> pool(n);
        for (std::uint64_t i = 0; i < n; ++i) pool[i] = i;
        for (std::uint64_t i = 0; i < count; ++i) {
            std::swap(pool[i], pool[i + rng.below(n - i)]);
            out.push_back(pool[i]);
        }
        return out;
    }
    // sparse: Floyd's algorithm
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(count * 2);
    for (std::uint64_t j = n - count; j < n; ++j) {
        const std::uint64_t t = rng.below(j + 1);
        if (seen.insert(t).second) {
            out.push_back(t);
        } else {
            seen.insert(j);
            out.push_back(j);
        }
    }
    return out;
}

/// Maps a linear index in [0, m(m-1)/2) to the unordered pair (i, j), i < j.
inline std::pair<std::size_t, std::size_t> unordered_pair_at(std::uint64_t index, std::size_t m) {
    // row i starts at i*(2m-i-1)/2; invert with a float estimate, then correct
    const auto start = [m](std::uint64_t i) { return i * (2 * m - i - 1) / 2; };
    const double mm = static_cast<double>(m) - 0.5;
    auto i = static_cast<std::uint64_t>(
        std::max(0.0, mm - std::sqrt(std::max(0.0, mm * mm - 2.0 * static_cast<double>(index)))));
    while (i > 0 && start(i) > index) --i;
    while (i + 1 < m && start(i + 1) <= index) ++i;
    return {static_cast<std::size_t>(i), static_cast<std::size_t>(i + 1 + index - start(i))};
}

}  // namespace polar
