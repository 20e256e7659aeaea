#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <random>
#include <string_view>
#include <thread>
#include <vector>

namespace xbdkit {

// ---------------------------------------------------------------------------
// Deterministic seeding and draws.
//
// All randomness in the pipeline flows through std::mt19937_64 (the engine is
// fully specified by the standard, so streams are identical across platforms)
// seeded from stable string hashes. std::hash is not portable and the
// std::uniform_*_distribution adaptors are implementation-defined, so both
// are avoided.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b));
}

// Seeds a stream that depends on a base seed plus any number of string keys,
// e.g. make_rng(seed, "extract", scene_id, building_id).
template <class... Keys>
std::mt19937_64 make_rng(std::uint64_t seed, Keys&&... keys) {
    std::uint64_t h = splitmix64(seed);
    ((h = mix64(h, fnv1a64(std::string_view(keys)))), ...);
    return std::mt19937_64(h);
}

// Unbiased draw from [0, n) via rejection on the raw engine output.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
        std::uint64_t r = rng();
        if (r >= threshold) return r % n;
    }
}

// Integer draw uniform on [lo, hi], both ends inclusive.
inline std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(uniform_below(rng, span));
}

template <class T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// ---------------------------------------------------------------------------
// Thread pool helper: runs fn(i) for i in [0, n) on up to n_threads workers.
// Work items must be independent; results go into caller-owned slots.
// ---------------------------------------------------------------------------
inline void parallel_for(std::size_t n, unsigned n_threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (n_threads == 0) n_threads = std::thread::hardware_concurrency();
    if (n_threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    unsigned count = static_cast<unsigned>(std::min<std::size_t>(n_threads, n));
    workers.reserve(count);
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mu;
    for (unsigned t = 0; t < count; ++t) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                    return;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Little-endian scalar IO for checkpoint files.
// ---------------------------------------------------------------------------
inline void put_le64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void put_f64(std::vector<unsigned char>& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_le64(out, bits);
}

inline double get_f64(const unsigned char* p) {
    std::uint64_t bits = get_le64(p);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
}

}  // namespace xbdkit
