#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace partforge {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Parse failure in a binary artifact; carries the byte offset of the defect.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

struct SolverError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 provides seed derivation for splittable
// streams; the generator itself is xoshiro-free: a raw splitmix64 sequence is
// statistically adequate here and keeps draws bit-reproducible across
// standard library versions.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
        splitmix64(state_);
    }

    /// Derive an independent stream; draws from the child never affect the
    /// parent, so work split across streams is order-independent.
    Rng split(std::uint64_t stream_index) const {
        std::uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL * (stream_index + 1));
        return Rng(s);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Unbiased integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw Error("uniform_index: empty range");
        std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    double normal() {
        // Box-Muller with a cached spare
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        double mag = std::sqrt(-2.0 * std::log(u1));
        double two_pi_u2 = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = mag * std::sin(two_pi_u2);
        has_spare_ = true;
        return mag * std::cos(two_pi_u2);
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Threading. PARTFORGE_THREADS caps the worker count for all parallel loops.
// ---------------------------------------------------------------------------

inline unsigned worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("PARTFORGE_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v > 0 && static_cast<unsigned>(v) < hw) return static_cast<unsigned>(v);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return hw;
}

/// Runs fn(i) for i in [0, n). Results must be written to preallocated,
/// disjoint slots so the schedule cannot affect the outcome. The first
/// exception thrown by a worker is rethrown on the calling thread.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (std::size_t i = t; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// FNV-1a, used to stamp config/whitening provenance into artifacts.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

}  // namespace partforge
