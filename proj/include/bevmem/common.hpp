#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

// The whole library compiles in two precisions: 32-bit reals for the
// product, 64-bit for the tight-tolerance gradient test mode. The inline
// namespace keeps both linkable into one binary.
#ifdef BEVMEM_REAL64
#define BEVMEM_NS_BEGIN \
  namespace bevmem {    \
  inline namespace r64 {
#else
#define BEVMEM_NS_BEGIN \
  namespace bevmem {    \
  inline namespace r32 {
#endif
#define BEVMEM_NS_END \
  }                   \
  }

BEVMEM_NS_BEGIN

#ifdef BEVMEM_REAL64
using real = double;
#else
using real = float;
#endif

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

// Thread cap: min(hardware, BEVMEM_THREADS). Always >= 1.
int max_threads();

// Chunked parallel loop over [0, n). fn(begin, end) runs on worker threads
// plus the caller. Nested calls degrade to serial execution. Partitioning
// never affects results: each index is processed exactly once and all
// reductions in this codebase are per-index or merged in index order.
void parallel_for_range(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

template <class F>
void parallel_for(std::int64_t n, F&& f) {
  parallel_for_range(n, std::function<void(std::int64_t, std::int64_t)>(std::forward<F>(f)));
}

// SplitMix64: derive independent sub-seeds from a master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

// Deterministic RNG with hand-rolled distributions (portable sequences).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0, 1)
    return (gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // inclusive bounds
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

BEVMEM_NS_END
