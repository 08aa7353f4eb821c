#ifndef CONVCAPS_COMMON_HPP
#define CONVCAPS_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace convcaps {

// Bad command line / config input. CLI maps this to exit code 2.
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / serialization failure. CLI maps this to exit code 3.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric invariant violation (non-finite values, broken contract). Exit code 1.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thread cap for the OpenMP kernels. Resolution order: explicit set_max_threads,
// CAPS_THREADS env var, available cores.
int max_threads();
void set_max_threads(int n);

// Toggle for the per-op finite checks. On by default.
bool finite_checks_enabled();
void set_finite_checks(bool on);

// Fault injection for the selftest harness. Only "squash" is recognized.
void set_sabotage(const std::string& target);
bool sabotaged(const char* target);

// Deterministic RNG. Wraps mt19937_64 with portable uniform/normal mappings so
// streams do not depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return gen_() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace convcaps

#endif
