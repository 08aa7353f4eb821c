#include "convcaps/common.hpp"

#include <omp.h>

#include <cstdlib>
#include <cmath>

namespace convcaps {

namespace {
int g_max_threads = 0;  // 0 = unresolved
bool g_finite_checks = true;
std::string g_sabotage;
}  // namespace

int max_threads() {
    if (g_max_threads > 0) return g_max_threads;
    if (const char* env = std::getenv("CAPS_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            g_max_threads = n;
            return g_max_threads;
        }
    }
    g_max_threads = omp_get_max_threads();
    return g_max_threads;
}

void set_max_threads(int n) {
    if (n < 1) throw usage_error("thread count must be >= 1");
    g_max_threads = n;
}

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

void set_sabotage(const std::string& target) { g_sabotage = target; }
bool sabotaged(const char* target) { return g_sabotage == target; }

}  // namespace convcaps
