#include "mlmforge/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace mlmforge {
namespace {

std::size_t initial_thread_count() {
    if (const char* env = std::getenv("MLMFORGE_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) {
                return static_cast<std::size_t>(v);
            }
        } catch (const std::exception&) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

std::atomic<std::size_t>& thread_count_slot() {
    static std::atomic<std::size_t> slot{initial_thread_count()};
    return slot;
}

}  // namespace

std::size_t thread_count() { return thread_count_slot().load(std::memory_order_relaxed); }

void set_thread_count(std::size_t n) { thread_count_slot().store(std::max<std::size_t>(1, n)); }

}  // namespace mlmforge
