#include "mmr2/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace mmr2 {

unsigned max_threads() {
    if (const char* env = std::getenv("MMR2_THREADS")) {
        unsigned v = 0;
        const auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), v);
        if (ec == std::errc() && *ptr == '\0' && v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, unsigned threads) {
    const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace mmr2
