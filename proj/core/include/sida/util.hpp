#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace sida {

// Order-preserving parallel map with at most `threads` workers. fn must be
// pure per element; results land at their input index, so parallel and
// serial runs produce identical output.
template <typename Out, typename In, typename Fn>
std::vector<Out> parallel_map(const std::vector<In>& in, int threads, Fn fn) {
    std::vector<Out> out(in.size());
    if (threads <= 1 || in.size() <= 1) {
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i], i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= in.size()) return;
            try {
                out[i] = fn(in[i], i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(threads, static_cast<int>(in.size()));
    pool.reserve(n);
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

}  // namespace sida
