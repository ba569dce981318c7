#include "vffc/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace vffc {

namespace {

int g_override = 0;

int detect_threads() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("VFFC_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return n;
}

// Persistent worker pool. Jobs are claimed block-by-block through an atomic
// counter; block boundaries are fixed by the caller, so which thread runs a
// block never affects the result.
class Pool {
  public:
    explicit Pool(int workers) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    ~Pool() {
        {
            std::unique_lock lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(std::int64_t nblocks, std::int64_t block, std::int64_t n,
             const std::function<void(std::int64_t, std::int64_t)>& fn) {
        std::unique_lock lk(mu_);
        fn_ = &fn;
        block_ = block;
        n_ = n;
        next_.store(0, std::memory_order_relaxed);
        pending_ = nblocks;
        generation_++;
        lk.unlock();
        cv_.notify_all();

        // The calling thread participates too.
        drain();

        std::unique_lock lk2(mu_);
        done_cv_.wait(lk2, [this] { return pending_ == 0; });
        fn_ = nullptr;
    }

  private:
    void drain() {
        const auto* fn = fn_;
        while (true) {
            std::int64_t b = next_.fetch_add(1, std::memory_order_relaxed);
            std::int64_t begin = b * block_;
            if (begin >= n_) break;
            std::int64_t end = std::min(n_, begin + block_);
            (*fn)(begin, end);
            std::unique_lock lk(mu_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        while (true) {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            if (!fn_) continue;
            lk.unlock();
            drain();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(std::int64_t, std::int64_t)>* fn_ = nullptr;
    std::int64_t block_ = 1;
    std::int64_t n_ = 0;
    std::atomic<std::int64_t> next_{0};
    std::int64_t pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p(std::max(0, thread_count() - 1));
    return p;
}

}  // namespace

int thread_count() {
    if (g_override > 0) return g_override;
    static int n = detect_threads();
    return n;
}

void set_thread_count(int n) { g_override = n; }

void parallel_for(std::int64_t n, std::int64_t block,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    if (block <= 0) block = 1;
    const std::int64_t nblocks = (n + block - 1) / block;
    if (thread_count() == 1 || nblocks == 1) {
        for (std::int64_t b = 0; b < nblocks; ++b) {
            fn(b * block, std::min(n, (b + 1) * block));
        }
        return;
    }
    pool().run(nblocks, block, n, fn);
}

}  // namespace vffc
