#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gsd {

// Shared worker pool. GSD_THREADS caps the worker count (default: hardware
// concurrency). Work is split into fixed-size chunks independent of the
// thread count so that per-chunk results are reproducible.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int threads() const { return num_threads_; }

    // Runs body(begin, end) over [begin, end) split into chunks of at most
    // `grain` elements. Chunk boundaries depend only on `grain`, never on the
    // thread count. Falls back to inline execution for small ranges.
    void parallel_for(int64_t begin, int64_t end, int64_t grain,
                      const std::function<void(int64_t, int64_t)>& body) {
        const int64_t n = end - begin;
        if (n <= 0) return;
        if (num_threads_ <= 1 || n <= grain) {
            body(begin, end);
            return;
        }
        const int64_t chunks = (n + grain - 1) / grain;
        std::atomic<int64_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const int64_t c = next.fetch_add(1);
                if (c >= chunks) return;
                const int64_t b = begin + c * grain;
                const int64_t e = std::min(end, b + grain);
                body(b, e);
            }
        };
        run_on_workers(worker);
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

  private:
    ThreadPool() {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (const char* env = std::getenv("GSD_THREADS")) {
            const int cap = std::atoi(env);
            if (cap > 0) n = std::min(n, cap);
        }
        num_threads_ = std::max(1, n);
        for (int i = 0; i < num_threads_ - 1; ++i) {
            workers_.emplace_back([this]() { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            shutdown_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void run_on_workers(const std::function<void()>& fn) {
        std::unique_lock<std::mutex> lk(mu_);
        task_ = &fn;
        ++generation_;
        pending_ = static_cast<int>(workers_.size());
        cv_.notify_all();
        lk.unlock();

        fn();  // the calling thread participates

        lk.lock();
        done_cv_.wait(lk, [this]() { return pending_ == 0; });
        task_ = nullptr;
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void()>* task = nullptr;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&]() { return shutdown_ || generation_ != seen; });
                if (shutdown_) return;
                seen = generation_;
                task = task_;
            }
            if (task) (*task)();
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    int num_threads_ = 1;
    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void()>* task_ = nullptr;
    uint64_t generation_ = 0;
    int pending_ = 0;
    bool shutdown_ = false;
};

inline void parallel_for(int64_t begin, int64_t end, int64_t grain,
                         const std::function<void(int64_t, int64_t)>& body) {
    ThreadPool::instance().parallel_for(begin, end, grain, body);
}

}  // namespace gsd
