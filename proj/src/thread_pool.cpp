#include "dmg/thread_pool.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace dmg {

namespace {

int detect_thread_count() {
    if (const char* env = std::getenv("DMG_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Persistent pool; workers park on a condition variable between jobs.
class Pool {
public:
    Pool() : nthreads_(detect_thread_count()) {
        for (int i = 1; i < nthreads_; ++i)
            workers_.emplace_back([this, i] { worker_loop(i); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int size() const { return nthreads_; }

    void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        int chunks = static_cast<int>(std::min<int64_t>(nthreads_, n));
        if (chunks == 1) {
            fn(0, n);
            return;
        }
        {
            std::lock_guard<std::mutex> lk(mu_);
            job_ = &fn;
            job_n_ = n;
            job_chunks_ = chunks;
            pending_ = nthreads_ - 1; // every worker checks in, assigned or not
            ++generation_;
        }
        cv_.notify_all();
        run_chunk(0);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    void run_chunk(int idx) {
        int64_t per = (job_n_ + job_chunks_ - 1) / job_chunks_;
        int64_t begin = idx * per;
        int64_t end = std::min<int64_t>(job_n_, begin + per);
        if (begin < end) (*job_)(begin, end);
    }

    void worker_loop(int idx) {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            if (idx < job_chunks_) run_chunk(idx);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    int nthreads_;
    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int64_t, int64_t)>* job_ = nullptr;
    int64_t job_n_ = 0;
    int job_chunks_ = 0;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

} // namespace

int thread_count() { return pool().size(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    pool().run(n, fn);
}

} // namespace dmg
