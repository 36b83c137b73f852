#include "gsr/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace gsr {
namespace {

std::atomic<int> g_max_threads{0};

int hardware_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

thread_local bool t_inside_parallel = false;

// Work-stealing-free chunk pool: one job at a time, workers and the
// submitting thread pull chunk indices from a shared counter. The job object
// is shared so a worker that wakes late never touches freed state; it simply
// finds the counter exhausted.
class Pool {
public:
    // Intentionally leaked singleton: workers block in wait() at process exit
    // and are torn down with the process instead of being joined.
    static Pool& instance() {
        static Pool* p = new Pool();
        return *p;
    }

    void run(std::size_t nchunks, const std::function<void(std::size_t)>& fn, int nthreads) {
        std::lock_guard<std::mutex> top(job_mutex_);
        ensure_workers(nthreads - 1);

        auto job = std::make_shared<Job>();
        job->fn = &fn;
        job->nchunks = nchunks;
        {
            std::lock_guard<std::mutex> lk(mutex_);
            current_ = job;
            ++generation_;
        }
        cv_.notify_all();

        work_on(*job);
        {
            std::unique_lock<std::mutex> lk(job->m);
            job->done.wait(lk, [&] { return job->completed == job->nchunks; });
        }
        {
            std::lock_guard<std::mutex> lk(mutex_);
            current_.reset();
        }
        if (job->error) std::rethrow_exception(job->error);
    }

private:
    struct Job {
        const std::function<void(std::size_t)>* fn = nullptr;
        std::size_t nchunks = 0;
        std::atomic<std::size_t> next{0};
        std::mutex m;
        std::size_t completed = 0;
        std::condition_variable done;
        std::exception_ptr error;
    };

    Pool() = default;

    void ensure_workers(int want) {
        std::lock_guard<std::mutex> lk(mutex_);
        while (static_cast<int>(workers_.size()) < want) {
            workers_.emplace_back([this] { worker_loop(); });
            workers_.back().detach();
        }
    }

    static void work_on(Job& job) {
        for (;;) {
            const std::size_t i = job.next.fetch_add(1, std::memory_order_relaxed);
            if (i >= job.nchunks) break;
            try {
                (*job.fn)(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(job.m);
                if (!job.error) job.error = std::current_exception();
            }
            std::lock_guard<std::mutex> lk(job.m);
            if (++job.completed == job.nchunks) job.done.notify_all();
        }
    }

    void worker_loop() {
        t_inside_parallel = true; // nested regions inside workers run inline
        std::uint64_t seen = 0;
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return generation_ != seen; });
                seen = generation_;
                job = current_;
            }
            if (job) work_on(*job);
        }
    }

    std::mutex job_mutex_; // serializes top-level parallel regions
    std::mutex mutex_;
    std::condition_variable cv_;
    std::vector<std::thread> workers_;
    std::shared_ptr<Job> current_;
    std::uint64_t generation_ = 0;
};

} // namespace

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }

int max_threads() {
    const int n = g_max_threads.load();
    return n == 0 ? hardware_threads() : n;
}

void parallel_chunks(std::size_t nchunks, const std::function<void(std::size_t)>& fn) {
    if (nchunks == 0) return;
    const int nthreads = max_threads();
    if (nchunks == 1 || nthreads <= 1 || t_inside_parallel) {
        for (std::size_t i = 0; i < nchunks; ++i) fn(i);
        return;
    }
    t_inside_parallel = true;
    try {
        Pool::instance().run(nchunks, fn, nthreads);
    } catch (...) {
        t_inside_parallel = false;
        throw;
    }
    t_inside_parallel = false;
}

void parallel_ranges(std::size_t n, std::size_t grain,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (grain == 0) grain = 1;
    const std::size_t nchunks = (n + grain - 1) / grain;
    parallel_chunks(nchunks, [&](std::size_t c) {
        const std::size_t b = c * grain;
        const std::size_t e = std::min(n, b + grain);
        fn(c, b, e);
    });
}

} // namespace gsr
