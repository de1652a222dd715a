#pragma once

#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "sfusnet/common.hpp"

namespace sfus {

// Activation-sized buffers churn every step; keep them in the malloc arena
// instead of round-tripping through mmap.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

// Persistent worker pool behind parallel_for. Work is split into contiguous
// chunks keyed by chunk index, so results are reproducible regardless of
// which worker runs which chunk.
class ThreadPool {
 public:
  using ChunkFn = std::function<void(index_t, index_t, index_t)>;

  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int threads() {
    std::lock_guard<std::mutex> lk(m_);
    return requested_;
  }

  void set_threads(int n) {
    std::unique_lock<std::mutex> lk(m_);
    if (n < 1) n = default_threads();
    if (n == requested_) return;
    stop_workers(lk);
    requested_ = n;
  }

  // fn(chunk, begin, end) over [0, n) split into `chunks` contiguous ranges.
  void run_chunked(index_t n, index_t chunks, const ChunkFn& fn) {
    if (n <= 0) return;
    if (chunks > n) chunks = n;
    if (chunks <= 1 || in_worker_) {
      fn(0, 0, n);
      return;
    }
    std::uint64_t gen;
    {
      std::unique_lock<std::mutex> lk(m_);
      if (static_cast<int>(workers_.size()) + 1 < requested_) start_workers(lk);
      job_fn_ = &fn;
      job_n_ = n;
      job_chunks_ = chunks;
      next_chunk_ = 0;
      pending_ = chunks;
      job_error_ = nullptr;
      gen = ++generation_;
    }
    work_cv_.notify_all();
    drain(&fn, n, chunks, gen);
    std::exception_ptr err;
    {
      std::unique_lock<std::mutex> lk(m_);
      done_cv_.wait(lk, [&] { return pending_ == 0; });
      job_fn_ = nullptr;
      err = job_error_;
    }
    if (err) std::rethrow_exception(err);
  }

  static int default_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

 private:
  ThreadPool() : requested_(default_threads()) { tune_allocator(); }

  ~ThreadPool() {
    std::unique_lock<std::mutex> lk(m_);
    stop_workers(lk);
  }

  void start_workers(std::unique_lock<std::mutex>&) {
    stop_ = false;
    int want = requested_ - 1;
    while (static_cast<int>(workers_.size()) < want) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers(std::unique_lock<std::mutex>& lk) {
    if (workers_.empty()) return;
    stop_ = true;
    lk.unlock();
    work_cv_.notify_all();
    for (auto& t : workers_) t.join();
    lk.lock();
    workers_.clear();
    stop_ = false;
  }

  void worker_loop() {
    in_worker_ = true;
    std::uint64_t seen = 0;
    for (;;) {
      const ChunkFn* fn = nullptr;
      index_t n = 0, chunks = 0;
      std::uint64_t gen = 0;
      {
        std::unique_lock<std::mutex> lk(m_);
        work_cv_.wait(lk, [&] { return stop_ || (generation_ != seen && job_fn_ != nullptr); });
        if (stop_) return;
        seen = gen = generation_;
        fn = job_fn_;
        n = job_n_;
        chunks = job_chunks_;
      }
      drain(fn, n, chunks, gen);
    }
  }

  void drain(const ChunkFn* fn, index_t n, index_t chunks, std::uint64_t gen) {
    const index_t q = n / chunks, r = n % chunks;
    for (;;) {
      index_t c;
      {
        std::lock_guard<std::mutex> lk(m_);
        if (generation_ != gen || next_chunk_ >= chunks) return;
        c = next_chunk_++;
      }
      index_t begin = c * q + std::min<index_t>(c, r);
      index_t end = begin + q + (c < r ? 1 : 0);
      try {
        (*fn)(c, begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lk(m_);
        if (!job_error_) job_error_ = std::current_exception();
      }
      {
        std::lock_guard<std::mutex> lk(m_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex m_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> workers_;
  int requested_ = 1;
  bool stop_ = false;

  std::uint64_t generation_ = 0;
  const ChunkFn* job_fn_ = nullptr;
  index_t job_n_ = 0;
  index_t job_chunks_ = 0;
  index_t next_chunk_ = 0;
  index_t pending_ = 0;
  std::exception_ptr job_error_;

  static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void set_num_threads(int n) { ThreadPool::instance().set_threads(n); }
inline int num_threads() { return ThreadPool::instance().threads(); }

// Splits [0, n) into one chunk per thread; fn(chunk, begin, end).
inline void parallel_for_chunked(index_t n, const ThreadPool::ChunkFn& fn) {
  auto& pool = ThreadPool::instance();
  pool.run_chunked(n, pool.threads(), fn);
}

inline void parallel_for(index_t n, const std::function<void(index_t, index_t)>& fn) {
  parallel_for_chunked(n, [&fn](index_t, index_t b, index_t e) { fn(b, e); });
}

// Elementwise helper; stays serial below a size threshold.
inline void parallel_elems(index_t n, const std::function<void(index_t, index_t)>& fn,
                           index_t grain = 1 << 15) {
  if (n < grain) {
    fn(0, n);
    return;
  }
  parallel_for(n, fn);
}

}  // namespace sfus
