#include "bevmem/common.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

BEVMEM_NS_BEGIN

int max_threads() {
  static const int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("BEVMEM_THREADS")) {
      char* end = nullptr;
      const long cap = std::strtol(env, &end, 10);
      if (end != env && cap >= 1) hw = std::min<long>(hw, cap);
    }
    return hw;
  }();
  return n;
}

namespace {

thread_local bool in_parallel = false;

struct Pool {
  std::vector<std::thread> workers;
  std::mutex mu;
  std::condition_variable cv_work, cv_done;
  // guarded by mu; workers copy the job fields under the lock before
  // draining, so a late wake can never touch a finished or replaced job
  const std::function<void(std::int64_t, std::int64_t)>* job = nullptr;
  std::int64_t total = 0, chunk = 1;
  std::atomic<std::int64_t> next{0};
  int active = 0;
  std::uint64_t generation = 0;
  bool job_live = false;
  bool stop = false;
  std::exception_ptr error;

  Pool() {
    const int n = max_threads() - 1;
    workers.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) workers.emplace_back([this] { worker(); });
  }
  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu);
      stop = true;
    }
    cv_work.notify_all();
    for (auto& w : workers) w.join();
  }

  void drain(const std::function<void(std::int64_t, std::int64_t)>* fn, std::int64_t n,
             std::int64_t step) {
    for (;;) {
      const std::int64_t begin = next.fetch_add(step);
      if (begin >= n) break;
      try {
        (*fn)(begin, std::min(begin + step, n));
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!error) error = std::current_exception();
      }
    }
  }

  void worker() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* fn;
      std::int64_t n, step;
      {
        std::unique_lock<std::mutex> lk(mu);
        cv_work.wait(lk, [&] { return stop || (job_live && generation != seen); });
        if (stop) return;
        seen = generation;
        ++active;
        fn = job;
        n = total;
        step = chunk;
      }
      in_parallel = true;  // nested parallel_for on a worker runs serial
      drain(fn, n, step);
      in_parallel = false;
      {
        std::lock_guard<std::mutex> lk(mu);
        --active;
      }
      cv_done.notify_one();
    }
  }

  void run(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    std::int64_t step;
    {
      std::lock_guard<std::mutex> lk(mu);
      job = &fn;
      total = n;
      chunk = std::max<std::int64_t>(1, n / (8 * static_cast<std::int64_t>(workers.size() + 1)));
      step = chunk;
      next.store(0);
      error = nullptr;
      ++generation;
      job_live = true;
    }
    cv_work.notify_all();
    drain(&fn, n, step);
    std::exception_ptr err;
    {
      std::unique_lock<std::mutex> lk(mu);
      job_live = false;  // nobody new may join; current drainers hold `active`
      cv_done.wait(lk, [&] { return active == 0; });
      job = nullptr;
      err = error;
    }
    if (err) std::rethrow_exception(err);
  }
};

}  // namespace

void parallel_for_range(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  if (in_parallel || max_threads() == 1 || n == 1) {
    fn(0, n);
    return;
  }
  static Pool pool;
  in_parallel = true;
  pool.run(n, fn);
  in_parallel = false;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

BEVMEM_NS_END
