#pragma once

#include <barrier>
#include <chrono>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace streamer {

/// Fixed team of worker threads, created once and reused across kernels.
///
/// Each worker is optionally pinned to one CPU when the team starts. A call to
/// run() releases the first `active` workers through a start barrier, lets them
/// execute the body, and collects everyone at an end barrier. Workers beyond
/// `active` pass both barriers without doing work, which is how a maximal team
/// serves smaller thread counts.
class WorkerTeam {
 public:
  using Body = std::function<void(std::size_t worker, std::size_t active)>;

  /// Unpinned team of `size` workers.
  explicit WorkerTeam(std::size_t size);
  /// One worker per entry; worker i is pinned to cpus[i].
  explicit WorkerTeam(std::vector<int> cpus);
  ~WorkerTeam();

  WorkerTeam(const WorkerTeam&) = delete;
  WorkerTeam& operator=(const WorkerTeam&) = delete;

  std::size_t size() const noexcept { return threads_.size(); }
  const std::vector<int>& cpus() const noexcept { return cpus_; }

  /// True when at least one requested pin was refused by the platform.
  bool unpinned() const noexcept { return !pin_warnings_.empty(); }
  const std::vector<std::string>& pin_warnings() const noexcept { return pin_warnings_; }

  /// Runs body on workers [0, active) and returns the wall-clock seconds
  /// from the first worker entering the body to the last one leaving it. A worker that throws
  /// aborts the run with Errc::WorkerFailure.
  double run(std::size_t active, const Body& body);

 private:
  using Clock = std::chrono::steady_clock;
  struct alignas(64) Stamp {
    Clock::time_point start;
    Clock::time_point end;
  };

  void start(std::size_t size);
  void worker_main(std::size_t index);

  std::vector<int> cpus_;
  std::vector<Stamp> stamps_;
  std::vector<std::thread> threads_;
  std::vector<std::string> pin_warnings_;
  std::optional<std::barrier<>> start_barrier_;
  std::optional<std::barrier<>> end_barrier_;
  std::optional<std::barrier<>> ready_barrier_;
  std::mutex mutex_;
  const Body* body_ = nullptr;
  std::size_t active_ = 0;
  bool stopping_ = false;
  std::exception_ptr failure_;
};

}  // namespace streamer
