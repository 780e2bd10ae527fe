#include "streamer/worker_team.hpp"

#include <algorithm>

#include "streamer/error.hpp"
#include "streamer/topology.hpp"

namespace streamer {

WorkerTeam::WorkerTeam(std::size_t size) : cpus_(size, -1) { start(size); }

WorkerTeam::WorkerTeam(std::vector<int> cpus) : cpus_(std::move(cpus)) { start(cpus_.size()); }

void WorkerTeam::start(std::size_t size) {
  if (size == 0) throw Error(Errc::InvalidArgument, "worker team needs at least one worker");
  const auto participants = static_cast<std::ptrdiff_t>(size + 1);
  start_barrier_.emplace(participants);
  end_barrier_.emplace(participants);
  ready_barrier_.emplace(participants);
  stamps_.resize(size);
  threads_.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    threads_.emplace_back([this, i] { worker_main(i); });
  }
  // Wait until every worker has attempted its pin so pin status is final.
  ready_barrier_->arrive_and_wait();
}

WorkerTeam::~WorkerTeam() {
  stopping_ = true;
  start_barrier_->arrive_and_wait();
  for (auto& t : threads_) t.join();
}

void WorkerTeam::worker_main(std::size_t index) {
  if (const int cpu = cpus_[index]; cpu >= 0) {
    std::string error;
    if (!pin_current_thread(cpu, &error)) {
      std::lock_guard lock(mutex_);
      pin_warnings_.push_back("worker " + std::to_string(index) + " unpinned: " + error);
    }
  }
  ready_barrier_->arrive_and_wait();

  for (;;) {
    start_barrier_->arrive_and_wait();
    if (stopping_) return;
    if (index < active_) {
      stamps_[index].start = Clock::now();
      try {
        (*body_)(index, active_);
      } catch (...) {
        std::lock_guard lock(mutex_);
        if (!failure_) failure_ = std::current_exception();
      }
      stamps_[index].end = Clock::now();
    }
    end_barrier_->arrive_and_wait();
  }
}

double WorkerTeam::run(std::size_t active, const Body& body) {
  if (active == 0 || active > size()) {
    throw Error(Errc::InvalidArgument, "active worker count " + std::to_string(active) +
                                           " outside team of " + std::to_string(size()));
  }
  body_ = &body;
  active_ = active;
  failure_ = nullptr;

  // Workers stamp their own start and end: on an oversubscribed host the
  // caller may not be scheduled again until the workers are already done.
  start_barrier_->arrive_and_wait();
  end_barrier_->arrive_and_wait();
  body_ = nullptr;
  auto t0 = stamps_[0].start;
  auto t1 = stamps_[0].end;
  for (std::size_t i = 1; i < active; ++i) {
    t0 = std::min(t0, stamps_[i].start);
    t1 = std::max(t1, stamps_[i].end);
  }

  if (failure_) {
    std::string what = "unknown exception";
    try {
      std::rethrow_exception(failure_);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    throw Error(Errc::WorkerFailure, "worker terminated abnormally: " + what);
  }
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace streamer
