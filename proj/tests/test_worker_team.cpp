#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>

#include "streamer/error.hpp"
#include "streamer/topology.hpp"
#include "streamer/worker_team.hpp"

using namespace streamer;

TEST(WorkerTeam, RunsOnlyActiveWorkers) {
  WorkerTeam team(4);
  std::atomic<int> mask{0};
  team.run(3, [&](std::size_t w, std::size_t active) {
    EXPECT_EQ(active, 3u);
    mask.fetch_or(1 << w);
  });
  EXPECT_EQ(mask.load(), 0b0111);

  mask = 0;
  team.run(4, [&](std::size_t w, std::size_t) { mask.fetch_or(1 << w); });
  EXPECT_EQ(mask.load(), 0b1111);
}

TEST(WorkerTeam, ReturnsElapsedTime) {
  WorkerTeam team(2);
  const double t = team.run(2, [](std::size_t, std::size_t) {
    volatile double x = 0;
    for (int i = 0; i < 100000; ++i) x = x + 1.0;
  });
  EXPECT_GT(t, 0.0);
  EXPECT_LT(t, 5.0);
}

TEST(WorkerTeam, WorkerExceptionBecomesFailure) {
  WorkerTeam team(2);
  try {
    team.run(2, [](std::size_t w, std::size_t) {
      if (w == 1) throw std::runtime_error("boom");
    });
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::WorkerFailure);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
  // The team stays usable afterwards.
  std::atomic<int> ran{0};
  team.run(2, [&](std::size_t, std::size_t) { ++ran; });
  EXPECT_EQ(ran.load(), 2);
}

TEST(WorkerTeam, RejectsBadActiveCount) {
  WorkerTeam team(2);
  EXPECT_THROW(team.run(0, [](std::size_t, std::size_t) {}), Error);
  EXPECT_THROW(team.run(3, [](std::size_t, std::size_t) {}), Error);
}

TEST(WorkerTeam, UnpinnedTeamHasNoWarnings) {
  WorkerTeam team(3);
  EXPECT_FALSE(team.unpinned());
}

TEST(WorkerTeam, PinsToAllowedCpu) {
  const auto allowed = current_thread_affinity();
  ASSERT_FALSE(allowed.empty());
  WorkerTeam team(std::vector<int>{allowed.front()});
  EXPECT_FALSE(team.unpinned());
  std::vector<int> seen;
  team.run(1, [&](std::size_t, std::size_t) { seen = current_thread_affinity(); });
  EXPECT_EQ(seen, std::vector<int>{allowed.front()});
}

TEST(WorkerTeam, RefusedPinIsRecordedNotFatal) {
  // A CPU number no host has: the platform refuses and the team runs unpinned.
  WorkerTeam team(std::vector<int>{4000});
  EXPECT_TRUE(team.unpinned());
  ASSERT_EQ(team.pin_warnings().size(), 1u);
  std::atomic<int> ran{0};
  team.run(1, [&](std::size_t, std::size_t) { ++ran; });
  EXPECT_EQ(ran.load(), 1);
}
