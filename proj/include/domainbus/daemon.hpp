// Copyright 2026 The DomainBus Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DOMAINBUS__DAEMON_HPP_
#define DOMAINBUS__DAEMON_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "domainbus/clock.hpp"
#include "domainbus/config.hpp"
#include "domainbus/dds.hpp"
#include "domainbus/transport.hpp"

namespace domainbus {

enum class DaemonMode : std::uint8_t { event_driven, polling };

inline const char* daemon_mode_name(DaemonMode m) {
  return m == DaemonMode::event_driven ? "EventDriven" : "Polling";
}

/// Arrival-rate tracker deciding between blocking on the receive queue
/// and spinning on it. The exponentially weighted mean of inter-arrival
/// gaps (weight 1/64) gives the rate; the up and down thresholds differ
/// so a rate sitting between them never flaps the mode.
struct ModeState {
  DaemonMode mode = DaemonMode::event_driven;
  double ewma_gap_ns = 0;  // 0 until two arrivals seen
  std::int64_t last_arrival_ns = 0;
  std::uint64_t arrivals = 0;
  std::uint64_t switches = 0;

  double rate_hz() const { return ewma_gap_ns > 0 ? 1e9 / ewma_gap_ns : 0.0; }
};

inline DaemonMode update_mode(ModeState& st, std::int64_t arrival_ns, std::uint32_t up_hz,
                              std::uint32_t down_hz) {
  ++st.arrivals;
  if (st.arrivals == 1) {
    st.last_arrival_ns = arrival_ns;
    return st.mode;
  }
  const std::int64_t raw_gap = arrival_ns - st.last_arrival_ns;
  const double gap = raw_gap < 1 ? 1.0 : static_cast<double>(raw_gap);
  st.last_arrival_ns = arrival_ns;
  if (st.ewma_gap_ns <= 0) {
    st.ewma_gap_ns = gap;
  } else {
    st.ewma_gap_ns += (gap - st.ewma_gap_ns) / 64.0;
  }
  const double rate = st.rate_hz();
  if (st.mode == DaemonMode::event_driven && rate > static_cast<double>(up_hz)) {
    st.mode = DaemonMode::polling;
    ++st.switches;
  } else if (st.mode == DaemonMode::polling && rate < static_cast<double>(down_hz)) {
    st.mode = DaemonMode::event_driven;
    ++st.switches;
  }
  return st.mode;
}

struct DaemonStats {
  DaemonMode mode = DaemonMode::event_driven;
  std::uint64_t mode_switches = 0;
  std::uint64_t datagrams = 0;
  std::uint64_t batches = 0;
  std::uint64_t wait_wakes = 0;
  std::uint64_t idle_fallbacks = 0;
  std::uint64_t heartbeat_ticks = 0;
  std::uint64_t reclaim_passes = 0;
  std::int64_t cpu_ns = 0;
  std::int64_t wall_ns = 0;
  double rate_hz = 0;
};

/// The trusted service thread of one bus instance. Pulls datagrams from
/// the transport (blocking when traffic is sparse, spinning when dense),
/// runs the wire protocol, emits heartbeats, and reclaims resources of
/// processes that deregistered.
class Daemon {
 public:
  explicit Daemon(Bus& bus)
      : bus_(bus),
        identity_(bus.runtime().register_process()),
        ctx_(bus.runtime(), identity_, /*trusted=*/true) {}

  ~Daemon() { stop(); }

  Daemon(const Daemon&) = delete;
  Daemon& operator=(const Daemon&) = delete;

  void start() {
    if (th_.joinable()) {
      return;
    }
    stop_.store(false, std::memory_order_release);
    th_ = std::thread([this] { run(); });
  }

  void stop() {
    stop_.store(true, std::memory_order_release);
    if (bus_.transport() != nullptr) {
      bus_.transport()->rx().kick();
    }
    if (th_.joinable()) {
      th_.join();
    }
  }

  DaemonStats stats() const {
    DaemonStats s;
    {
      std::lock_guard lock(mu_);
      s.mode = state_.mode;
      s.mode_switches = state_.switches;
      s.rate_hz = state_.rate_hz();
    }
    s.datagrams = datagrams_.load(std::memory_order_relaxed);
    s.batches = batches_.load(std::memory_order_relaxed);
    s.wait_wakes = wait_wakes_.load(std::memory_order_relaxed);
    s.idle_fallbacks = idle_fallbacks_.load(std::memory_order_relaxed);
    s.heartbeat_ticks = hb_ticks_.load(std::memory_order_relaxed);
    s.reclaim_passes = reclaim_passes_.load(std::memory_order_relaxed);
    s.cpu_ns = cpu_ns_.load(std::memory_order_relaxed);
    s.wall_ns = wall_ns_.load(std::memory_order_relaxed);
    return s;
  }

  /// Timestamped mode transitions, the initial mode first.
  std::vector<std::pair<std::int64_t, DaemonMode>> mode_trace() const {
    std::lock_guard lock(mu_);
    return trace_;
  }

  Pid pid() const noexcept { return identity_.pid; }

 private:
  static constexpr std::int64_t kIdleFallbackNs = 50'000'000;  // polling with no traffic

  void run() {
    const Config& cfg = bus_.config();
    {
      std::lock_guard lock(mu_);
      if (cfg.force_mode == ForcedMode::poll) {
        state_.mode = DaemonMode::polling;
      } else {
        state_.mode = DaemonMode::event_driven;
      }
      trace_.clear();
      trace_.emplace_back(mono_now_ns(), state_.mode);
    }
    const std::int64_t cpu0 = thread_cpu_now_ns();
    const std::int64_t wall0 = mono_now_ns();
    std::int64_t next_hb = wall0 + cfg.heartbeat_period_ns;
    std::int64_t next_reclaim = wall0 + cfg.reclaim_period_ns;
    std::int64_t last_activity = wall0;

    while (!stop_.load(std::memory_order_acquire)) {
      const std::int64_t now = mono_now_ns();
      if (now >= next_hb) {
        (void)bus_.send_due_heartbeats(ctx_, now);
        hb_ticks_.fetch_add(1, std::memory_order_relaxed);
        while (next_hb <= now) {
          next_hb += cfg.heartbeat_period_ns;
        }
      }
      if (now >= next_reclaim) {
        (void)bus_.reclaim_terminated(ctx_);
        reclaim_passes_.fetch_add(1, std::memory_order_relaxed);
        while (next_reclaim <= now) {
          next_reclaim += cfg.reclaim_period_ns;
        }
      }

      std::vector<Datagram> batch;
      DaemonMode mode;
      {
        std::lock_guard lock(mu_);
        mode = state_.mode;
      }
      if (bus_.transport() == nullptr) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      } else if (mode == DaemonMode::polling) {
        batch = bus_.transport()->rx().poll(cfg.rx_batch_max);
        if (batch.empty() && cfg.force_mode == ForcedMode::automatic &&
            now - last_activity > kIdleFallbackNs) {
          switch_mode(DaemonMode::event_driven, now);
          idle_fallbacks_.fetch_add(1, std::memory_order_relaxed);
        }
      } else {
        std::int64_t timeout = std::min(next_hb, next_reclaim) - mono_now_ns();
        if (timeout < 0) {
          timeout = 0;
        }
        auto n = bus_.transport()->rx().wait(ctx_, timeout);
        if (n.ok() && n.value() > 0) {
          wait_wakes_.fetch_add(1, std::memory_order_relaxed);
          batch = bus_.transport()->rx().poll(cfg.rx_batch_max);
        }
      }

      if (!batch.empty()) {
        last_activity = mono_now_ns();
        if (cfg.force_mode == ForcedMode::automatic) {
          std::lock_guard lock(mu_);
          const DaemonMode before = state_.mode;
          for (const auto& dg : batch) {
            (void)update_mode(state_, dg.arrival_ns, cfg.mode_up_hz, cfg.mode_down_hz);
          }
          if (state_.mode != before) {
            trace_.emplace_back(last_activity, state_.mode);
          }
        }
        (void)bus_.process_rx_batch(ctx_, batch);
        datagrams_.fetch_add(batch.size(), std::memory_order_relaxed);
        batches_.fetch_add(1, std::memory_order_relaxed);
      }
      cpu_ns_.store(thread_cpu_now_ns() - cpu0, std::memory_order_relaxed);
      wall_ns_.store(mono_now_ns() - wall0, std::memory_order_relaxed);
    }
    (void)bus_.reclaim_terminated(ctx_);
  }

  void switch_mode(DaemonMode m, std::int64_t now) {
    std::lock_guard lock(mu_);
    if (state_.mode == m) {
      return;
    }
    state_.mode = m;
    ++state_.switches;
    trace_.emplace_back(now, m);
  }

  Bus& bus_;
  ProcessIdentity identity_;
  DomainContext ctx_;
  std::thread th_;
  std::atomic<bool> stop_{false};

  mutable std::mutex mu_;
  ModeState state_;
  std::vector<std::pair<std::int64_t, DaemonMode>> trace_;

  std::atomic<std::uint64_t> datagrams_{0}, batches_{0}, wait_wakes_{0}, idle_fallbacks_{0},
      hb_ticks_{0}, reclaim_passes_{0};
  std::atomic<std::int64_t> cpu_ns_{0}, wall_ns_{0};
};

}  // namespace domainbus

#endif  // DOMAINBUS__DAEMON_HPP_
