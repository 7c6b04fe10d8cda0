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

#ifndef DOMAINBUS__BENCH_HPP_
#define DOMAINBUS__BENCH_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "domainbus/clock.hpp"
#include "domainbus/config.hpp"
#include "domainbus/daemon.hpp"
#include "domainbus/dds.hpp"
#include "domainbus/errors.hpp"
#include "domainbus/transport.hpp"

namespace domainbus {

struct LatencyStats {
  std::size_t n = 0;
  double mean_ns = 0;
  double trimmed_mean_ns = 0;
  std::int64_t p50_ns = 0;
  std::int64_t p99_ns = 0;
  std::int64_t min_ns = 0;
  std::int64_t max_ns = 0;
};

/// Mean, worst-tail-trimmed mean, and nearest-rank percentiles. The
/// trimmed mean drops the ceil(trim * n) largest samples (at least one
/// sample always remains); percentiles use the full set, rank
/// ceil(p/100 * n), 1-indexed.
inline Result<LatencyStats> compute_stats(std::vector<std::int64_t> samples, double trim) {
  if (samples.empty()) {
    return Errc::empty_input;
  }
  if (trim < 0.0 || trim >= 1.0) {
    return Errc::invalid_argument;
  }
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  LatencyStats s;
  s.n = n;
  s.min_ns = samples.front();
  s.max_ns = samples.back();
  s.mean_ns = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  std::size_t drop = static_cast<std::size_t>(std::ceil(trim * static_cast<double>(n)));
  if (drop >= n) {
    drop = n - 1;
  }
  const std::size_t keep = n - drop;
  s.trimmed_mean_ns =
      std::accumulate(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(keep), 0.0) /
      static_cast<double>(keep);
  const auto rank = [n](double p) {
    auto r = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    return r == 0 ? std::size_t{1} : r;
  };
  s.p50_ns = samples[rank(50.0) - 1];
  s.p99_ns = samples[rank(99.0) - 1];
  return s;
}

/// Send deadline of message k at a fixed rate, anchored to t0; deadlines
/// are computed, not accumulated, so pacing error does not drift.
inline std::int64_t pacing_deadline(std::int64_t t0_ns, std::uint64_t k, double rate_hz) {
  return t0_ns + static_cast<std::int64_t>(
                     std::llround(static_cast<double>(k) * 1e9 / rate_hz));
}

inline const char* csv_header() {
  return "size_bytes,rate_hz,n,mean_ns,trimmed_mean_ns,p50_ns,p99_ns,min_ns,max_ns,"
         "mode_switches,copies_per_sample";
}

struct BenchConfig {
  Config bus;
  std::uint32_t payload_bytes = 64;
  double rate_hz = 100.0;
  std::uint32_t count = 1000;
  double trim = 0.10;
  QosProfile qos{Reliability::reliable, History::keep_all, 0, Durability::volatile_local};
  bool local_only = false;          // one instance, no transport, no daemons
  bool use_udp = false;             // otherwise the simulated network
  std::int64_t watchdog_ns = 120'000'000'000;
  // once the driver is done, workers give up after this long without progress
  // (lossy best-effort runs never reach count)
  std::int64_t drain_grace_ns = 500'000'000;
  std::function<void(std::uint64_t)> on_before_send;  // test hook, called per message
};

struct BenchOutput {
  LatencyStats stats;
  std::uint32_t completed = 0;  // round trips measured
  std::uint64_t mode_switches = 0;
  double copies_per_sample = 0;
  std::vector<std::int64_t> send_times;  // driver wakeup instant per message
  BusStats bus_a;
  BusStats bus_b;
  DaemonStats daemon_a;
  DaemonStats daemon_b;
};

inline std::string csv_row(std::uint32_t size_bytes, double rate_hz, const BenchOutput& out) {
  std::ostringstream os;
  os << size_bytes << ',' << rate_hz << ',' << out.stats.n << ',' << out.stats.mean_ns << ','
     << out.stats.trimmed_mean_ns << ',' << out.stats.p50_ns << ',' << out.stats.p99_ns << ','
     << out.stats.min_ns << ',' << out.stats.max_ns << ',' << out.mode_switches << ','
     << out.copies_per_sample;
  return os.str();
}

namespace bench_detail {

inline void sleep_until_ns(std::int64_t deadline_ns) {
  for (;;) {
    const std::int64_t now = mono_now_ns();
    if (now >= deadline_ns) {
      return;
    }
    const std::int64_t left = deadline_ns - now;
    if (left > 300'000) {
      std::this_thread::sleep_for(std::chrono::nanoseconds(left - 200'000));
    }
    // final stretch: spin
  }
}

inline bool retryable(Errc e) {
  return e == Errc::backpressure_full || e == Errc::buffer_full || e == Errc::heap_exhausted;
}

/// Allocates a ready-to-read destination block set for take.
inline bool alloc_dests(Bus& bus, DomainContext& ctx, std::uint32_t n, std::uint32_t bytes,
                        std::vector<BlockRef>& out, std::int64_t give_up_ns) {
  out.clear();
  for (std::uint32_t i = 0; i < n; ++i) {
    for (;;) {
      auto r = bus.alloc_block(ctx, bytes);
      if (r.ok()) {
        out.push_back(r.value());
        break;
      }
      if (!retryable(r.error()) || mono_now_ns() > give_up_ns) {
        for (const auto& ref : out) {
          (void)bus.free_app_block(ctx, ref);
        }
        out.clear();
        return false;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(50));
    }
  }
  return true;
}

struct RoleIds {
  ProcessIdentity id;
  std::unique_ptr<DomainContext> ctx;
};

}  // namespace bench_detail

/// Round-trip pipeline: a driver publishes "ping" at a paced rate, a
/// relay takes each ping and publishes its payload back on "pong", and a
/// listener takes pongs, reading the send timestamp planted at payload
/// offset 0. Remote runs place the relay on a second instance behind the
/// chosen transport, with a daemon on each side.
inline Result<BenchOutput> run_round_trip(const BenchConfig& bc) {
  if (bc.payload_bytes < 8 || bc.count == 0 || bc.rate_hz <= 0) {
    return Errc::invalid_argument;
  }
  Config cfg = bc.bus;
  const std::uint32_t max_len = bc.payload_bytes;

  std::unique_ptr<SimNetwork> sim;
  std::unique_ptr<UdpTransport> udp_a, udp_b;
  Transport* ta = nullptr;
  Transport* tb = nullptr;

  Bus bus_a(cfg);
  std::unique_ptr<Bus> bus_b_holder;
  Bus* bus_b = &bus_a;
  if (!bc.local_only) {
    Config cfg_b = cfg;
    cfg_b.net.seed = cfg.net.seed + 1;  // distinct guid salt input
    bus_b_holder = std::make_unique<Bus>(cfg_b);
    bus_b = bus_b_holder.get();
    if (bc.use_udp) {
      auto a = UdpTransport::open(0, cfg.rx_queue_capacity, cfg.wake_cost_ns,
                                  cfg.net.mtu_datagram);
      auto b = UdpTransport::open(0, cfg.rx_queue_capacity, cfg.wake_cost_ns,
                                  cfg.net.mtu_datagram);
      if (!a.ok() || !b.ok()) {
        return Errc::io_failure;
      }
      udp_a = std::move(a.value());
      udp_b = std::move(b.value());
      ta = udp_a.get();
      tb = udp_b.get();
    } else {
      sim = std::make_unique<SimNetwork>(cfg.net, cfg.rx_queue_capacity, cfg.wake_cost_ns);
      ta = &sim->make_node();
      tb = &sim->make_node();
    }
    bus_a.set_transport(*ta);
    bus_b->set_transport(*tb);
  }

  // driver and listener live on instance A, the relay on B
  auto id_driver = bus_a.register_process();
  DomainContext ctx_driver(bus_a.runtime(), id_driver);
  auto id_listener = bus_a.register_process();
  DomainContext ctx_listener(bus_a.runtime(), id_listener);
  auto id_relay = bus_b->register_process();
  DomainContext ctx_relay(bus_b->runtime(), id_relay);

  auto pa_driver = bus_a.create_participant(ctx_driver);
  auto pa_listener = bus_a.create_participant(ctx_listener);
  auto pa_relay = bus_b->create_participant(ctx_relay);
  if (!pa_driver.ok() || !pa_listener.ok() || !pa_relay.ok()) {
    return Errc::heap_exhausted;
  }
  auto ping_a = bus_a.create_topic(ctx_driver, pa_driver.value(), "ping", max_len, bc.qos);
  auto pong_a = bus_a.create_topic(ctx_driver, pa_driver.value(), "pong", max_len, bc.qos);
  if (!ping_a.ok() || !pong_a.ok()) {
    return ping_a.ok() ? pong_a.error() : ping_a.error();
  }
  Descriptor ping_b_desc = ping_a.value();
  Descriptor pong_b_desc = pong_a.value();
  if (!bc.local_only) {
    auto ping_b = bus_b->create_topic(ctx_relay, pa_relay.value(), "ping", max_len, bc.qos);
    auto pong_b = bus_b->create_topic(ctx_relay, pa_relay.value(), "pong", max_len, bc.qos);
    if (!ping_b.ok() || !pong_b.ok()) {
      return Errc::heap_exhausted;
    }
    ping_b_desc = ping_b.value();
    pong_b_desc = pong_b.value();
    (void)bus_a.add_remote_peer(ctx_driver, ping_a.value(), tb->endpoint());
    (void)bus_b->add_remote_peer(ctx_relay, pong_b_desc, ta->endpoint());
  }

  auto w_ping = bus_a.create_writer(ctx_driver, pa_driver.value(), ping_a.value(), bc.qos);
  auto r_pong = bus_a.create_reader(ctx_listener, pa_listener.value(), pong_a.value(), bc.qos);
  auto r_ping = bus_b->create_reader(ctx_relay, pa_relay.value(), ping_b_desc, bc.qos);
  auto w_pong = bus_b->create_writer(ctx_relay, pa_relay.value(), pong_b_desc, bc.qos);
  if (!w_ping.ok() || !r_pong.ok() || !r_ping.ok() || !w_pong.ok()) {
    return Errc::heap_exhausted;
  }
  const Descriptor listen_readers[] = {r_pong.value()};
  auto ws_listener = bus_a.create_waitset(ctx_listener, pa_listener.value(), listen_readers);
  const Descriptor relay_readers[] = {r_ping.value()};
  auto ws_relay = bus_b->create_waitset(ctx_relay, pa_relay.value(), relay_readers);
  if (!ws_listener.ok() || !ws_relay.ok()) {
    return Errc::heap_exhausted;
  }

  std::unique_ptr<Daemon> daemon_a, daemon_b;
  if (!bc.local_only) {
    daemon_a = std::make_unique<Daemon>(bus_a);
    daemon_b = std::make_unique<Daemon>(*bus_b);
    daemon_a->start();
    daemon_b->start();
  }

  const std::int64_t give_up = mono_now_ns() + bc.watchdog_ns;
  std::atomic<bool> abort{false};
  std::atomic<bool> driver_done{false};

  std::thread relay([&] {
    std::uint32_t relayed = 0;
    std::int64_t last_progress = mono_now_ns();
    std::vector<BlockRef> dests;
    while (relayed < bc.count && !abort.load(std::memory_order_relaxed)) {
      if (mono_now_ns() > give_up) {
        abort.store(true, std::memory_order_relaxed);
        return;
      }
      if (driver_done.load(std::memory_order_relaxed) &&
          mono_now_ns() - last_progress > bc.drain_grace_ns) {
        return;
      }
      auto ready = bus_b->waitset_wait(ctx_relay, ws_relay.value(), 50'000'000);
      if (!ready.ok() || ready.value().empty()) {
        continue;
      }
      for (;;) {
        const std::uint32_t batch = 4;
        if (!bench_detail::alloc_dests(*bus_b, ctx_relay, batch, max_len, dests, give_up)) {
          abort.store(true, std::memory_order_relaxed);
          return;
        }
        auto taken = bus_b->take(ctx_relay, r_ping.value(), dests, batch);
        if (!taken.ok() || taken.value().empty()) {
          for (const auto& ref : dests) {
            (void)bus_b->free_app_block(ctx_relay, ref);
          }
          break;
        }
        const std::size_t n = taken.value().size();
        for (std::size_t i = 0; i < n; ++i) {
          for (;;) {
            auto wr = bus_b->write(ctx_relay, w_pong.value(), dests[i],
                                   taken.value()[i].len);
            if (wr.ok()) {
              break;
            }
            if (!bench_detail::retryable(wr.error()) || mono_now_ns() > give_up) {
              abort.store(true, std::memory_order_relaxed);
              return;
            }
            std::this_thread::sleep_for(std::chrono::microseconds(50));
          }
          ++relayed;
          last_progress = mono_now_ns();
        }
        for (std::size_t i = n; i < dests.size(); ++i) {
          (void)bus_b->free_app_block(ctx_relay, dests[i]);
        }
      }
    }
  });

  std::vector<std::int64_t> latencies;
  latencies.reserve(bc.count);
  std::thread listener([&] {
    std::int64_t last_progress = mono_now_ns();
    std::vector<BlockRef> dests;
    while (latencies.size() < bc.count && !abort.load(std::memory_order_relaxed)) {
      if (mono_now_ns() > give_up) {
        abort.store(true, std::memory_order_relaxed);
        return;
      }
      if (driver_done.load(std::memory_order_relaxed) &&
          mono_now_ns() - last_progress > bc.drain_grace_ns) {
        return;
      }
      auto ready = bus_a.waitset_wait(ctx_listener, ws_listener.value(), 50'000'000);
      if (!ready.ok() || ready.value().empty()) {
        continue;
      }
      for (;;) {
        const std::uint32_t batch = 4;
        if (!bench_detail::alloc_dests(bus_a, ctx_listener, batch, max_len, dests, give_up)) {
          abort.store(true, std::memory_order_relaxed);
          return;
        }
        auto taken = bus_a.take(ctx_listener, r_pong.value(), dests, batch);
        if (!taken.ok() || taken.value().empty()) {
          for (const auto& ref : dests) {
            (void)bus_a.free_app_block(ctx_listener, ref);
          }
          break;
        }
        const std::int64_t now = mono_now_ns();
        const std::size_t n = taken.value().size();
        for (std::size_t i = 0; i < n; ++i) {
          auto bytes = bus_a.block_data(ctx_listener, dests[i]);
          std::uint64_t ts = 0;
          if (bytes.size() >= 8) {
            std::memcpy(&ts, bytes.data(), 8);
          }
          latencies.push_back(now - static_cast<std::int64_t>(ts));
          last_progress = now;
          (void)bus_a.free_app_block(ctx_listener, dests[i]);
        }
        for (std::size_t i = n; i < dests.size(); ++i) {
          (void)bus_a.free_app_block(ctx_listener, dests[i]);
        }
      }
    }
  });

  // driver, on this thread
  std::vector<std::int64_t> send_times;
  send_times.reserve(bc.count);
  const std::int64_t t0 = mono_now_ns();
  for (std::uint64_t k = 0; k < bc.count && !abort.load(std::memory_order_relaxed); ++k) {
    bench_detail::sleep_until_ns(pacing_deadline(t0, k, bc.rate_hz));
    send_times.push_back(mono_now_ns());
    if (bc.on_before_send) {
      bc.on_before_send(k);
    }
    BlockRef ref;
    for (;;) {
      auto r = bus_a.alloc_block(ctx_driver, max_len);
      if (r.ok()) {
        ref = r.value();
        break;
      }
      if (!bench_detail::retryable(r.error()) || mono_now_ns() > give_up) {
        abort.store(true, std::memory_order_relaxed);
        break;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(50));
    }
    if (abort.load(std::memory_order_relaxed)) {
      break;
    }
    (void)bus_a.begin_block_write(ctx_driver, ref, bc.payload_bytes);
    auto bytes = bus_a.block_data(ctx_driver, ref);
    if (bytes.size() >= bc.payload_bytes) {
      std::memset(bytes.data(), 0x5a, bc.payload_bytes);
    }
    (void)bus_a.advance_block(ctx_driver, ref, bc.payload_bytes);
    for (;;) {
      // refresh the timestamp on each attempt so a backpressure stall
      // does not inflate the measured latency
      const std::uint64_t ts = static_cast<std::uint64_t>(mono_now_ns());
      std::memcpy(bytes.data(), &ts, 8);
      auto wr = bus_a.write(ctx_driver, w_ping.value(), ref, bc.payload_bytes);
      if (wr.ok()) {
        break;
      }
      if (!bench_detail::retryable(wr.error()) || mono_now_ns() > give_up) {
        abort.store(true, std::memory_order_relaxed);
        break;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(50));
    }
  }
  driver_done.store(true, std::memory_order_relaxed);

  relay.join();
  listener.join();
  if (daemon_a) {
    // let trailing acks and releases settle before tearing down
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    daemon_a->stop();
  }
  if (daemon_b) {
    daemon_b->stop();
  }

  BenchOutput out;
  out.completed = static_cast<std::uint32_t>(latencies.size());
  out.send_times = std::move(send_times);
  if (!latencies.empty()) {
    auto stats = compute_stats(std::move(latencies), bc.trim);
    if (!stats.ok()) {
      return stats.error();
    }
    out.stats = stats.value();
  }
  out.bus_a = bus_a.stats();
  out.bus_b = bus_b->stats();
  if (daemon_a) {
    out.daemon_a = daemon_a->stats();
    out.daemon_b = daemon_b->stats();
    out.mode_switches = out.daemon_a.mode_switches + out.daemon_b.mode_switches;
  }
  const std::uint64_t total_taken = out.bus_a.samples_taken + out.bus_b.samples_taken;
  const std::uint64_t total_copies = out.bus_a.copies + out.bus_b.copies;
  out.copies_per_sample =
      total_taken == 0 ? 0.0 : static_cast<double>(total_copies) / static_cast<double>(total_taken);
  return out;
}

}  // namespace domainbus

#endif  // DOMAINBUS__BENCH_HPP_
