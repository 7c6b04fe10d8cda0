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

#ifndef DOMAINBUS__CONFIG_HPP_
#define DOMAINBUS__CONFIG_HPP_

#include <cstdint>

namespace domainbus {

/// What happens when a library call overruns its time bound.
enum class BoundPolicy : std::uint8_t {
  record,  // count the violation, return normally
  fail,    // count it and fail the call with TimeBoundExceeded
};

enum class TransportKind : std::uint8_t {
  sim,  // in-process simulated network
  udp,  // UDP loopback sockets
};

/// Daemon receive strategy override. `automatic` lets the arrival-rate
/// estimator pick between interrupt-driven waits and busy polling.
enum class ForcedMode : std::uint8_t {
  automatic,
  poll,
  event,
};

/// Simulated network parameters. Every random decision derives from `seed`,
/// so two runs with the same seed and send schedule behave identically.
struct NetConfig {
  double loss_prob = 0.0;        // per-datagram drop probability
  std::int64_t delay_ns = 0;     // fixed one-way delay
  std::int64_t jitter_ns = 0;    // uniform extra delay in [0, jitter_ns]
  double reorder_prob = 0.0;     // chance of an extra jitter draw
  std::uint64_t seed = 42;
  std::uint32_t mtu_datagram = 1400;  // max encoded datagram size in bytes
};

struct Config {
  // library call time bounds
  std::int64_t time_bound_ns = 1'000'000;  // 1 ms of CPU time per call
  BoundPolicy bound_policy = BoundPolicy::record;

  // protected heap
  std::uint32_t heap_slots_per_kind = 1024;

  // permanent transfer buffers
  std::uint64_t region_size = 16ull << 20;   // per-process region, 16 MiB
  std::uint64_t region_limit = 64ull << 20;  // per-process reservation cap
  std::uint32_t granule_size = 4096;

  // dds
  std::uint32_t receipt_queue_capacity = 1024;  // per-reader receipt ring
  std::uint32_t max_unacked_window = 1024;      // reliable writer send window
  bool eager_notify = true;  // wake sleeping readers before finishing delivery

  // wire / transport
  std::uint32_t mtu_payload = 1344;  // max sample bytes per DATA/DATA_FRAG
  TransportKind transport = TransportKind::sim;
  NetConfig net;
  std::uint32_t rx_queue_capacity = 4096;
  std::int64_t wake_cost_ns = 5'000;  // modeled interrupt wakeup cost
  std::int64_t reassembly_expiry_ns = 5'000'000'000;

  // daemon
  std::int64_t heartbeat_period_ns = 1'000'000'000;
  std::int64_t reclaim_period_ns = 100'000'000;
  double mode_up_hz = 10'000.0;   // switch to polling above this rate
  double mode_down_hz = 5'000.0;  // switch back to event-driven below this
  ForcedMode force_mode = ForcedMode::automatic;
  std::uint32_t rx_batch_max = 64;  // datagrams handled per library call

  // instrumentation (tests and benchmarks)
  bool instrument = false;  // per-delivery trace + per-pair copy ledger
};

}  // namespace domainbus

#endif  // DOMAINBUS__CONFIG_HPP_
