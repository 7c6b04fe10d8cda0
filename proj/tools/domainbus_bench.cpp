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

// Round-trip latency benchmark. A driver paces "ping" samples, a relay
// bounces each one back on "pong", and the listener measures send-to-take
// time from the timestamp carried at payload offset zero.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "domainbus/bench.hpp"

namespace db = domainbus;

int main(int argc, char** argv) {
  CLI::App app{"domainbus round-trip benchmark"};

  db::BenchConfig bc;
  bool csv = false;
  std::string transport = "sim";
  std::string bound_policy = "record";
  std::string force_mode = "auto";
  std::string reliability = "reliable";
  std::string durability = "volatile";
  std::uint32_t keep_last = 0;
  std::int64_t heartbeat_ms = bc.bus.heartbeat_period_ns / 1'000'000;
  std::int64_t reclaim_ms = bc.bus.reclaim_period_ns / 1'000'000;

  app.add_option("--size", bc.payload_bytes, "payload bytes per sample (>= 8)")
      ->capture_default_str();
  app.add_option("--rate", bc.rate_hz, "send rate in Hz")->capture_default_str();
  app.add_option("--count", bc.count, "number of round trips")->capture_default_str();
  app.add_option("--trim", bc.trim, "fraction of the worst tail to trim")
      ->capture_default_str();
  app.add_flag("--csv", csv, "emit one CSV header and row instead of text");
  app.add_flag("--local", bc.local_only, "single instance, no transport or service threads");
  app.add_option("--transport", transport, "sim or udp")
      ->check(CLI::IsMember({"sim", "udp"}))
      ->capture_default_str();

  app.add_option("--reliability", reliability, "reliable or best-effort")
      ->check(CLI::IsMember({"reliable", "best-effort"}))
      ->capture_default_str();
  app.add_option("--keep-last", keep_last, "history depth (0 keeps everything)")
      ->capture_default_str();
  app.add_option("--durability", durability, "volatile or transient-local")
      ->check(CLI::IsMember({"volatile", "transient-local"}))
      ->capture_default_str();

  app.add_option("--loss", bc.bus.net.loss_prob, "simulated datagram loss probability")
      ->capture_default_str();
  app.add_option("--delay-ns", bc.bus.net.delay_ns, "simulated one-way delay")
      ->capture_default_str();
  app.add_option("--jitter-ns", bc.bus.net.jitter_ns, "simulated delay jitter bound")
      ->capture_default_str();
  app.add_option("--reorder", bc.bus.net.reorder_prob, "simulated reorder probability")
      ->capture_default_str();
  app.add_option("--seed", bc.bus.net.seed, "simulation seed")->capture_default_str();
  app.add_option("--mtu-datagram", bc.bus.net.mtu_datagram, "max encoded datagram bytes")
      ->capture_default_str();

  app.add_option("--time-bound-ns", bc.bus.time_bound_ns, "library call CPU budget")
      ->capture_default_str();
  app.add_option("--bound-policy", bound_policy, "record or fail")
      ->check(CLI::IsMember({"record", "fail"}))
      ->capture_default_str();
  app.add_option("--heap-slots", bc.bus.heap_slots_per_kind, "shared heap slots per kind")
      ->capture_default_str();
  app.add_option("--region-size", bc.bus.region_size, "transfer region bytes per process")
      ->capture_default_str();
  app.add_option("--region-limit", bc.bus.region_limit, "transfer reservation cap per process")
      ->capture_default_str();
  app.add_option("--granule-size", bc.bus.granule_size, "transfer allocation granule")
      ->capture_default_str();
  app.add_option("--queue-capacity", bc.bus.receipt_queue_capacity, "receipts per reader")
      ->capture_default_str();
  app.add_option("--window", bc.bus.max_unacked_window, "reliable writer send window")
      ->capture_default_str();
  app.add_option("--mtu-payload", bc.bus.mtu_payload, "max sample bytes per wire submessage")
      ->capture_default_str();
  app.add_option("--wake-cost-ns", bc.bus.wake_cost_ns, "modeled interrupt wakeup cost")
      ->capture_default_str();
  app.add_option("--heartbeat-ms", heartbeat_ms, "reliable heartbeat period")
      ->capture_default_str();
  app.add_option("--reclaim-ms", reclaim_ms, "terminated process reclaim period")
      ->capture_default_str();
  app.add_option("--mode-up-hz", bc.bus.mode_up_hz, "switch the daemon to polling above this")
      ->capture_default_str();
  app.add_option("--mode-down-hz", bc.bus.mode_down_hz, "switch back to events below this")
      ->capture_default_str();
  app.add_option("--force-mode", force_mode, "auto, poll, or event")
      ->check(CLI::IsMember({"auto", "poll", "event"}))
      ->capture_default_str();

  bool eager = bc.bus.eager_notify;
  app.add_option("--eager-notify", eager, "wake sleeping readers before finishing delivery")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  bc.use_udp = transport == "udp";
  bc.bus.transport = bc.use_udp ? db::TransportKind::udp : db::TransportKind::sim;
  bc.bus.bound_policy = bound_policy == "fail" ? db::BoundPolicy::fail : db::BoundPolicy::record;
  bc.bus.eager_notify = eager;
  bc.bus.heartbeat_period_ns = heartbeat_ms * 1'000'000;
  bc.bus.reclaim_period_ns = reclaim_ms * 1'000'000;
  if (force_mode == "poll") {
    bc.bus.force_mode = db::ForcedMode::poll;
  } else if (force_mode == "event") {
    bc.bus.force_mode = db::ForcedMode::event;
  }
  bc.qos.reliability = reliability == "best-effort" ? db::Reliability::best_effort
                                                    : db::Reliability::reliable;
  if (keep_last > 0) {
    bc.qos.history = db::History::keep_last;
    bc.qos.depth = keep_last;
  }
  if (durability == "transient-local") {
    bc.qos.durability = db::Durability::transient_local;
  }

  auto out = db::run_round_trip(bc);
  if (!out.ok()) {
    std::fprintf(stderr, "benchmark failed: %s\n", db::errc_name(out.error()));
    return 1;
  }
  const db::BenchOutput& r = out.value();

  if (csv) {
    std::printf("%s\n%s\n", db::csv_header(), db::csv_row(bc.payload_bytes, bc.rate_hz, r).c_str());
    return 0;
  }

  std::printf("round trips     %u / %u\n", r.completed, bc.count);
  std::printf("mean            %.1f us\n", r.stats.mean_ns / 1e3);
  std::printf("trimmed mean    %.1f us (trim %.0f%%)\n", r.stats.trimmed_mean_ns / 1e3,
              bc.trim * 100.0);
  std::printf("p50 / p99       %.1f / %.1f us\n", static_cast<double>(r.stats.p50_ns) / 1e3,
              static_cast<double>(r.stats.p99_ns) / 1e3);
  std::printf("min / max       %.1f / %.1f us\n", static_cast<double>(r.stats.min_ns) / 1e3,
              static_cast<double>(r.stats.max_ns) / 1e3);
  std::printf("copies/sample   %.3f\n", r.copies_per_sample);
  std::printf("mode switches   %llu\n", static_cast<unsigned long long>(r.mode_switches));
  std::printf("retransmits     %llu\n",
              static_cast<unsigned long long>(r.bus_a.retransmit_datagrams +
                                              r.bus_b.retransmit_datagrams));
  return 0;
}
