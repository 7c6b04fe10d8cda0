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

// Shared plumbing for the bus-level test suites: process setup, block
// fill/read helpers, and datagram draining. Everything asserts through
// Catch2, so these are only callable from inside a test case.

#ifndef DOMAINBUS_TESTS_BUS_TEST_UTIL_HPP_
#define DOMAINBUS_TESTS_BUS_TEST_UTIL_HPP_

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>
#include <utility>
#include <variant>
#include <vector>

#include "domainbus/dds.hpp"
#include "domainbus/transport.hpp"

namespace dbtest {

inline domainbus::QosProfile reliable_qos() { return {}; }

inline domainbus::QosProfile best_effort_qos() {
  domainbus::QosProfile q;
  q.reliability = domainbus::Reliability::best_effort;
  return q;
}

inline std::vector<std::byte> pattern(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::byte> out(n);
  for (auto& b : out) {
    b = static_cast<std::byte>(rng() & 0xff);
  }
  return out;
}

/// One process attached to a bus: identity plus a context for this thread.
struct Peer {
  domainbus::ProcessIdentity id;
  domainbus::DomainContext ctx;

  explicit Peer(domainbus::Bus& bus)
      : id(bus.register_process()), ctx(bus.runtime(), id) {}
};

/// Allocates a block, fills it, and marks it ready for writing.
inline domainbus::BlockRef filled_block(domainbus::Bus& bus, domainbus::DomainContext& ctx,
                                        std::span<const std::byte> payload) {
  auto ref = bus.alloc_block(ctx, payload.size());
  REQUIRE(ref.ok());
  auto data = bus.block_data(ctx, ref.value());
  REQUIRE(data.size() >= payload.size());
  std::memcpy(data.data(), payload.data(), payload.size());
  REQUIRE(bus.block_ready(ctx, ref.value(), static_cast<std::uint32_t>(payload.size())).ok());
  return ref.value();
}

inline std::uint64_t publish_u64(domainbus::Bus& bus, domainbus::DomainContext& ctx,
                                 const domainbus::Descriptor& writer, std::uint64_t value) {
  std::vector<std::byte> payload(sizeof(value));
  std::memcpy(payload.data(), &value, sizeof(value));
  auto seq = bus.write(ctx, writer, filled_block(bus, ctx, payload), sizeof(value));
  REQUIRE(seq.ok());
  return seq.value();
}

inline std::vector<std::byte> read_back(domainbus::Bus& bus, domainbus::DomainContext& ctx,
                                        const domainbus::BlockRef& ref, std::uint32_t len) {
  auto data = bus.block_data(ctx, ref);
  REQUIRE(data.size() >= len);
  return {data.begin(), data.begin() + len};
}

struct Taken {
  domainbus::TakenSample sample;
  std::vector<std::byte> payload;
};

/// Takes up to `max` samples into fresh destination blocks and returns
/// (sample, payload) pairs. Unused destinations are freed.
inline std::vector<Taken> take_all(domainbus::Bus& bus, domainbus::DomainContext& ctx,
                                   const domainbus::Descriptor& reader, std::uint32_t max,
                                   std::uint64_t dest_capacity) {
  std::vector<domainbus::BlockRef> dest;
  for (std::uint32_t i = 0; i < max; ++i) {
    auto ref = bus.alloc_block(ctx, dest_capacity);
    REQUIRE(ref.ok());
    dest.push_back(ref.value());
  }
  auto got = bus.take(ctx, reader, dest, max);
  REQUIRE(got.ok());
  std::vector<Taken> out;
  for (std::size_t i = 0; i < got.value().size(); ++i) {
    out.push_back({got.value()[i], read_back(bus, ctx, dest[i], got.value()[i].len)});
  }
  for (std::size_t i = got.value().size(); i < dest.size(); ++i) {
    REQUIRE(bus.free_app_block(ctx, dest[i]).ok());
  }
  return out;
}

inline std::vector<domainbus::Datagram> drain_node(domainbus::SimNetwork::Node& node) {
  std::vector<domainbus::Datagram> all;
  for (;;) {
    auto batch = node.rx().poll(64);
    if (batch.empty()) {
      break;
    }
    for (auto& dg : batch) {
      all.push_back(std::move(dg));
    }
  }
  return all;
}

inline std::vector<domainbus::wire::HeartbeatSub> heartbeats_in(
    const std::vector<domainbus::Datagram>& dgs) {
  std::vector<domainbus::wire::HeartbeatSub> out;
  for (const auto& dg : dgs) {
    auto msg = domainbus::wire::decode_message(dg.bytes);
    if (!msg.ok()) {
      continue;
    }
    for (auto& sub : msg.value().subs) {
      if (auto* hb = std::get_if<domainbus::wire::HeartbeatSub>(&sub)) {
        out.push_back(*hb);
      }
    }
  }
  return out;
}

}  // namespace dbtest

#endif  // DOMAINBUS_TESTS_BUS_TEST_UTIL_HPP_
