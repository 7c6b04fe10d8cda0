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

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>
#include <random>
#include <vector>

#include "domainbus/reliability.hpp"
#include "domainbus/wire.hpp"

namespace db = domainbus;
namespace wire = domainbus::wire;

namespace {

std::vector<std::byte> random_payload(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::byte> p(n);
  for (auto& b : p) {
    b = static_cast<std::byte>(rng());
  }
  return p;
}

bool equal_data(const wire::DataSub& a, const wire::DataSub& b) {
  return a.topic_id == b.topic_id && a.writer_id == b.writer_id && a.sequence == b.sequence &&
         a.timestamp_ns == b.timestamp_ns && a.payload == b.payload;
}

bool equal_frag(const wire::DataFragSub& a, const wire::DataFragSub& b) {
  return a.topic_id == b.topic_id && a.writer_id == b.writer_id && a.sequence == b.sequence &&
         a.timestamp_ns == b.timestamp_ns && a.frag_index == b.frag_index &&
         a.frag_count == b.frag_count && a.frag_size == b.frag_size &&
         a.total_len == b.total_len && a.payload == b.payload;
}

}  // namespace

TEST_CASE("a data submessage with an empty payload round-trips") {
  wire::Message msg;
  msg.guid = wire::make_guid(1);
  wire::DataSub d;
  d.topic_id = 0xdeadbeef;
  d.writer_id = 7;
  d.sequence = 1;
  d.timestamp_ns = 123456789;
  msg.subs.emplace_back(d);

  auto bytes = wire::encode_message(msg);
  REQUIRE(bytes.ok());
  CHECK(bytes.value().size() ==
        wire::kHeaderSize + wire::kSubPrefixSize + wire::kDataFixedSize);

  auto back = wire::decode_message(bytes.value());
  REQUIRE(back.ok());
  CHECK(back.value().guid == msg.guid);
  REQUIRE(back.value().subs.size() == 1);
  const auto* rd = std::get_if<wire::DataSub>(&back.value().subs[0]);
  REQUIRE(rd != nullptr);
  CHECK(equal_data(*rd, d));
}

TEST_CASE("every truncation of a valid message is rejected, never crashes") {
  wire::Message msg;
  msg.guid = wire::make_guid(2);
  std::mt19937_64 rng(5);
  wire::DataSub d;
  d.topic_id = 3;
  d.writer_id = 4;
  d.sequence = 99;
  d.payload = random_payload(rng, 100);
  msg.subs.emplace_back(d);
  wire::HeartbeatSub h;
  h.topic_id = 3;
  h.writer_id = 4;
  h.first = 1;
  h.last = 99;
  msg.subs.emplace_back(h);

  auto bytes = wire::encode_message(msg);
  REQUIRE(bytes.ok());
  const auto& full = bytes.value();
  REQUIRE(wire::decode_message(full).ok());

  // cuts at submessage boundaries are themselves valid, shorter messages
  const std::size_t after_data =
      wire::kHeaderSize + wire::kSubPrefixSize + wire::kDataFixedSize + 100;
  for (std::size_t cut = 0; cut < full.size(); ++cut) {
    std::span<const std::byte> prefix(full.data(), cut);
    auto r = wire::decode_message(prefix);
    if (cut == wire::kHeaderSize) {
      REQUIRE(r.ok());
      CHECK(r.value().subs.empty());
    } else if (cut == after_data) {
      REQUIRE(r.ok());
      CHECK(r.value().subs.size() == 1);
    } else {
      REQUIRE_FALSE(r.ok());
      CHECK(r.error() == db::Errc::malformed_message);
    }
  }
}

TEST_CASE("bad magic or version is rejected") {
  wire::Message msg;
  msg.guid = wire::make_guid(3);
  msg.subs.emplace_back(wire::HeartbeatSub{1, 2, 1, 0, 0});
  auto bytes = wire::encode_message(msg);
  REQUIRE(bytes.ok());

  auto corrupted = bytes.value();
  corrupted[0] = static_cast<std::byte>('X');
  CHECK_FALSE(wire::decode_message(corrupted).ok());

  corrupted = bytes.value();
  corrupted[4] = static_cast<std::byte>(2);  // unknown version
  CHECK_FALSE(wire::decode_message(corrupted).ok());
}

TEST_CASE("unknown submessage ids are skipped by length") {
  wire::Message msg;
  msg.guid = wire::make_guid(4);
  msg.subs.emplace_back(wire::HeartbeatSub{9, 9, 1, 5, 1});
  auto bytes = wire::encode_message(msg);
  REQUIRE(bytes.ok());

  // splice an unknown id=9 submessage with a 6-byte body before the heartbeat
  std::vector<std::byte> spliced(bytes.value().begin(),
                                 bytes.value().begin() + wire::kHeaderSize);
  spliced.push_back(static_cast<std::byte>(9));
  spliced.push_back(static_cast<std::byte>(0));
  spliced.push_back(static_cast<std::byte>(6));
  spliced.push_back(static_cast<std::byte>(0));
  for (int i = 0; i < 6; ++i) {
    spliced.push_back(static_cast<std::byte>(0xaa));
  }
  spliced.insert(spliced.end(), bytes.value().begin() + wire::kHeaderSize,
                 bytes.value().end());

  auto back = wire::decode_message(spliced);
  REQUIRE(back.ok());
  CHECK(back.value().unknown_subs_skipped == 1);
  REQUIRE(back.value().subs.size() == 1);
  CHECK(std::get_if<wire::HeartbeatSub>(&back.value().subs[0]) != nullptr);
}

TEST_CASE("ten thousand random messages round-trip exactly") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 10'000; ++trial) {
    wire::Message msg;
    msg.guid = wire::make_guid(rng());
    const std::size_t nsubs = 1 + rng() % 3;
    for (std::size_t s = 0; s < nsubs; ++s) {
      switch (rng() % 4) {
        case 0: {
          wire::DataSub d;
          d.topic_id = static_cast<std::uint32_t>(rng());
          d.writer_id = static_cast<std::uint32_t>(rng());
          d.sequence = rng();
          d.timestamp_ns = rng();
          d.payload = random_payload(rng, rng() % 300);
          msg.subs.emplace_back(std::move(d));
          break;
        }
        case 1: {
          wire::DataFragSub f;
          f.topic_id = static_cast<std::uint32_t>(rng());
          f.writer_id = static_cast<std::uint32_t>(rng());
          f.sequence = rng();
          f.timestamp_ns = rng();
          f.frag_index = static_cast<std::uint32_t>(rng() % 100);
          f.frag_count = static_cast<std::uint32_t>(rng() % 100);
          f.frag_size = static_cast<std::uint16_t>(rng());
          f.total_len = static_cast<std::uint32_t>(rng());
          f.payload = random_payload(rng, rng() % 300);
          msg.subs.emplace_back(std::move(f));
          break;
        }
        case 2: {
          wire::HeartbeatSub h;
          h.topic_id = static_cast<std::uint32_t>(rng());
          h.writer_id = static_cast<std::uint32_t>(rng());
          h.first = rng();
          h.last = rng();
          h.count = static_cast<std::uint32_t>(rng());
          msg.subs.emplace_back(h);
          break;
        }
        default: {
          wire::AckNackSub a;
          a.topic_id = static_cast<std::uint32_t>(rng());
          a.reader_id = static_cast<std::uint32_t>(rng());
          a.base = rng();
          const std::uint32_t bits = static_cast<std::uint32_t>(rng() % 256);
          for (std::uint32_t i = 0; i < bits; ++i) {
            if (rng() % 2 == 0) {
              a.set_missing(a.base + i);
            }
          }
          msg.subs.emplace_back(a);
          break;
        }
      }
    }
    auto bytes = wire::encode_message(msg);
    REQUIRE(bytes.ok());
    CHECK(bytes.value().size() == wire::encoded_size(msg));
    auto back = wire::decode_message(bytes.value());
    REQUIRE(back.ok());
    REQUIRE(back.value().subs.size() == msg.subs.size());
    CHECK(back.value().guid == msg.guid);
    for (std::size_t s = 0; s < nsubs; ++s) {
      REQUIRE(msg.subs[s].index() == back.value().subs[s].index());
      if (const auto* d = std::get_if<wire::DataSub>(&msg.subs[s])) {
        CHECK(equal_data(*d, std::get<wire::DataSub>(back.value().subs[s])));
      } else if (const auto* fr = std::get_if<wire::DataFragSub>(&msg.subs[s])) {
        CHECK(equal_frag(*fr, std::get<wire::DataFragSub>(back.value().subs[s])));
      } else if (const auto* h = std::get_if<wire::HeartbeatSub>(&msg.subs[s])) {
        const auto& hb = std::get<wire::HeartbeatSub>(back.value().subs[s]);
        CHECK((h->first == hb.first && h->last == hb.last && h->count == hb.count));
      } else {
        const auto& aa = std::get<wire::AckNackSub>(msg.subs[s]);
        const auto& ab = std::get<wire::AckNackSub>(back.value().subs[s]);
        CHECK(aa.base == ab.base);
        CHECK(aa.bit_count == ab.bit_count);
        CHECK(std::memcmp(aa.bitmap.data(), ab.bitmap.data(),
                          wire::acknack_bitmap_bytes(aa.bit_count)) == 0);
      }
    }
  }
}

TEST_CASE("a payload too large for the length field fails to encode") {
  wire::Message msg;
  msg.guid = wire::make_guid(5);
  wire::DataSub d;
  d.payload.resize(70'000);
  msg.subs.emplace_back(std::move(d));
  auto r = wire::encode_message(msg);
  REQUIRE_FALSE(r.ok());
  CHECK(r.error() == db::Errc::malformed_message);
}

TEST_CASE("fragment counts follow the ceiling rule") {
  std::mt19937_64 rng(6);

  SECTION("16 KiB at 1344 needs 13 fragments") {
    auto payload = random_payload(rng, 16'384);
    auto frags = wire::fragment_sample(1, 2, 3, 4, payload, 1344);
    REQUIRE(frags.ok());
    CHECK(frags.value().size() == 13);
    CHECK(frags.value().back().payload.size() == 16'384 - 12 * 1344);
    auto back = wire::reassemble(frags.value());
    REQUIRE(back.ok());
    CHECK(back.value() == payload);
  }

  SECTION("1 MiB at 1344 needs 781 fragments with a 256 byte tail") {
    auto payload = random_payload(rng, 1'048'576);
    auto frags = wire::fragment_sample(1, 2, 3, 4, payload, 1344);
    REQUIRE(frags.ok());
    CHECK(frags.value().size() == 781);
    CHECK(frags.value().back().payload.size() == 256);
    auto back = wire::reassemble(frags.value());
    REQUIRE(back.ok());
    CHECK(back.value() == payload);
  }

  SECTION("payloads no larger than one fragment produce exactly one") {
    auto payload = random_payload(rng, 64);
    auto frags = wire::fragment_sample(1, 2, 3, 4, payload, 1344);
    REQUIRE(frags.ok());
    CHECK(frags.value().size() == 1);
    CHECK(frags.value()[0].payload.size() == 64);
  }
}

TEST_CASE("reassembly tolerates reverse order, duplication, and interleaving") {
  std::mt19937_64 rng(7);
  auto payload = random_payload(rng, 10'000);
  auto frags = wire::fragment_sample(1, 2, 3, 4, payload, 1000);
  REQUIRE(frags.ok());
  REQUIRE(frags.value().size() == 10);

  SECTION("reverse order") {
    auto reversed = frags.value();
    std::reverse(reversed.begin(), reversed.end());
    auto back = wire::reassemble(reversed);
    REQUIRE(back.ok());
    CHECK(back.value() == payload);
  }

  SECTION("duplicates are idempotent") {
    wire::Reassembler r;
    for (const auto& f : frags.value()) {
      REQUIRE(r.add(f).ok());
      REQUIRE(r.add(f).ok());  // replay each fragment
    }
    REQUIRE(r.complete());
    CHECK(r.payload() == payload);
  }

  SECTION("two samples interleaved through separate assemblers") {
    auto other_payload = random_payload(rng, 8'000);
    auto other = wire::fragment_sample(1, 2, 4, 4, other_payload, 1000);
    REQUIRE(other.ok());
    wire::Reassembler ra;
    wire::Reassembler rb;
    const std::size_t rounds = std::max(frags.value().size(), other.value().size());
    for (std::size_t i = 0; i < rounds; ++i) {
      if (i < frags.value().size()) {
        REQUIRE(ra.add(frags.value()[i]).ok());
      }
      if (i < other.value().size()) {
        REQUIRE(rb.add(other.value()[i]).ok());
      }
    }
    REQUIRE(ra.complete());
    REQUIRE(rb.complete());
    CHECK(ra.payload() == payload);
    CHECK(rb.payload() == other_payload);
  }

  SECTION("random shuffles always rebuild the same bytes") {
    for (int trial = 0; trial < 50; ++trial) {
      auto shuffled = frags.value();
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      // sprinkle in duplicates
      shuffled.push_back(shuffled[rng() % shuffled.size()]);
      shuffled.push_back(shuffled[rng() % shuffled.size()]);
      auto back = wire::reassemble(shuffled);
      REQUIRE(back.ok());
      CHECK(back.value() == payload);
    }
  }
}

TEST_CASE("fragments with inconsistent geometry are rejected") {
  std::mt19937_64 rng(8);
  auto payload = random_payload(rng, 5'000);
  auto frags = wire::fragment_sample(1, 2, 3, 4, payload, 1000);
  REQUIRE(frags.ok());

  wire::Reassembler r;
  REQUIRE(r.add(frags.value()[0]).ok());

  auto tampered = frags.value()[1];
  tampered.total_len = 6'000;
  auto res = r.add(tampered);
  REQUIRE_FALSE(res.ok());
  CHECK(res.error() == db::Errc::frag_metadata_mismatch);

  auto short_frag = frags.value()[1];
  short_frag.payload.resize(10);
  auto res2 = r.add(short_frag);
  REQUIRE_FALSE(res2.ok());
  CHECK(res2.error() == db::Errc::frag_metadata_mismatch);

  // the untampered remainder still completes
  for (std::size_t i = 1; i < frags.value().size(); ++i) {
    REQUIRE(r.add(frags.value()[i]).ok());
  }
  REQUIRE(r.complete());
  CHECK(r.payload() == payload);
}

TEST_CASE("a reader acknowledges a complete prefix with an empty bitmap") {
  db::ReaderReliability rel;
  for (std::uint64_t seq = 1; seq <= 10; ++seq) {
    REQUIRE_FALSE(rel.is_duplicate(seq));
    auto run = rel.offer(seq);
    REQUIRE(run.size() == 1);
    CHECK(run[0] == seq);
  }
  wire::HeartbeatSub hb;
  hb.first = 1;
  hb.last = 10;
  rel.on_heartbeat(hb);

  auto an = rel.make_acknack(1, 2);
  CHECK(an.base == 11);
  CHECK(an.bit_count == 0);
  CHECK(rel.highest_contiguous() == 10);
}

TEST_CASE("a gap shows up as a nack bit at the right position") {
  db::ReaderReliability rel;
  for (std::uint64_t seq = 1; seq <= 4; ++seq) {
    rel.offer(seq);
  }
  for (std::uint64_t seq = 6; seq <= 10; ++seq) {
    auto run = rel.offer(seq);
    CHECK(run.empty());  // parked behind the gap
  }
  wire::HeartbeatSub hb;
  hb.first = 1;
  hb.last = 10;
  rel.on_heartbeat(hb);

  auto an = rel.make_acknack(1, 2);
  CHECK(an.base == 5);
  CHECK(an.is_missing(5));
  for (std::uint64_t seq = 6; seq <= 10; ++seq) {
    CHECK_FALSE(an.is_missing(seq));  // parked, not missing
  }

  // the late arrival releases the whole parked run
  auto run = rel.offer(5);
  REQUIRE(run.size() == 6);
  CHECK(run.front() == 5);
  CHECK(run.back() == 10);
  CHECK(rel.highest_contiguous() == 10);
}

TEST_CASE("a heartbeat past the contiguous point counts skipped samples as lost") {
  db::ReaderReliability rel;
  rel.offer(1);
  rel.offer(2);
  wire::HeartbeatSub hb;
  hb.first = 5;  // 3 and 4 are no longer available anywhere
  hb.last = 6;
  rel.on_heartbeat(hb);
  CHECK(rel.lost() == 2);
  CHECK(rel.highest_contiguous() == 4);  // skipped forward
}

TEST_CASE("duplicate detection covers both delivered and parked sequences") {
  db::ReaderReliability rel;
  rel.offer(1);
  rel.offer(3);
  CHECK(rel.is_duplicate(1));
  CHECK(rel.is_duplicate(3));
  CHECK_FALSE(rel.is_duplicate(2));
  CHECK_FALSE(rel.is_duplicate(4));
}

TEST_CASE("an ack releases the writer cache and a nack retransmits") {
  db::WriterReliability net;
  net.add_peer(77);
  CHECK(net.peer_count() == 1);

  for (std::uint64_t seq = 1; seq <= 10; ++seq) {
    std::vector<std::vector<std::byte>> dgrams;
    dgrams.push_back({static_cast<std::byte>(seq)});
    net.cache(seq, db::Descriptor{db::EntityKind::sample,
                                  static_cast<std::uint32_t>(seq), 1},
              std::move(dgrams));
  }
  CHECK(net.window() == 10);
  CHECK(net.heartbeat_range() == std::make_pair(std::uint64_t{1}, std::uint64_t{10}));

  SECTION("full ack empties the cache") {
    wire::AckNackSub an;
    an.base = 11;
    auto out = net.on_acknack(77, an);
    CHECK(out.retransmit.empty());
    REQUIRE(out.fully_acked.size() == 10);
    CHECK(net.window() == 0);
    // empty range just below the next sequence
    CHECK(net.heartbeat_range() == std::make_pair(std::uint64_t{11}, std::uint64_t{10}));
  }

  SECTION("a nack returns the cached datagrams for the missing sequence") {
    wire::AckNackSub an;
    an.base = 5;
    an.set_missing(5);
    auto out = net.on_acknack(77, an);
    REQUIRE(out.retransmit.size() == 1);
    CHECK(out.retransmit[0] == std::vector<std::byte>{static_cast<std::byte>(5)});
    // 1..4 are acked and this is the only peer
    CHECK(out.fully_acked.size() == 4);
    CHECK(net.window() == 6);
  }

  SECTION("nacking an already-acked sequence yields nothing") {
    wire::AckNackSub ack_all;
    ack_all.base = 11;
    (void)net.on_acknack(77, ack_all);
    wire::AckNackSub stale;
    stale.base = 5;
    stale.set_missing(5);
    auto out = net.on_acknack(77, stale);
    CHECK(out.retransmit.empty());
    CHECK(out.fully_acked.empty());
  }
}

TEST_CASE("with two peers a sample is released only after both ack") {
  db::WriterReliability net;
  net.add_peer(1);
  net.add_peer(2);
  net.cache(1, db::Descriptor{db::EntityKind::sample, 0, 1}, {});

  wire::AckNackSub an;
  an.base = 2;
  auto first = net.on_acknack(1, an);
  CHECK(first.fully_acked.empty());
  CHECK(net.window() == 1);
  auto second = net.on_acknack(2, an);
  REQUIRE(second.fully_acked.size() == 1);
  CHECK(net.window() == 0);
}

TEST_CASE("a fresh writer advertises the empty range") {
  db::WriterReliability net;
  CHECK(net.heartbeat_range() == std::make_pair(std::uint64_t{1}, std::uint64_t{0}));
}

TEST_CASE("abandoning a writer returns every held sample exactly once") {
  db::WriterReliability net;
  net.add_peer(9);
  for (std::uint64_t seq = 1; seq <= 5; ++seq) {
    net.cache(seq, db::Descriptor{db::EntityKind::sample,
                                  static_cast<std::uint32_t>(seq), 1}, {});
  }
  auto held = net.abandon();
  CHECK(held.size() == 5);
  CHECK(net.window() == 0);
  CHECK(net.abandon().empty());
}

TEST_CASE("the nack bitmap is capped at 255 sequences") {
  db::ReaderReliability rel;
  rel.offer(1);
  // advertise a huge window with everything after 1 missing
  wire::HeartbeatSub hb;
  hb.first = 1;
  hb.last = 1000;
  rel.on_heartbeat(hb);
  auto an = rel.make_acknack(1, 2);
  CHECK(an.base == 2);
  CHECK(an.bit_count == wire::kAckNackMaxBits);
  for (std::uint64_t seq = 2; seq < 2 + wire::kAckNackMaxBits; ++seq) {
    CHECK(an.is_missing(seq));
  }
  CHECK_FALSE(an.is_missing(2 + wire::kAckNackMaxBits));
}

TEST_CASE("guids derived from different seeds differ") {
  CHECK(wire::make_guid(1) == wire::make_guid(1));
  CHECK_FALSE(wire::make_guid(1) == wire::make_guid(2));
}

TEST_CASE("topic wire ids are stable and collision-free across distinct names") {
  CHECK(wire::topic_wire_id("ping") == wire::topic_wire_id("ping"));
  CHECK(wire::topic_wire_id("ping") != wire::topic_wire_id("pong"));
  CHECK(wire::topic_wire_id("") == 2166136261u);
}
