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

#ifndef DOMAINBUS__RELIABILITY_HPP_
#define DOMAINBUS__RELIABILITY_HPP_

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "domainbus/shared_heap.hpp"
#include "domainbus/wire.hpp"

namespace domainbus {

/// Reader-side acceptance state for one remote (instance, topic, writer)
/// stream: exactly-once, in-order. Arrivals beyond the contiguous front
/// are parked until the gap fills; duplicates are recognized and dropped.
/// ACKNACKs are generated only in response to heartbeats.
class ReaderReliability {
 public:
  /// Sequences that would become deliverable if `seq` were accepted now.
  /// Zero means `seq` is a duplicate or leaves a gap (parked).
  std::uint32_t peek_run_length(std::uint64_t seq) const {
    if (is_duplicate(seq)) {
      return 0;
    }
    if (seq != contig_ + 1) {
      return 0;
    }
    std::uint32_t run = 1;
    std::uint64_t next = seq + 1;
    while (parked_.count(next) != 0) {
      ++run;
      ++next;
    }
    return run;
  }

  bool is_duplicate(std::uint64_t seq) const {
    return seq <= contig_ || parked_.count(seq) != 0;
  }

  /// Accepts `seq`; returns the (possibly empty) run of sequences that are
  /// now deliverable in order. Duplicates return an empty run.
  std::vector<std::uint64_t> offer(std::uint64_t seq) {
    if (is_duplicate(seq)) {
      return {};
    }
    max_seen_ = std::max(max_seen_, seq);
    parked_.insert(seq);
    std::vector<std::uint64_t> run;
    while (parked_.count(contig_ + 1) != 0) {
      parked_.erase(contig_ + 1);
      ++contig_;
      run.push_back(contig_);
    }
    return run;
  }

  /// Records what the writer advertises. A heartbeat whose `first` is
  /// beyond our next need means those samples are gone for good; skip
  /// them rather than nack forever.
  void on_heartbeat(const wire::HeartbeatSub& hb) {
    if (hb.last > 0) {
      max_seen_ = std::max(max_seen_, hb.last);
    }
    if (hb.first > contig_ + 1) {
      lost_ += hb.first - (contig_ + 1) - count_parked_in(contig_ + 1, hb.first - 1);
      contig_ = hb.first - 1;
      while (!parked_.empty() && *parked_.begin() <= contig_) {
        parked_.erase(parked_.begin());
      }
      // re-collapse anything now contiguous
      while (parked_.count(contig_ + 1) != 0) {
        parked_.erase(contig_ + 1);
        ++contig_;
      }
    }
  }

  /// Current acknowledgment state: base says everything below it arrived;
  /// set bits flag the missing sequences we know about, capped at the
  /// bitmap width (the rest get nacked on a later heartbeat).
  wire::AckNackSub make_acknack(std::uint32_t topic_id, std::uint32_t reader_id) const {
    wire::AckNackSub an;
    an.topic_id = topic_id;
    an.reader_id = reader_id;
    an.base = contig_ + 1;
    for (std::uint64_t seq = contig_ + 1;
         seq <= max_seen_ && seq - an.base < wire::kAckNackMaxBits; ++seq) {
      if (parked_.count(seq) == 0) {
        an.set_missing(seq);
      }
    }
    return an;
  }

  std::uint64_t highest_contiguous() const noexcept { return contig_; }
  std::uint64_t parked_count() const noexcept { return parked_.size(); }
  std::uint64_t lost() const noexcept { return lost_; }

 private:
  std::uint64_t count_parked_in(std::uint64_t lo, std::uint64_t hi) const {
    std::uint64_t n = 0;
    for (auto it = parked_.lower_bound(lo); it != parked_.end() && *it <= hi; ++it) {
      ++n;
    }
    return n;
  }

  std::uint64_t contig_ = 0;    // everything <= contig_ accepted
  std::uint64_t max_seen_ = 0;  // highest sequence seen or advertised
  std::set<std::uint64_t> parked_;
  std::uint64_t lost_ = 0;
};

/// Writer-side retention for one reliable writer: encoded datagrams stay
/// cached until every configured peer has positively acknowledged them.
/// Heartbeats advertise the retained range; ACKNACKs drive retransmission
/// and cache eviction.
class WriterReliability {
 public:
  struct CachedSample {
    Descriptor sample;  // for releasing the network hold on full ack
    std::vector<std::vector<std::byte>> datagrams;
  };

  struct AckOutcome {
    std::vector<std::vector<std::byte>> retransmit;       // resend to the acking peer
    std::vector<std::pair<std::uint64_t, Descriptor>> fully_acked;
  };

  void add_peer(std::uint64_t peer_key) { peer_acked_.try_emplace(peer_key, 0); }

  std::size_t peer_count() const noexcept { return peer_acked_.size(); }

  std::size_t window() const noexcept { return cache_.size(); }

  void cache(std::uint64_t seq, Descriptor sample, std::vector<std::vector<std::byte>> datagrams) {
    cache_.emplace(seq, CachedSample{sample, std::move(datagrams)});
    last_sent_ = std::max(last_sent_, seq);
  }

  /// {first, last} for a heartbeat. With nothing cached this advertises
  /// the empty range just below the next sequence, so a reader that
  /// missed everything still learns where the stream stands.
  std::pair<std::uint64_t, std::uint64_t> heartbeat_range() const {
    if (cache_.empty()) {
      return {last_sent_ + 1, last_sent_};
    }
    return {cache_.begin()->first, last_sent_};
  }

  /// Applies one ACKNACK from `peer_key`. Unknown peers are ignored so a
  /// stray acknack cannot advance eviction.
  AckOutcome on_acknack(std::uint64_t peer_key, const wire::AckNackSub& an) {
    AckOutcome out;
    auto peer = peer_acked_.find(peer_key);
    if (peer == peer_acked_.end()) {
      return out;
    }
    if (an.base > 0) {
      peer->second = std::max(peer->second, an.base - 1);
    }
    for (std::uint32_t i = 0; i < an.bit_count; ++i) {
      const std::uint64_t seq = an.base + i;
      if (!an.is_missing(seq)) {
        continue;
      }
      auto it = cache_.find(seq);
      if (it != cache_.end()) {
        for (const auto& dg : it->second.datagrams) {
          out.retransmit.push_back(dg);
        }
      }
    }
    // evict everything acknowledged by all peers
    std::uint64_t min_acked = ~0ull;
    for (const auto& [k, acked] : peer_acked_) {
      min_acked = std::min(min_acked, acked);
    }
    while (!cache_.empty() && cache_.begin()->first <= min_acked) {
      out.fully_acked.emplace_back(cache_.begin()->first, cache_.begin()->second.sample);
      cache_.erase(cache_.begin());
    }
    return out;
  }

  /// Drops the whole cache (writer teardown); returns the held samples so
  /// the caller can release their network holds.
  std::vector<std::pair<std::uint64_t, Descriptor>> abandon() {
    std::vector<std::pair<std::uint64_t, Descriptor>> held;
    held.reserve(cache_.size());
    for (auto& [seq, cs] : cache_) {
      held.emplace_back(seq, cs.sample);
    }
    cache_.clear();
    return held;
  }

 private:
  std::map<std::uint64_t, CachedSample> cache_;  // seq -> retained datagrams
  std::map<std::uint64_t, std::uint64_t> peer_acked_;
  std::uint64_t last_sent_ = 0;
};

}  // namespace domainbus

#endif  // DOMAINBUS__RELIABILITY_HPP_
