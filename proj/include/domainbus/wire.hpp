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

#ifndef DOMAINBUS__WIRE_HPP_
#define DOMAINBUS__WIRE_HPP_

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "domainbus/errors.hpp"

namespace domainbus::wire {

// Datagram layout, all integers little-endian:
//
//   MessageHeader (18 bytes):
//     magic    "HPSL"      4 bytes
//     version  u8          currently 1
//     flags    u8          reserved, 0
//     guid     12 bytes    sending instance prefix
//
//   then one or more submessages, each:
//     id       u8          1=DATA 2=DATA_FRAG 3=HEARTBEAT 4=ACKNACK
//     flags    u8          reserved, 0
//     length   u16         body bytes following this prefix
//     body     `length` bytes
//
// Unknown submessage ids are skipped via `length`; anything that does not
// tile the buffer exactly is rejected as malformed.

inline constexpr std::array<std::uint8_t, 4> kMagic = {'H', 'P', 'S', 'L'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::size_t kSubPrefixSize = 4;
inline constexpr std::size_t kDataFixedSize = 28;      // body before payload
inline constexpr std::size_t kDataFragFixedSize = 42;  // body before payload
inline constexpr std::size_t kHeartbeatSize = 28;
inline constexpr std::size_t kAckNackFixedSize = 17;  // body before bitmap
inline constexpr std::size_t kAckNackMaxBits = 255;   // bit count field is u8

inline constexpr std::uint8_t kSubData = 1;
inline constexpr std::uint8_t kSubDataFrag = 2;
inline constexpr std::uint8_t kSubHeartbeat = 3;
inline constexpr std::uint8_t kSubAckNack = 4;

struct GuidPrefix {
  std::array<std::uint8_t, 12> bytes{};
  bool operator==(const GuidPrefix&) const = default;
};

/// Deterministic guid from a seed; instances salt the seed differently.
inline GuidPrefix make_guid(std::uint64_t seed) {
  GuidPrefix g;
  std::uint64_t x = seed;
  for (std::size_t i = 0; i < g.bytes.size(); ++i) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    g.bytes[i] = static_cast<std::uint8_t>((z ^ (z >> 31)) & 0xff);
  }
  return g;
}

/// FNV-1a over the topic name; both sides derive the same wire id.
inline std::uint32_t topic_wire_id(std::string_view name) noexcept {
  std::uint32_t h = 2166136261u;
  for (const char c : name) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 16777619u;
  }
  return h;
}

struct DataSub {
  std::uint32_t topic_id = 0;
  std::uint32_t writer_id = 0;
  std::uint64_t sequence = 0;
  std::uint64_t timestamp_ns = 0;
  std::vector<std::byte> payload;
};

struct DataFragSub {
  std::uint32_t topic_id = 0;
  std::uint32_t writer_id = 0;
  std::uint64_t sequence = 0;
  std::uint64_t timestamp_ns = 0;
  std::uint32_t frag_index = 0;  // 0-based
  std::uint32_t frag_count = 0;
  std::uint16_t frag_size = 0;   // full-fragment payload size
  std::uint32_t total_len = 0;   // whole-sample size
  std::vector<std::byte> payload;
};

struct HeartbeatSub {
  std::uint32_t topic_id = 0;
  std::uint32_t writer_id = 0;
  std::uint64_t first = 0;  // lowest sequence still available
  std::uint64_t last = 0;   // highest sequence sent; first=1,last=0 when none
  std::uint32_t count = 0;  // heartbeat ordinal, for diagnostics
};

struct AckNackSub {
  std::uint32_t topic_id = 0;
  std::uint32_t reader_id = 0;
  std::uint64_t base = 0;  // everything below base is acknowledged
  std::uint8_t bit_count = 0;
  std::array<std::uint8_t, 32> bitmap{};  // bit i set: base+i is missing

  bool is_missing(std::uint64_t seq) const noexcept {
    if (seq < base || seq - base >= bit_count) {
      return false;
    }
    const std::uint64_t i = seq - base;
    return (bitmap[i / 8] >> (i % 8)) & 1u;
  }
  void set_missing(std::uint64_t seq) noexcept {
    if (seq < base || seq - base >= kAckNackMaxBits) {
      return;
    }
    const std::uint64_t i = seq - base;
    bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    if (i + 1 > bit_count) {
      bit_count = static_cast<std::uint8_t>(i + 1);
    }
  }
};

using Submessage = std::variant<DataSub, DataFragSub, HeartbeatSub, AckNackSub>;

struct Message {
  GuidPrefix guid;
  std::uint8_t flags = 0;
  std::vector<Submessage> subs;
  std::uint32_t unknown_subs_skipped = 0;  // decode only
};

namespace detail {

inline void put_u8(std::vector<std::byte>& out, std::uint8_t v) {
  out.push_back(static_cast<std::byte>(v));
}
inline void put_u16(std::vector<std::byte>& out, std::uint16_t v) {
  put_u8(out, static_cast<std::uint8_t>(v & 0xff));
  put_u8(out, static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    put_u8(out, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}
inline void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    put_u8(out, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

/// Bounds-checked little-endian reader; every get reports failure instead
/// of reading past the end, which is what makes decode total.
class Reader {
 public:
  explicit Reader(std::span<const std::byte> buf) : buf_(buf) {}

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  bool get_u8(std::uint8_t& v) noexcept {
    if (remaining() < 1) {
      return false;
    }
    v = static_cast<std::uint8_t>(buf_[pos_++]);
    return true;
  }
  bool get_u16(std::uint16_t& v) noexcept {
    std::uint8_t lo = 0;
    std::uint8_t hi = 0;
    if (!get_u8(lo) || !get_u8(hi)) {
      return false;
    }
    v = static_cast<std::uint16_t>(lo | (hi << 8));
    return true;
  }
  bool get_u32(std::uint32_t& v) noexcept {
    v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = 0;
      if (!get_u8(b)) {
        return false;
      }
      v |= static_cast<std::uint32_t>(b) << (8 * i);
    }
    return true;
  }
  bool get_u64(std::uint64_t& v) noexcept {
    v = 0;
    for (int i = 0; i < 8; ++i) {
      std::uint8_t b = 0;
      if (!get_u8(b)) {
        return false;
      }
      v |= static_cast<std::uint64_t>(b) << (8 * i);
    }
    return true;
  }
  bool get_bytes(std::span<std::uint8_t> dst) noexcept {
    if (remaining() < dst.size()) {
      return false;
    }
    std::memcpy(dst.data(), buf_.data() + pos_, dst.size());
    pos_ += dst.size();
    return true;
  }
  bool get_payload(std::vector<std::byte>& dst, std::size_t n) {
    if (remaining() < n) {
      return false;
    }
    dst.assign(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
               buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return true;
  }
  bool skip(std::size_t n) noexcept {
    if (remaining() < n) {
      return false;
    }
    pos_ += n;
    return true;
  }

 private:
  std::span<const std::byte> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::size_t acknack_bitmap_bytes(std::uint8_t bit_count) noexcept {
  return (static_cast<std::size_t>(bit_count) + 7) / 8;
}

inline std::size_t encoded_body_size(const Submessage& sub) noexcept {
  if (const auto* d = std::get_if<DataSub>(&sub)) {
    return kDataFixedSize + d->payload.size();
  }
  if (const auto* f = std::get_if<DataFragSub>(&sub)) {
    return kDataFragFixedSize + f->payload.size();
  }
  if (std::get_if<HeartbeatSub>(&sub) != nullptr) {
    return kHeartbeatSize;
  }
  const auto& a = std::get<AckNackSub>(sub);
  return kAckNackFixedSize + acknack_bitmap_bytes(a.bit_count);
}

inline std::size_t encoded_size(const Message& msg) noexcept {
  std::size_t n = kHeaderSize;
  for (const auto& sub : msg.subs) {
    n += kSubPrefixSize + encoded_body_size(sub);
  }
  return n;
}

inline Result<std::vector<std::byte>> encode_message(const Message& msg) {
  std::vector<std::byte> out;
  out.reserve(encoded_size(msg));
  for (const auto m : kMagic) {
    detail::put_u8(out, m);
  }
  detail::put_u8(out, kVersion);
  detail::put_u8(out, msg.flags);
  for (const auto b : msg.guid.bytes) {
    detail::put_u8(out, b);
  }
  for (const auto& sub : msg.subs) {
    const std::size_t body = encoded_body_size(sub);
    if (body > 0xffff) {
      return Errc::malformed_message;
    }
    if (const auto* d = std::get_if<DataSub>(&sub)) {
      detail::put_u8(out, kSubData);
      detail::put_u8(out, 0);
      detail::put_u16(out, static_cast<std::uint16_t>(body));
      detail::put_u32(out, d->topic_id);
      detail::put_u32(out, d->writer_id);
      detail::put_u64(out, d->sequence);
      detail::put_u64(out, d->timestamp_ns);
      detail::put_u32(out, static_cast<std::uint32_t>(d->payload.size()));
      out.insert(out.end(), d->payload.begin(), d->payload.end());
    } else if (const auto* f = std::get_if<DataFragSub>(&sub)) {
      detail::put_u8(out, kSubDataFrag);
      detail::put_u8(out, 0);
      detail::put_u16(out, static_cast<std::uint16_t>(body));
      detail::put_u32(out, f->topic_id);
      detail::put_u32(out, f->writer_id);
      detail::put_u64(out, f->sequence);
      detail::put_u64(out, f->timestamp_ns);
      detail::put_u32(out, static_cast<std::uint32_t>(f->payload.size()));
      detail::put_u32(out, f->frag_index);
      detail::put_u32(out, f->frag_count);
      detail::put_u16(out, f->frag_size);
      detail::put_u32(out, f->total_len);
      out.insert(out.end(), f->payload.begin(), f->payload.end());
    } else if (const auto* h = std::get_if<HeartbeatSub>(&sub)) {
      detail::put_u8(out, kSubHeartbeat);
      detail::put_u8(out, 0);
      detail::put_u16(out, static_cast<std::uint16_t>(body));
      detail::put_u32(out, h->topic_id);
      detail::put_u32(out, h->writer_id);
      detail::put_u64(out, h->first);
      detail::put_u64(out, h->last);
      detail::put_u32(out, h->count);
    } else {
      const auto& a = std::get<AckNackSub>(sub);
      detail::put_u8(out, kSubAckNack);
      detail::put_u8(out, 0);
      detail::put_u16(out, static_cast<std::uint16_t>(body));
      detail::put_u32(out, a.topic_id);
      detail::put_u32(out, a.reader_id);
      detail::put_u64(out, a.base);
      detail::put_u8(out, a.bit_count);
      for (std::size_t i = 0; i < acknack_bitmap_bytes(a.bit_count); ++i) {
        detail::put_u8(out, a.bitmap[i]);
      }
    }
  }
  return out;
}

/// Total decode: any byte sequence either yields a Message or
/// MalformedMessage; it never faults and never reads out of bounds.
inline Result<Message> decode_message(std::span<const std::byte> buf) {
  detail::Reader rd(buf);
  std::array<std::uint8_t, 4> magic{};
  if (!rd.get_bytes(magic) || magic != kMagic) {
    return Errc::malformed_message;
  }
  std::uint8_t version = 0;
  Message msg;
  if (!rd.get_u8(version) || version != kVersion || !rd.get_u8(msg.flags) ||
      !rd.get_bytes(msg.guid.bytes)) {
    return Errc::malformed_message;
  }
  while (rd.remaining() > 0) {
    std::uint8_t id = 0;
    std::uint8_t sub_flags = 0;
    std::uint16_t len = 0;
    if (!rd.get_u8(id) || !rd.get_u8(sub_flags) || !rd.get_u16(len) || rd.remaining() < len) {
      return Errc::malformed_message;
    }
    switch (id) {
      case kSubData: {
        DataSub d;
        std::uint32_t payload_len = 0;
        if (len < kDataFixedSize || !rd.get_u32(d.topic_id) || !rd.get_u32(d.writer_id) ||
            !rd.get_u64(d.sequence) || !rd.get_u64(d.timestamp_ns) || !rd.get_u32(payload_len) ||
            payload_len != len - kDataFixedSize || !rd.get_payload(d.payload, payload_len)) {
          return Errc::malformed_message;
        }
        msg.subs.emplace_back(std::move(d));
        break;
      }
      case kSubDataFrag: {
        DataFragSub f;
        std::uint32_t payload_len = 0;
        if (len < kDataFragFixedSize || !rd.get_u32(f.topic_id) || !rd.get_u32(f.writer_id) ||
            !rd.get_u64(f.sequence) || !rd.get_u64(f.timestamp_ns) || !rd.get_u32(payload_len) ||
            !rd.get_u32(f.frag_index) || !rd.get_u32(f.frag_count) || !rd.get_u16(f.frag_size) ||
            !rd.get_u32(f.total_len) || payload_len != len - kDataFragFixedSize ||
            !rd.get_payload(f.payload, payload_len)) {
          return Errc::malformed_message;
        }
        msg.subs.emplace_back(std::move(f));
        break;
      }
      case kSubHeartbeat: {
        HeartbeatSub h;
        if (len != kHeartbeatSize || !rd.get_u32(h.topic_id) || !rd.get_u32(h.writer_id) ||
            !rd.get_u64(h.first) || !rd.get_u64(h.last) || !rd.get_u32(h.count)) {
          return Errc::malformed_message;
        }
        msg.subs.emplace_back(h);
        break;
      }
      case kSubAckNack: {
        AckNackSub a;
        if (len < kAckNackFixedSize || !rd.get_u32(a.topic_id) || !rd.get_u32(a.reader_id) ||
            !rd.get_u64(a.base) || !rd.get_u8(a.bit_count) ||
            len != kAckNackFixedSize + acknack_bitmap_bytes(a.bit_count) ||
            !rd.get_bytes(std::span<std::uint8_t>(a.bitmap.data(),
                                                  acknack_bitmap_bytes(a.bit_count)))) {
          return Errc::malformed_message;
        }
        msg.subs.emplace_back(a);
        break;
      }
      default:
        // Unknown submessage: skip its body, stay compatible forward.
        if (!rd.skip(len)) {
          return Errc::malformed_message;
        }
        ++msg.unknown_subs_skipped;
        break;
    }
  }
  return msg;
}

/// Splits one sample into DATA_FRAG submessages of `frag_size` payload
/// bytes each (the final fragment carries the remainder).
inline Result<std::vector<DataFragSub>> fragment_sample(std::uint32_t topic_id,
                                                        std::uint32_t writer_id,
                                                        std::uint64_t sequence,
                                                        std::uint64_t timestamp_ns,
                                                        std::span<const std::byte> payload,
                                                        std::uint16_t frag_size) {
  if (frag_size == 0 || payload.empty()) {
    return Errc::invalid_argument;
  }
  const std::uint64_t total = payload.size();
  const std::uint64_t count = (total + frag_size - 1) / frag_size;
  if (count > 0xffffffffull) {
    return Errc::invalid_argument;
  }
  std::vector<DataFragSub> frags;
  frags.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    DataFragSub f;
    f.topic_id = topic_id;
    f.writer_id = writer_id;
    f.sequence = sequence;
    f.timestamp_ns = timestamp_ns;
    f.frag_index = static_cast<std::uint32_t>(i);
    f.frag_count = static_cast<std::uint32_t>(count);
    f.frag_size = frag_size;
    f.total_len = static_cast<std::uint32_t>(total);
    const std::uint64_t begin = i * frag_size;
    const std::uint64_t n = std::min<std::uint64_t>(frag_size, total - begin);
    f.payload.assign(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                     payload.begin() + static_cast<std::ptrdiff_t>(begin + n));
    frags.push_back(std::move(f));
  }
  return frags;
}

/// Rebuilds one sample from fragments arriving in any order, tolerating
/// duplicates. All fragments must agree on the sample geometry.
class Reassembler {
 public:
  /// Returns true when the sample is complete.
  Result<bool> add(const DataFragSub& f) {
    if (!started_) {
      if (f.frag_count == 0 || f.frag_size == 0 || f.total_len == 0) {
        return Errc::frag_metadata_mismatch;
      }
      const std::uint64_t expect_count =
          (static_cast<std::uint64_t>(f.total_len) + f.frag_size - 1) / f.frag_size;
      if (expect_count != f.frag_count) {
        return Errc::frag_metadata_mismatch;
      }
      frag_count_ = f.frag_count;
      frag_size_ = f.frag_size;
      total_len_ = f.total_len;
      buffer_.resize(total_len_);
      have_.assign(frag_count_, 0);
      started_ = true;
    } else if (f.frag_count != frag_count_ || f.frag_size != frag_size_ ||
               f.total_len != total_len_) {
      return Errc::frag_metadata_mismatch;
    }
    if (f.frag_index >= frag_count_) {
      return Errc::frag_metadata_mismatch;
    }
    const std::uint64_t begin = static_cast<std::uint64_t>(f.frag_index) * frag_size_;
    const std::uint64_t expect_len =
        f.frag_index + 1 == frag_count_ ? total_len_ - begin : frag_size_;
    if (f.payload.size() != expect_len) {
      return Errc::frag_metadata_mismatch;
    }
    if (have_[f.frag_index] == 0) {
      std::memcpy(buffer_.data() + begin, f.payload.data(), f.payload.size());
      have_[f.frag_index] = 1;
      ++have_count_;
    }
    return have_count_ == frag_count_;
  }

  bool complete() const noexcept { return started_ && have_count_ == frag_count_; }
  std::uint32_t total_len() const noexcept { return total_len_; }

  /// The assembled payload; valid once complete.
  std::vector<std::byte>& payload() noexcept { return buffer_; }

 private:
  bool started_ = false;
  std::uint32_t frag_count_ = 0;
  std::uint16_t frag_size_ = 0;
  std::uint32_t total_len_ = 0;
  std::uint32_t have_count_ = 0;
  std::vector<std::byte> buffer_;
  std::vector<std::uint8_t> have_;
};

/// Convenience for tests: reassemble a full fragment set in one call.
inline Result<std::vector<std::byte>> reassemble(const std::vector<DataFragSub>& frags) {
  if (frags.empty()) {
    return Errc::empty_input;
  }
  Reassembler r;
  for (const auto& f : frags) {
    auto added = r.add(f);
    if (!added.ok()) {
      return added.error();
    }
  }
  if (!r.complete()) {
    return Errc::frag_metadata_mismatch;
  }
  return std::move(r.payload());
}

}  // namespace domainbus::wire

#endif  // DOMAINBUS__WIRE_HPP_
