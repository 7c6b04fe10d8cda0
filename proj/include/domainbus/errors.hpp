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

#ifndef DOMAINBUS__ERRORS_HPP_
#define DOMAINBUS__ERRORS_HPP_

#include <cassert>
#include <cstdint>
#include <optional>
#include <utility>

namespace domainbus {

/// Error codes shared across all DomainBus modules. Library calls never
/// throw; every fallible operation returns one of these through Result<T>
/// or Status.
enum class Errc : std::uint8_t {
  ok = 0,

  // execution contexts / time bounds
  context_violation,
  time_bound_exceeded,
  unknown_pid,

  // protected heap
  heap_exhausted,
  stale_descriptor,
  kind_mismatch,
  ownership_violation,
  underflow_violation,

  // permanent buffers
  reservation_limit_exceeded,
  permission_denied,
  blocks_in_use,
  buffer_full,
  invalid_state_transition,
  invalid_block,

  // dds
  backpressure_full,
  duplicate_topic_name,
  qos_mismatch,

  // wire protocol
  malformed_message,
  frag_metadata_mismatch,

  // transport
  oversized_datagram,

  // misc
  empty_input,
  io_failure,
  invalid_argument,
};

inline const char* errc_name(Errc e) noexcept {
  switch (e) {
    case Errc::ok: return "ok";
    case Errc::context_violation: return "ContextViolation";
    case Errc::time_bound_exceeded: return "TimeBoundExceeded";
    case Errc::unknown_pid: return "UnknownPid";
    case Errc::heap_exhausted: return "HeapExhausted";
    case Errc::stale_descriptor: return "StaleDescriptor";
    case Errc::kind_mismatch: return "KindMismatch";
    case Errc::ownership_violation: return "OwnershipViolation";
    case Errc::underflow_violation: return "UnderflowViolation";
    case Errc::reservation_limit_exceeded: return "ReservationLimitExceeded";
    case Errc::permission_denied: return "PermissionDenied";
    case Errc::blocks_in_use: return "BlocksInUse";
    case Errc::buffer_full: return "BufferFull";
    case Errc::invalid_state_transition: return "InvalidStateTransition";
    case Errc::invalid_block: return "InvalidBlock";
    case Errc::backpressure_full: return "BackpressureFull";
    case Errc::duplicate_topic_name: return "DuplicateTopicName";
    case Errc::qos_mismatch: return "QosMismatch";
    case Errc::malformed_message: return "MalformedMessage";
    case Errc::frag_metadata_mismatch: return "FragMetadataMismatch";
    case Errc::oversized_datagram: return "OversizedDatagram";
    case Errc::empty_input: return "EmptyInput";
    case Errc::io_failure: return "IoFailure";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "unknown";
}

/// Result of a void operation.
class [[nodiscard]] Status {
 public:
  Status() noexcept : errc_(Errc::ok) {}
  Status(Errc e) noexcept : errc_(e) {}  // NOLINT(runtime/explicit)

  bool ok() const noexcept { return errc_ == Errc::ok; }
  explicit operator bool() const noexcept { return ok(); }
  Errc error() const noexcept { return errc_; }
  const char* message() const noexcept { return errc_name(errc_); }

 private:
  Errc errc_;
};

/// A value or an error code. Deliberately minimal: this library predates
/// std::expected and only ever carries an Errc on the failure path.
template <typename T>
class [[nodiscard]] Result {
 public:
  Result(T value) : value_(std::move(value)), errc_(Errc::ok) {}  // NOLINT
  Result(Errc e) : errc_(e) { assert(e != Errc::ok); }            // NOLINT

  bool ok() const noexcept { return errc_ == Errc::ok; }
  explicit operator bool() const noexcept { return ok(); }
  Errc error() const noexcept { return errc_; }
  const char* message() const noexcept { return errc_name(errc_); }

  T& value() & {
    assert(ok());
    return *value_;
  }
  const T& value() const& {
    assert(ok());
    return *value_;
  }
  T&& value() && {
    assert(ok());
    return std::move(*value_);
  }
  T value_or(T fallback) const { return ok() ? *value_ : std::move(fallback); }

  Status status() const noexcept { return Status(errc_); }

 private:
  std::optional<T> value_;
  Errc errc_;
};

}  // namespace domainbus

#endif  // DOMAINBUS__ERRORS_HPP_
