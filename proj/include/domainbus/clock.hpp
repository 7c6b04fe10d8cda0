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

#ifndef DOMAINBUS__CLOCK_HPP_
#define DOMAINBUS__CLOCK_HPP_

#include <time.h>

#include <chrono>
#include <cstdint>

namespace domainbus {

/// Monotonic wall-clock nanoseconds. All deadlines and latency samples use
/// this clock.
inline std::int64_t mono_now_ns() noexcept {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Per-thread CPU time in nanoseconds. Library call durations are charged
/// against CPU time so that involuntary preemption by the host scheduler
/// does not show up as a time-bound violation.
inline std::int64_t thread_cpu_now_ns() noexcept {
  struct timespec ts;
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

/// Busy-wait for roughly `ns` of wall time. Used to model fixed hardware
/// costs (interrupt wakeup) and to inject deterministic delays in tests.
inline void spin_for_ns(std::int64_t ns) noexcept {
  if (ns <= 0) {
    return;
  }
  const std::int64_t deadline = mono_now_ns() + ns;
  while (mono_now_ns() < deadline) {
    // spin
  }
}

}  // namespace domainbus

#endif  // DOMAINBUS__CLOCK_HPP_
