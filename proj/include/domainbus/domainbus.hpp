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

#ifndef DOMAINBUS__DOMAINBUS_HPP_
#define DOMAINBUS__DOMAINBUS_HPP_

#include "domainbus/bench.hpp"
#include "domainbus/clock.hpp"
#include "domainbus/config.hpp"
#include "domainbus/daemon.hpp"
#include "domainbus/dds.hpp"
#include "domainbus/errors.hpp"
#include "domainbus/permanent_buffers.hpp"
#include "domainbus/reliability.hpp"
#include "domainbus/runtime.hpp"
#include "domainbus/shared_heap.hpp"
#include "domainbus/transport.hpp"
#include "domainbus/wait_notify.hpp"
#include "domainbus/wire.hpp"

#endif  // DOMAINBUS__DOMAINBUS_HPP_
