/* Copyright 2026 The Flowsense Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef FLOWSENSE_FLOW_HPP_
#define FLOWSENSE_FLOW_HPP_

#include <optional>
#include <string>
#include <vector>

#include "flowsense/net.hpp"

namespace flowsense {

/// One packet inside an assembled flow.
struct FlowPacket {
  double rel_time = 0.0;  // seconds since the flow's first packet
  uint32_t size = 0;      // payload bytes
  Direction direction = Direction::kClientToServer;
};

/// An assembled, per-5-tuple packet sequence. `start_time` is the absolute
/// capture timestamp of the first packet; packet times are relative to it.
struct Flow {
  std::string flow_id;
  FlowKey key;
  double start_time = 0.0;
  std::string session_id;
  std::optional<std::string> domain;
  std::optional<std::string> label;
  std::vector<FlowPacket> packets;
};

}  // namespace flowsense

#endif  // FLOWSENSE_FLOW_HPP_
