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
#ifndef FLOWSENSE_FLOW_JSONL_HPP_
#define FLOWSENSE_FLOW_JSONL_HPP_

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsense/common.hpp"
#include "flowsense/flow.hpp"

namespace flowsense {

// Flows persist as JSONL, one flow per line, so downstream stages are
// capture-format-independent. Schema (version 1):
//   {"schema_version":1,"flow_id":...,"session_id":...,
//    "key":{"client_addr","client_port","server_addr","server_port","transport"},
//    "start_time":...,"domain":...?,"label":...?,
//    "packets":[[rel_time,size,dir],...]}   dir: 1 client->server, -1 reverse

inline constexpr int kFlowSchemaVersion = 1;

inline nlohmann::json flow_to_json(const Flow& f) {
  nlohmann::json j;
  j["schema_version"] = kFlowSchemaVersion;
  j["flow_id"] = f.flow_id;
  j["session_id"] = f.session_id;
  j["key"] = {{"client_addr", f.key.client_addr.str()},
              {"client_port", f.key.client_port},
              {"server_addr", f.key.server_addr.str()},
              {"server_port", f.key.server_port},
              {"transport", transport_name(f.key.transport)}};
  j["start_time"] = f.start_time;
  if (f.domain) j["domain"] = *f.domain;
  if (f.label) j["label"] = *f.label;
  auto packets = nlohmann::json::array();
  for (const auto& p : f.packets)
    packets.push_back({p.rel_time, p.size, static_cast<int>(p.direction)});
  j["packets"] = std::move(packets);
  return j;
}

inline Flow flow_from_json(const nlohmann::json& j) {
  int version = j.at("schema_version").get<int>();
  if (version != kFlowSchemaVersion)
    throw DataError("unsupported flow schema_version " + std::to_string(version));
  Flow f;
  f.flow_id = j.at("flow_id").get<std::string>();
  f.session_id = j.at("session_id").get<std::string>();
  const auto& k = j.at("key");
  f.key.client_addr = IpAddr::parse(k.at("client_addr").get<std::string>());
  f.key.client_port = k.at("client_port").get<uint16_t>();
  f.key.server_addr = IpAddr::parse(k.at("server_addr").get<std::string>());
  f.key.server_port = k.at("server_port").get<uint16_t>();
  f.key.transport = transport_from_name(k.at("transport").get<std::string>());
  f.start_time = j.at("start_time").get<double>();
  if (j.contains("domain")) f.domain = j.at("domain").get<std::string>();
  if (j.contains("label")) f.label = j.at("label").get<std::string>();
  for (const auto& p : j.at("packets")) {
    FlowPacket fp;
    fp.rel_time = p.at(0).get<double>();
    fp.size = p.at(1).get<uint32_t>();
    int dir = p.at(2).get<int>();
    if (dir != 1 && dir != -1) throw DataError("bad packet direction in flow " + f.flow_id);
    fp.direction = dir == 1 ? Direction::kClientToServer : Direction::kServerToClient;
    f.packets.push_back(fp);
  }
  return f;
}

inline void write_flows_jsonl(const std::string& path, const std::vector<Flow>& flows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& f : flows) out << flow_to_json(f).dump() << "\n";
}

inline std::vector<Flow> read_flows_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open flows file: " + path);
  std::vector<Flow> flows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      flows.push_back(flow_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad flow record: " + e.what());
    }
  }
  return flows;
}

}  // namespace flowsense

#endif  // FLOWSENSE_FLOW_JSONL_HPP_
