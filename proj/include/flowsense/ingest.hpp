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
#ifndef FLOWSENSE_INGEST_HPP_
#define FLOWSENSE_INGEST_HPP_

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsense/common.hpp"
#include "flowsense/dns.hpp"
#include "flowsense/flow.hpp"
#include "flowsense/labels.hpp"
#include "flowsense/net.hpp"

namespace flowsense {

/// Capture post-processing mode. Sessions captured from application launch
/// keep only DNS-preceded flows; VoIP/gaming sessions keep everything.
enum class AssembleMode { kDnsGated, kKeepAll };

inline AssembleMode assemble_mode_from_name(const std::string& s) {
  if (s == "dns_gated") return AssembleMode::kDnsGated;
  if (s == "keep_all") return AssembleMode::kKeepAll;
  throw DataError("unknown assemble mode: " + s);
}

struct AssembleOptions {
  AssembleMode mode = AssembleMode::kDnsGated;
  uint32_t min_packets = 40;
  double udp_idle_timeout = 60.0;  // seconds; closes a UDP flow, next packet opens a new one
};

namespace ingest_detail {

struct Builder {
  FlowKey key;
  double start_time = 0.0;
  double last_time = 0.0;
  std::vector<FlowPacket> packets;
  bool fin_client = false;
  bool fin_server = false;
  bool terminated = false;  // FIN pair or RST observed
};

inline Flow finish(Builder&& b, const std::string& session_id, size_t index) {
  Flow f;
  f.flow_id = session_id + "#" + std::to_string(index);
  f.key = b.key;
  f.start_time = b.start_time;
  f.session_id = session_id;
  f.packets = std::move(b.packets);
  return f;
}

}  // namespace ingest_detail

/// Groups packets into flows under the capture rules: per-5-tuple grouping
/// with the client side = originator of the first packet, TCP truncation at
/// the packet carrying the second FIN (or an RST), UDP flows closed by idle
/// timeout, a minimum packet count, and (in dns_gated mode) dropping flows
/// whose server address never appeared in a DNS response at or before the
/// flow's first packet.
inline std::vector<Flow> assemble_flows(const std::vector<PacketRecord>& packets,
                                        const AssembleOptions& opts,
                                        const std::vector<DnsResponse>& dns_responses,
                                        const std::string& session_id) {
  using ingest_detail::Builder;

  std::map<FlowKey::Unordered, Builder> active;
  std::vector<Builder> done;

  auto close = [&](Builder& b) { done.push_back(std::move(b)); };

  for (const auto& p : packets) {
    auto ukey = FlowKey::unordered(p.src_addr, p.src_port, p.dst_addr, p.dst_port, p.transport);
    auto it = active.find(ukey);

    if (it != active.end() && p.transport == Transport::kUdp &&
        p.timestamp - it->second.last_time > opts.udp_idle_timeout) {
      close(it->second);
      active.erase(it);
      it = active.end();
    }

    if (it == active.end()) {
      Builder b;
      b.key.client_addr = p.src_addr;
      b.key.client_port = p.src_port;
      b.key.server_addr = p.dst_addr;
      b.key.server_port = p.dst_port;
      b.key.transport = p.transport;
      b.start_time = p.timestamp;
      it = active.emplace(ukey, std::move(b)).first;
    }

    Builder& b = it->second;
    if (b.terminated) continue;

    bool from_client = (p.src_addr == b.key.client_addr && p.src_port == b.key.client_port);
    FlowPacket fp;
    fp.rel_time = p.timestamp - b.start_time;
    fp.size = p.payload_len;
    fp.direction = from_client ? Direction::kClientToServer : Direction::kServerToClient;
    b.packets.push_back(fp);
    b.last_time = p.timestamp;

    if (p.transport == Transport::kTcp && p.tcp_flags) {
      if (*p.tcp_flags & tcpflag::kRst) {
        b.terminated = true;  // RST-bearing packet retained, later ones dropped
      } else if (*p.tcp_flags & tcpflag::kFin) {
        (from_client ? b.fin_client : b.fin_server) = true;
        if (b.fin_client && b.fin_server) b.terminated = true;
      }
    }
  }
  for (auto& [k, b] : active) close(b);

  // dns_gated: the flow's server address must appear in a response at or
  // before the flow start.
  auto dns_preceded = [&](const Builder& b) {
    for (const auto& r : dns_responses) {
      if (r.timestamp > b.start_time) break;  // responses are time-ordered
      for (const auto& a : r.addresses)
        if (a == b.key.server_addr) return true;
    }
    return false;
  };

  std::vector<Flow> out;
  size_t index = 0;
  for (auto& b : done) {
    if (b.packets.size() < opts.min_packets) continue;
    if (opts.mode == AssembleMode::kDnsGated && !dns_preceded(b)) continue;
    out.push_back(ingest_detail::finish(std::move(b), session_id, index++));
  }
  return out;
}

/// Sets each flow's domain to the most recent DNS response, at or before the
/// flow's first packet, whose resolved addresses contain the flow's server
/// address. Flows with no match keep an absent domain.
inline void associate_dns(std::vector<Flow>& flows, const std::vector<DnsResponse>& dns_responses) {
  for (auto& f : flows) {
    const DnsResponse* best = nullptr;
    for (const auto& r : dns_responses) {
      if (r.timestamp > f.start_time) break;
      for (const auto& a : r.addresses)
        if (a == f.key.server_addr) {
          best = &r;  // responses ordered by time: later match wins
          break;
        }
    }
    if (best) f.domain = best->domain;
  }
}

/// Ordered first-match labeling rules. A flow is labeled by (in order):
/// a session rule whose pattern is a substring of the session id (keep-all
/// sessions, e.g. gaming, where all traffic belongs to the session's class);
/// else the first substring rule matching its domain; else background.
struct LabelRuleSet {
  struct SubstringRule {
    std::string pattern;
    std::string label;
  };
  struct SessionRule {
    std::string pattern;  // matched against the session id
    std::string label;
  };

  LabelSpace classes;
  std::vector<SessionRule> session_rules;
  std::vector<SubstringRule> substring_rules;

  static LabelRuleSet from_json(const nlohmann::json& j) {
    LabelRuleSet rs;
    std::vector<std::string> names = j.at("classes").get<std::vector<std::string>>();
    std::string background = j.at("background").get<std::string>();
    rs.classes = LabelSpace(std::move(names), background);
    if (j.contains("session_rules"))
      for (const auto& r : j.at("session_rules")) {
        SessionRule sr{r.at("pattern").get<std::string>(), r.at("label").get<std::string>()};
        rs.classes.id(sr.label);  // validate
        rs.session_rules.push_back(std::move(sr));
      }
    if (j.contains("substring_rules"))
      for (const auto& r : j.at("substring_rules")) {
        SubstringRule dr{to_lower(r.at("pattern").get<std::string>()),
                         r.at("label").get<std::string>()};
        rs.classes.id(dr.label);  // validate
        rs.substring_rules.push_back(std::move(dr));
      }
    return rs;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["classes"] = classes.names();
    j["background"] = classes.name(classes.background());
    j["session_rules"] = nlohmann::json::array();
    for (const auto& r : session_rules)
      j["session_rules"].push_back({{"pattern", r.pattern}, {"label", r.label}});
    j["substring_rules"] = nlohmann::json::array();
    for (const auto& r : substring_rules)
      j["substring_rules"].push_back({{"pattern", r.pattern}, {"label", r.label}});
    return j;
  }

  std::string label_for(const Flow& f) const {
    for (const auto& r : session_rules)
      if (f.session_id.find(r.pattern) != std::string::npos) return r.label;
    if (f.domain) {
      std::string d = to_lower(*f.domain);
      for (const auto& r : substring_rules)
        if (d.find(r.pattern) != std::string::npos) return r.label;
    }
    return classes.name(classes.background());
  }
};

/// Labels every flow; after this no flow is unlabeled.
inline void apply_labels(std::vector<Flow>& flows, const LabelRuleSet& rules) {
  for (auto& f : flows) f.label = rules.label_for(f);
}

enum class SplitSide { kTrain, kTest };

/// Splits flows by session so no session contributes to both sides.
/// Every session id must be present in the assignment.
inline std::pair<std::vector<Flow>, std::vector<Flow>> split_sessions(
    const std::vector<Flow>& flows, const std::map<std::string, SplitSide>& assignment,
    const WarningSink& warn = default_warning_sink()) {
  std::vector<Flow> train, test;
  for (const auto& f : flows) {
    auto it = assignment.find(f.session_id);
    if (it == assignment.end())
      throw DataError("session id not present in split assignment: " + f.session_id);
    (it->second == SplitSide::kTrain ? train : test).push_back(f);
  }
  if (train.empty() && !flows.empty()) warn("session split produced an empty train set");
  if (test.empty() && !flows.empty()) warn("session split produced an empty test set");
  return {std::move(train), std::move(test)};
}

}  // namespace flowsense

#endif  // FLOWSENSE_INGEST_HPP_
