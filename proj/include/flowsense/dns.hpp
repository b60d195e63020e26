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
#ifndef FLOWSENSE_DNS_HPP_
#define FLOWSENSE_DNS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "flowsense/common.hpp"
#include "flowsense/net.hpp"

namespace flowsense {

/// One DNS response: the queried name plus every A/AAAA address in the answer
/// section. CNAME chains are not followed.
struct DnsResponse {
  double timestamp = 0.0;
  std::string domain;
  std::vector<IpAddr> addresses;
};

namespace dns_detail {

inline std::optional<std::string> read_name(const std::vector<uint8_t>& msg, size_t& pos) {
  std::string name;
  size_t cur = pos;
  bool jumped = false;
  int jumps = 0;
  while (true) {
    if (cur >= msg.size()) return std::nullopt;
    uint8_t len = msg[cur];
    if (len == 0) {
      if (!jumped) pos = cur + 1;
      break;
    }
    if ((len & 0xc0) == 0xc0) {  // compression pointer
      if (cur + 1 >= msg.size() || ++jumps > 32) return std::nullopt;
      size_t target = (static_cast<size_t>(len & 0x3f) << 8) | msg[cur + 1];
      if (!jumped) pos = cur + 2;
      jumped = true;
      cur = target;
      continue;
    }
    if ((len & 0xc0) != 0) return std::nullopt;
    if (cur + 1 + len > msg.size()) return std::nullopt;
    if (!name.empty()) name += '.';
    name.append(reinterpret_cast<const char*>(msg.data() + cur + 1), len);
    cur += 1 + static_cast<size_t>(len);
  }
  return to_lower(name);
}

}  // namespace dns_detail

/// Parses a DNS message; returns a response only for QR=1 messages with at
/// least one A/AAAA answer. The domain is the question name, lowercased.
inline std::optional<DnsResponse> parse_dns_payload(const std::vector<uint8_t>& msg,
                                                    double timestamp) {
  using dns_detail::read_name;
  if (msg.size() < 12) return std::nullopt;
  uint16_t flags = static_cast<uint16_t>((msg[2] << 8) | msg[3]);
  if ((flags & 0x8000) == 0) return std::nullopt;  // not a response
  uint16_t qdcount = static_cast<uint16_t>((msg[4] << 8) | msg[5]);
  uint16_t ancount = static_cast<uint16_t>((msg[6] << 8) | msg[7]);
  if (qdcount < 1 || ancount < 1) return std::nullopt;

  size_t pos = 12;
  auto qname = read_name(msg, pos);
  if (!qname || pos + 4 > msg.size()) return std::nullopt;
  pos += 4;  // qtype + qclass
  for (uint16_t q = 1; q < qdcount; ++q) {
    if (!read_name(msg, pos) || pos + 4 > msg.size()) return std::nullopt;
    pos += 4;
  }

  DnsResponse resp;
  resp.timestamp = timestamp;
  resp.domain = *qname;
  for (uint16_t a = 0; a < ancount; ++a) {
    if (!read_name(msg, pos)) return std::nullopt;
    if (pos + 10 > msg.size()) return std::nullopt;
    uint16_t type = static_cast<uint16_t>((msg[pos] << 8) | msg[pos + 1]);
    uint16_t rdlen = static_cast<uint16_t>((msg[pos + 8] << 8) | msg[pos + 9]);
    pos += 10;
    if (pos + rdlen > msg.size()) return std::nullopt;
    if (type == 1 && rdlen == 4) {
      IpAddr addr;
      for (int i = 0; i < 4; ++i) addr.bytes[static_cast<size_t>(i)] = msg[pos + static_cast<size_t>(i)];
      resp.addresses.push_back(addr);
    } else if (type == 28 && rdlen == 16) {
      IpAddr addr;
      addr.v6 = true;
      for (int i = 0; i < 16; ++i) addr.bytes[static_cast<size_t>(i)] = msg[pos + static_cast<size_t>(i)];
      resp.addresses.push_back(addr);
    }
    pos += rdlen;
  }
  if (resp.addresses.empty()) return std::nullopt;
  return resp;
}

/// Pulls DNS responses out of a packet stream (UDP port 53 payloads captured
/// by parse_capture). Output preserves packet order, i.e. time order.
inline std::vector<DnsResponse> extract_dns_responses(const std::vector<PacketRecord>& packets) {
  std::vector<DnsResponse> out;
  for (const auto& p : packets) {
    if (p.transport != Transport::kUdp || p.payload.empty()) continue;
    if (p.src_port != 53 && p.dst_port != 53) continue;
    if (auto resp = parse_dns_payload(p.payload, p.timestamp)) out.push_back(std::move(*resp));
  }
  return out;
}

}  // namespace flowsense

#endif  // FLOWSENSE_DNS_HPP_
