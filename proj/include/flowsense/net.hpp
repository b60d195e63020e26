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
#ifndef FLOWSENSE_NET_HPP_
#define FLOWSENSE_NET_HPP_

#include <array>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "flowsense/common.hpp"

namespace flowsense {

enum class Transport : uint8_t { kTcp, kUdp };

inline const char* transport_name(Transport t) {
  return t == Transport::kTcp ? "tcp" : "udp";
}

inline Transport transport_from_name(const std::string& s) {
  if (s == "tcp") return Transport::kTcp;
  if (s == "udp") return Transport::kUdp;
  throw DataError("unknown transport: " + s);
}

/// IPv4 or IPv6 address. v4 occupies the first 4 bytes.
struct IpAddr {
  std::array<uint8_t, 16> bytes{};
  bool v6 = false;

  static IpAddr v4(uint32_t host_order) {
    IpAddr a;
    a.bytes[0] = static_cast<uint8_t>(host_order >> 24);
    a.bytes[1] = static_cast<uint8_t>(host_order >> 16);
    a.bytes[2] = static_cast<uint8_t>(host_order >> 8);
    a.bytes[3] = static_cast<uint8_t>(host_order);
    return a;
  }

  auto operator<=>(const IpAddr&) const = default;

  std::string str() const {
    char buf[64];
    if (!v6) {
      std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u", bytes[0], bytes[1], bytes[2], bytes[3]);
      return buf;
    }
    std::string out;
    for (int i = 0; i < 16; i += 2) {
      std::snprintf(buf, sizeof(buf), "%02x%02x", bytes[i], bytes[i + 1]);
      if (i) out += ':';
      out += buf;
    }
    return out;
  }

  static IpAddr parse(const std::string& s) {
    IpAddr a;
    if (s.find(':') != std::string::npos) {
      a.v6 = true;
      auto groups = split(s, ':');
      if (groups.size() != 8) throw DataError("bad ipv6 address: " + s);
      for (size_t i = 0; i < 8; ++i) {
        unsigned v = 0;
        if (std::sscanf(groups[i].c_str(), "%x", &v) != 1 || v > 0xffff)
          throw DataError("bad ipv6 address: " + s);
        a.bytes[2 * i] = static_cast<uint8_t>(v >> 8);
        a.bytes[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
      }
      return a;
    }
    unsigned b0, b1, b2, b3;
    if (std::sscanf(s.c_str(), "%u.%u.%u.%u", &b0, &b1, &b2, &b3) != 4 ||
        b0 > 255 || b1 > 255 || b2 > 255 || b3 > 255)
      throw DataError("bad ipv4 address: " + s);
    a.bytes[0] = static_cast<uint8_t>(b0);
    a.bytes[1] = static_cast<uint8_t>(b1);
    a.bytes[2] = static_cast<uint8_t>(b2);
    a.bytes[3] = static_cast<uint8_t>(b3);
    return a;
  }
};

namespace tcpflag {
inline constexpr uint8_t kFin = 0x01;
inline constexpr uint8_t kSyn = 0x02;
inline constexpr uint8_t kRst = 0x04;
inline constexpr uint8_t kPsh = 0x08;
inline constexpr uint8_t kAck = 0x10;
}  // namespace tcpflag

/// One parsed TCP/UDP packet. `payload` is retained only where a later stage
/// needs the bytes (DNS over UDP/53).
struct PacketRecord {
  double timestamp = 0.0;  // seconds since the capture epoch
  IpAddr src_addr;
  IpAddr dst_addr;
  uint16_t src_port = 0;
  uint16_t dst_port = 0;
  Transport transport = Transport::kTcp;
  uint32_t payload_len = 0;
  std::optional<uint8_t> tcp_flags;  // present iff transport == kTcp
  std::vector<uint8_t> payload;
};

enum class Direction : int8_t { kClientToServer = 1, kServerToClient = -1 };

/// Oriented 5-tuple; the client side is the originator of the first observed
/// packet of the conversation.
struct FlowKey {
  IpAddr client_addr;
  IpAddr server_addr;
  uint16_t client_port = 0;
  uint16_t server_port = 0;
  Transport transport = Transport::kTcp;

  auto operator<=>(const FlowKey&) const = default;

  /// Direction-insensitive form, so both directions of a conversation map to
  /// the same map slot.
  struct Unordered {
    IpAddr a, b;
    uint16_t pa = 0, pb = 0;
    Transport transport = Transport::kTcp;
    auto operator<=>(const Unordered&) const = default;
  };

  static Unordered unordered(const IpAddr& src, uint16_t sport, const IpAddr& dst,
                             uint16_t dport, Transport t) {
    Unordered u;
    u.transport = t;
    if (std::tie(src, sport) <= std::tie(dst, dport)) {
      u.a = src; u.pa = sport; u.b = dst; u.pb = dport;
    } else {
      u.a = dst; u.pa = dport; u.b = src; u.pb = sport;
    }
    return u;
  }

  Unordered unordered() const {
    return unordered(client_addr, client_port, server_addr, server_port, transport);
  }
};

}  // namespace flowsense

#endif  // FLOWSENSE_NET_HPP_
