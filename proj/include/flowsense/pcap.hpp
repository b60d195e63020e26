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
#ifndef FLOWSENSE_PCAP_HPP_
#define FLOWSENSE_PCAP_HPP_

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "flowsense/common.hpp"
#include "flowsense/net.hpp"

namespace flowsense {

// Classic libpcap file reader, both endiannesses, usec and nsec timestamp
// magics. Link types: Ethernet (with one optional 802.1Q tag), raw IPv4/IPv6.
// No capture library exists in this build environment, and the classic format
// is small enough to read directly.

namespace pcap_detail {

inline constexpr uint32_t kMagicUsec = 0xa1b2c3d4;
inline constexpr uint32_t kMagicUsecSwapped = 0xd4c3b2a1;
inline constexpr uint32_t kMagicNsec = 0xa1b23c4d;
inline constexpr uint32_t kMagicNsecSwapped = 0x4d3cb2a1;

inline constexpr uint32_t kLinkEthernet = 1;
inline constexpr uint32_t kLinkRaw = 101;
inline constexpr uint32_t kLinkIpv4 = 228;
inline constexpr uint32_t kLinkIpv6 = 229;

inline constexpr uint16_t kMdnsPort = 5353;
inline constexpr uint16_t kDnsPort = 53;

inline uint32_t swap32(uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}
inline uint16_t swap16(uint16_t v) { return static_cast<uint16_t>((v >> 8) | (v << 8)); }

inline uint16_t be16(const uint8_t* p) {
  return static_cast<uint16_t>((p[0] << 8) | p[1]);
}
inline uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

struct L4Info {
  bool ok = false;
  IpAddr src, dst;
  uint16_t sport = 0, dport = 0;
  Transport transport = Transport::kTcp;
  uint32_t payload_len = 0;
  uint8_t tcp_flags = 0;
  const uint8_t* payload = nullptr;  // into the frame buffer
  uint32_t payload_avail = 0;        // captured payload bytes
};

inline L4Info parse_l4(const uint8_t* ip, size_t avail, bool is_v6) {
  L4Info info;
  uint8_t proto;
  size_t l4_off;
  uint32_t l3_payload_len;
  if (!is_v6) {
    if (avail < 20) return info;
    uint8_t ihl = static_cast<uint8_t>(ip[0] & 0x0f);
    if ((ip[0] >> 4) != 4 || ihl < 5) return info;
    size_t hdr = static_cast<size_t>(ihl) * 4;
    if (avail < hdr) return info;
    uint16_t frag = be16(ip + 6);
    if ((frag & 0x1fff) != 0) return info;  // non-first fragment: no L4 header
    uint16_t total = be16(ip + 2);
    if (total < hdr) return info;
    proto = ip[9];
    l4_off = hdr;
    l3_payload_len = static_cast<uint32_t>(total - hdr);
    info.src.v6 = info.dst.v6 = false;
    for (int i = 0; i < 4; ++i) {
      info.src.bytes[static_cast<size_t>(i)] = ip[12 + i];
      info.dst.bytes[static_cast<size_t>(i)] = ip[16 + i];
    }
  } else {
    if (avail < 40) return info;
    if ((ip[0] >> 4) != 6) return info;
    proto = ip[6];  // extension headers are not walked
    l4_off = 40;
    l3_payload_len = be16(ip + 4);
    info.src.v6 = info.dst.v6 = true;
    for (int i = 0; i < 16; ++i) {
      info.src.bytes[static_cast<size_t>(i)] = ip[8 + i];
      info.dst.bytes[static_cast<size_t>(i)] = ip[24 + i];
    }
  }

  const uint8_t* l4 = ip + l4_off;
  size_t l4_avail = avail > l4_off ? avail - l4_off : 0;
  if (proto == 6) {
    if (l4_avail < 20 || l3_payload_len < 20) return info;
    uint8_t data_off = static_cast<uint8_t>(l4[12] >> 4);
    size_t tcp_hdr = static_cast<size_t>(data_off) * 4;
    if (tcp_hdr < 20 || l3_payload_len < tcp_hdr) return info;
    info.transport = Transport::kTcp;
    info.sport = be16(l4);
    info.dport = be16(l4 + 2);
    info.tcp_flags = l4[13];
    info.payload_len = l3_payload_len - static_cast<uint32_t>(tcp_hdr);
    info.payload = l4 + tcp_hdr;
    info.payload_avail =
        l4_avail > tcp_hdr ? static_cast<uint32_t>(l4_avail - tcp_hdr) : 0;
  } else if (proto == 17) {
    if (l4_avail < 8 || l3_payload_len < 8) return info;
    uint16_t udp_len = be16(l4 + 4);
    if (udp_len < 8) return info;
    info.transport = Transport::kUdp;
    info.sport = be16(l4);
    info.dport = be16(l4 + 2);
    info.payload_len = static_cast<uint32_t>(udp_len - 8);
    info.payload = l4 + 8;
    info.payload_avail = l4_avail > 8 ? static_cast<uint32_t>(l4_avail - 8) : 0;
  } else {
    return info;
  }
  if (info.payload_avail > info.payload_len) info.payload_avail = info.payload_len;
  info.ok = true;
  return info;
}

}  // namespace pcap_detail

/// Reads a classic pcap file into time-ordered PacketRecords. Non-IP and
/// non-TCP/UDP frames are skipped; mDNS (UDP port 5353 on either side) is
/// excluded. Payload bytes are retained only for UDP port-53 packets, which a
/// later stage parses for DNS responses. A malformed global header is fatal;
/// a truncated trailing packet produces a warning and stops the read.
inline std::vector<PacketRecord> parse_capture(const std::string& path,
                                               const WarningSink& warn = default_warning_sink()) {
  using namespace pcap_detail;

  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open capture file: " + path);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());

  if (file.size() < 24) throw DataError("malformed pcap header (file too short): " + path);

  uint32_t magic;
  std::memcpy(&magic, file.data(), 4);
  bool swapped, nsec;
  if (magic == kMagicUsec) { swapped = false; nsec = false; }
  else if (magic == kMagicUsecSwapped) { swapped = true; nsec = false; }
  else if (magic == kMagicNsec) { swapped = false; nsec = true; }
  else if (magic == kMagicNsecSwapped) { swapped = true; nsec = true; }
  else throw DataError("malformed pcap header (bad magic): " + path);

  auto rd32 = [&](size_t off) {
    uint32_t v;
    std::memcpy(&v, file.data() + off, 4);
    return swapped ? swap32(v) : v;
  };

  uint32_t linktype = rd32(20);
  double subsec_unit = nsec ? 1e-9 : 1e-6;

  std::vector<PacketRecord> out;
  size_t pos = 24;
  while (pos < file.size()) {
    if (pos + 16 > file.size()) {
      warn("truncated packet record header at end of " + path);
      break;
    }
    uint32_t ts_sec = rd32(pos);
    uint32_t ts_sub = rd32(pos + 4);
    uint32_t incl_len = rd32(pos + 8);
    pos += 16;
    if (pos + incl_len > file.size()) {
      warn("truncated trailing packet in " + path);
      break;
    }
    const uint8_t* frame = file.data() + pos;
    size_t avail = incl_len;
    pos += incl_len;

    const uint8_t* ip = nullptr;
    bool is_v6 = false;
    if (linktype == kLinkEthernet) {
      if (avail < 14) continue;
      uint16_t ethertype = be16(frame + 12);
      size_t off = 14;
      if (ethertype == 0x8100) {  // single 802.1Q tag
        if (avail < 18) continue;
        ethertype = be16(frame + 16);
        off = 18;
      }
      if (ethertype == 0x0800) is_v6 = false;
      else if (ethertype == 0x86dd) is_v6 = true;
      else continue;
      ip = frame + off;
      avail -= off;
    } else if (linktype == kLinkRaw || linktype == kLinkIpv4 || linktype == kLinkIpv6) {
      if (avail < 1) continue;
      uint8_t ver = static_cast<uint8_t>(frame[0] >> 4);
      if (ver == 4) is_v6 = false;
      else if (ver == 6) is_v6 = true;
      else continue;
      ip = frame;
    } else {
      continue;  // unsupported link type
    }

    L4Info l4 = parse_l4(ip, avail, is_v6);
    if (!l4.ok) continue;
    if (l4.transport == Transport::kUdp &&
        (l4.sport == kMdnsPort || l4.dport == kMdnsPort))
      continue;

    PacketRecord rec;
    rec.timestamp = static_cast<double>(ts_sec) + static_cast<double>(ts_sub) * subsec_unit;
    rec.src_addr = l4.src;
    rec.dst_addr = l4.dst;
    rec.src_port = l4.sport;
    rec.dst_port = l4.dport;
    rec.transport = l4.transport;
    rec.payload_len = l4.payload_len;
    if (l4.transport == Transport::kTcp) rec.tcp_flags = l4.tcp_flags;
    if (l4.transport == Transport::kUdp &&
        (l4.sport == kDnsPort || l4.dport == kDnsPort) && l4.payload_avail > 0)
      rec.payload.assign(l4.payload, l4.payload + l4.payload_avail);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace flowsense

#endif  // FLOWSENSE_PCAP_HPP_
