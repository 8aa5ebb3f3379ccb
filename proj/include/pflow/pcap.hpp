#pragma once

// Classic libpcap file reading and writing. Only Ethernet (with optional
// VLAN tags) and raw-IP link types are dissected.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "pflow/error.hpp"
#include "pflow/io.hpp"
#include "pflow/packet.hpp"
#include "pflow/rng.hpp"

namespace pflow::pcap {

inline constexpr std::uint32_t kMagicMicros = 0xa1b2c3d4;
inline constexpr std::uint32_t kMagicNanos = 0xa1b23c4d;
inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRaw = 101;
inline constexpr std::uint32_t kLinkIpv4 = 228;
inline constexpr std::uint32_t kLinkIpv6 = 229;

namespace detail {

inline std::uint32_t bswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00) | ((v << 8) & 0xff0000) | (v << 24);
}

inline std::uint32_t load_le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

inline std::uint16_t be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

inline void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_be16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Dissects an IP packet starting at `ip`. Returns false when the packet is
// not a complete-enough IPv4/IPv6 TCP/UDP packet.
inline bool dissect_ip(std::span<const std::uint8_t> ip, RawPacket& pkt) {
  if (ip.empty()) return false;
  const int version = ip[0] >> 4;
  std::size_t l4_offset = 0;
  std::size_t l4_length = 0;  // per the IP header, not the capture
  std::uint8_t proto = 0;

  if (version == 4) {
    if (ip.size() < 20) return false;
    const std::size_t ihl = std::size_t{ip[0] & 0x0fu} * 4;
    const std::size_t total = be16(&ip[2]);
    if (ihl < 20 || ip.size() < ihl || total < ihl) return false;
    const std::uint16_t frag = be16(&ip[6]);
    if ((frag & 0x1fff) != 0) return false;  // non-first fragment: no L4 header
    proto = ip[9];
    pkt.src_ip = IpAddress::from_bytes(IpAddress::Family::v4, &ip[12]);
    pkt.dst_ip = IpAddress::from_bytes(IpAddress::Family::v4, &ip[16]);
    l4_offset = ihl;
    l4_length = total - ihl;
  } else if (version == 6) {
    if (ip.size() < 40) return false;
    const std::size_t payload = be16(&ip[4]);
    pkt.src_ip = IpAddress::from_bytes(IpAddress::Family::v6, &ip[8]);
    pkt.dst_ip = IpAddress::from_bytes(IpAddress::Family::v6, &ip[24]);
    proto = ip[6];
    std::size_t off = 40;
    std::size_t remaining = payload;
    // Skip hop-by-hop, routing, fragment and destination-options headers.
    while (proto == 0 || proto == 43 || proto == 44 || proto == 60) {
      if (ip.size() < off + 8) return false;
      std::size_t ext_len = proto == 44 ? 8 : (std::size_t{ip[off + 1]} + 1) * 8;
      if (proto == 44 && (be16(&ip[off + 2]) & 0xfff8) != 0) return false;
      if (ext_len > remaining) return false;
      proto = ip[off];
      off += ext_len;
      remaining -= ext_len;
    }
    l4_offset = off;
    l4_length = remaining;
  } else {
    return false;
  }

  pkt.protocol = proto;
  const std::uint8_t* l4 = ip.data() + l4_offset;
  const std::size_t l4_captured = ip.size() > l4_offset ? ip.size() - l4_offset : 0;
  std::size_t header = 0;
  if (proto == kProtoTcp) {
    if (l4_captured < 20) return false;
    header = static_cast<std::size_t>(l4[12] >> 4) * 4;
    if (header < 20 || header > l4_length) return false;
    pkt.src_port = be16(l4);
    pkt.dst_port = be16(l4 + 2);
    pkt.tcp_flags = l4[13];
  } else if (proto == kProtoUdp) {
    if (l4_captured < 8 || l4_length < 8) return false;
    header = 8;
    pkt.src_port = be16(l4);
    pkt.dst_port = be16(l4 + 2);
    pkt.tcp_flags = 0;
  } else {
    return false;
  }
  pkt.payload_len = static_cast<std::uint32_t>(l4_length - header);
  const std::size_t captured_payload =
      l4_captured > header ? std::min<std::size_t>(l4_captured - header, pkt.payload_len) : 0;
  pkt.payload_digest = fnv1a(l4 + header, captured_payload);
  return true;
}

inline bool dissect_frame(std::uint32_t linktype, std::span<const std::uint8_t> frame,
                          RawPacket& pkt) {
  if (linktype == kLinkEthernet) {
    if (frame.size() < 14) return false;
    std::size_t off = 12;
    std::uint16_t ethertype = be16(&frame[off]);
    off += 2;
    while (ethertype == 0x8100 || ethertype == 0x88a8) {
      if (frame.size() < off + 4) return false;
      ethertype = be16(&frame[off + 2]);
      off += 4;
    }
    if (ethertype != 0x0800 && ethertype != 0x86dd) return false;
    return dissect_ip(frame.subspan(off), pkt);
  }
  return dissect_ip(frame, pkt);
}

inline std::uint16_t ipv4_checksum(const std::uint8_t* hdr, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) sum += be16(hdr + i);
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

}  // namespace detail

// Builds an Ethernet frame carrying `pkt`. The payload is zero-filled, or a
// byte stream seeded by payload_digest when the packet has one.
inline std::vector<std::uint8_t> build_frame(const RawPacket& pkt) {
  using namespace detail;
  std::vector<std::uint8_t> f;
  const bool tcp = pkt.protocol == kProtoTcp;
  const std::size_t l4_header = tcp ? 20 : 8;
  const std::size_t l4_len = l4_header + pkt.payload_len;
  f.reserve(14 + 40 + l4_len);
  const std::uint8_t dst_mac[6] = {0x02, 0, 0, 0, 0, 0x02};
  const std::uint8_t src_mac[6] = {0x02, 0, 0, 0, 0, 0x01};
  f.insert(f.end(), dst_mac, dst_mac + 6);
  f.insert(f.end(), src_mac, src_mac + 6);
  if (pkt.src_ip.is_v4()) {
    put_be16(f, 0x0800);
    const std::size_t ip_start = f.size();
    f.push_back(0x45);
    f.push_back(0);
    put_be16(f, static_cast<std::uint16_t>(20 + l4_len));
    put_be16(f, 0);
    put_be16(f, 0x4000);
    f.push_back(64);
    f.push_back(pkt.protocol);
    put_be16(f, 0);
    f.insert(f.end(), pkt.src_ip.data(), pkt.src_ip.data() + 4);
    f.insert(f.end(), pkt.dst_ip.data(), pkt.dst_ip.data() + 4);
    const std::uint16_t csum = ipv4_checksum(&f[ip_start], 20);
    f[ip_start + 10] = static_cast<std::uint8_t>(csum >> 8);
    f[ip_start + 11] = static_cast<std::uint8_t>(csum);
  } else {
    put_be16(f, 0x86dd);
    put_be32(f, 0x60000000);
    put_be16(f, static_cast<std::uint16_t>(l4_len));
    f.push_back(pkt.protocol);
    f.push_back(64);
    f.insert(f.end(), pkt.src_ip.data(), pkt.src_ip.data() + 16);
    f.insert(f.end(), pkt.dst_ip.data(), pkt.dst_ip.data() + 16);
  }
  put_be16(f, pkt.src_port);
  put_be16(f, pkt.dst_port);
  if (tcp) {
    put_be32(f, 0);
    put_be32(f, 0);
    f.push_back(0x50);
    f.push_back(pkt.tcp_flags);
    put_be16(f, 65535);
    put_be16(f, 0);
    put_be16(f, 0);
  } else {
    put_be16(f, static_cast<std::uint16_t>(l4_len));
    put_be16(f, 0);
  }
  const auto body = f.size();
  f.resize(body + pkt.payload_len, 0);
  if (pkt.payload_digest) {
    for (std::size_t i = 0; i < pkt.payload_len; i += 8) {
      const auto word = derive_seed(*pkt.payload_digest, i / 8);
      for (std::size_t b = 0; b < 8 && i + b < pkt.payload_len; ++b) {
        f[body + i + b] = static_cast<std::uint8_t>(word >> (8 * b));
      }
    }
  }
  return f;
}

// Ethernet + IP + transport header length used by build_frame.
inline std::uint32_t header_overhead(bool ipv4, std::uint8_t protocol) {
  return 14 + (ipv4 ? 20 : 40) + (protocol == kProtoTcp ? 20 : 8);
}

inline PacketTrace parse_trace(std::span<const std::uint8_t> bytes, std::string source) {
  using namespace detail;
  if (bytes.size() < 24) throw MalformedHeader(source + ": file shorter than pcap header");
  const std::uint32_t raw_magic = load_le32(bytes.data());
  bool swapped = false;
  bool nanos = false;
  if (raw_magic == kMagicMicros || raw_magic == kMagicNanos) {
    nanos = raw_magic == kMagicNanos;
  } else if (bswap32(raw_magic) == kMagicMicros || bswap32(raw_magic) == kMagicNanos) {
    swapped = true;
    nanos = bswap32(raw_magic) == kMagicNanos;
  } else {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", raw_magic);
    throw MalformedHeader(source + ": bad magic " + buf);
  }
  auto u32 = [&](std::size_t off) {
    const std::uint32_t v = load_le32(bytes.data() + off);
    return swapped ? bswap32(v) : v;
  };
  auto u16 = [&](std::size_t off) {
    const std::uint16_t v = static_cast<std::uint16_t>(bytes[off] | (bytes[off + 1] << 8));
    return swapped ? static_cast<std::uint16_t>((v >> 8) | (v << 8)) : v;
  };
  if (u16(4) != 2) throw MalformedHeader(source + ": unsupported version " + std::to_string(u16(4)));
  const std::uint32_t linktype = u32(20) & 0x0fffffff;
  if (linktype != kLinkEthernet && linktype != kLinkRaw && linktype != kLinkIpv4 &&
      linktype != kLinkIpv6) {
    throw MalformedHeader(source + ": unsupported link type " + std::to_string(linktype));
  }

  PacketTrace trace;
  trace.source = std::move(source);
  std::size_t off = 24;
  while (off < bytes.size()) {
    if (bytes.size() - off < 16) {
      ++trace.skipped;  // truncated record header
      break;
    }
    const std::int64_t sec = u32(off);
    const std::int64_t frac = u32(off + 4);
    const std::uint32_t incl = u32(off + 8);
    const std::uint32_t orig = u32(off + 12);
    off += 16;
    if (bytes.size() - off < incl) {
      ++trace.skipped;
      break;
    }
    auto frame = bytes.subspan(off, incl);
    off += incl;

    RawPacket pkt;
    pkt.ts_us = sec * 1'000'000 + (nanos ? frac / 1000 : frac);
    pkt.wire_len = std::max(orig, incl);
    if (!dissect_frame(linktype, frame, pkt) || pkt.payload_len > pkt.wire_len) {
      ++trace.skipped;
      continue;
    }
    if (linktype == kLinkEthernet) pkt.frame.assign(frame.begin(), frame.end());
    trace.packets.push_back(std::move(pkt));
  }
  return trace;
}

inline PacketTrace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnreadableFile("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw UnreadableFile("read failed: " + path);
  return parse_trace(bytes, path);
}

// Serializes a trace as a little-endian microsecond pcap with Ethernet
// framing. Captured Ethernet frames are written verbatim; generated packets get a
// frame from build_frame().
inline std::vector<std::uint8_t> serialize_trace(const PacketTrace& trace) {
  using namespace detail;
  std::vector<std::uint8_t> out;
  put_le32(out, kMagicMicros);
  put_le16(out, 2);
  put_le16(out, 4);
  put_le32(out, 0);
  put_le32(out, 0);
  const auto snaplen_at = out.size();
  put_le32(out, 65535);
  put_le32(out, kLinkEthernet);
  std::size_t longest = 0;
  for (const auto& pkt : trace.packets) {
    std::vector<std::uint8_t> built;
    const std::vector<std::uint8_t>* frame = &pkt.frame;
    if (frame->empty()) {
      built = build_frame(pkt);
      frame = &built;
    }
    longest = std::max(longest, frame->size());
    const std::int64_t sec = pkt.ts_us / 1'000'000;
    const std::int64_t usec = pkt.ts_us % 1'000'000;
    put_le32(out, static_cast<std::uint32_t>(sec));
    put_le32(out, static_cast<std::uint32_t>(usec));
    put_le32(out, static_cast<std::uint32_t>(frame->size()));
    put_le32(out, std::max<std::uint32_t>(pkt.wire_len, static_cast<std::uint32_t>(frame->size())));
    out.insert(out.end(), frame->begin(), frame->end());
  }
  if (longest > 65535) {
    std::vector<std::uint8_t> snaplen;
    put_le32(snaplen, static_cast<std::uint32_t>(longest));
    std::copy(snaplen.begin(), snaplen.end(), out.begin() + static_cast<std::ptrdiff_t>(snaplen_at));
  }
  return out;
}

inline void write_trace(const PacketTrace& trace, const std::string& path) {
  const auto bytes = serialize_trace(trace);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace pflow::pcap
