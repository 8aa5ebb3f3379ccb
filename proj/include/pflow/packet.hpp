#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <arpa/inet.h>

#include "pflow/error.hpp"

namespace pflow {

namespace tcp {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
inline constexpr std::uint8_t kUrg = 0x20;
inline constexpr std::uint8_t kEce = 0x40;
inline constexpr std::uint8_t kCwr = 0x80;
}  // namespace tcp

inline constexpr std::uint8_t kProtoTcp = 6;
inline constexpr std::uint8_t kProtoUdp = 17;

// IPv4 or IPv6 address. IPv4 occupies the first four bytes of `bytes`.
class IpAddress {
public:
  enum class Family : std::uint8_t { v4 = 4, v6 = 6 };

  IpAddress() = default;

  static IpAddress v4(std::uint32_t host_order) {
    IpAddress a;
    a.family_ = Family::v4;
    a.bytes_[0] = static_cast<std::uint8_t>(host_order >> 24);
    a.bytes_[1] = static_cast<std::uint8_t>(host_order >> 16);
    a.bytes_[2] = static_cast<std::uint8_t>(host_order >> 8);
    a.bytes_[3] = static_cast<std::uint8_t>(host_order);
    return a;
  }

  static IpAddress from_bytes(Family family, const std::uint8_t* data) {
    IpAddress a;
    a.family_ = family;
    std::copy_n(data, a.size(), a.bytes_.begin());
    return a;
  }

  static std::optional<IpAddress> parse(std::string_view text) {
    std::string s(text);
    IpAddress a;
    if (inet_pton(AF_INET, s.c_str(), a.bytes_.data()) == 1) {
      a.family_ = Family::v4;
      return a;
    }
    if (inet_pton(AF_INET6, s.c_str(), a.bytes_.data()) == 1) {
      a.family_ = Family::v6;
      return a;
    }
    return std::nullopt;
  }

  static IpAddress must_parse(std::string_view text) {
    auto a = parse(text);
    if (!a) throw InvalidConfig("not an IP address: " + std::string(text));
    return *a;
  }

  Family family() const { return family_; }
  bool is_v4() const { return family_ == Family::v4; }
  std::size_t size() const { return is_v4() ? 4 : 16; }
  const std::uint8_t* data() const { return bytes_.data(); }

  std::uint32_t v4_value() const {
    return (std::uint32_t{bytes_[0]} << 24) | (std::uint32_t{bytes_[1]} << 16) |
           (std::uint32_t{bytes_[2]} << 8) | std::uint32_t{bytes_[3]};
  }

  // Lowercase hex of the address bytes, no separators.
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(size() * 2);
    for (std::size_t i = 0; i < size(); ++i) {
      out.push_back(digits[bytes_[i] >> 4]);
      out.push_back(digits[bytes_[i] & 0xf]);
    }
    return out;
  }

  std::string to_string() const {
    char buf[INET6_ADDRSTRLEN] = {};
    inet_ntop(is_v4() ? AF_INET : AF_INET6, bytes_.data(), buf, sizeof(buf));
    return buf;
  }

  friend bool operator==(const IpAddress&, const IpAddress&) = default;
  friend auto operator<=>(const IpAddress&, const IpAddress&) = default;

private:
  Family family_ = Family::v4;
  std::array<std::uint8_t, 16> bytes_{};
};

struct Endpoint {
  IpAddress ip;
  std::uint16_t port = 0;

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

// One parsed packet. Ports are 0 for protocols without ports and tcp_flags is
// 0 unless protocol is TCP.
struct RawPacket {
  std::int64_t ts_us = 0;
  IpAddress src_ip;
  IpAddress dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t protocol = 0;
  std::uint8_t tcp_flags = 0;
  std::uint32_t payload_len = 0;
  std::uint32_t wire_len = 0;
  // FNV-1a of the captured transport payload, when read from a capture.
  std::optional<std::uint64_t> payload_digest;
  // Original link-layer frame as captured; empty for generated packets.
  std::vector<std::uint8_t> frame;

  Endpoint src() const { return {src_ip, src_port}; }
  Endpoint dst() const { return {dst_ip, dst_port}; }
  bool has_flag(std::uint8_t f) const { return (tcp_flags & f) != 0; }

  // Equality used for duplicate detection; ignores the timestamp and frame.
  bool same_content(const RawPacket& o) const {
    return src_ip == o.src_ip && dst_ip == o.dst_ip && src_port == o.src_port &&
           dst_port == o.dst_port && protocol == o.protocol &&
           tcp_flags == o.tcp_flags && payload_len == o.payload_len &&
           wire_len == o.wire_len && payload_digest == o.payload_digest;
  }

  friend bool operator==(const RawPacket&, const RawPacket&) = default;
};

struct PacketTrace {
  std::vector<RawPacket> packets;
  std::string source;
  // Frames skipped during parsing (non-IP, non-TCP/UDP, truncated).
  std::size_t skipped = 0;
};

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n,
                           std::uint64_t h = kFnvOffset) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(data), n), h);
}

}  // namespace pflow
