#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "pflow/pcap.hpp"
#include "support/helpers.hpp"
#include "support/tempdir.hpp"

namespace pflow {
namespace {

using Bytes = std::vector<std::uint8_t>;

void append(Bytes& out, std::initializer_list<int> bytes) {
  for (int b : bytes) out.push_back(static_cast<std::uint8_t>(b));
}

// Little-endian microsecond global header, Ethernet link type.
Bytes le_header(std::uint32_t magic = 0xa1b2c3d4, std::uint32_t link = 1) {
  Bytes b;
  append(b, {int(magic & 0xff), int((magic >> 8) & 0xff), int((magic >> 16) & 0xff), int(magic >> 24)});
  append(b, {2, 0, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 0, 0});
  append(b, {int(link & 0xff), 0, 0, 0});
  return b;
}

void le_record(Bytes& out, std::uint32_t sec, std::uint32_t frac, const Bytes& frame,
               std::uint32_t orig = 0) {
  auto u32 = [&](std::uint32_t v) {
    append(out, {int(v & 0xff), int((v >> 8) & 0xff), int((v >> 16) & 0xff), int(v >> 24)});
  };
  u32(sec);
  u32(frac);
  u32(static_cast<std::uint32_t>(frame.size()));
  u32(orig ? orig : static_cast<std::uint32_t>(frame.size()));
  out.insert(out.end(), frame.begin(), frame.end());
}

// Hand-assembled Ethernet/IPv4/TCP frame, 20-byte headers, no payload.
Bytes tcp_frame(std::initializer_list<int> src_ip, int sport, std::initializer_list<int> dst_ip,
                int dport, int flags) {
  Bytes f;
  append(f, {0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 1, 0x08, 0x00});
  append(f, {0x45, 0, 0, 40, 0, 1, 0x40, 0, 64, 6, 0, 0});
  append(f, src_ip);
  append(f, dst_ip);
  append(f, {sport >> 8, sport & 0xff, dport >> 8, dport & 0xff, 0, 0, 0, 0, 0, 0, 0, 0, 0x50, flags,
             0xff, 0xff, 0, 0, 0, 0});
  return f;
}

Bytes handshake_capture() {
  Bytes file = le_header();
  le_record(file, 1499255000, 0, tcp_frame({10, 0, 0, 1}, 1234, {10, 0, 0, 2}, 80, 0x02));
  le_record(file, 1499255000, 150, tcp_frame({10, 0, 0, 2}, 80, {10, 0, 0, 1}, 1234, 0x12));
  le_record(file, 1499255000, 300, tcp_frame({10, 0, 0, 1}, 1234, {10, 0, 0, 2}, 80, 0x10));
  return file;
}

void write_bytes(const std::string& path, const Bytes& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TEST(Pcap, EmptyCaptureHasNoPackets) {
  const auto t = pcap::parse_trace(le_header(), "empty");
  EXPECT_TRUE(t.packets.empty());
  EXPECT_EQ(t.skipped, 0u);
}

TEST(Pcap, HandshakeFields) {
  testing::TempDir dir;
  write_bytes(dir.file("hs.pcap"), handshake_capture());
  const auto t = pcap::read_trace(dir.file("hs.pcap"));
  ASSERT_EQ(t.packets.size(), 3u);
  EXPECT_EQ(t.packets[0].tcp_flags, 0x02);
  EXPECT_EQ(t.packets[1].tcp_flags, 0x12);
  EXPECT_EQ(t.packets[2].tcp_flags, 0x10);

  const auto& syn = t.packets[0];
  EXPECT_EQ(syn.src_ip.to_string(), "10.0.0.1");
  EXPECT_EQ(syn.dst_ip.to_string(), "10.0.0.2");
  EXPECT_EQ(syn.src_port, 1234);
  EXPECT_EQ(syn.dst_port, 80);
  EXPECT_EQ(syn.protocol, kProtoTcp);
  EXPECT_EQ(syn.payload_len, 0u);
  EXPECT_EQ(syn.wire_len, 54u);
  EXPECT_EQ(syn.ts_us, 1499255000000000);
  EXPECT_EQ(t.packets[1].ts_us, 1499255000000150);
  EXPECT_EQ(t.packets[1].src_port, 80);
}

TEST(Pcap, BadMagicIsMalformedHeader) {
  Bytes b = le_header(0xdeadbeef);
  EXPECT_THROW(pcap::parse_trace(b, "x"), MalformedHeader);
}

TEST(Pcap, ShortFileIsMalformedHeader) {
  EXPECT_THROW(pcap::parse_trace(Bytes{0xd4, 0xc3}, "x"), MalformedHeader);
}

TEST(Pcap, MissingFileIsUnreadable) {
  EXPECT_THROW(pcap::read_trace("/nonexistent/trace.pcap"), UnreadableFile);
}

TEST(Pcap, BigEndianHeaderAndNanosecondVariant) {
  // Big-endian file: magic bytes appear as a1 b2 3c 4d, fields big-endian.
  Bytes b;
  append(b, {0xa1, 0xb2, 0x3c, 0x4d, 0, 2, 0, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 0, 0, 0, 1});
  const auto frame = tcp_frame({10, 0, 0, 1}, 1234, {10, 0, 0, 2}, 80, 0x02);
  append(b, {0x59, 0x5c, 0xc4, 0x18});        // 1499251736 s
  append(b, {0x00, 0x00, 0x30, 0x39});        // 12345 ns -> 12 us
  append(b, {0, 0, 0, int(frame.size())});
  append(b, {0, 0, 0, int(frame.size())});
  b.insert(b.end(), frame.begin(), frame.end());
  const auto t = pcap::parse_trace(b, "be");
  ASSERT_EQ(t.packets.size(), 1u);
  EXPECT_EQ(t.packets[0].ts_us, 1499251736LL * 1000000 + 12);
}

TEST(Pcap, NonIpFramesAreSkippedAndCounted) {
  Bytes file = le_header();
  Bytes arp;
  append(arp, {0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0, 0, 1, 0x08, 0x06});
  arp.resize(42, 0);
  le_record(file, 1, 0, arp);
  le_record(file, 1, 5, tcp_frame({10, 0, 0, 1}, 1, {10, 0, 0, 2}, 2, 0x10));
  Bytes icmp = tcp_frame({10, 0, 0, 1}, 1, {10, 0, 0, 2}, 2, 0);
  icmp[14 + 9] = 1;  // protocol ICMP
  le_record(file, 1, 6, icmp);
  const auto t = pcap::parse_trace(file, "mixed");
  EXPECT_EQ(t.packets.size(), 1u);
  EXPECT_EQ(t.skipped, 2u);
}

TEST(Pcap, TruncatedTrailingRecordIsSkipped) {
  Bytes file = handshake_capture();
  file.resize(file.size() - 10);
  const auto t = pcap::parse_trace(file, "trunc");
  EXPECT_EQ(t.packets.size(), 2u);
  EXPECT_EQ(t.skipped, 1u);
}

TEST(Pcap, VlanTaggedIpv4Udp) {
  Bytes f;
  append(f, {0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 1, 0x81, 0x00, 0x00, 0x0a, 0x08, 0x00});
  append(f, {0x45, 0, 0, 28 + 5, 0, 1, 0, 0, 64, 17, 0, 0, 192, 168, 1, 1, 192, 168, 1, 2});
  append(f, {0x13, 0x88, 0x00, 0x35, 0, 13, 0, 0, 'h', 'e', 'l', 'l', 'o'});
  Bytes file = le_header();
  le_record(file, 7, 0, f);
  const auto t = pcap::parse_trace(file, "vlan");
  ASSERT_EQ(t.packets.size(), 1u);
  const auto& p = t.packets[0];
  EXPECT_EQ(p.protocol, kProtoUdp);
  EXPECT_EQ(p.src_port, 5000);
  EXPECT_EQ(p.dst_port, 53);
  EXPECT_EQ(p.tcp_flags, 0);
  EXPECT_EQ(p.payload_len, 5u);
  EXPECT_EQ(p.payload_digest, fnv1a(std::string_view("hello")));
}

TEST(Pcap, SnaplenTruncationKeepsHeaderLengths) {
  auto frame = tcp_frame({10, 0, 0, 1}, 1234, {10, 0, 0, 2}, 80, 0x18);
  frame[14 + 2] = (40 + 1000) >> 8;
  frame[14 + 3] = (40 + 1000) & 0xff;
  Bytes file = le_header();
  le_record(file, 1, 0, frame, 14 + 40 + 1000);
  const auto t = pcap::parse_trace(file, "snap");
  ASSERT_EQ(t.packets.size(), 1u);
  EXPECT_EQ(t.packets[0].payload_len, 1000u);
  EXPECT_EQ(t.packets[0].wire_len, 1054u);
}

TEST(Pcap, Ipv6TcpThroughWriterAndReader) {
  PacketTrace t;
  t.packets.push_back(testing::make_packet(10, "2001:db8::1", 443, "2001:db8::2", 50000, kProtoTcp,
                                           tcp::kAck | tcp::kPsh, 321));
  const auto back = pcap::parse_trace(pcap::serialize_trace(t), "v6");
  ASSERT_EQ(back.packets.size(), 1u);
  const auto& p = back.packets[0];
  EXPECT_FALSE(p.src_ip.is_v4());
  EXPECT_EQ(p.src_ip.to_string(), "2001:db8::1");
  EXPECT_EQ(p.payload_len, 321u);
  EXPECT_EQ(p.wire_len, t.packets[0].wire_len);
  EXPECT_EQ(p.tcp_flags, tcp::kAck | tcp::kPsh);
}

TEST(Pcap, CapturedFramesAreWrittenVerbatim) {
  const auto original = handshake_capture();
  const auto t = pcap::parse_trace(original, "hs");
  EXPECT_EQ(pcap::serialize_trace(t), original);
}

TEST(Pcap, GeneratedPacketsRoundTripFields) {
  const auto trace = testing::fuzz_trace(7, {.max_packets = 200});
  const auto back = pcap::parse_trace(pcap::serialize_trace(trace), "rt");
  ASSERT_EQ(back.packets.size(), trace.packets.size());
  for (std::size_t i = 0; i < trace.packets.size(); ++i) {
    auto expected = trace.packets[i];
    auto got = back.packets[i];
    got.payload_digest.reset();
    got.frame.clear();
    EXPECT_EQ(got, expected) << "packet " << i;
  }
}

}  // namespace
}  // namespace pflow
