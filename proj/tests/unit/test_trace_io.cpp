#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ive/trace_io.hpp"
#include "support/random_inputs.hpp"

namespace ive {
namespace {

// Rounds every weight through float32 so traces compare exactly after a
// round trip.
AttentionTrace as_float32(AttentionTrace trace) {
  for (auto& step : trace.steps) {
    for (double& w : step.weights()) w = static_cast<double>(static_cast<float>(w));
  }
  return trace;
}

AttentionTrace tiny_trace() {
  AttentionTrace trace;
  trace.layout = testing::small_layout({1, 2}, 1, 1, 0, 0);
  trace.steps.emplace_back(1, 1, 1, 2, std::vector<double>{0.25, 0.75});
  return trace;
}

AttentionTrace random_trace(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto layout = testing::small_layout({1 + rng() % 4, 1 + rng() % 4}, 1 + rng() % 3,
                                            1 + rng() % 3, rng() % 5, rng() % 5);
  auto trace = testing::random_trace(layout, 1 + rng() % 5, rng);
  trace.meta = {{"model", "toy"}, {"seed", std::to_string(seed)}, {"note", "ünïcode \"quoted\""}};
  return trace;
}

void put_u32(std::vector<std::uint8_t>& bytes, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

TraceErrorKind decode_kind(const std::vector<std::uint8_t>& bytes, std::size_t* offset = nullptr) {
  try {
    decode_trace(bytes);
  } catch (const TraceError& e) {
    if (offset) *offset = e.offset();
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return TraceErrorKind::io;
}

TEST(TraceIo, HeaderLayoutAndPayloadSize) {
  AttentionTrace trace = tiny_trace();
  const auto bytes = encode_trace(trace);
  ASSERT_GE(bytes.size(), kTraceHeaderSize);
  EXPECT_EQ(std::memcmp(bytes.data(), "IVTR", 4), 0);
  const std::uint32_t meta_len = bytes[40] | bytes[41] << 8 | bytes[42] << 16 | bytes[43] << 24;
  EXPECT_EQ(meta_len, 2u);  // "{}"
  EXPECT_EQ(bytes.size() - kTraceHeaderSize - meta_len, 8u);
  // Little-endian float32 payload.
  float first = 0.0F;
  std::uint32_t raw = 0;
  for (int i = 0; i < 4; ++i) raw |= std::uint32_t{bytes[kTraceHeaderSize + meta_len + i]} << (8 * i);
  first = std::bit_cast<float>(raw);
  EXPECT_EQ(first, 0.25F);
}

TEST(TraceIo, HeaderFieldsInOrder) {
  AttentionTrace trace;
  trace.layout = testing::small_layout({2, 3}, 2, 3, 4, 5);
  std::mt19937_64 rng(1);
  trace = testing::random_trace(trace.layout, 7, rng);
  const auto bytes = encode_trace(trace);
  auto u32 = [&](std::size_t off) {
    return bytes[off] | bytes[off + 1] << 8 | bytes[off + 2] << 16 | bytes[off + 3] << 24;
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), 2u);
  EXPECT_EQ(u32(12), 3u);
  EXPECT_EQ(u32(16), 15u);
  EXPECT_EQ(u32(20), 7u);
  EXPECT_EQ(u32(24), 4u);
  EXPECT_EQ(u32(28), 10u);
  EXPECT_EQ(u32(32), 2u);
  EXPECT_EQ(u32(36), 3u);
  EXPECT_EQ(bytes.size(), 44u + u32(40) + 7u * 2u * 3u * 15u * 4u);
}

TEST(TraceIo, BinaryRoundTripOnRandomTraces) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto trace = random_trace(seed);
    const auto bytes = encode_trace(trace);
    const auto back = decode_trace(bytes);
    EXPECT_EQ(back, as_float32(trace));
    EXPECT_EQ(encode_trace(back), bytes);
    EXPECT_EQ(encode_trace(trace), bytes);
  }
}

TEST(TraceIo, JsonRoundTripIsByteIdentical) {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const auto bytes = encode_trace(random_trace(seed));
    const auto doc = export_json_debug(decode_trace(bytes));
    const auto reparsed = nlohmann::json::parse(doc.dump());
    EXPECT_EQ(encode_trace(import_json_debug(reparsed)), bytes);
  }
}

TEST(TraceIo, JsonSchema) {
  const auto doc = export_json_debug(tiny_trace());
  std::vector<std::string> keys;
  for (const auto& [k, v] : doc.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"grid_h", "grid_w", "magic", "meta", "meta_len",
                                            "n_heads", "n_layers", "n_tokens", "steps", "version",
                                            "visual_end", "visual_start"}));
  ASSERT_EQ(doc.at("steps").size(), 1u);
  EXPECT_EQ(doc.at("steps")[0][0][0][1], "0.75");
  EXPECT_EQ(doc.at("meta"), "{}");
}

TEST(TraceIo, StreamAndFileWriters) {
  const auto trace = random_trace(7);
  std::ostringstream out;
  const std::size_t n = write_trace(trace, out);
  EXPECT_EQ(n, out.str().size());
  std::istringstream in(out.str());
  EXPECT_EQ(read_trace(in), as_float32(trace));

  const auto path = std::filesystem::temp_directory_path() / "ive_trace_io_test.ivtr";
  write_trace(trace, path);
  EXPECT_EQ(read_trace(path), as_float32(trace));
  std::filesystem::remove(path);
  EXPECT_THROW(read_trace(path), TraceError);
}

TEST(TraceIo, BadMagic) {
  auto bytes = encode_trace(tiny_trace());
  bytes[0] = 'X';
  std::size_t offset = 99;
  EXPECT_EQ(decode_kind(bytes, &offset), TraceErrorKind::bad_magic);
  EXPECT_EQ(offset, 0u);
  try {
    decode_trace(bytes);
  } catch (const TraceError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(TraceIo, VersionMismatch) {
  auto bytes = encode_trace(tiny_trace());
  put_u32(bytes, 4, 2);
  std::size_t offset = 0;
  EXPECT_EQ(decode_kind(bytes, &offset), TraceErrorKind::version_mismatch);
  EXPECT_EQ(offset, 4u);
}

TEST(TraceIo, TruncatedPayloadNamesByteCounts) {
  auto bytes = encode_trace(tiny_trace());
  bytes.resize(bytes.size() - 4);
  try {
    decode_trace(bytes);
    FAIL();
  } catch (const TraceError& e) {
    EXPECT_EQ(e.kind(), TraceErrorKind::truncated);
    const std::string what = e.what();
    EXPECT_NE(what.find("expected 8 bytes"), std::string::npos) << what;
    EXPECT_NE(what.find("found 4"), std::string::npos) << what;
  }
  bytes.resize(20);
  EXPECT_EQ(decode_kind(bytes), TraceErrorKind::truncated);
}

TEST(TraceIo, DeclaredDimensionsMustMatchLength) {
  const auto good = encode_trace(random_trace(3));
  auto more = good;
  more.push_back(0);
  EXPECT_EQ(decode_kind(more), TraceErrorKind::dimension_mismatch);

  auto steps = good;
  put_u32(steps, 20, (steps[20] | steps[21] << 8) + 1);
  EXPECT_EQ(decode_kind(steps), TraceErrorKind::truncated);

  auto grid = good;
  put_u32(grid, 32, 1000);
  EXPECT_EQ(decode_kind(grid), TraceErrorKind::dimension_mismatch);

  auto huge = good;
  put_u32(huge, 8, 0xFFFFFFFFu);
  put_u32(huge, 12, 0xFFFFFFFFu);
  EXPECT_NE(decode_kind(huge), TraceErrorKind::io);
}

TEST(TraceIo, InvalidMeta) {
  auto bytes = encode_trace(tiny_trace());
  bytes[44] = '[';
  std::size_t offset = 0;
  EXPECT_EQ(decode_kind(bytes, &offset), TraceErrorKind::invalid_meta);
  EXPECT_EQ(offset, 44u);
}

TEST(TraceIo, RowSumRejectAndWarn) {
  auto trace = tiny_trace();
  trace.steps[0].weights() = {0.25, 0.80};
  auto bytes = encode_trace(trace);
  std::size_t offset = 0;
  EXPECT_EQ(decode_kind(bytes, &offset), TraceErrorKind::row_sum_rejected);
  EXPECT_EQ(offset, 44u + 2u);

  trace.steps[0].weights() = {0.25, 0.7505};
  std::vector<TraceWarning> warnings;
  const auto back = decode_trace(encode_trace(trace), &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_EQ(warnings[0].step, 1u);
  EXPECT_NEAR(warnings[0].deviation, 5e-4, 1e-6);
}

TEST(TraceIo, InvalidWeight) {
  auto bytes = encode_trace(tiny_trace());
  put_u32(bytes, 46, std::bit_cast<std::uint32_t>(-0.25F));
  EXPECT_EQ(decode_kind(bytes), TraceErrorKind::invalid_weight);
  put_u32(bytes, 46, std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN()));
  EXPECT_EQ(decode_kind(bytes), TraceErrorKind::invalid_weight);
}

TEST(TraceIo, JsonImportErrors) {
  auto doc = export_json_debug(tiny_trace());
  auto bad = doc;
  bad["steps"][0][0][0][0] = "zero";
  EXPECT_THROW(import_json_debug(bad), TraceError);
  bad = doc;
  bad.erase("grid_w");
  try {
    import_json_debug(bad);
    FAIL();
  } catch (const TraceError& e) {
    EXPECT_EQ(e.kind(), TraceErrorKind::invalid_json);
  }
  bad = doc;
  bad["meta_len"] = 5;
  EXPECT_THROW(import_json_debug(bad), TraceError);
  bad = doc;
  bad["magic"] = "NOPE";
  EXPECT_THROW(import_json_debug(bad), TraceError);
  bad = doc;
  bad["steps"][0][0].push_back(bad["steps"][0][0][0]);
  EXPECT_THROW(import_json_debug(bad), TraceError);
}

}  // namespace
}  // namespace ive
