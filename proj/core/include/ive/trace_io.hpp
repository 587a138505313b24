// Binary attention-trace container ("IVTR", version 1).
//
//   offset  size  field
//        0     4  magic "IVTR"
//        4     4  version (= 1)
//        8     4  n_layers
//       12     4  n_heads
//       16     4  n_tokens
//       20     4  steps
//       24     4  visual_start
//       28     4  visual_end
//       32     4  grid_h
//       36     4  grid_w
//       40     4  meta_len
//       44  meta_len  meta, a UTF-8 JSON object
//   then steps * n_layers * n_heads * n_tokens float32 weights ordered
//   [step][layer][head][token].
//
// Every integer and float is little-endian. Weights are widened to double on
// load.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ive/attention.hpp"

namespace ive {

inline constexpr char kTraceMagic[4] = {'I', 'V', 'T', 'R'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderSize = 44;

enum class TraceErrorKind {
  io,
  bad_magic,
  version_mismatch,
  truncated,
  dimension_mismatch,
  invalid_meta,
  invalid_weight,
  row_sum_rejected,
  invalid_json,
};

std::string to_string(TraceErrorKind kind);

class TraceError : public std::runtime_error {
 public:
  TraceError(TraceErrorKind kind, std::size_t offset, const std::string& detail);

  TraceErrorKind kind() const { return kind_; }
  /// Byte offset in the file the error refers to.
  std::size_t offset() const { return offset_; }

 private:
  TraceErrorKind kind_;
  std::size_t offset_;
};

struct TraceWarning {
  std::size_t step = 0;  // 1-based
  std::size_t layer = 0;
  std::size_t head = 0;
  double deviation = 0.0;  // |row sum - 1| of the worst row in the step
  std::size_t offset = 0;
};

std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace);
/// Validates structure and row sums. Soft row-sum drift is reported through
/// `warnings` when provided; gross drift throws.
AttentionTrace decode_trace(std::span<const std::uint8_t> bytes,
                            std::vector<TraceWarning>* warnings = nullptr);

/// Returns the number of bytes written. Throws TraceError(io) on failure.
std::size_t write_trace(const AttentionTrace& trace, std::ostream& out);
std::size_t write_trace(const AttentionTrace& trace, const std::filesystem::path& path);

AttentionTrace read_trace(std::istream& in, std::vector<TraceWarning>* warnings = nullptr);
AttentionTrace read_trace(const std::filesystem::path& path,
                          std::vector<TraceWarning>* warnings = nullptr);

/// Human-readable mirror of the binary file. Weights are the shortest decimal
/// strings that parse back to the same float32; `meta` is the verbatim meta
/// text. Field names follow the header table above, with `steps` holding the
/// nested [step][layer][head][token] array instead of a count.
nlohmann::json export_json_debug(const AttentionTrace& trace);
/// Inverse of export_json_debug. Throws TraceError(invalid_json) with offset 0.
AttentionTrace import_json_debug(const nlohmann::json& doc);

}  // namespace ive
