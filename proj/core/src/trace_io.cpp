#include "ive/trace_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>

#include <nlohmann/json.hpp>

namespace ive {

namespace {

constexpr std::size_t kMetaOffset = kTraceHeaderSize;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw TraceError(TraceErrorKind::dimension_mismatch, 0,
                     std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

std::string encode_meta(const std::map<std::string, std::string>& meta) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : meta) j[k] = v;
  return j.dump();
}

std::map<std::string, std::string> decode_meta(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(TraceErrorKind::invalid_meta, kMetaOffset,
                     std::string("meta is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw TraceError(TraceErrorKind::invalid_meta, kMetaOffset, "meta must be a JSON object");
  }
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : j.items()) meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  return meta;
}

std::string float_to_text(float f) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), f);
  return std::string(buf.data(), ptr);
}

float text_to_float(const std::string& text) {
  float f = 0.0F;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), f);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw TraceError(TraceErrorKind::invalid_json, 0, "weight '" + text + "' is not a float");
  }
  return f;
}

bool checked_product(std::initializer_list<std::size_t> factors, std::size_t& out) {
  out = 1;
  for (std::size_t f : factors) {
    if (f != 0 && out > std::numeric_limits<std::size_t>::max() / f) return false;
    out *= f;
  }
  return true;
}

void validate_layout_for_io(const TokenLayout& layout, std::size_t offset) {
  try {
    layout.validate();
  } catch (const std::invalid_argument& e) {
    throw TraceError(TraceErrorKind::dimension_mismatch, offset, e.what());
  }
}

}  // namespace

std::string to_string(TraceErrorKind kind) {
  switch (kind) {
    case TraceErrorKind::io: return "io error";
    case TraceErrorKind::bad_magic: return "bad magic";
    case TraceErrorKind::version_mismatch: return "version mismatch";
    case TraceErrorKind::truncated: return "truncated";
    case TraceErrorKind::dimension_mismatch: return "dimension mismatch";
    case TraceErrorKind::invalid_meta: return "invalid meta";
    case TraceErrorKind::invalid_weight: return "invalid weight";
    case TraceErrorKind::row_sum_rejected: return "row sum rejected";
    case TraceErrorKind::invalid_json: return "invalid json";
  }
  return "unknown";
}

TraceError::TraceError(TraceErrorKind kind, std::size_t offset, const std::string& detail)
    : std::runtime_error(to_string(kind) + " at offset " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace) {
  trace.validate();
  const TokenLayout& layout = trace.layout;
  const std::string meta = encode_meta(trace.meta);
  const std::size_t row_floats = layout.n_layers * layout.n_heads * layout.total_tokens;

  std::vector<std::uint8_t> out;
  out.reserve(kTraceHeaderSize + meta.size() + trace.steps.size() * row_floats * 4);
  out.insert(out.end(), std::begin(kTraceMagic), std::end(kTraceMagic));
  put_u32(out, kTraceVersion);
  put_u32(out, checked_u32(layout.n_layers, "n_layers"));
  put_u32(out, checked_u32(layout.n_heads, "n_heads"));
  put_u32(out, checked_u32(layout.total_tokens, "n_tokens"));
  put_u32(out, checked_u32(trace.steps.size(), "steps"));
  put_u32(out, checked_u32(layout.visual_start, "visual_start"));
  put_u32(out, checked_u32(layout.visual_end, "visual_end"));
  put_u32(out, checked_u32(layout.grid.rows, "grid_h"));
  put_u32(out, checked_u32(layout.grid.cols, "grid_w"));
  put_u32(out, checked_u32(meta.size(), "meta_len"));
  out.insert(out.end(), meta.begin(), meta.end());
  for (const auto& step : trace.steps) {
    for (double w : step.weights()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(w)));
  }
  return out;
}

AttentionTrace decode_trace(std::span<const std::uint8_t> bytes,
                            std::vector<TraceWarning>* warnings) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTraceMagic, 4) != 0) {
    throw TraceError(TraceErrorKind::bad_magic, 0, "file does not start with \"IVTR\"");
  }
  if (bytes.size() < kTraceHeaderSize) {
    throw TraceError(TraceErrorKind::truncated, bytes.size(),
                     "header needs " + std::to_string(kTraceHeaderSize) + " bytes, file has " +
                         std::to_string(bytes.size()));
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kTraceVersion) {
    throw TraceError(TraceErrorKind::version_mismatch, 4,
                     "expected version " + std::to_string(kTraceVersion) + ", found " +
                         std::to_string(version));
  }

  AttentionTrace trace;
  TokenLayout& layout = trace.layout;
  layout.n_layers = get_u32(bytes, 8);
  layout.n_heads = get_u32(bytes, 12);
  layout.total_tokens = get_u32(bytes, 16);
  const std::size_t steps = get_u32(bytes, 20);
  layout.visual_start = get_u32(bytes, 24);
  layout.visual_end = get_u32(bytes, 28);
  layout.grid.rows = get_u32(bytes, 32);
  layout.grid.cols = get_u32(bytes, 36);
  const std::size_t meta_len = get_u32(bytes, 40);
  validate_layout_for_io(layout, 8);

  if (bytes.size() - kTraceHeaderSize < meta_len) {
    throw TraceError(TraceErrorKind::truncated, bytes.size(),
                     "meta needs " + std::to_string(meta_len) + " bytes, " +
                         std::to_string(bytes.size() - kTraceHeaderSize) + " remain");
  }
  const std::string meta_text(reinterpret_cast<const char*>(bytes.data()) + kMetaOffset, meta_len);
  trace.meta = decode_meta(meta_text);

  const std::size_t payload_offset = kTraceHeaderSize + meta_len;
  const std::size_t actual = bytes.size() - payload_offset;
  std::size_t step_floats = 0;
  std::size_t expected = 0;
  if (!checked_product({layout.n_layers, layout.n_heads, layout.total_tokens}, step_floats) ||
      !checked_product({steps, step_floats, std::size_t{4}}, expected)) {
    throw TraceError(TraceErrorKind::dimension_mismatch, 8,
                     "declared dimensions overflow the addressable payload size");
  }
  if (expected > actual) {
    throw TraceError(TraceErrorKind::truncated, bytes.size(),
                     "payload expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(actual));
  }
  if (actual != expected) {
    throw TraceError(TraceErrorKind::dimension_mismatch, payload_offset + expected,
                     "payload expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(actual) + " (trailing data)");
  }

  trace.steps.reserve(steps);
  std::size_t offset = payload_offset;
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t step_offset = offset;
    std::vector<double> weights(step_floats);
    for (double& w : weights) {
      w = static_cast<double>(std::bit_cast<float>(get_u32(bytes, offset)));
      offset += 4;
    }
    StepAttention step(t + 1, layout.n_layers, layout.n_heads, layout.total_tokens,
                       std::move(weights));
    const RowCheckResult check = check_rows(step);
    const std::size_t row_offset =
        step_offset + (check.worst_layer * layout.n_heads + check.worst_head) *
                          layout.total_tokens * 4;
    if (check.invalid_weight) {
      throw TraceError(TraceErrorKind::invalid_weight, step_offset,
                       "step " + std::to_string(t + 1) +
                           " holds a weight outside [0, 1] or a non-finite value");
    }
    if (check.status == RowCheck::reject) {
      throw TraceError(TraceErrorKind::row_sum_rejected, row_offset,
                       "step " + std::to_string(t + 1) + " layer " +
                           std::to_string(check.worst_layer) + " head " +
                           std::to_string(check.worst_head) + " row sum deviates by " +
                           std::to_string(check.worst_deviation));
    }
    if (check.status == RowCheck::warn && warnings) {
      warnings->push_back(
          {t + 1, check.worst_layer, check.worst_head, check.worst_deviation, row_offset});
    }
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

std::size_t write_trace(const AttentionTrace& trace, std::ostream& out) {
  const auto bytes = encode_trace(trace);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TraceError(TraceErrorKind::io, 0, "write failed");
  return bytes.size();
}

std::size_t write_trace(const AttentionTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceErrorKind::io, 0, "cannot open " + path.string() + " for writing");
  const std::size_t n = write_trace(trace, out);
  out.close();
  if (!out) throw TraceError(TraceErrorKind::io, 0, "failed to finish writing " + path.string());
  return n;
}

AttentionTrace read_trace(std::istream& in, std::vector<TraceWarning>* warnings) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw TraceError(TraceErrorKind::io, 0, "read failed");
  return decode_trace(bytes, warnings);
}

AttentionTrace read_trace(const std::filesystem::path& path, std::vector<TraceWarning>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(TraceErrorKind::io, 0, "cannot open " + path.string());
  return read_trace(in, warnings);
}

nlohmann::json export_json_debug(const AttentionTrace& trace) {
  trace.validate();
  const TokenLayout& layout = trace.layout;
  const std::string meta = encode_meta(trace.meta);
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : trace.steps) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < layout.n_layers; ++l) {
      nlohmann::json heads = nlohmann::json::array();
      for (std::size_t h = 0; h < layout.n_heads; ++h) {
        nlohmann::json row = nlohmann::json::array();
        for (double w : step.row(l, h)) row.push_back(float_to_text(static_cast<float>(w)));
        heads.push_back(std::move(row));
      }
      layers.push_back(std::move(heads));
    }
    steps.push_back(std::move(layers));
  }
  nlohmann::json doc = nlohmann::json::object();
  doc["magic"] = std::string(kTraceMagic, 4);
  doc["version"] = kTraceVersion;
  doc["n_layers"] = layout.n_layers;
  doc["n_heads"] = layout.n_heads;
  doc["n_tokens"] = layout.total_tokens;
  doc["steps"] = std::move(steps);
  doc["visual_start"] = layout.visual_start;
  doc["visual_end"] = layout.visual_end;
  doc["grid_h"] = layout.grid.rows;
  doc["grid_w"] = layout.grid.cols;
  doc["meta_len"] = meta.size();
  doc["meta"] = meta;
  return doc;
}

AttentionTrace import_json_debug(const nlohmann::json& doc) {
  const auto fail = [](const std::string& detail) -> TraceError {
    return TraceError(TraceErrorKind::invalid_json, 0, detail);
  };
  try {
    if (doc.at("magic").get<std::string>() != std::string(kTraceMagic, 4)) {
      throw TraceError(TraceErrorKind::bad_magic, 0, "magic must be \"IVTR\"");
    }
    if (doc.at("version").get<std::uint32_t>() != kTraceVersion) {
      throw TraceError(TraceErrorKind::version_mismatch, 0, "unsupported version");
    }
    AttentionTrace trace;
    TokenLayout& layout = trace.layout;
    layout.n_layers = doc.at("n_layers").get<std::size_t>();
    layout.n_heads = doc.at("n_heads").get<std::size_t>();
    layout.total_tokens = doc.at("n_tokens").get<std::size_t>();
    layout.visual_start = doc.at("visual_start").get<std::size_t>();
    layout.visual_end = doc.at("visual_end").get<std::size_t>();
    layout.grid.rows = doc.at("grid_h").get<std::size_t>();
    layout.grid.cols = doc.at("grid_w").get<std::size_t>();
    validate_layout_for_io(layout, 0);

    const std::string meta = doc.at("meta").get<std::string>();
    if (doc.at("meta_len").get<std::size_t>() != meta.size()) {
      throw fail("meta_len does not match meta");
    }
    trace.meta = decode_meta(meta);

    const auto& steps = doc.at("steps");
    if (!steps.is_array()) throw fail("steps must be an array");
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const auto& layers = steps[t];
      if (!layers.is_array() || layers.size() != layout.n_layers) {
        throw fail("step " + std::to_string(t + 1) + " has the wrong layer count");
      }
      StepAttention step(t + 1, layout.n_layers, layout.n_heads, layout.total_tokens);
      for (std::size_t l = 0; l < layout.n_layers; ++l) {
        const auto& heads = layers[l];
        if (!heads.is_array() || heads.size() != layout.n_heads) {
          throw fail("step " + std::to_string(t + 1) + " has the wrong head count");
        }
        for (std::size_t h = 0; h < layout.n_heads; ++h) {
          const auto& row = heads[h];
          if (!row.is_array() || row.size() != layout.total_tokens) {
            throw fail("step " + std::to_string(t + 1) + " has the wrong token count");
          }
          auto dst = step.row(l, h);
          for (std::size_t j = 0; j < layout.total_tokens; ++j) {
            dst[j] = static_cast<double>(text_to_float(row[j].get<std::string>()));
          }
        }
      }
      trace.steps.push_back(std::move(step));
    }
    return trace;
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
}

}  // namespace ive
