#pragma once

// Per-layer activation statistics: median/max of |h|, top-k locations,
// massive-activation verdicts, and the JSONL / MAT1 file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ma/error.hpp"

namespace ma {

/// S x d block of post-residual activations, row-major by token.
class ActivationTensor {
 public:
  ActivationTensor() = default;

  ActivationTensor(std::size_t seq_len, std::size_t hidden_dim, std::vector<double> values)
      : seq_len_(seq_len), hidden_dim_(hidden_dim), values_(std::move(values)) {
    require(seq_len_ >= 1 && hidden_dim_ >= 1, ErrorKind::invalid_input,
            "activation tensor must be non-empty");
    require(values_.size() == seq_len_ * hidden_dim_, ErrorKind::invalid_input,
            "activation tensor holds " + std::to_string(values_.size()) +
                " values, expected " + std::to_string(seq_len_ * hidden_dim_));
    for (std::size_t i = 0; i < values_.size(); ++i) {
      require(std::isfinite(values_[i]), ErrorKind::invalid_input,
              "non-finite activation at flat index " + std::to_string(i));
    }
  }

  std::size_t seq_len() const noexcept { return seq_len_; }
  std::size_t hidden_dim() const noexcept { return hidden_dim_; }
  std::span<const double> values() const noexcept { return values_; }
  double at(std::size_t pos, std::size_t dim) const { return values_[pos * hidden_dim_ + dim]; }

  friend bool operator==(const ActivationTensor&, const ActivationTensor&) = default;

 private:
  std::size_t seq_len_ = 0;
  std::size_t hidden_dim_ = 0;
  std::vector<double> values_;
};

struct TopEntry {
  double value = 0.0;  // |activation|
  int rank = 0;        // 1-based
  std::size_t seq_pos = 0;
  std::size_t dim = 0;

  friend bool operator==(const TopEntry&, const TopEntry&) = default;
};

struct StatsRecord {
  std::string model_id;
  std::int64_t step = 0;
  int layer = 1;
  std::string input_id;
  double median_abs = 0.0;
  double max_abs = 0.0;
  std::vector<TopEntry> top;
  std::size_t seq_len = 0;
  std::size_t hidden_dim = 0;

  friend bool operator==(const StatsRecord&, const StatsRecord&) = default;
};

struct MaVerdict {
  bool is_strict_massive = false;
  bool is_candidate = false;
  double ratio = 0.0;
  double threshold_used = 0.0;
};

inline constexpr int kDefaultTopK = 3;
inline constexpr double kDefaultThreshold = 50.0;
inline constexpr double kStrictMagnitude = 100.0;
inline constexpr double kStrictRatio = 1000.0;

/// Median (even count: mean of the two central order statistics) and top-k
/// of |h| over all S*d scalars. Ties in the top list are broken by flat index.
inline StatsRecord compute_layer_stats(const ActivationTensor& tensor, int k = kDefaultTopK) {
  const auto vals = tensor.values();
  const std::size_t n = vals.size();
  require(n >= 1, ErrorKind::invalid_input, "empty tensor");
  require(k >= 1 && static_cast<std::size_t>(k) <= n, ErrorKind::invalid_input,
          "top-k must be in [1, S*d]");

  std::vector<double> abs_vals(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(std::isfinite(vals[i]), ErrorKind::invalid_input,
            "non-finite activation at flat index " + std::to_string(i));
    abs_vals[i] = std::abs(vals[i]);
  }

  StatsRecord rec;
  rec.seq_len = tensor.seq_len();
  rec.hidden_dim = tensor.hidden_dim();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const auto by_magnitude = [&](std::size_t a, std::size_t b) {
    if (abs_vals[a] != abs_vals[b]) return abs_vals[a] > abs_vals[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), by_magnitude);
  rec.top.reserve(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) {
    const std::size_t flat = order[static_cast<std::size_t>(r)];
    rec.top.push_back({abs_vals[flat], r + 1, flat / tensor.hidden_dim(),
                       flat % tensor.hidden_dim()});
  }
  rec.max_abs = rec.top.front().value;

  std::vector<double> work = abs_vals;
  const std::size_t mid = n / 2;
  std::nth_element(work.begin(), work.begin() + mid, work.end());
  const double upper = work[mid];
  if (n % 2 == 1) {
    rec.median_abs = upper;
  } else {
    const double lower = *std::max_element(work.begin(), work.begin() + mid);
    rec.median_abs = 0.5 * (lower + upper);
  }
  return rec;
}

/// Ratio max/median with the strict (|a| > 100 and ratio >= 1000) and
/// relaxed (ratio > threshold) rules. A zero median with nonzero max gives
/// ratio = +inf.
inline MaVerdict detect_massive(double max_abs, double median_abs,
                                double threshold = kDefaultThreshold) {
  require(median_abs >= 0.0 && max_abs >= 0.0, ErrorKind::invalid_input,
          "statistics must be nonnegative");
  require(threshold > 0.0, ErrorKind::invalid_input, "threshold must be positive");
  MaVerdict v;
  v.threshold_used = threshold;
  if (median_abs == 0.0) {
    v.ratio = max_abs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  } else {
    v.ratio = max_abs / median_abs;
  }
  v.is_candidate = v.ratio > threshold;
  v.is_strict_massive = max_abs > kStrictMagnitude && v.ratio >= kStrictRatio;
  return v;
}

inline MaVerdict detect_massive(const StatsRecord& record,
                                double threshold = kDefaultThreshold) {
  return detect_massive(record.max_abs, record.median_abs, threshold);
}

// ---------------------------------------------------------------------------
// JSON Lines stats format

inline nlohmann::ordered_json to_json(const StatsRecord& r) {
  nlohmann::ordered_json j;
  j["model_id"] = r.model_id;
  j["step"] = r.step;
  j["layer"] = r.layer;
  j["input_id"] = r.input_id;
  j["seq_len"] = r.seq_len;
  j["hidden_dim"] = r.hidden_dim;
  j["median_abs"] = r.median_abs;
  j["max_abs"] = r.max_abs;
  auto top = nlohmann::ordered_json::array();
  for (const auto& e : r.top) {
    top.push_back({{"value", e.value}, {"rank", e.rank}, {"seq_pos", e.seq_pos}, {"dim", e.dim}});
  }
  j["top"] = std::move(top);
  return j;
}

inline std::string to_json_line(const StatsRecord& r) { return to_json(r).dump(); }

namespace detail {

template <class T>
T get_field(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorKind::validation, "missing field", line, key);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw Error(ErrorKind::validation, "expected number", line, key);
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw Error(ErrorKind::validation, "expected integer", line, key);
      if constexpr (std::is_unsigned_v<T>) {
        if (it->template get<std::int64_t>() < 0)
          throw Error(ErrorKind::validation, "expected nonnegative integer", line, key);
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw Error(ErrorKind::validation, "expected string", line, key);
    }
    return it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, e.what(), line, key);
  }
}

}  // namespace detail

/// Checks the StatsRecord invariants; throws a validation error naming the field.
inline void validate(const StatsRecord& r, std::size_t line = 0) {
  const auto bad = [&](const char* field, const std::string& msg) {
    throw Error(ErrorKind::validation, msg, line ? std::optional<std::size_t>(line) : std::nullopt,
                field);
  };
  if (r.step < 0) bad("step", "step must be nonnegative");
  if (r.layer < 1) bad("layer", "layer must be >= 1");
  if (r.seq_len < 1) bad("seq_len", "seq_len must be >= 1");
  if (r.hidden_dim < 1) bad("hidden_dim", "hidden_dim must be >= 1");
  if (!std::isfinite(r.median_abs) || r.median_abs < 0) bad("median_abs", "must be finite and >= 0");
  if (!std::isfinite(r.max_abs) || r.max_abs < 0) bad("max_abs", "must be finite and >= 0");
  if (r.max_abs < r.median_abs) bad("max_abs", "max_abs < median_abs");
  for (std::size_t i = 0; i < r.top.size(); ++i) {
    const TopEntry& e = r.top[i];
    if (!std::isfinite(e.value) || e.value < 0) bad("top", "entry value must be finite and >= 0");
    if (e.rank != static_cast<int>(i) + 1) bad("top", "ranks must be 1..k in order");
    if (i > 0 && e.value > r.top[i - 1].value) bad("top", "entries must be nonincreasing");
    if (e.seq_pos >= r.seq_len || e.dim >= r.hidden_dim) bad("top", "entry index out of bounds");
  }
  if (!r.top.empty() && r.top.front().value != r.max_abs) bad("max_abs", "max_abs != top[0].value");
}

inline StatsRecord parse_stats_line(const std::string& text, std::size_t line) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, e.what(), line);
  }
  if (!obj.is_object()) throw Error(ErrorKind::parse, "line is not a JSON object", line);

  StatsRecord r;
  r.model_id = detail::get_field<std::string>(obj, "model_id", line);
  r.step = detail::get_field<std::int64_t>(obj, "step", line);
  r.layer = detail::get_field<int>(obj, "layer", line);
  r.input_id = detail::get_field<std::string>(obj, "input_id", line);
  r.seq_len = detail::get_field<std::size_t>(obj, "seq_len", line);
  r.hidden_dim = detail::get_field<std::size_t>(obj, "hidden_dim", line);
  r.median_abs = detail::get_field<double>(obj, "median_abs", line);
  r.max_abs = detail::get_field<double>(obj, "max_abs", line);
  auto top = obj.find("top");
  if (top == obj.end() || !top->is_array())
    throw Error(ErrorKind::validation, "missing or non-array field", line, "top");
  for (const auto& e : *top) {
    if (!e.is_object()) throw Error(ErrorKind::validation, "entry is not an object", line, "top");
    TopEntry t;
    t.value = detail::get_field<double>(e, "value", line);
    t.rank = detail::get_field<int>(e, "rank", line);
    t.seq_pos = detail::get_field<std::size_t>(e, "seq_pos", line);
    t.dim = detail::get_field<std::size_t>(e, "dim", line);
    r.top.push_back(t);
  }
  validate(r, line);
  return r;
}

/// Parses a JSON Lines stream; blank lines are skipped. Errors carry the
/// 1-based line number.
inline std::vector<StatsRecord> ingest_stats_lines(std::istream& in) {
  std::vector<StatsRecord> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_stats_line(text, line));
  }
  return out;
}

inline std::vector<StatsRecord> ingest_stats_lines(const std::string& text) {
  std::istringstream in(text);
  return ingest_stats_lines(in);
}

inline void write_stats_lines(std::ostream& out, std::span<const StatsRecord> records) {
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// MAT1 raw tensor format: "MAT1", u32 LE S, u32 LE d, S*d f32 LE row-major.

inline constexpr std::array<char, 4> kMat1Magic = {'M', 'A', 'T', '1'};

namespace detail {

inline std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_u32_le(std::uint32_t v, unsigned char* p) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

}  // namespace detail

inline ActivationTensor read_raw_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12) fail(ErrorKind::format, "MAT1 header truncated");
  if (std::memcmp(bytes.data(), kMat1Magic.data(), 4) != 0) fail(ErrorKind::format, "bad MAT1 magic");
  const std::uint64_t s = detail::load_u32_le(bytes.data() + 4);
  const std::uint64_t d = detail::load_u32_le(bytes.data() + 8);
  if (s == 0 || d == 0) fail(ErrorKind::format, "MAT1 dimensions must be positive");
  const std::uint64_t count = s * d;  // < 2^64 since both < 2^32
  if (count > (std::numeric_limits<std::uint64_t>::max() - 12) / 4 ||
      count > std::numeric_limits<std::size_t>::max() / sizeof(double)) {
    fail(ErrorKind::format, "MAT1 size overflow");
  }
  const std::uint64_t expected = 12 + 4 * count;
  if (bytes.size() < expected) {
    fail(ErrorKind::format, "MAT1 payload truncated: header claims " + std::to_string(count) +
                                " floats, found " + std::to_string((bytes.size() - 12) / 4));
  }
  if (bytes.size() > expected) fail(ErrorKind::format, "MAT1 trailing bytes after payload");
  std::vector<double> values(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = detail::load_u32_le(bytes.data() + 12 + 4 * i);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return ActivationTensor(static_cast<std::size_t>(s), static_cast<std::size_t>(d), std::move(values));
}

inline ActivationTensor read_raw_tensor(std::istream& in) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  return read_raw_tensor(std::span<const unsigned char>(bytes));
}

/// Serializes to MAT1. Values are narrowed to float32.
inline std::vector<unsigned char> write_raw_tensor(const ActivationTensor& t) {
  require(t.seq_len() <= UINT32_MAX && t.hidden_dim() <= UINT32_MAX, ErrorKind::format,
          "tensor too large for MAT1");
  std::vector<unsigned char> out(12 + 4 * t.values().size());
  std::memcpy(out.data(), kMat1Magic.data(), 4);
  detail::store_u32_le(static_cast<std::uint32_t>(t.seq_len()), out.data() + 4);
  detail::store_u32_le(static_cast<std::uint32_t>(t.hidden_dim()), out.data() + 8);
  const auto vals = t.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    detail::store_u32_le(std::bit_cast<std::uint32_t>(static_cast<float>(vals[i])),
                         out.data() + 12 + 4 * i);
  }
  return out;
}

inline void write_raw_tensor(std::ostream& out, const ActivationTensor& t) {
  const auto bytes = write_raw_tensor(t);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ma
