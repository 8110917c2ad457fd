#pragma once

// Body/face embedding manifold: a class-balanced set of labelled exemplar
// embeddings, searched for the most dissimilar guide.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbmc/error.hpp"

namespace mbmc {

inline constexpr std::size_t kDefaultEmbeddingDim = 512;
inline constexpr double kUnitNormTolerance = 1e-6;
inline constexpr int kDefaultSphereK = 10;

/// Unit-norm embedding. Construct with normalized() to normalise raw model
/// output, or with from_unit() to validate values that are already unit norm.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  static EmbeddingVector normalized(std::span<const double> raw) {
    if (raw.empty()) throw ArgumentError("embedding must have at least one dimension");
    double sq = 0.0;
    for (double v : raw) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw ArgumentError("embedding has zero or non-finite norm");
    }
    EmbeddingVector e;
    e.values_.reserve(raw.size());
    for (double v : raw) e.values_.push_back(static_cast<float>(v / norm));
    return e;
  }

  static EmbeddingVector normalized(std::span<const float> raw) {
    std::vector<double> tmp(raw.begin(), raw.end());
    return normalized(std::span<const double>(tmp));
  }

  static EmbeddingVector from_unit(std::vector<float> values,
                                   double tolerance = kUnitNormTolerance) {
    if (values.empty()) throw ValidationError("embedding must have at least one dimension");
    EmbeddingVector e;
    e.values_ = std::move(values);
    const double n = e.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > tolerance) {
      throw ValidationError("embedding norm " + std::to_string(n) + " is not 1");
    }
    return e;
  }

  std::size_t dim() const { return values_.size(); }
  std::span<const float> values() const { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  double norm() const {
    double sq = 0.0;
    for (float v : values_) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<float> values_;
};

/// 1 - cos(a, b). Symmetric, in [0, 2].
inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ArgumentError("cosine_distance: dimension mismatch (" + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine_distance: zero vector");
  const double cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return 1.0 - cos;
}

inline double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_distance(a.values(), b.values());
}

struct ManifoldEntry {
  std::string id;
  std::string activity;
  EmbeddingVector embedding;
  std::optional<std::string> source_uri;

  friend bool operator==(const ManifoldEntry&, const ManifoldEntry&) = default;
};

/// Immutable after construction; safe for concurrent queries.
class BodyManifold {
 public:
  BodyManifold() = default;

  std::size_t dim() const { return dim_; }
  std::size_t per_class_count() const { return per_class_count_; }
  const std::vector<ManifoldEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  bool has_activity(const std::string& activity) const { return classes_.count(activity) != 0; }

  std::vector<std::string> activities() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : classes_) out.push_back(name);
    return out;
  }

  /// Indices into entries() belonging to one class.
  const std::vector<std::size_t>& class_members(const std::string& activity) const {
    auto it = classes_.find(activity);
    if (it == classes_.end()) throw UnknownActivityError(activity);
    return it->second;
  }

  friend bool operator==(const BodyManifold& a, const BodyManifold& b) {
    return a.dim_ == b.dim_ && a.per_class_count_ == b.per_class_count_ &&
           a.entries_ == b.entries_;
  }

  // Validates every invariant. Entries are kept in the order given.
  static BodyManifold from_validated(std::size_t dim, std::size_t per_class_count,
                                     std::vector<ManifoldEntry> entries) {
    if (dim == 0) throw ValidationError("manifold dim must be positive");
    if (per_class_count == 0) throw ValidationError("per_class_count must be >= 1");
    BodyManifold m;
    m.dim_ = dim;
    m.per_class_count_ = per_class_count;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      check_entry(e, dim);
      if (!ids.insert(e.id).second) throw DuplicateIdError(e.id);
      m.classes_[e.activity].push_back(i);
    }
    for (const auto& [name, members] : m.classes_) {
      if (members.size() != per_class_count) {
        throw ValidationError("activity class '" + name + "' has " +
                              std::to_string(members.size()) + " entries, expected " +
                              std::to_string(per_class_count));
      }
    }
    m.entries_ = std::move(entries);
    return m;
  }

  static void check_entry(const ManifoldEntry& e, std::size_t dim) {
    if (e.id.empty()) throw ValidationError("entry id must be non-empty");
    if (e.activity.empty()) throw ValidationError("entry '" + e.id + "' has empty activity");
    if (e.embedding.dim() != dim) {
      throw ValidationError("entry '" + e.id + "' has dimension " +
                            std::to_string(e.embedding.dim()) + ", manifold dim is " +
                            std::to_string(dim));
    }
    if (std::abs(e.embedding.norm() - 1.0) > kUnitNormTolerance) {
      throw ValidationError("entry '" + e.id + "' embedding is not unit norm");
    }
  }

 private:
  std::size_t dim_ = 0;
  std::size_t per_class_count_ = 0;
  std::vector<ManifoldEntry> entries_;
  std::map<std::string, std::vector<std::size_t>> classes_;
};

/// Balances the classes: within each activity entries are sorted by id and
/// the first per_class_count kept. Result is ordered by (activity, id).
inline BodyManifold build_manifold(std::vector<ManifoldEntry> entries,
                                   std::size_t per_class_count, std::size_t dim) {
  if (per_class_count < 1) throw ArgumentError("per_class_count must be >= 1");
  if (dim < 1) throw ArgumentError("dim must be >= 1");
  std::set<std::string> ids;
  std::map<std::string, std::vector<ManifoldEntry>> by_class;
  for (auto& e : entries) {
    BodyManifold::check_entry(e, dim);
    if (!ids.insert(e.id).second) throw DuplicateIdError(e.id);
    by_class[e.activity].push_back(std::move(e));
  }
  std::vector<ManifoldEntry> kept;
  for (auto& [name, members] : by_class) {
    if (members.size() < per_class_count) {
      throw InsufficientClassError(name, members.size(), per_class_count);
    }
    std::sort(members.begin(), members.end(),
              [](const ManifoldEntry& a, const ManifoldEntry& b) { return a.id < b.id; });
    std::move(members.begin(), members.begin() + static_cast<long>(per_class_count),
              std::back_inserter(kept));
  }
  return BodyManifold::from_validated(dim, per_class_count, std::move(kept));
}

namespace detail {

// Strict "further than" with the smallest-id tie-break.
inline bool further(double d, const std::string& id, double best_d, const std::string& best_id) {
  return d > best_d || (d == best_d && id < best_id);
}

}  // namespace detail

/// Entry of `activity` with maximal cosine distance to `query`.
inline const ManifoldEntry& select_guide(const BodyManifold& m, const EmbeddingVector& query,
                                         const std::string& activity) {
  if (query.dim() != m.dim()) throw ArgumentError("select_guide: query dimension mismatch");
  const auto& members = m.class_members(activity);
  const ManifoldEntry* best = nullptr;
  double best_d = -1.0;
  for (std::size_t idx : members) {
    const auto& e = m.entries()[idx];
    const double d = cosine_distance(query, e.embedding);
    if (!best || detail::further(d, e.id, best_d, best->id)) {
      best = &e;
      best_d = d;
    }
  }
  return *best;
}

/// Global farthest entry, ignoring activity.
inline const ManifoldEntry& select_farthest(const BodyManifold& m, const EmbeddingVector& query) {
  if (m.empty()) throw ArgumentError("select_farthest: empty manifold");
  if (query.dim() != m.dim()) throw ArgumentError("select_farthest: query dimension mismatch");
  const ManifoldEntry* best = nullptr;
  double best_d = -1.0;
  for (const auto& e : m.entries()) {
    const double d = cosine_distance(query, e.embedding);
    if (!best || detail::further(d, e.id, best_d, best->id)) {
      best = &e;
      best_d = d;
    }
  }
  return *best;
}

/// The k entries furthest from `query`, furthest first. k is clamped to size().
inline std::vector<const ManifoldEntry*> farthest_k(const BodyManifold& m,
                                                    const EmbeddingVector& query, std::size_t k) {
  if (query.dim() != m.dim()) throw ArgumentError("farthest_k: query dimension mismatch");
  std::vector<std::pair<double, const ManifoldEntry*>> scored;
  scored.reserve(m.size());
  for (const auto& e : m.entries()) scored.emplace_back(cosine_distance(query, e.embedding), &e);
  k = std::min(k, scored.size());
  auto cmp = [](const auto& a, const auto& b) {
    return detail::further(a.first, a.second->id, b.first, b.second->id);
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(k), scored.end(), cmp);
  std::vector<const ManifoldEntry*> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

/// Unbiased index in [0, n) from a 64-bit Mersenne twister, by rejection.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

/// Randomness sphere: uniform pick among the sphere_k globally furthest entries.
inline const ManifoldEntry& select_face_guide(const BodyManifold& m, const EmbeddingVector& query,
                                              std::size_t sphere_k, std::uint64_t seed) {
  if (sphere_k < 1) throw ArgumentError("select_face_guide: sphere_k must be >= 1");
  if (m.empty()) throw ArgumentError("select_face_guide: empty manifold");
  const auto sphere = farthest_k(m, query, sphere_k);
  std::mt19937_64 rng(seed);
  return *sphere[uniform_index(rng, sphere.size())];
}

// ---- file format -----------------------------------------------------------

namespace detail {

inline std::string format_float9(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace detail

/// Newline-delimited JSON: a header record, then one record per entry.
inline std::size_t write_manifold(const BodyManifold& m, std::ostream& out) {
  nlohmann::ordered_json header;
  header["format"] = "mbmc-manifold";
  header["version"] = 1;
  header["dim"] = m.dim();
  header["per_class_count"] = m.per_class_count();
  std::string text = header.dump() + "\n";
  for (const auto& e : m.entries()) {
    std::string line = "{\"id\":" + nlohmann::json(e.id).dump() +
                       ",\"activity\":" + nlohmann::json(e.activity).dump() + ",\"embedding\":[";
    const auto values = e.embedding.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) line += ',';
      line += detail::format_float9(values[i]);
    }
    line += "],\"source_uri\":";
    line += e.source_uri ? nlohmann::json(*e.source_uri).dump() : "null";
    line += "}\n";
    text += line;
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write_manifold: stream write failed");
  return text.size();
}

inline std::size_t write_manifold(const BodyManifold& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_manifold: cannot open '" + path + "'");
  const std::size_t n = write_manifold(m, out);
  out.flush();
  if (!out) throw IoError("write_manifold: failed writing '" + path + "'");
  return n;
}

/// Parses one entry record (no header). `line` is used in error messages.
inline ManifoldEntry parse_manifold_record(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record is not an object", line);
  ManifoldEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.activity = j.at("activity").get<std::string>();
    const auto& arr = j.at("embedding");
    if (!arr.is_array()) throw ParseError("embedding is not an array", line);
    std::vector<float> values;
    values.reserve(arr.size());
    for (const auto& v : arr) {
      if (!v.is_number()) throw ParseError("embedding holds a non-number", line);
      values.push_back(static_cast<float>(v.get<double>()));
    }
    const auto& uri = j.at("source_uri");
    if (!uri.is_null()) e.source_uri = uri.get<std::string>();
    try {
      e.embedding = EmbeddingVector::from_unit(std::move(values));
    } catch (const ValidationError& err) {
      throw ValidationError("line " + std::to_string(line) + ": entry '" + e.id +
                            "': " + err.what());
    }
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(std::string("bad record field: ") + err.what(), line);
  }
  return e;
}

inline BodyManifold read_manifold(std::istream& in) {
  std::size_t line_no = 0;
  std::string line;
  std::optional<std::size_t> dim, per_class;
  std::vector<ManifoldEntry> entries;
  while (std::getline(in, line)) {
    ++line_no;
    if (in.eof()) {
      // Records are always newline terminated; a partial last line means truncation.
      if (!line.empty()) throw ParseError("truncated record (missing newline)", line_no);
      break;
    }
    if (line.empty()) throw ParseError("empty record", line_no);
    if (!dim) {
      nlohmann::json h;
      try {
        h = nlohmann::json::parse(line);
        if (h.at("format").get<std::string>() != "mbmc-manifold") {
          throw ParseError("not an mbmc-manifold file", line_no);
        }
        if (h.at("version").get<int>() != 1) throw ParseError("unsupported version", line_no);
        dim = h.at("dim").get<std::size_t>();
        per_class = h.at("per_class_count").get<std::size_t>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad header: ") + e.what(), line_no);
      }
      continue;
    }
    entries.push_back(parse_manifold_record(line, line_no));
  }
  if (!dim) throw ParseError("missing header record", line_no);
  return BodyManifold::from_validated(*dim, *per_class, std::move(entries));
}

inline BodyManifold read_manifold(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_manifold: cannot open '" + path + "'");
  return read_manifold(in);
}

/// Reads entry records (no header) as produced by an embedding job; the
/// embeddings are normalised on ingestion. Used by `manifold build`.
inline std::vector<ManifoldEntry> read_entries_jsonl(std::istream& in) {
  std::vector<ManifoldEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifoldEntry e;
      e.id = j.at("id").get<std::string>();
      e.activity = j.at("activity").get<std::string>();
      const auto raw = j.at("embedding").get<std::vector<double>>();
      e.embedding = EmbeddingVector::normalized(raw);
      if (j.contains("source_uri") && !j["source_uri"].is_null()) {
        e.source_uri = j["source_uri"].get<std::string>();
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ArgumentError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

}  // namespace mbmc
