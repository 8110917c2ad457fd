#pragma once

// Evaluation metrics: PSNR, Frechet distance / FID over embeddings,
// re-identification mAP and CMC ranks, detector accuracy before/after.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

// resolv.h (pulled in by the HTTP layer) defines _res, an Eigen parameter name.
#pragma push_macro("_res")
#undef _res
#include <Eigen/Dense>
#pragma pop_macro("_res")
#include <nlohmann/json.hpp>

#include "mbmc/attack.hpp"
#include "mbmc/error.hpp"
#include "mbmc/manifold.hpp"
#include "mbmc/raster.hpp"

namespace mbmc {

/// Peak signal-to-noise ratio in dB; std::nullopt when the images are
/// identical (reported as "inf").
inline std::optional<double> psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size()) {
    throw ArgumentError("psnr: dimension mismatch");
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    sse += d * d;
  }
  if (sse == 0.0) return std::nullopt;
  const double mse = sse / static_cast<double>(a.pixels.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline std::string format_psnr(const std::optional<double>& v) {
  if (!v) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  void validate() const {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
      throw ArgumentError("moments: covariance shape does not match mean");
    }
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
      throw ArgumentError("moments: covariance is not symmetric");
    }
  }
};

namespace detail {

inline constexpr double kEigenClamp = 1e-10;

// Symmetric PSD square root; small negative eigenvalues are clamped to zero,
// larger ones are a numeric error.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigensolver failed");
  Eigen::VectorXd lambda = es.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] < -1e-8 * scale) {
      throw NumericError(std::string(what) + ": matrix is not positive semidefinite (eigenvalue " +
                         std::to_string(lambda[i]) + ")");
    }
    lambda[i] = lambda[i] < kEigenClamp ? 0.0 : std::sqrt(lambda[i]);
  }
  return es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
inline double frechet_distance(const GaussianMoments& p, const GaussianMoments& q) {
  p.validate();
  q.validate();
  if (p.mean.size() != q.mean.size()) throw ArgumentError("frechet_distance: dimension mismatch");
  const Eigen::MatrixXd s1_half = detail::psd_sqrt(p.covariance, "frechet_distance(p)");
  detail::psd_sqrt(q.covariance, "frechet_distance(q)");  // PSD check only
  Eigen::MatrixXd inner = s1_half * q.covariance * s1_half;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::MatrixXd cross = detail::psd_sqrt(inner, "frechet_distance(cross)");
  const double mean_term = (p.mean - q.mean).squaredNorm();
  const double d =
      mean_term + p.covariance.trace() + q.covariance.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

/// Sample mean and unbiased (1/(n-1)) covariance.
inline GaussianMoments sample_moments(std::span<const EmbeddingVector> samples) {
  if (samples.size() < 2) throw ArgumentError("moments need at least 2 samples");
  const auto dim = static_cast<Eigen::Index>(samples.front().dim());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<Eigen::Index>(samples[i].dim()) != dim) {
      throw ArgumentError("moments: samples differ in dimension");
    }
    for (Eigen::Index d = 0; d < dim; ++d) x(static_cast<Eigen::Index>(i), d) = samples[i][d];
  }
  GaussianMoments m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
  m.covariance = centered.transpose() * centered / static_cast<double>(samples.size() - 1);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose());
  return m;
}

inline double fid(std::span<const EmbeddingVector> a, std::span<const EmbeddingVector> b) {
  if (a.size() < 2 || b.size() < 2) throw ArgumentError("fid: each set needs at least 2 samples");
  return frechet_distance(sample_moments(a), sample_moments(b));
}

// ---- re-identification ---------------------------------------------------------

struct ReidInstance {
  std::vector<EmbeddingVector> query;
  std::vector<std::string> query_labels;
  std::vector<EmbeddingVector> gallery;
  std::vector<std::string> gallery_labels;
};

inline const std::vector<int> kDefaultRanks = {1, 5, 10, 20};

struct ReidResult {
  double map = 0.0;             // percent
  std::map<int, double> rank;   // k -> percent
};

/// Gallery is ranked per query by descending cosine similarity (ties: lower
/// gallery index first). AP averages precision over all correct matches.
inline ReidResult reid_eval(const ReidInstance& inst, const std::vector<int>& ks = kDefaultRanks) {
  if (inst.query.size() != inst.query_labels.size() ||
      inst.gallery.size() != inst.gallery_labels.size()) {
    throw ArgumentError("reid_eval: embeddings and labels differ in length");
  }
  if (inst.query.empty()) throw ArgumentError("reid_eval: no queries");
  std::set<std::string> gallery_set;
  for (const auto& l : inst.gallery_labels) {
    if (l.empty()) throw ValidationError("reid_eval: empty gallery label");
    gallery_set.insert(l);
  }
  for (const auto& l : inst.query_labels) {
    if (l.empty()) throw ValidationError("reid_eval: empty query label");
    if (!gallery_set.count(l)) {
      throw ValidationError("reid_eval: query label '" + l + "' absent from gallery");
    }
  }
  for (int k : ks)
    if (k < 1) throw ArgumentError("reid_eval: rank k must be >= 1");

  ReidResult out;
  for (int k : ks) out.rank[k] = 0.0;
  std::vector<std::size_t> order(inst.gallery.size());
  std::vector<double> sim(inst.gallery.size());
  for (std::size_t q = 0; q < inst.query.size(); ++q) {
    for (std::size_t g = 0; g < inst.gallery.size(); ++g) {
      sim[g] = 1.0 - cosine_distance(inst.query[q], inst.gallery[g]);
      order[g] = g;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    std::size_t hits = 0, first_hit = 0;
    double precision_sum = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (inst.gallery_labels[order[pos]] != inst.query_labels[q]) continue;
      ++hits;
      if (hits == 1) first_hit = pos + 1;
      precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    out.map += precision_sum / static_cast<double>(hits);
    for (int k : ks)
      if (first_hit <= static_cast<std::size_t>(k)) out.rank[k] += 1.0;
  }
  const double nq = static_cast<double>(inst.query.size());
  out.map = 100.0 * out.map / nq;
  for (auto& [k, v] : out.rank) v = 100.0 * v / nq;
  return out;
}

// ---- detector accuracy ------------------------------------------------------

inline constexpr double kDefaultDetectionThreshold = 0.25;

struct DetectionAccuracy {
  double before = 0.0;  // percent of images with a person detection
  double after = 0.0;
};

inline bool has_person(DetectorInterface& detector, const Image& image, double threshold) {
  const auto dets = detector.score(image);
  return std::any_of(dets.begin(), dets.end(),
                     [&](const Detection& d) { return d.objectness >= threshold; });
}

inline DetectionAccuracy detection_delta(std::span<const Image> before, std::span<const Image> after,
                                         DetectorInterface& detector,
                                         double threshold = kDefaultDetectionThreshold) {
  if (before.size() != after.size()) throw ArgumentError("detection_delta: lists differ in length");
  if (before.empty()) throw ArgumentError("detection_delta: empty image lists");
  std::size_t hit_before = 0, hit_after = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    hit_before += has_person(detector, before[i], threshold);
    hit_after += has_person(detector, after[i], threshold);
  }
  const double n = static_cast<double>(before.size());
  return {100.0 * hit_before / n, 100.0 * hit_after / n};
}

// ---- report -----------------------------------------------------------------

struct EvalReport {
  std::string dataset;
  std::optional<std::size_t> humans;
  std::optional<double> accuracy_before;
  std::optional<double> accuracy_after;
  std::optional<std::optional<double>> psnr;  // inner nullopt = identical
  std::optional<double> fid;
  std::optional<ReidResult> reid;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    if (humans) j["humans"] = *humans;
    if (accuracy_before) j["accuracy_before"] = *accuracy_before;
    if (accuracy_after) j["accuracy_after"] = *accuracy_after;
    if (psnr) {
      if (*psnr) j["psnr"] = **psnr;
      else j["psnr"] = "inf";
    }
    if (fid) j["fid"] = *fid;
    if (reid) {
      j["map"] = reid->map;
      nlohmann::ordered_json ranks;
      for (const auto& [k, v] : reid->rank) ranks["rank" + std::to_string(k)] = v;
      j["rank_k"] = ranks;
    }
    return j;
  }

  /// Aligned plain-text tables: detector accuracy (dataset / humans / before
  /// / after) and re-identification (mAP then each Rank-k).
  std::string to_text() const {
    std::ostringstream os;
    char buf[128];
    if (accuracy_before || accuracy_after || humans) {
      std::snprintf(buf, sizeof buf, "%-14s| %s\n", "Dataset", dataset.c_str());
      os << buf;
      if (humans) {
        std::snprintf(buf, sizeof buf, "%-14s| %zu\n", "Humans", *humans);
        os << buf;
      }
      if (accuracy_before) {
        std::snprintf(buf, sizeof buf, "%-14s| %.2f\n", "Acc. before", *accuracy_before);
        os << buf;
      }
      if (accuracy_after) {
        std::snprintf(buf, sizeof buf, "%-14s| %.2f\n", "Acc. after", *accuracy_after);
        os << buf;
      }
    }
    if (reid) {
      std::snprintf(buf, sizeof buf, "%-10s| %-6s", "", "mAP");
      os << buf;
      for (const auto& [k, _] : reid->rank) {
        std::snprintf(buf, sizeof buf, "| %-7s", ("Rank" + std::to_string(k)).c_str());
        os << buf;
      }
      os << "\n";
      std::snprintf(buf, sizeof buf, "%-10s| %-6.1f", dataset.c_str(), reid->map);
      os << buf;
      for (const auto& [_, v] : reid->rank) {
        std::snprintf(buf, sizeof buf, "| %-7.1f", v);
        os << buf;
      }
      os << "\n";
    }
    if (psnr) os << "PSNR (dB)     | " << format_psnr(*psnr) << "\n";
    if (fid) {
      std::snprintf(buf, sizeof buf, "FID           | %.4f\n", *fid);
      os << buf;
    }
    return os.str();
  }
};

}  // namespace mbmc
