#pragma once

// Plug-in mutual information between latent codes and known factors, the MIG
// family of scores, label MI and classification error. All quantities in nats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/error.hpp"

namespace ivvae::metrics {

inline constexpr int kDefaultBins = 20;

/// Encoder outputs for a set of samples, row-aligned with their factor values.
struct LatentCodes {
  std::size_t num_samples = 0;
  int z_dims = 0;
  int classes = 0;
  std::vector<double> z_means;  // [n][J]
  std::vector<double> y_probs;  // [n][C]
  std::vector<std::string> factor_names;
  std::vector<std::vector<int>> factors;  // [M][n]
  std::optional<std::size_t> class_factor;

  void validate() const {
    if (num_samples == 0) throw DimensionError("LatentCodes: no samples");
    if (z_means.size() != num_samples * static_cast<std::size_t>(z_dims) ||
        y_probs.size() != num_samples * static_cast<std::size_t>(classes)) {
      throw DimensionError("LatentCodes: latent array sizes");
    }
    if (factor_names.size() != factors.size()) throw DimensionError("LatentCodes: factor names");
    for (const auto& f : factors) {
      if (f.size() != num_samples) throw DimensionError("LatentCodes: factor column length");
    }
    if (class_factor && *class_factor >= factors.size()) {
      throw DimensionError("LatentCodes: class factor index");
    }
  }

  std::vector<int> argmax_y() const {
    std::vector<int> out(num_samples);
    for (std::size_t i = 0; i < num_samples; ++i) {
      const double* row = y_probs.data() + i * classes;
      out[i] = static_cast<int>(std::max_element(row, row + classes) - row);  // lowest index on ties
    }
    return out;
  }

  std::vector<double> z_column(int j) const {
    std::vector<double> out(num_samples);
    for (std::size_t i = 0; i < num_samples; ++i) out[i] = z_means[i * z_dims + j];
    return out;
  }

  const std::vector<int>& labels() const {
    if (!class_factor) throw ConfigError("LatentCodes: no class labels available");
    return factors[*class_factor];
  }
};

/// Discrete variable with values relabeled to 0..cardinality-1.
struct Discrete {
  std::vector<int> codes;
  int cardinality = 0;
};

/// Relabels arbitrary integer values to compact codes in order of first sorted value.
inline Discrete compact_codes(std::span<const int> values) {
  std::map<int, int> lookup;
  for (int v : values) lookup.emplace(v, 0);
  int next = 0;
  for (auto& [v, code] : lookup) code = next++;
  Discrete d;
  d.cardinality = next;
  d.codes.reserve(values.size());
  for (int v : values) d.codes.push_back(lookup[v]);
  return d;
}

/// Equal-count quantile bins by rank. Tied values always share the bin of
/// their lowest rank, so any strictly monotone transform yields the same codes.
inline Discrete quantile_bins(std::span<const double> values, int bins) {
  if (bins < 1) throw ConfigError("quantile_bins: bins must be positive");
  const std::size_t n = values.size();
  if (n == 0) throw DimensionError("quantile_bins: empty input");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> raw(n);
  std::size_t rank_start = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0 && values[order[r]] != values[order[r - 1]]) rank_start = r;
    raw[order[r]] = static_cast<int>(rank_start * static_cast<std::size_t>(bins) / n);
  }
  return compact_codes(raw);
}

inline double entropy(const Discrete& v) {
  std::vector<double> counts(static_cast<std::size_t>(v.cardinality), 0.0);
  for (int c : v.codes) counts[c] += 1.0;
  const double n = static_cast<double>(v.codes.size());
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

/// Plug-in MI from the joint histogram.
inline double mutual_information(const Discrete& a, const Discrete& b) {
  if (a.codes.size() != b.codes.size() || a.codes.empty()) {
    throw DimensionError("mutual_information: length mismatch");
  }
  const std::size_t na = static_cast<std::size_t>(a.cardinality);
  const std::size_t nb = static_cast<std::size_t>(b.cardinality);
  std::vector<double> joint(na * nb, 0.0), pa(na, 0.0), pb(nb, 0.0);
  for (std::size_t i = 0; i < a.codes.size(); ++i) {
    joint[a.codes[i] * nb + b.codes[i]] += 1.0;
    pa[a.codes[i]] += 1.0;
    pb[b.codes[i]] += 1.0;
  }
  const double n = static_cast<double>(a.codes.size());
  double mi = 0.0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const double c = joint[i * nb + j];
      if (c > 0.0) mi += (c / n) * std::log(c * n / (pa[i] * pb[j]));
    }
  return std::max(mi, 0.0);
}

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Latent columns in the order used by every matrix: [y, z_1, ..., z_J].
inline std::vector<std::string> latent_names(int z_dims) {
  std::vector<std::string> names{"y"};
  for (int j = 0; j < z_dims; ++j) names.push_back("z" + std::to_string(j + 1));
  return names;
}

inline std::vector<Discrete> discretize_latents(const LatentCodes& codes, int bins) {
  std::vector<Discrete> out;
  out.push_back(compact_codes(codes.argmax_y()));
  for (int j = 0; j < codes.z_dims; ++j) out.push_back(quantile_bins(codes.z_column(j), bins));
  return out;
}

/// Factors x latents matrix of I(h_i; v_m) / H(v_m).
inline Matrix empirical_mi_matrix(const LatentCodes& codes, int bins = kDefaultBins) {
  codes.validate();
  const auto latents = discretize_latents(codes, bins);
  Matrix m(codes.factors.size(), latents.size());
  for (std::size_t f = 0; f < codes.factors.size(); ++f) {
    const Discrete factor = compact_codes(codes.factors[f]);
    const double h = entropy(factor);
    for (std::size_t l = 0; l < latents.size(); ++l) {
      m(f, l) = h > 0.0 ? mutual_information(latents[l], factor) / h : 0.0;
    }
  }
  return m;
}

struct MigScores {
  std::vector<double> per_factor;
  double mig_all = 0.0;
  double mig_class = std::numeric_limits<double>::quiet_NaN();
  double mig_style = std::numeric_limits<double>::quiet_NaN();
};

inline MigScores mig_scores(const Matrix& normalized_mi, std::optional<std::size_t> class_factor) {
  if (normalized_mi.cols < 2) throw DimensionError("mig_scores: need at least two latent columns");
  if (normalized_mi.rows == 0) throw DimensionError("mig_scores: no factors");
  MigScores s;
  for (std::size_t r = 0; r < normalized_mi.rows; ++r) {
    std::vector<double> row(normalized_mi.data.begin() + r * normalized_mi.cols,
                            normalized_mi.data.begin() + (r + 1) * normalized_mi.cols);
    std::partial_sort(row.begin(), row.begin() + 2, row.end(), std::greater<>());
    s.per_factor.push_back(row[0] - row[1]);
  }
  s.mig_all = std::accumulate(s.per_factor.begin(), s.per_factor.end(), 0.0) /
              static_cast<double>(s.per_factor.size());
  if (class_factor) {
    if (*class_factor >= normalized_mi.rows) throw DimensionError("mig_scores: class row");
    s.mig_class = s.per_factor[*class_factor];
  }
  double style = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < s.per_factor.size(); ++r) {
    if (class_factor && r == *class_factor) continue;
    style += s.per_factor[r];
    ++count;
  }
  if (count > 0) s.mig_style = style / static_cast<double>(count);
  return s;
}

struct LabelMi {
  double i_y_t = 0.0;
  double i_z_t = 0.0;
};

inline LabelMi label_mi(const LatentCodes& codes, int bins = kDefaultBins) {
  codes.validate();
  const Discrete t = compact_codes(codes.labels());
  LabelMi out;
  out.i_y_t = mutual_information(compact_codes(codes.argmax_y()), t);
  for (int j = 0; j < codes.z_dims; ++j) {
    out.i_z_t += mutual_information(quantile_bins(codes.z_column(j), bins), t);
  }
  return out;
}

/// Fraction of samples whose argmax class differs from the label. Labels are
/// class ids 0..C-1 in the class factor.
inline double classification_error(const LatentCodes& codes) {
  codes.validate();
  const auto& t = codes.labels();
  const auto pred = codes.argmax_y();
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != t[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

struct MIReport {
  std::vector<std::string> factor_names;
  std::vector<std::string> latent_names;
  Matrix normalized_mi;
  double mig_all = 0.0;
  double mig_class = std::numeric_limits<double>::quiet_NaN();
  double mig_style = std::numeric_limits<double>::quiet_NaN();
  double i_y_t = std::numeric_limits<double>::quiet_NaN();
  double i_z_t = std::numeric_limits<double>::quiet_NaN();
  double cls_error = std::numeric_limits<double>::quiet_NaN();
  int bins = kDefaultBins;
};

inline MIReport mi_report(const LatentCodes& codes, int bins = kDefaultBins) {
  MIReport r;
  r.bins = bins;
  r.factor_names = codes.factor_names;
  r.latent_names = latent_names(codes.z_dims);
  r.normalized_mi = empirical_mi_matrix(codes, bins);
  const auto mig = mig_scores(r.normalized_mi, codes.class_factor);
  r.mig_all = mig.mig_all;
  r.mig_class = mig.mig_class;
  r.mig_style = mig.mig_style;
  if (codes.class_factor) {
    const auto lm = label_mi(codes, bins);
    r.i_y_t = lm.i_y_t;
    r.i_z_t = lm.i_z_t;
    r.cls_error = classification_error(codes);
  }
  return r;
}

namespace detail {
inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}
inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}
}  // namespace detail

inline nlohmann::json to_json(const MIReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t f = 0; f < r.normalized_mi.rows; ++f) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t l = 0; l < r.normalized_mi.cols; ++l) row.push_back(r.normalized_mi(f, l));
    rows.push_back(row);
  }
  return {{"factors", r.factor_names},
          {"latents", r.latent_names},
          {"normalized_mi", rows},
          {"bins", r.bins},
          {"mig_all", detail::number_or_null(r.mig_all)},
          {"mig_class", detail::number_or_null(r.mig_class)},
          {"mig_style", detail::number_or_null(r.mig_style)},
          {"i_y_t", detail::number_or_null(r.i_y_t)},
          {"i_z_t", detail::number_or_null(r.i_z_t)},
          {"cls_error", detail::number_or_null(r.cls_error)}};
}

inline MIReport mi_report_from_json(const nlohmann::json& j) {
  MIReport r;
  r.factor_names = j.at("factors").get<std::vector<std::string>>();
  r.latent_names = j.at("latents").get<std::vector<std::string>>();
  const auto& rows = j.at("normalized_mi");
  r.normalized_mi = Matrix(rows.size(), r.latent_names.size());
  for (std::size_t f = 0; f < rows.size(); ++f)
    for (std::size_t l = 0; l < r.latent_names.size(); ++l) r.normalized_mi(f, l) = rows[f][l];
  r.bins = j.value("bins", kDefaultBins);
  r.mig_all = detail::number_or_nan(j.at("mig_all"));
  r.mig_class = detail::number_or_nan(j.at("mig_class"));
  r.mig_style = detail::number_or_nan(j.at("mig_style"));
  r.i_y_t = detail::number_or_nan(j.at("i_y_t"));
  r.i_z_t = detail::number_or_nan(j.at("i_z_t"));
  r.cls_error = detail::number_or_nan(j.at("cls_error"));
  return r;
}

/// Matrix as CSV with a header row of latent names and a leading factor column.
inline std::string mi_matrix_csv(const MIReport& r) {
  std::string out = "factor";
  for (const auto& n : r.latent_names) out += "," + n;
  out += "\n";
  for (std::size_t f = 0; f < r.normalized_mi.rows; ++f) {
    out += r.factor_names[f];
    for (std::size_t l = 0; l < r.normalized_mi.cols; ++l) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.6f", r.normalized_mi(f, l));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace ivvae::metrics
