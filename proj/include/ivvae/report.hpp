#pragma once

// Figures and tables from finished runs: metric-vs-weight curves with
// median and interquartile range over seeds, MI heatmaps (SVG), latent
// traversal strips and style-conditional generation grids (PGM).

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/experiment.hpp"

namespace ivvae::report {

using metrics::MIReport;

/// What report needs from one ledger: the last run it contains.
struct LedgerSummary {
  std::string path;
  std::string dataset;
  std::string variant;
  uint64_t seed = 0;
  nlohmann::json config;
  nlohmann::json weights;  // resolved
  int64_t best_epoch = -1;
  int64_t test_checkpoint_epoch = -1;
  ObjectiveBreakdown test_breakdown;
  MIReport test_report;
  std::vector<double> val_totals;  // per epoch
};

inline LedgerSummary summarize_ledger(const std::string& path) {
  const auto records = experiment::read_ledger(path);
  std::size_t start = records.size();
  for (std::size_t i = records.size(); i-- > 0;) {
    if (records[i].value("type", "") == "run_start") {
      start = i;
      break;
    }
  }
  if (start == records.size()) throw FormatError("report: " + path + " has no run_start record");
  LedgerSummary s;
  s.path = path;
  try {
    const auto& rs = records[start];
    s.config = rs.at("config");
    s.weights = rs.at("weights");
    s.dataset = s.config.at("dataset").get<std::string>();
    s.variant = s.config.at("variant").get<std::string>();
    s.seed = s.config.at("seed").get<uint64_t>();
    bool have_test = false;
    for (std::size_t i = start + 1; i < records.size(); ++i) {
      const auto& r = records[i];
      const auto type = r.value("type", "");
      if (type == "epoch" && r.at("split") == "val") {
        s.val_totals.push_back(r.at("breakdown").at("total").get<double>());
      } else if (type == "test") {
        s.test_breakdown = ObjectiveBreakdown::from_json(r.at("breakdown"));
        s.test_report = metrics::mi_report_from_json(r.at("report"));
        s.test_checkpoint_epoch = r.at("checkpoint_epoch").get<int64_t>();
        s.best_epoch = r.value("best_epoch", s.test_checkpoint_epoch);
        have_test = true;
      }
    }
    if (!have_test) throw FormatError("report: " + path + " has no test record (unfinished run?)");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report: " + path + ": " + e.what());
  }
  return s;
}

/// All summaries must describe the same dataset.
inline void check_compatible(const std::vector<LedgerSummary>& runs) {
  if (runs.empty()) throw ConfigError("report: no ledgers given");
  for (const auto& r : runs) {
    if (r.dataset != runs.front().dataset) {
      throw ConfigError("report: ledgers mix datasets ('" + runs.front().dataset + "' and '" + r.dataset + "')");
    }
  }
}

/// Test-set scalar by name: breakdown fields, "elbo", or MI report fields.
inline double metric_value(const LedgerSummary& s, const std::string& metric) {
  const auto& b = s.test_breakdown;
  const auto& r = s.test_report;
  const std::map<std::string, double> table{
      {"recon", b.recon_l + b.recon_u}, {"cls", b.cls},          {"vec_idp", b.vec_idp},     {"tc_z", b.tc_z},
      {"tc_yz", b.tc_yz},               {"reg_y", b.reg_y},      {"reg_z", b.reg_z},         {"total", b.total},
      {"j_both", b.j_both},             {"elbo", b.elbo_eval},   {"mig_all", r.mig_all},     {"mig_class", r.mig_class},
      {"mig_style", r.mig_style},       {"i_y_t", r.i_y_t},      {"i_z_t", r.i_z_t},         {"cls_error", r.cls_error}};
  const auto it = table.find(metric);
  if (it == table.end()) throw ConfigError("report: unknown metric '" + metric + "'");
  return it->second;
}

/// Sweep coordinate of a run: a resolved weight ("lambda", "beta_z", ...).
inline double sweep_value(const LedgerSummary& s, const std::string& key) {
  if (!s.weights.contains(key)) throw ConfigError("report: runs carry no weight named '" + key + "'");
  const auto& v = s.weights.at(key);
  return v.is_null() ? 0.0 : v.get<double>();
}

/// Linear-interpolation quantile of a non-empty sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct CurvePoint {
  double x = 0.0;
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  std::vector<double> values;
};

struct Curve {
  std::string metric;
  std::string x_key;
  std::vector<CurvePoint> points;  // ascending x
};

/// One point per distinct sweep value, aggregated over the runs (seeds)
/// sharing it. Non-finite values are left out.
inline Curve metric_curve(const std::vector<LedgerSummary>& runs, const std::string& metric,
                          const std::string& x_key = "lambda") {
  check_compatible(runs);
  std::map<double, std::vector<double>> groups;
  for (const auto& r : runs) {
    const double v = metric_value(r, metric);
    auto& g = groups[sweep_value(r, x_key)];
    if (std::isfinite(v)) g.push_back(v);
  }
  Curve c{metric, x_key, {}};
  for (auto& [x, vs] : groups) {
    if (vs.empty()) continue;
    c.points.push_back({x, quantile(vs, 0.5), quantile(vs, 0.25), quantile(vs, 0.75), vs});
  }
  return c;
}

inline std::string curve_csv(const Curve& c) {
  std::ostringstream os;
  os << c.x_key << ",median,q1,q3,n\n";
  os.precision(10);
  for (const auto& p : c.points) os << p.x << ',' << p.median << ',' << p.q1 << ',' << p.q3 << ',' << p.values.size() << '\n';
  return os.str();
}

namespace detail {

inline std::string num(double v, int prec = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

}  // namespace detail

/// Median line with a shaded interquartile band.
inline std::string curve_svg(const Curve& c) {
  const double W = 420, H = 300, L = 60, R = 20, T = 30, B = 45;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << detail::escape(c.metric)
     << "</text>\n";
  if (c.points.empty()) return os.str() + "</svg>\n";
  double x0 = c.points.front().x, x1 = c.points.back().x, y0 = c.points.front().q1, y1 = c.points.front().q3;
  for (const auto& p : c.points) y0 = std::min(y0, p.q1), y1 = std::max(y1, p.q3);
  if (x1 == x0) x0 -= 1, x1 += 1;
  if (y1 == y0) y0 -= 1, y1 += 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  std::string band, line;
  for (const auto& p : c.points) band += detail::num(px(p.x), 6) + "," + detail::num(py(p.q3), 6) + " ";
  for (auto it = c.points.rbegin(); it != c.points.rend(); ++it) {
    band += detail::num(px(it->x), 6) + "," + detail::num(py(it->q1), 6) + " ";
  }
  for (const auto& p : c.points) line += detail::num(px(p.x), 6) + "," + detail::num(py(p.median), 6) + " ";
  os << "<polygon points=\"" << band << "\" fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\"/>\n";
  os << "<polyline points=\"" << line << "\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>\n";
  for (const auto& p : c.points) {
    os << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.median) << "\" r=\"3\" fill=\"#08519c\"/>\n";
    os << "<text x=\"" << px(p.x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << detail::num(p.x) << "</text>\n";
  }
  for (double y : {y0, (y0 + y1) / 2, y1}) {
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 3 << "\" text-anchor=\"end\" font-size=\"10\">"
       << detail::num(y) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << detail::escape(c.x_key) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

struct Heatmap {
  std::size_t rows = 0, cols = 0;
  std::string svg;
};

/// Factors down, latents across; darker cells carry more normalized MI.
inline Heatmap mi_heatmap(const MIReport& r) {
  const std::size_t rows = r.normalized_mi.rows, cols = r.normalized_mi.cols;
  const double cell = 44, L = 80, T = 40;
  const double W = L + cell * static_cast<double>(cols) + 10, H = T + cell * static_cast<double>(rows) + 10;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t l = 0; l < cols; ++l) {
    os << "<text x=\"" << L + cell * (static_cast<double>(l) + 0.5) << "\" y=\"" << T - 8
       << "\" text-anchor=\"middle\" font-size=\"11\">" << detail::escape(r.latent_names[l]) << "</text>\n";
  }
  for (std::size_t f = 0; f < rows; ++f) {
    const double y = T + cell * static_cast<double>(f);
    os << "<text x=\"" << L - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << detail::escape(r.factor_names[f]) << "</text>\n";
    for (std::size_t l = 0; l < cols; ++l) {
      const double v = std::clamp(r.normalized_mi(f, l), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255 * (1 - v)));
      const double x = L + cell * static_cast<double>(l);
      os << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
         << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#ccc\"/>\n";
      os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" font-size=\"10\""
         << " fill=\"" << (v > 0.5 ? "white" : "black") << "\">" << detail::num(r.normalized_mi(f, l), 2) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return {rows, cols, os.str()};
}

// ---------------------------------------------------------------------------
// Image grids

/// Tiles [R, C, S, S] images in [0,1] into one [R*(S+1)-1, C*(S+1)-1] canvas
/// with one-pixel white separators.
inline torch::Tensor tile(const torch::Tensor& grid) {
  if (grid.dim() != 4) throw DimensionError("tile: expected [rows, cols, S, S]");
  const int64_t R = grid.size(0), C = grid.size(1), S = grid.size(2), S2 = grid.size(3);
  auto canvas = torch::ones({R * (S + 1) - 1, C * (S2 + 1) - 1}, torch::kFloat32);
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t c = 0; c < C; ++c) {
      canvas.narrow(0, r * (S + 1), S).narrow(1, c * (S2 + 1), S2).copy_(grid[r][c].to(torch::kFloat32));
    }
  }
  return canvas;
}

/// Binary PGM (P5) of a [H, W] image in [0,1].
inline void write_pgm(const std::string& path, const torch::Tensor& image) {
  if (image.dim() != 2) throw DimensionError("write_pgm: expected [H, W]");
  const auto bytes = (image.to(torch::kFloat32).clamp(0, 1) * 255).round().to(torch::kUInt8).contiguous();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("write_pgm: cannot write " + path);
  os << "P5\n" << image.size(1) << ' ' << image.size(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data_ptr<uint8_t>()), bytes.numel());
}

inline constexpr double kTraversalRange = 3.0;

/// One row per z dimension: the input's posterior mean with z_j swept over
/// [-range, range] in `cols` steps, decoded with the input's argmax class.
/// Returns [J, cols, S, S].
inline torch::Tensor latent_traversal(ModelState& state, const torch::Tensor& image, int64_t cols = 11,
                                      double range = kTraversalRange) {
  if (cols < 2) throw ConfigError("latent_traversal: need at least two columns");
  torch::NoGradGuard no_grad;
  state.train(false);
  const auto post = encode(state, image.dim() == 2 ? image.unsqueeze(0) : image.narrow(0, 0, 1));
  const int64_t J = state.arch.z_dims, C = state.arch.classes;
  const auto opts = post.gaussian.mean.options();
  const auto y = torch::one_hot(post.categorical.probs.argmax(-1), C).to(opts.dtype()).expand({cols, C});
  const auto sweep = torch::linspace(-range, range, cols, opts);
  std::vector<torch::Tensor> rows;
  for (int64_t j = 0; j < J; ++j) {
    auto z = post.gaussian.mean.expand({cols, J}).clone();
    z.select(1, j).copy_(sweep);
    rows.push_back(decode(state, y, z).squeeze(1));
  }
  state.train(true);
  return torch::stack(rows);
}

/// One row per input: its posterior-mean z decoded with every one-hot class.
/// Returns [R, C, S, S].
inline torch::Tensor style_grid(ModelState& state, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  state.train(false);
  const auto post = encode(state, images);
  const int64_t R = post.gaussian.mean.size(0), C = state.arch.classes;
  const auto opts = post.gaussian.mean.options();
  const auto eye = torch::eye(C, opts);
  std::vector<torch::Tensor> rows;
  for (int64_t r = 0; r < R; ++r) {
    rows.push_back(decode(state, eye, post.gaussian.mean[r].unsqueeze(0).expand({C, -1})).squeeze(1));
  }
  state.train(true);
  return torch::stack(rows);
}

// ---------------------------------------------------------------------------

struct ReportOptions {
  std::string x_key = "lambda";
  std::vector<std::string> metrics{"vec_idp", "tc_z", "mig_all", "mig_class", "mig_style",
                                   "i_y_t",   "i_z_t", "cls_error", "elbo"};
};

/// Curves (CSV + SVG) per metric and one heatmap (SVG + CSV) per ledger.
/// Returns the files written.
inline std::vector<std::string> write_report(const std::vector<std::string>& ledgers, const std::string& out_dir,
                                             const ReportOptions& opt = {}) {
  namespace fs = std::filesystem;
  std::vector<LedgerSummary> runs;
  for (const auto& p : ledgers) runs.push_back(summarize_ledger(p));
  check_compatible(runs);
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    const auto path = (fs::path(out_dir) / name).string();
    std::ofstream(path) << text;
    written.push_back(path);
  };
  nlohmann::json table = nlohmann::json::array();
  for (const auto& m : opt.metrics) {
    const auto c = metric_curve(runs, m, opt.x_key);
    emit("curve_" + m + ".csv", curve_csv(c));
    emit("curve_" + m + ".svg", curve_svg(c));
    for (const auto& p : c.points) {
      table.push_back({{"metric", m}, {opt.x_key, p.x}, {"median", p.median}, {"q1", p.q1}, {"q3", p.q3},
                       {"n", p.values.size()}});
    }
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto stem = "heatmap_" + std::to_string(i) + "_" + runs[i].variant + "_seed" + std::to_string(runs[i].seed);
    emit(stem + ".svg", mi_heatmap(runs[i].test_report).svg);
    emit(stem + ".csv", metrics::mi_matrix_csv(runs[i].test_report));
  }
  emit("summary.json", nlohmann::json{{"dataset", runs.front().dataset},
                                      {"ledgers", ledgers},
                                      {"curves", table}}
                           .dump(2));
  return written;
}

/// Traversal strip and style grid from a checkpoint and a few inputs.
inline std::vector<std::string> write_generation_figures(ModelState& state, const torch::Tensor& images,
                                                         const std::string& out_dir, int64_t cols = 11) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  for (int64_t i = 0; i < images.size(0); ++i) {
    const auto path = (fs::path(out_dir) / ("traversal_" + std::to_string(i) + ".pgm")).string();
    write_pgm(path, tile(latent_traversal(state, images.narrow(0, i, 1), cols)));
    written.push_back(path);
  }
  const auto path = (fs::path(out_dir) / "style_grid.pgm").string();
  write_pgm(path, tile(style_grid(state, images)));
  written.push_back(path);
  return written;
}

}  // namespace ivvae::report
