#include "scar/svg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "scar/tokenizer.hpp"

namespace scar {

namespace {

constexpr double kCell = 22.0;
constexpr double kLabelWidth = 40.0;
constexpr double kTop = 30.0;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// White to dark blue.
std::string color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - t * (255 - 8)));
  const int g = static_cast<int>(std::lround(255 - t * (255 - 48)));
  const int b = static_cast<int>(std::lround(255 - t * (255 - 107)));
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

// Grid body at an x offset; returns its width.
double grid_body(std::ostringstream& os, const HeatGrid& g, double x0) {
  double lo = 0.0, hi = 0.0;
  if (!g.values.empty()) {
    lo = *std::min_element(g.values.begin(), g.values.end());
    hi = *std::max_element(g.values.begin(), g.values.end());
  }
  const double span = hi > lo ? hi - lo : 1.0;
  os << "<text x=\"" << x0 + kLabelWidth << "\" y=\"18\" font-size=\"13\">" << escape(g.title) << "</text>\n";
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double y = kTop + static_cast<double>(r) * kCell;
    if (r < g.row_labels.size()) {
      os << "<text x=\"" << x0 + kLabelWidth - 4 << "\" y=\"" << y + kCell * 0.7
         << "\" font-size=\"10\" text-anchor=\"end\">" << escape(g.row_labels[r]) << "</text>\n";
    }
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double v = g.values[r * g.cols + c];
      os << "<rect x=\"" << x0 + kLabelWidth + static_cast<double>(c) * kCell << "\" y=\"" << y << "\" width=\""
         << kCell << "\" height=\"" << kCell << "\" fill=\"" << color((v - lo) / span)
         << "\" stroke=\"#ddd\"><title>" << std::setprecision(4) << v << "</title></rect>\n";
    }
  }
  auto outline = [&](const Cell& cell, const char* stroke, const char* dash) {
    os << "<rect x=\"" << x0 + kLabelWidth + static_cast<double>(cell.patch) * kCell + 1 << "\" y=\""
       << kTop + static_cast<double>(cell.lead) * kCell + 1 << "\" width=\"" << kCell - 2 << "\" height=\""
       << kCell - 2 << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\"" << dash << "/>\n";
  };
  for (const auto& c : g.primary) outline(c, "#d62728", "");
  for (const auto& c : g.secondary) outline(c, "#ff7f0e", " stroke-dasharray=\"3,2\"");
  const double bottom = kTop + static_cast<double>(g.rows) * kCell;
  if (!g.annotation.empty()) {
    os << "<text x=\"" << x0 + kLabelWidth << "\" y=\"" << bottom + 16 << "\" font-size=\"11\">"
       << escape(g.annotation) << "</text>\n";
  }
  return kLabelWidth + static_cast<double>(g.cols) * kCell + 20.0;
}

std::string header(double w, double h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

}  // namespace

std::string heat_grid_svg(const HeatGrid& grid) {
  if (grid.values.size() != grid.rows * grid.cols) throw DimensionError("heat grid size mismatch");
  std::ostringstream body;
  const double w = grid_body(body, grid, 0.0);
  return header(w, kTop + static_cast<double>(grid.rows) * kCell + 30) + body.str() + "</svg>\n";
}

std::string compensation_svg(const CompensationPanels& p, std::uint64_t record_id) {
  const std::size_t L = p.num_leads, S = p.patches_per_lead;
  std::vector<std::string> labels;
  const auto& names = canonical_lead_names();
  for (std::size_t l = 0; l < L; ++l) labels.push_back(l < names.size() ? names[l] : std::to_string(l));
  auto sum = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  };
  std::ostringstream ann_full, ann_removed, ann_gate;
  ann_full << std::fixed << std::setprecision(4) << "sum alpha = " << sum(p.alpha_full);
  ann_removed << std::fixed << std::setprecision(4) << "sum alpha = " << sum(p.alpha_removed);
  double gate_mean = sum(p.gates) / static_cast<double>(std::max<std::size_t>(1, p.gates.size()));
  ann_gate << std::fixed << std::setprecision(3) << "mean gate = " << gate_mean;

  std::vector<double> overlay(L * S, 0.0);
  overlay[p.primary.lead * S + p.primary.patch] = 1.0;
  for (const auto& c : p.secondary) overlay[c.lead * S + c.patch] = 0.5;

  const std::vector<HeatGrid> grids{
      {"selector alpha, full view", L, S, p.alpha_full, labels, ann_full.str(), {p.primary}, p.secondary},
      {"masker gates", L, S, p.gates, labels, ann_gate.str(), {p.primary}, p.secondary},
      {"alpha, primary cell removed", L, S, p.alpha_removed, labels, ann_removed.str(), {p.primary}, p.secondary},
      {"planted evidence, class " + std::to_string(p.cls), L, S, overlay, labels, "solid: primary, dashed: secondary",
       {p.primary}, p.secondary},
  };
  std::ostringstream body;
  double x = 0.0;
  for (const auto& g : grids) x += grid_body(body, g, x);
  const double h = kTop + static_cast<double>(L) * kCell + 50;
  std::ostringstream os;
  os << header(x, h) << "<text x=\"4\" y=\"" << h - 8 << "\" font-size=\"11\">record " << record_id
     << "</text>\n"
     << body.str() << "</svg>\n";
  return os.str();
}

std::string loss_curve_svg(std::span<const EpochMetrics> history) {
  const double W = 640, H = 360, left = 60, right = 20, top = 30, bottom = 40;
  std::ostringstream os;
  os << header(W, H);
  if (history.empty()) {
    os << "<text x=\"20\" y=\"40\">no epochs recorded</text>\n</svg>\n";
    return os.str();
  }
  struct Series {
    const char* name;
    const char* color;
    std::vector<double> y;
  };
  std::vector<Series> series{{"L_align", "#1f77b4", {}}, {"L_cons", "#2ca02c", {}},
                             {"L_budget", "#9467bd", {}}, {"val AUROC", "#d62728", {}}};
  bool has_auroc = false;
  for (const auto& m : history) {
    series[0].y.push_back(m.align);
    series[1].y.push_back(m.cons);
    series[2].y.push_back(m.budget);
    series[3].y.push_back(m.val_auroc.value_or(std::nan("")));
    has_auroc = has_auroc || m.val_auroc.has_value();
  }
  if (!has_auroc) series.pop_back();
  double ymax = 1.0;
  for (const auto& s : series) {
    for (double v : s.y) {
      if (std::isfinite(v)) ymax = std::max(ymax, v);
    }
  }
  const double n = static_cast<double>(history.size());
  auto px = [&](std::size_t i) {
    return left + (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5) * (W - left - right);
  };
  auto py = [&](double v) { return top + (1.0 - v / ymax) * (H - top - bottom); };
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">training curves</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
     << H - bottom << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" font-size=\"10\" text-anchor=\"end\">"
       << std::setprecision(3) << v << "</text>\n";
  }
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 8
     << "\" font-size=\"11\" text-anchor=\"middle\">epoch (1.." << history.size() << ")</text>\n";
  double ly = top + 4;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) os << px(i) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n<text x=\"" << W - right - 90 << "\" y=\"" << ly << "\" font-size=\"11\" fill=\"" << s.color
       << "\">" << s.name << "</text>\n";
    ly += 14;
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<EpochMetrics> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,", 0) != 0) throw FormatError("metrics CSV lacks its header");
  std::vector<EpochMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw FormatError("metrics CSV row has " + std::to_string(f.size()) + " fields");
    try {
      EpochMetrics m;
      m.epoch = std::stoul(f[0]);
      m.align = std::stod(f[1]);
      m.cons = std::stod(f[2]);
      m.budget = std::stod(f[3]);
      m.mean_gate = std::stod(f[4]);
      if (!f[5].empty()) m.val_auroc = std::stod(f[5]);
      out.push_back(m);
    } catch (const std::logic_error&) {
      throw FormatError("unparseable metrics CSV row: " + line);
    }
  }
  return out;
}

}  // namespace scar
