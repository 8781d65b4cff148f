#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "moeapprox/errors.hpp"
#include "moeapprox/harness.hpp"

namespace moeapprox {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

}  // namespace

void save_network(const MoeNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(net).dump(1) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

MoeNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  try {
    return moe_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string rate_csv(const RateSweep& sweep, const std::string& target, std::uint64_t seed) {
  std::string s = "m,error,active_params,construction,target,seed\n";
  for (const auto& p : sweep.points)
    s += std::to_string(p.m) + "," + num(p.error) + "," + std::to_string(p.active_params) + "," +
         p.construction + "," + target + "," + std::to_string(seed) + "\n";
  return s;
}

std::string comparison_csv(const ComparisonReport& report, const std::string& target,
                           std::uint64_t seed) {
  std::string s =
      "m,moe_error,moe_active_params,dense_width,dense_error,dense_params,clamped,target,seed\n";
  for (const auto& r : report.rows)
    s += std::to_string(r.m) + "," + num(r.moe_error) + "," + std::to_string(r.moe_active_params) +
         "," + std::to_string(r.dense_width) + "," + num(r.dense_error) + "," +
         std::to_string(r.dense_params) + "," + (r.clamped ? "1" : "0") + "," + target + "," +
         std::to_string(seed) + "\n";
  return s;
}

std::string svg_loglog_plot(const std::string& title, const std::string& x_label,
                            const std::string& y_label, std::span<const PlotSeries> series) {
  constexpr double W = 640, H = 440, left = 80, right = 160, top = 40, bottom = 60;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!(x > 0.0 && y > 0.0)) continue;
      x0 = std::min(x0, std::log10(x));
      x1 = std::max(x1, std::log10(x));
      y0 = std::min(y0, std::log10(y));
      y1 = std::max(y1, std::log10(y));
    }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  x0 = std::floor(x0), x1 = std::max(std::ceil(x1), x0 + 1);
  y0 = std::floor(y0), y1 = std::max(std::ceil(y1), y0 + 1);
  auto px = [&](double lx) { return left + (lx - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double ly) { return H - bottom - (ly - y0) / (y1 - y0) * (H - top - bottom); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  for (double d = x0; d <= x1 + 1e-9; d += 1.0)
    o << "<line x1=\"" << fixed(px(d), 1) << "\" y1=\"" << top << "\" x2=\"" << fixed(px(d), 1)
      << "\" y2=\"" << H - bottom << "\" stroke=\"#ddd\"/>\n<text x=\"" << fixed(px(d), 1)
      << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">1e" << static_cast<int>(d)
      << "</text>\n";
  for (double d = y0; d <= y1 + 1e-9; d += 1.0)
    o << "<line x1=\"" << left << "\" y1=\"" << fixed(py(d), 1) << "\" x2=\"" << W - right
      << "\" y2=\"" << fixed(py(d), 1) << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 6
      << "\" y=\"" << fixed(py(d) + 4, 1) << "\" text-anchor=\"end\">1e" << static_cast<int>(d)
      << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right
    << "\" height=\"" << H - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 16
    << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
  o << "<text transform=\"translate(20," << (top + H - bottom) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % std::size(colors)];
    std::string path;
    for (const auto& [x, y] : series[k].points) {
      if (!(x > 0.0 && y > 0.0)) continue;
      path += (path.empty() ? "" : " ") + fixed(px(std::log10(x)), 2) + "," +
              fixed(py(std::log10(y)), 2);
      o << "<circle cx=\"" << fixed(px(std::log10(x)), 2) << "\" cy=\""
        << fixed(py(std::log10(y)), 2) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\""
      << path << "\"/>\n";
    const double ly = top + 16 + 18 * static_cast<double>(k);
    o << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - right + 32
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\""
      << W - right + 38 << "\" y=\"" << ly << "\">" << xml_escape(series[k].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string describe_network(const MoeNetwork& net) {
  std::ostringstream o;
  o << "moe network: input " << net.input_dim() << ", output " << net.output_dim() << ", "
    << net.depth() << " MoE layers\n";
  auto dense = [&](const char* name, const std::optional<FfnNetwork>& f) {
    if (f)
      o << "  " << name << ": " << f->input_dim() << " -> " << f->output_dim() << ", depth "
        << f->depth() << ", " << f->param_count() << " params\n";
    else
      o << "  " << name << ": none\n";
  };
  dense("embed", net.embed());
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    const MoeLayer& layer = net.layers()[k];
    std::size_t depth = 0;
    std::size_t width = 0;
    for (const auto& e : layer.experts()) {
      depth = std::max(depth, e.depth());
      width = std::max(width, e.width());
    }
    const bool zero_gate = layer.gating().mode() == GatingNetwork::Mode::linear &&
                           std::all_of(layer.gating().weight().begin(),
                                       layer.gating().weight().end(),
                                       [](double w) { return w == 0.0; });
    o << "  layer " << k << ": E=" << layer.expert_count() << " K=" << layer.top_k()
      << " gating="
      << (layer.gating().mode() == GatingNetwork::Mode::mlp ? "mlp"
                                                             : (zero_gate ? "constant" : "linear"))
      << " experts " << layer.input_dim() << " -> " << layer.output_dim() << " depth " << depth
      << " width " << width << "\n";
  }
  dense("readout", net.readout());
  o << "  active params " << active_param_count(net) << ", total params "
    << total_param_count(net) << "\n";
  return o.str();
}

json to_json(const RoutingAuditSummary& a) {
  json w = json::array();
  for (const auto& x : a.witnesses)
    w.push_back({{"point", x.point},
                 {"factor", x.factor},
                 {"selected", x.selected},
                 {"admissible", x.admissible}});
  return {{"checked", a.checked},     {"passed", a.passed},
          {"excluded", a.excluded},   {"pass_fraction", a.pass_fraction},
          {"witnesses", w}};
}

json to_json(const ErrorChainReport& c) {
  return {{"end_to_end", c.end_to_end},
          {"argmax", c.argmax},
          {"grid_expert_errors", c.grid_expert_errors},
          {"max_expert_fit_error", c.max_expert_fit_error},
          {"slack", kErrorChainSlack},
          {"evaluated", c.evaluated},
          {"excluded", c.excluded},
          {"holds", c.holds}};
}

json to_json(const ErrorReport& r) {
  return {{"sup_error", r.sup_error},
          {"argmax", r.argmax},
          {"grid_size", r.grid_size},
          {"excluded", r.excluded},
          {"refinement_checked", r.refinement_checked},
          {"refined_error", r.refined_error},
          {"refinement_ok", r.refinement_ok}};
}

json to_json(const RateReport& r) {
  json pts = json::array();
  for (const auto& p : r.points) pts.push_back({{"m", p.m}, {"error", p.error}, {"clamped", p.clamped}});
  return {{"points", pts},
          {"slope", r.slope},
          {"intercept", r.intercept},
          {"residual", r.residual},
          {"any_clamped", r.any_clamped}};
}

}  // namespace moeapprox
