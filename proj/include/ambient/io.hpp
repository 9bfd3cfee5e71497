#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ambient/common.hpp"

namespace ambient {

// FNV-1a over the canonical (sorted-key, no-whitespace) JSON serialization.
inline std::uint64_t config_hash(const nlohmann::json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// RFC-4180 CSV writer. The first header line carries the timestamp (excluded
// from byte comparisons); the second pins config hash and seed so identical
// runs produce identical files from line 2 on.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::uint64_t config_hash_value,
            std::uint64_t seed)
      : out_(path) {
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path.string());
    out_ << "# generated: " << timestamp_utc() << "\r\n";
    out_ << "# config=" << std::hex << config_hash_value << std::dec << " seed=" << seed
         << "\r\n";
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << "\r\n";
  }

  static std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  }

 private:
  static std::string quote(const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char c : f) {
      if (c == '"') q += '"';
      q += c;
    }
    q += '"';
    return q;
  }

  std::ofstream out_;
};

// Minimal hand-rolled SVG line plot: axes, ticks, one polyline per series,
// optional horizontal reference line. Log axes take the log before plotting.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string x_label, std::string y_label, bool log_x = false,
          bool log_y = false)
      : title_(std::move(title)),
        x_label_(std::move(x_label)),
        y_label_(std::move(y_label)),
        log_x_(log_x),
        log_y_(log_y) {}

  void add_series(std::string name, std::vector<std::pair<double, double>> points) {
    series_.push_back({std::move(name), std::move(points)});
  }

  void add_hline(double y, std::string name) { hlines_.push_back({y, std::move(name)}); }

  void write(const std::filesystem::path& path) const {
    if (series_.empty()) throw std::runtime_error("SvgPlot: no series");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series_)
      for (auto [x, y] : s.points) {
        const double px = tx(x), py = ty(y);
        if (!std::isfinite(px) || !std::isfinite(py)) continue;
        xmin = std::min(xmin, px);
        xmax = std::max(xmax, px);
        ymin = std::min(ymin, py);
        ymax = std::max(ymax, py);
      }
    for (const auto& h : hlines_) {
      const double py = ty(h.first);
      if (std::isfinite(py)) {
        ymin = std::min(ymin, py);
        ymax = std::max(ymax, py);
      }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    auto sx = [&](double px) { return L + (px - xmin) / (xmax - xmin) * (W - L - R); };
    auto sy = [&](double py) { return H - B - (py - ymin) / (ymax - ymin) * (H - T - B); };

    std::ofstream out(path);
    if (!out) throw std::runtime_error("SvgPlot: cannot open " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << title_ << "</text>\n";
    // axes
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\""
        << H - B << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    // ticks
    for (int i = 0; i <= 5; ++i) {
      const double px = xmin + (xmax - xmin) * i / 5.0;
      const double py = ymin + (ymax - ymin) * i / 5.0;
      out << "<line x1=\"" << sx(px) << "\" y1=\"" << H - B << "\" x2=\"" << sx(px)
          << "\" y2=\"" << H - B + 5 << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << sx(px) << "\" y=\"" << H - B + 18
          << "\" text-anchor=\"middle\" font-size=\"10\">" << tick_label(px, log_x_)
          << "</text>\n";
      out << "<line x1=\"" << L - 5 << "\" y1=\"" << sy(py) << "\" x2=\"" << L << "\" y2=\""
          << sy(py) << "\" stroke=\"black\"/>\n";
      out << "<text x=\"" << L - 8 << "\" y=\"" << sy(py) + 3
          << "\" text-anchor=\"end\" font-size=\"10\">" << tick_label(py, log_y_)
          << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label_ << "</text>\n";
    out << "<text x=\"16\" y=\"" << (T + H - B) / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << (T + H - B) / 2 << ")\">" << y_label_ << "</text>\n";

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                   "#8c564b"};
    std::size_t ci = 0;
    for (const auto& h : hlines_) {
      const double py = ty(h.first);
      out << "<line x1=\"" << L << "\" y1=\"" << sy(py) << "\" x2=\"" << W - R << "\" y2=\""
          << sy(py) << "\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>\n";
      out << "<text x=\"" << W - R - 4 << "\" y=\"" << sy(py) - 4
          << "\" text-anchor=\"end\" font-size=\"10\" fill=\"#555\">" << h.second
          << "</text>\n";
    }
    for (const auto& s : series_) {
      const char* color = colors[ci % 6];
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (auto [x, y] : s.points) {
        const double px = tx(x), py = ty(y);
        if (!std::isfinite(px) || !std::isfinite(py)) continue;
        out << sx(px) << "," << sy(py) << " ";
      }
      out << "\"/>\n";
      out << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 + 14 * double(ci)
          << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">" << s.name
          << "</text>\n";
      ++ci;
    }
    out << "</svg>\n";
  }

 private:
  double tx(double x) const { return log_x_ ? std::log10(x) : x; }
  double ty(double y) const { return log_y_ ? std::log10(y) : y; }

  static std::string tick_label(double v, bool logscale) {
    std::ostringstream os;
    os << std::setprecision(3);
    if (logscale)
      os << std::pow(10.0, v);
    else
      os << v;
    return os.str();
  }

  std::string title_, x_label_, y_label_;
  bool log_x_, log_y_;
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
  };
  std::vector<Series> series_;
  std::vector<std::pair<double, std::string>> hlines_;
};

inline void write_json_report(const std::filesystem::path& path, nlohmann::json report,
                              std::uint64_t config_hash_value, std::uint64_t seed) {
  report["config_hash"] = config_hash_value;
  report["seed"] = seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_json_report: cannot open " + path.string());
  out << report.dump(2) << "\n";
}

}  // namespace ambient
