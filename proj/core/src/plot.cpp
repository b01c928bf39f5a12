#include "mocha/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mocha/errors.hpp"

namespace mocha::plot {

namespace {

// Perceptual dark-blue to yellow ramp.
std::string ramp(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                               {59, 82, 139},
                                                               {33, 145, 140},
                                                               {94, 201, 98},
                                                               {253, 231, 37}}};
  v = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * (stops.size() - 1);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(v), stops.size() - 2);
  const double f = v - static_cast<double>(k);
  char buf[8];
  int c[3];
  for (int ch = 0; ch < 3; ++ch)
    c[ch] = static_cast<int>(std::lround(stops[k][ch] * (1 - f) + stops[k + 1][ch] * f));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw DataError("write failed for " + path);
}

void write_alignment_csv(const Matrix& alpha, const std::string& path) {
  const std::size_t t = alpha.empty() ? 0 : alpha[0].size();
  std::ostringstream os;
  os.precision(17);
  os << "token";
  for (std::size_t j = 1; j <= t; ++j) os << ',' << j;
  os << '\n';
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    require(alpha[i].size() == t, "alignment csv: ragged rows");
    os << i + 1;
    for (double v : alpha[i]) os << ',' << v;
    os << '\n';
  }
  write_text(path, os.str());
}

Matrix read_alignment_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::string line;
  Matrix out;
  std::size_t lineno = 0, width = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (lineno == 1) {
      width = cells.size() - 1;
      continue;
    }
    if (cells.size() != width + 1)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(width) + " values");
    std::vector<double> row;
    try {
      for (std::size_t k = 1; k < cells.size(); ++k) row.push_back(std::stod(cells[k]));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string alignment_svg(const Matrix& alpha, const std::vector<int>& predicted,
                          const std::vector<int>& gold) {
  const std::size_t l = alpha.size(), t = l ? alpha[0].size() : 0;
  const double cell = std::clamp(640.0 / std::max<std::size_t>(t, 1), 6.0, 24.0);
  const double left = 56, top = 28;
  const double w = left + cell * t + 150, h = top + cell * l + 44;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"16\">monotonic attention weights</text>\n";
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < t; ++j)
      os << "<rect class=\"cell\" x=\"" << left + cell * j << "\" y=\"" << top + cell * i
         << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
         << ramp(alpha[i][j]) << "\"/>\n";
  auto centre = [&](std::size_t i, int b, double& cx, double& cy) {
    cx = left + cell * (b - 0.5);
    cy = top + cell * (static_cast<double>(i) + 0.5);
  };
  for (std::size_t i = 0; i < gold.size() && i < l; ++i) {
    if (gold[i] < 1 || static_cast<std::size_t>(gold[i]) > t) continue;
    double cx, cy;
    centre(i, gold[i], cx, cy);
    os << "<rect class=\"gold\" data-col=\"" << gold[i] << "\" x=\"" << cx - cell * 0.4
       << "\" y=\"" << cy - cell * 0.4 << "\" width=\"" << cell * 0.8 << "\" height=\""
       << cell * 0.8 << "\" fill=\"none\" stroke=\"#e41a1c\" stroke-width=\"2\"/>\n";
  }
  for (std::size_t i = 0; i < predicted.size() && i < l; ++i) {
    if (predicted[i] < 1 || static_cast<std::size_t>(predicted[i]) > t) continue;
    double cx, cy;
    centre(i, predicted[i], cx, cy);
    os << "<circle class=\"predicted\" data-col=\"" << predicted[i] << "\" cx=\"" << cx
       << "\" cy=\"" << cy << "\" r=\"" << cell * 0.25
       << "\" fill=\"#ffd700\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  const double axis_y = top + cell * l + 16;
  for (std::size_t j = 0; j < t; j += std::max<std::size_t>(1, t / 10))
    os << "<text x=\"" << left + cell * (j + 0.5) << "\" y=\"" << axis_y
       << "\" text-anchor=\"middle\">" << j + 1 << "</text>\n";
  os << "<text x=\"" << left + cell * t / 2 << "\" y=\"" << axis_y + 18
     << "\" text-anchor=\"middle\">encoder frame</text>\n";
  for (std::size_t i = 0; i < l; ++i)
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * (i + 0.5) + 4
       << "\" text-anchor=\"end\">" << i + 1 << "</text>\n";
  const double lx = left + cell * t + 16;
  os << "<circle cx=\"" << lx << "\" cy=\"" << top + 6
     << "\" r=\"5\" fill=\"#ffd700\" stroke=\"black\" stroke-width=\"0.5\"/>"
     << "<text x=\"" << lx + 10 << "\" y=\"" << top + 10 << "\">predicted boundary</text>\n";
  os << "<rect x=\"" << lx - 5 << "\" y=\"" << top + 17
     << "\" width=\"10\" height=\"10\" fill=\"none\" stroke=\"#e41a1c\" stroke-width=\"2\"/>"
     << "<text x=\"" << lx + 10 << "\" y=\"" << top + 26 << "\">gold boundary</text>\n";
  os << "</svg>\n";
  return os.str();
}

void write_alignment_svg(const Matrix& alpha, const std::vector<int>& predicted,
                         const std::vector<int>& gold, const std::string& path) {
  write_text(path, alignment_svg(alpha, predicted, gold));
}

std::string latency_histogram_svg(const std::vector<Series>& series, double frame_ms) {
  long lo = 0, hi = 0;
  bool any = false;
  for (const auto& s : series)
    for (long v : s.values) {
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  std::vector<std::map<long, double>> freq(series.size());
  double ymax = 0.0;
  for (std::size_t k = 0; k < series.size(); ++k) {
    for (long v : series[k].values) freq[k][v] += 1.0;
    for (auto& [_, f] : freq[k]) {
      f /= static_cast<double>(series[k].values.size());
      ymax = std::max(ymax, f);
    }
  }
  if (ymax <= 0.0) ymax = 1.0;
  const double left = 56, top = 30, pw = 560, ph = 300;
  const double bins = static_cast<double>(hi - lo + 1);
  const double bw = pw / bins;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + pw + 170
     << "\" height=\"" << top + ph + 50 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\">token latency distribution (1 frame = "
     << frame_ms << " ms)</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw
     << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
     << top + ph << "\" stroke=\"black\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kPalette[k % std::size(kPalette)];
    os << "<path class=\"series\" fill=\"" << colour << "\" fill-opacity=\"0.15\" stroke=\""
       << colour << "\" stroke-width=\"1.5\" d=\"M" << left << ' ' << top + ph;
    for (long b = lo; b <= hi; ++b) {
      auto it = freq[k].find(b);
      const double f = it == freq[k].end() ? 0.0 : it->second;
      const double x0 = left + bw * static_cast<double>(b - lo);
      const double y = top + ph - ph * f / ymax;
      os << " L" << x0 << ' ' << y << " L" << x0 + bw << ' ' << y;
    }
    os << " L" << left + pw << ' ' << top + ph << " Z\"/>\n";
    os << "<rect x=\"" << left + pw + 16 << "\" y=\"" << top + 16 * k << "\" width=\"10\" "
       << "height=\"10\" fill=\"" << colour << "\"/><text x=\"" << left + pw + 30 << "\" y=\""
       << top + 16 * k + 9 << "\">" << series[k].label << "</text>\n";
  }
  const long step = std::max<long>(1, (hi - lo + 1) / 10);
  for (long b = lo; b <= hi; b += step)
    os << "<text x=\"" << left + bw * (static_cast<double>(b - lo) + 0.5) << "\" y=\""
       << top + ph + 14 << "\" text-anchor=\"middle\">" << b << "</text>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << top + ph + 34
     << "\" text-anchor=\"middle\">latency (encoder frames)</text>\n";
  os << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << ymax
     << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

void write_latency_histogram_svg(const std::vector<Series>& series, double frame_ms,
                                 const std::string& path) {
  write_text(path, latency_histogram_svg(series, frame_ms));
}

}  // namespace mocha::plot
