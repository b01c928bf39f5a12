#pragma once

#include <string>
#include <utility>
#include <vector>

// Static vector-graphics and CSV exports.
namespace mocha::plot {

using Matrix = std::vector<std::vector<double>>;

// Header row "token,1,2,...,T'" then one row per token.
void write_alignment_csv(const Matrix& alpha, const std::string& path);
Matrix read_alignment_csv(const std::string& path);

// Heatmap of alpha (tokens down, frames across). Predicted boundaries are
// filled yellow dots, gold boundaries open red squares; both 1-based.
std::string alignment_svg(const Matrix& alpha, const std::vector<int>& predicted,
                          const std::vector<int>& gold);
void write_alignment_svg(const Matrix& alpha, const std::vector<int>& predicted,
                         const std::vector<int>& gold, const std::string& path);

struct Series {
  std::string label;
  std::vector<long> values;
};

// Overlaid per-frame histograms of token latencies, one outline per series,
// normalized to the fraction of tokens.
std::string latency_histogram_svg(const std::vector<Series>& series, double frame_ms);
void write_latency_histogram_svg(const std::vector<Series>& series, double frame_ms,
                                 const std::string& path);

void write_text(const std::string& path, const std::string& text);

}  // namespace mocha::plot
