#pragma once

// Parameter-condensation diagnostics: pairwise cosine similarity of the
// neurons' incoming-weight rows, reduced to a scalar score (fraction of
// near-aligned pairs) and exportable as a heatmap CSV.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "kitinet/csv.hpp"
#include "kitinet/mat.hpp"

namespace kitinet::condense {

struct CondensationMatrix {
  Mat values;  // m x m, symmetric, unit diagonal for nonzero rows
  int layer_index = 0;
  int epoch = 0;
};

// Cosine similarity of every row pair. Rows with norm below 1e-12 count as
// directionless and score 0 against everything, themselves included.
inline CondensationMatrix cosine_matrix(const Mat& weights, int layer_index = 0,
                                        int epoch = 0) {
  const std::size_t m = weights.rows;
  if (m < 1) throw std::invalid_argument("cosine_matrix: need at least one row");

  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < weights.cols; ++c) s += weights(i, c) * weights(i, c);
    norms[i] = std::sqrt(s);
  }

  CondensationMatrix cm{Mat(m, m), layer_index, epoch};
  for (std::size_t i = 0; i < m; ++i) {
    cm.values(i, i) = norms[i] < 1e-12 ? 0.0 : 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      double v = 0.0;
      if (norms[i] >= 1e-12 && norms[j] >= 1e-12) {
        double dot = 0.0;
        for (std::size_t c = 0; c < weights.cols; ++c) dot += weights(i, c) * weights(j, c);
        v = dot / (norms[i] * norms[j]);
      }
      cm.values(i, j) = v;
      cm.values(j, i) = v;
    }
  }
  return cm;
}

// Fraction of off-diagonal unordered pairs whose |similarity| exceeds the
// threshold. Anti-aligned neurons therefore count as condensed.
inline double condensation_score(const CondensationMatrix& cm, double threshold = 0.95) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("condensation_score: threshold must lie in (0, 1)");
  const std::size_t m = cm.values.rows;
  if (m < 2) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      if (std::abs(cm.values(i, j)) > threshold) ++hits;
  const auto pairs = static_cast<double>(m * (m - 1) / 2);
  return static_cast<double>(hits) / pairs;
}

// m x m comma-separated signed similarities, one header line carrying the
// snapshot coordinates. 17 significant digits, so parsing the payload back
// reproduces the matrix bit-exactly.
inline std::string export_heatmap(const CondensationMatrix& cm) {
  const std::size_t m = cm.values.rows;
  std::string out = "# layer=" + std::to_string(cm.layer_index) +
                    " epoch=" + std::to_string(cm.epoch) + " m=" + std::to_string(m) + "\n";
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (j) out += ',';
      out += format_double(cm.values(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace kitinet::condense
