#pragma once

// Straight-from-the-definition metric implementations over explicit
// confusion matrices. Deliberately shares no code with src/metrics.cpp.

#include <cstddef>
#include <set>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix confusion(const std::vector<int>& gold, const std::vector<int>& pred, int k) {
  Matrix m(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < gold.size(); ++i) m[gold[i]][pred[i]] += 1.0;
  return m;
}

inline double total(const Matrix& m) {
  double n = 0;
  for (const auto& row : m)
    for (double v : row) n += v;
  return n;
}

inline double accuracy(const std::vector<int>& gold, const std::vector<int>& pred, int k) {
  const auto m = confusion(gold, pred, k);
  double trace = 0;
  for (int i = 0; i < k; ++i) trace += m[i][i];
  return trace / total(m);
}

inline double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred, int k) {
  const auto m = confusion(gold, pred, k);
  std::set<int> present(gold.begin(), gold.end());
  present.insert(pred.begin(), pred.end());
  double sum = 0;
  for (int c : present) {
    double row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += m[c][j];
      col += m[j][c];
    }
    const double tp = m[c][c];
    const double precision = col > 0 ? tp / col : 0.0;
    const double recall = row > 0 ? tp / row : 0.0;
    sum += (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(present.size());
}

struct KappaResult {
  double value;
  bool degenerate;
};

// 1 - sum(w O) / sum(w E), w_ij = (i-j)^2 / (k-1)^2, O and E normalised.
inline KappaResult qwk(const std::vector<int>& gold, const std::vector<int>& pred, int k) {
  const auto m = confusion(gold, pred, k);
  const double n = total(m);
  std::vector<double> rows(k, 0.0), cols(k, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      rows[i] += m[i][j];
      cols[j] += m[i][j];
    }
  double num = 0, den = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / static_cast<double>((k - 1) * (k - 1));
      num += w * m[i][j] / n;
      den += w * (rows[i] / n) * (cols[j] / n);
    }
  if (den < 1e-15) return {0.0, true};
  return {1.0 - num / den, false};
}

inline KappaResult cohen_kappa(const std::vector<int>& a, const std::vector<int>& b, int k) {
  const auto m = confusion(a, b, k);
  const double n = total(m);
  double po = 0, pe = 0;
  for (int c = 0; c < k; ++c) {
    po += m[c][c] / n;
    double row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += m[c][j];
      col += m[j][c];
    }
    pe += (row / n) * (col / n);
  }
  if (1.0 - pe < 1e-15) return {a == b ? 1.0 : 0.0, true};
  return {(po - pe) / (1.0 - pe), false};
}

}  // namespace oracle
