#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. None of them share code with the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace aped::oracle {

/// Best global alignment score by enumerating every alignment path
/// explicitly (no dynamic programming).
inline double brute_force_alignment_score(const std::vector<int>& canonical, const std::vector<int>& target,
                                          double match, double mismatch, double gap) {
  double best = -std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    if (i == target.size() && j == canonical.size()) {
      best = std::max(best, acc);
      return;
    }
    if (i < target.size() && j < canonical.size()) {
      walk(i + 1, j + 1, acc + (target[i] == canonical[j] ? match : mismatch));
    }
    if (i < target.size()) walk(i + 1, j, acc + gap);
    if (j < canonical.size()) walk(i, j + 1, acc + gap);
  };
  walk(0, 0, 0.0);
  return best;
}

/// Alignment paths of an (m target, n canonical) grid, each as the list of
/// diagonal cells plus the number of gap columns.
struct Path {
  std::vector<std::pair<int, int>> diagonal;
  int gaps = 0;
};

inline std::vector<Path> enumerate_paths(int m, int n) {
  std::vector<Path> out;
  Path cur;
  std::function<void(int, int)> walk = [&](int i, int j) {
    if (i == m && j == n) {
      out.push_back(cur);
      return;
    }
    if (i < m && j < n) {
      cur.diagonal.emplace_back(i, j);
      walk(i + 1, j + 1);
      cur.diagonal.pop_back();
    }
    if (i < m) {
      ++cur.gaps;
      walk(i + 1, j);
      --cur.gaps;
    }
    if (j < n) {
      ++cur.gaps;
      walk(i, j + 1);
      --cur.gaps;
    }
  };
  walk(0, 0);
  return out;
}

/// Restricted-growth strings of the given length over at most `symbols`
/// labels. Every sequence over the alphabet equals one of these up to a
/// relabeling of symbols, which leaves alignment scores unchanged.
inline std::vector<std::vector<int>> restricted_growth_strings(int length, int symbols) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> walk = [&](int next_label) {
    if (static_cast<int>(cur.size()) == length) {
      out.push_back(cur);
      return;
    }
    for (int s = 0; s <= std::min(next_label, symbols - 1); ++s) {
      cur.push_back(s);
      walk(std::max(next_label, s + 1));
      cur.pop_back();
    }
  };
  walk(0);
  return out;
}

/// Plain Levenshtein distance with unit costs, by the textbook recurrence.
inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

/// Metrics from counts written out independently of the library formulas:
/// precision and recall via set sizes, F1 as the harmonic mean form
/// 2TR / (2TR + FR + FA).
struct RefMetrics {
  double precision, recall, f1, far, frr, accuracy;
};

inline RefMetrics reference_metrics(const std::vector<int>& predicted, const std::vector<int>& truth) {
  long flagged = 0, errors = 0, hit = 0, correct_total = 0, correct_flagged = 0, agree = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    flagged += predicted[i];
    errors += truth[i];
    hit += predicted[i] && truth[i];
    correct_total += !truth[i];
    correct_flagged += predicted[i] && !truth[i];
    agree += predicted[i] == truth[i];
  }
  auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  RefMetrics m;
  m.precision = ratio(hit, flagged);
  m.recall = ratio(hit, errors);
  m.f1 = ratio(2.0 * hit, static_cast<double>(flagged + errors));
  m.far = ratio(errors - hit, errors);
  m.frr = ratio(correct_flagged, correct_total);
  m.accuracy = ratio(agree, static_cast<double>(truth.size()));
  return m;
}

}  // namespace aped::oracle
