#include "aped/alignment.hpp"

#include <algorithm>
#include <sstream>

#include "aped/error.hpp"

namespace aped {

void AlignCosts::validate() const {
  if (!(match > mismatch) || !(match > gap)) {
    throw Error("alignment costs require match > mismatch and match > gap");
  }
}

const char* to_string(AlignOp op) {
  switch (op) {
    case AlignOp::match: return "match";
    case AlignOp::substitution: return "substitution";
    case AlignOp::deletion: return "deletion";
    case AlignOp::insertion: return "insertion";
  }
  return "?";
}

AlignmentResult nw_align(std::span<const int> canonical, std::span<const int> target,
                         const AlignCosts& costs) {
  costs.validate();
  const std::size_t rows = target.size() + 1;
  const std::size_t cols = canonical.size() + 1;
  std::vector<double> table(rows * cols);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return table[i * cols + j]; };

  for (std::size_t i = 0; i < rows; ++i) at(i, 0) = static_cast<double>(i) * costs.gap;
  for (std::size_t j = 0; j < cols; ++j) at(0, j) = static_cast<double>(j) * costs.gap;
  for (std::size_t i = 1; i < rows; ++i) {
    for (std::size_t j = 1; j < cols; ++j) {
      const double diag = at(i - 1, j - 1) + (target[i - 1] == canonical[j - 1] ? costs.match : costs.mismatch);
      const double up = at(i - 1, j) + costs.gap;
      const double left = at(i, j - 1) + costs.gap;
      at(i, j) = std::max({diag, up, left});
    }
  }

  AlignmentResult result;
  result.score = at(rows - 1, cols - 1);
  std::size_t i = rows - 1;
  std::size_t j = cols - 1;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = target[i - 1] == canonical[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? costs.match : costs.mismatch)) {
        result.columns.push_back({target[i - 1], canonical[j - 1], same ? AlignOp::match : AlignOp::substitution});
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + costs.gap) {
      result.columns.push_back({target[i - 1], kGap, AlignOp::deletion});
      --i;
      continue;
    }
    result.columns.push_back({kGap, canonical[j - 1], AlignOp::insertion});
    --j;
  }
  std::reverse(result.columns.begin(), result.columns.end());
  return result;
}

AlignmentResult nw_align(const PhonemeSequence& canonical, const PhonemeSequence& target,
                         const AlignCosts& costs) {
  if (target.kind == SequenceKind::recognized) throw Error("nw_align: target sequence has kind 'recognized'");
  validate(canonical);
  validate(target);
  for (int id : canonical.ids) {
    if (id >= kNumPhonemes) throw Error("nw_align: pronounced sequence contains special tokens");
  }
  return nw_align(canonical.view(), target.view(), costs);
}

double score_columns(std::span<const AlignColumn> columns, const AlignCosts& costs) {
  double score = 0.0;
  for (const auto& c : columns) {
    if (c.target == kGap || c.canonical == kGap) {
      score += costs.gap;
    } else {
      score += c.target == c.canonical ? costs.match : costs.mismatch;
    }
  }
  return score;
}

ApedLabels derive_labels(const AlignmentResult& alignment) {
  ApedLabels labels;
  bool pending_insertion = false;
  for (const auto& c : alignment.columns) {
    switch (c.op) {
      case AlignOp::insertion:
        pending_insertion = true;
        continue;
      case AlignOp::match:
        labels.error_states.push_back(pending_insertion ? 1 : 0);
        labels.aligned_canonical.push_back(c.canonical);
        labels.asr_mask.push_back(1);
        break;
      case AlignOp::substitution:
        labels.error_states.push_back(1);
        labels.aligned_canonical.push_back(c.canonical);
        labels.asr_mask.push_back(1);
        break;
      case AlignOp::deletion:
        labels.error_states.push_back(1);
        labels.aligned_canonical.push_back(kPad);
        labels.asr_mask.push_back(0);
        break;
    }
    pending_insertion = false;
  }
  if (pending_insertion && !labels.error_states.empty()) labels.error_states.back() = 1;
  labels.aligned_canonical.push_back(kEos);
  labels.asr_mask.push_back(1);
  return labels;
}

std::vector<int> target_of(const AlignmentResult& alignment) {
  std::vector<int> out;
  for (const auto& c : alignment.columns) {
    if (c.target != kGap) out.push_back(c.target);
  }
  return out;
}

std::vector<int> canonical_of(const AlignmentResult& alignment) {
  std::vector<int> out;
  for (const auto& c : alignment.columns) {
    if (c.canonical != kGap) out.push_back(c.canonical);
  }
  return out;
}

int edit_distance(std::span<const int> reference, std::span<const int> hypothesis) {
  std::vector<int> prev(hypothesis.size() + 1);
  std::vector<int> cur(hypothesis.size() + 1);
  for (std::size_t j = 0; j <= hypothesis.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= hypothesis.size(); ++j) {
      const int sub = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hypothesis.size()];
}

double per(std::span<const int> reference, std::span<const int> hypothesis) {
  if (reference.empty()) throw Error("per: reference sequence is empty");
  return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

std::string format_alignment(const AlignmentResult& alignment, const ApedLabels& labels,
                             const PhonemeInventory& inventory) {
  std::vector<std::string> target_row{"Target"};
  std::vector<std::string> pron_row{"Pronounced"};
  std::vector<std::string> state_row{"Error States"};

  // Insertion columns have no error slot of their own; they show "+" in the
  // state row and the following target column carries the error bit.
  std::size_t k = 0;
  for (const auto& c : alignment.columns) {
    target_row.push_back(c.target == kGap ? "-" : inventory.name(c.target));
    pron_row.push_back(c.canonical == kGap ? "-" : inventory.name(c.canonical));
    if (c.op == AlignOp::insertion) {
      state_row.push_back("+");
    } else {
      state_row.push_back(std::to_string(labels.error_states.at(k++)));
    }
  }

  std::vector<std::size_t> width(target_row.size());
  for (std::size_t i = 0; i < width.size(); ++i) {
    width[i] = std::max({target_row[i].size(), pron_row[i].size(), state_row[i].size()});
  }
  std::ostringstream out;
  for (const auto* row : {&target_row, &pron_row, &state_row}) {
    for (std::size_t i = 0; i < row->size(); ++i) {
      std::string cell = (*row)[i];
      if (i + 1 < row->size()) cell.resize(width[i], ' ');
      out << cell << (i + 1 < row->size() ? " " : "");
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace aped
