#pragma once

#include <span>
#include <string>
#include <vector>

#include "aped/phoneme.hpp"

namespace aped {

inline constexpr int kGap = -1;

struct AlignCosts {
  double match = 1.0;
  double mismatch = -1.0;
  double gap = -1.0;

  /// Requires match > mismatch and match > gap.
  void validate() const;
};

enum class AlignOp { match, substitution, deletion, insertion };

const char* to_string(AlignOp op);

/// One alignment column. A deletion has canonical == kGap (the target phoneme
/// was not pronounced); an insertion has target == kGap.
struct AlignColumn {
  int target = kGap;
  int canonical = kGap;
  AlignOp op = AlignOp::match;
  bool operator==(const AlignColumn&) const = default;
};

struct AlignmentResult {
  std::vector<AlignColumn> columns;
  double score = 0.0;
};

/// Needleman-Wunsch global alignment of a pronounced (canonical or
/// recognized) sequence against the target sequence.
///
/// The DP table is indexed [target][canonical]. Traceback prefers diagonal
/// (match/substitution), then up (deletion), then left (insertion).
AlignmentResult nw_align(std::span<const int> canonical, std::span<const int> target,
                         const AlignCosts& costs = {});

/// Typed overload: rejects sequences that break their kind's invariants. A
/// recognized sequence may be empty, in which case every target phoneme is
/// aligned as a deletion.
AlignmentResult nw_align(const PhonemeSequence& canonical, const PhonemeSequence& target,
                         const AlignCosts& costs = {});

/// Recomputes the score of a set of columns under the given costs.
double score_columns(std::span<const AlignColumn> columns, const AlignCosts& costs);

struct ApedLabels {
  ErrorStates error_states;            // k
  std::vector<int> aligned_canonical;  // k + 1, ends with <eos>
  std::vector<int> asr_mask;           // k + 1, last element 1
  bool operator==(const ApedLabels&) const = default;
};

/// Folds an alignment onto the k target positions.
///
///   match        -> error 0, canonical phoneme copied
///   substitution -> error 1, canonical phoneme copied
///   deletion     -> error 1, <pad> with asr_mask 0
///   insertion    -> dropped; the next target position (or the last one, for
///                   a trailing insertion) is marked as an error
ApedLabels derive_labels(const AlignmentResult& alignment);

/// Target positions, in order, recovered from an alignment.
std::vector<int> target_of(const AlignmentResult& alignment);
std::vector<int> canonical_of(const AlignmentResult& alignment);

/// Levenshtein distance with unit costs.
int edit_distance(std::span<const int> reference, std::span<const int> hypothesis);

/// Phone error rate: edit distance over reference length.
double per(std::span<const int> reference, std::span<const int> hypothesis);

/// Three-row text rendering (Target / Pronounced / Error States) with
/// columns padded to a common width. Deleted slots print as "-".
std::string format_alignment(const AlignmentResult& alignment, const ApedLabels& labels,
                             const PhonemeInventory& inventory = PhonemeInventory::arpabet());

}  // namespace aped
