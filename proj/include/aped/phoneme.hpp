#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aped {

inline constexpr int kNumPhonemes = 39;
inline constexpr int kSos = 39;
inline constexpr int kEos = 40;
inline constexpr int kPad = 41;
inline constexpr int kVocabSize = 42;
inline constexpr int kNumAccents = 6;

/// The 42-symbol output space: 39 ARPAbet phonemes (no stress markers) in
/// alphabetical order, followed by <sos>=39, <eos>=40, <pad>=41.
class PhonemeInventory {
 public:
  /// The built-in CMU ARPAbet inventory.
  static const PhonemeInventory& arpabet();

  /// Builds an inventory from symbols in index order. Requires exactly 42
  /// unique names whose last three are <sos>, <eos>, <pad>.
  explicit PhonemeInventory(std::vector<std::string> symbols);

  /// One symbol per line, in index order.
  static PhonemeInventory load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& name(int id) const;
  /// -1 when the token is unknown.
  int find(std::string_view token) const;
  bool is_phoneme(int id) const { return id >= 0 && id < kNumPhonemes; }

  const std::vector<std::string>& symbols() const { return symbols_; }

  bool operator==(const PhonemeInventory& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

enum class SequenceKind { target, canonical, recognized };

/// Inventory indices. Target and canonical sequences are nonempty and hold
/// phonemes only; recognized sequences may be empty (a decoder can emit EOS
/// immediately).
struct PhonemeSequence {
  std::vector<int> ids;
  SequenceKind kind = SequenceKind::target;

  int size() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }
  std::span<const int> view() const { return ids; }
  bool operator==(const PhonemeSequence&) const = default;
};

/// Throws aped::Error when the sequence breaks its kind's invariants.
void validate(const PhonemeSequence& seq);

/// Error states over the k target positions; 1 = mispronounced.
using ErrorStates = std::vector<int>;

struct AccentLabel {
  int id = 0;
  explicit AccentLabel(int value);
  AccentLabel() = default;
  bool operator==(const AccentLabel&) const = default;
};

/// Parses space-separated token names. Unknown tokens are rejected with a
/// message naming the token and its 1-based position.
PhonemeSequence parse_phoneme_string(std::string_view text,
                                     const PhonemeInventory& inventory = PhonemeInventory::arpabet(),
                                     SequenceKind kind = SequenceKind::target);

std::string render_phoneme_string(std::span<const int> ids,
                                  const PhonemeInventory& inventory = PhonemeInventory::arpabet());
inline std::string render_phoneme_string(const PhonemeSequence& seq,
                                         const PhonemeInventory& inventory = PhonemeInventory::arpabet()) {
  return render_phoneme_string(seq.view(), inventory);
}

/// "0,1,0" style bit lists used by the manifest.
std::string render_bits(std::span<const int> bits);
std::vector<int> parse_bits(std::string_view text);

}  // namespace aped
