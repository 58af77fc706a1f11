#include "aped/phoneme.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "aped/error.hpp"

namespace aped {

namespace {

std::vector<std::string> arpabet_symbols() {
  return {"AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH", "EH", "ER", "EY", "F",
          "G",  "HH", "IH", "IY", "JH", "K",  "L",  "M",  "N",  "NG", "OW", "OY", "P",  "R",
          "S",  "SH", "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH", "<sos>", "<eos>",
          "<pad>"};
}

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

const PhonemeInventory& PhonemeInventory::arpabet() {
  static const PhonemeInventory inventory(arpabet_symbols());
  return inventory;
}

PhonemeInventory::PhonemeInventory(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (static_cast<int>(symbols_.size()) != kVocabSize) {
    throw Error("phoneme inventory must hold exactly " + std::to_string(kVocabSize) +
                " symbols, got " + std::to_string(symbols_.size()));
  }
  if (symbols_[kSos] != "<sos>" || symbols_[kEos] != "<eos>" || symbols_[kPad] != "<pad>") {
    throw Error("phoneme inventory must end with <sos>, <eos>, <pad>");
  }
  for (int i = 0; i < size(); ++i) {
    if (symbols_[i].empty() || split_ws(symbols_[i]).size() != 1) {
      throw Error("invalid symbol at index " + std::to_string(i));
    }
    if (!index_.emplace(symbols_[i], i).second) {
      throw Error("duplicate symbol '" + symbols_[i] + "' in phoneme inventory");
    }
  }
}

PhonemeInventory PhonemeInventory::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open inventory file " + path.string());
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    symbols.push_back(line);
  }
  return PhonemeInventory(std::move(symbols));
}

void PhonemeInventory::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write inventory file " + path.string());
  for (const auto& s : symbols_) out << s << '\n';
}

const std::string& PhonemeInventory::name(int id) const {
  if (id < 0 || id >= size()) {
    throw Error("phoneme index " + std::to_string(id) + " out of range");
  }
  return symbols_[id];
}

int PhonemeInventory::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

void validate(const PhonemeSequence& seq) {
  for (int id : seq.ids) {
    if (id < 0 || id >= kVocabSize) throw Error("phoneme index " + std::to_string(id) + " out of range");
  }
  if (seq.kind == SequenceKind::recognized) return;
  if (seq.ids.empty()) throw Error("phoneme sequence must be nonempty");
  for (int id : seq.ids) {
    if (id >= kNumPhonemes) throw Error("target/canonical sequences may not contain special tokens");
  }
}

AccentLabel::AccentLabel(int value) : id(value) {
  if (value < 0 || value >= kNumAccents) {
    throw Error("accent label " + std::to_string(value) + " outside [0," + std::to_string(kNumAccents) + ")");
  }
}

PhonemeSequence parse_phoneme_string(std::string_view text, const PhonemeInventory& inventory,
                                     SequenceKind kind) {
  const auto tokens = split_ws(text);
  if (tokens.empty()) throw Error("empty phoneme string");
  PhonemeSequence seq;
  seq.kind = kind;
  seq.ids.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = inventory.find(tokens[i]);
    if (id < 0) {
      throw Error("unknown phoneme '" + std::string(tokens[i]) + "' at position " + std::to_string(i + 1));
    }
    seq.ids.push_back(id);
  }
  validate(seq);
  return seq;
}

std::string render_phoneme_string(std::span<const int> ids, const PhonemeInventory& inventory) {
  if (ids.empty()) throw Error("cannot render an empty phoneme sequence");
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += inventory.name(ids[i]);
  }
  return out;
}

std::string render_bits(std::span<const int> bits) {
  std::string out;
  out.reserve(bits.size() * 2);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i) out += ',';
    out += bits[i] ? '1' : '0';
  }
  return out;
}

std::vector<int> parse_bits(std::string_view text) {
  std::vector<int> out;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "0") {
      out.push_back(0);
    } else if (item == "1") {
      out.push_back(1);
    } else {
      throw FormatError("invalid bit '" + item + "'");
    }
  }
  return out;
}

}  // namespace aped
