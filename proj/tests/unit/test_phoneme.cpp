#include <doctest.h>

#include <filesystem>

#include "aped/error.hpp"
#include "aped/phoneme.hpp"

using namespace aped;

TEST_CASE("arpabet inventory layout") {
  const auto& inv = PhonemeInventory::arpabet();
  CHECK(inv.size() == 42);
  CHECK(inv.name(0) == "AA");
  CHECK(inv.name(kSos) == "<sos>");
  CHECK(inv.name(kEos) == "<eos>");
  CHECK(inv.name(kPad) == "<pad>");
  CHECK(inv.find("ZH") == 38);
  CHECK(inv.find("XX") == -1);
  for (int i = 0; i + 1 < kNumPhonemes; ++i) CHECK(inv.name(i) < inv.name(i + 1));
}

TEST_CASE("parse and render round trip") {
  const auto seq = parse_phoneme_string("IH  F Y\tUW");
  CHECK(seq.size() == 4);
  CHECK(render_phoneme_string(seq) == "IH F Y UW");
}

TEST_CASE("unknown token reports its position") {
  try {
    parse_phoneme_string("IH F QQ UW");
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("QQ") != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
  }
}

TEST_CASE("sequence kind invariants") {
  CHECK_THROWS_AS(parse_phoneme_string("", PhonemeInventory::arpabet(), SequenceKind::target), Error);
  CHECK_NOTHROW(validate(PhonemeSequence{{}, SequenceKind::recognized}));
  CHECK_THROWS_AS(validate(PhonemeSequence{{kEos}, SequenceKind::target}), Error);
  CHECK_THROWS_AS(validate(PhonemeSequence{{45}, SequenceKind::canonical}), Error);
}

TEST_CASE("accent label range") {
  CHECK_NOTHROW(AccentLabel(5));
  CHECK_THROWS_AS(AccentLabel(6), Error);
  CHECK_THROWS_AS(AccentLabel(-1), Error);
}

TEST_CASE("bits round trip") {
  const ErrorStates e{0, 1, 1, 0};
  CHECK(parse_bits(render_bits(e)) == e);
  CHECK_THROWS_AS(parse_bits("0,2"), Error);
}

TEST_CASE("inventory file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "aped_inventory_test.txt";
  PhonemeInventory::arpabet().save(path);
  const auto inv = PhonemeInventory::load(path);
  CHECK(inv.symbols() == PhonemeInventory::arpabet().symbols());
  std::filesystem::remove(path);
}

TEST_CASE("inventory rejects duplicates and wrong sizes") {
  auto symbols = PhonemeInventory::arpabet().symbols();
  symbols[1] = symbols[0];
  CHECK_THROWS_AS(PhonemeInventory{symbols}, Error);
  symbols.pop_back();
  CHECK_THROWS_AS(PhonemeInventory{symbols}, Error);
}
