#include <doctest.h>

#include <set>

#include "adopt/sha256.hpp"
#include "adopt/util.hpp"

using namespace adopt;

TEST_SUITE("util") {
  TEST_CASE("sha256 matches the FIPS 180-2 vectors") {
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // Block-boundary lengths (55/56/64 bytes) exercise the padding paths.
    CHECK(sha256_hex(std::string(55, 'a')) ==
          "9f4390f8d30c2dd92ec9f095b65e2b9ae9b0a925a5258e241c9f1e910f734318");
    CHECK(sha256_hex(std::string(56, 'a')) ==
          "b35439a4ac6f0948b6d6f9e3c6af0f5f590ce20f1bde7090ef7970686ec6738a");
    CHECK(sha256_hex(std::string(64, 'a')) ==
          "ffe054fe7ae0cb6dc65c3af9b61d5209f439851db43d0ba5997337df154668eb");
  }

  TEST_CASE("text normalization and tokenization") {
    CHECK(normalize_text("  The Answer,  is: PARIS! ") == "the answer is paris");
    CHECK(split_tokens("a  b\tc\n").size() == 3);
    CHECK(split_tokens("").empty());
  }

  TEST_CASE("jaccard distance") {
    CHECK(jaccard_distance("a b c", "a b c") == doctest::Approx(0.0));
    CHECK(jaccard_distance("a b", "c d") == doctest::Approx(1.0));
    CHECK(jaccard_distance("a b", "b c") == doctest::Approx(2.0 / 3.0));
    CHECK(jaccard_distance("", "") == doctest::Approx(0.0));
  }

  TEST_CASE("placeholder filling and extraction") {
    CHECK(fill_placeholders("x={a}, y={b}, z={a}", {{"a", "1"}, {"b", "2"}}) ==
          "x=1, y=2, z=1");
    CHECK(fill_placeholders("{unknown} stays", {}) == "{unknown} stays");
    auto names = placeholder_names("{a} {b_c} {a} {not closed");
    REQUIRE(names.size() == 2);
    CHECK(names[0] == "a");
    CHECK(names[1] == "b_c");
  }

  TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
      CHECK(a.next_u64() == b.next_u64());
    }
    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
      double u = r.next_unit();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      CHECK(r.next_index(10) < 10);
    }
    auto picks = r.sample_without_replacement(10, 10);
    std::set<std::size_t> unique(picks.begin(), picks.end());
    CHECK(unique.size() == 10);
  }
}
