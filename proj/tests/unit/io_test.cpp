#include <doctest.h>

#include <cstring>
#include <fstream>
#include <functional>

#include "mizero/error.hpp"
#include "mizero/io.hpp"

#include "test_util.hpp"

using namespace mizero;
using testutil::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("bag round trip is bit exact") {
  TempDir dir("bag");
  SlideBag bag;
  bag.slide_id = "trip";
  bag.embeddings = MatrixF(3, 4);
  SplitMix64 rng(5);
  for (float& x : bag.embeddings.storage()) {
    x = static_cast<float>(rng.next_gaussian());
  }
  auto& coords = bag.coords.emplace();
  coords = {{0, 0}, {1, 0}, {-3, 7}};

  const auto path = dir.file("trip.mizb");
  write_bag(bag, path);
  const SlideBag back = read_bag(path);
  CHECK(back.embeddings == bag.embeddings);
  CHECK(*back.coords == *bag.coords);
  CHECK(back.slide_id == "trip");

  // writing the read-back bag reproduces the file byte for byte
  const auto path2 = dir.file("trip2.mizb");
  write_bag(back, path2);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("bag encoding matches the documented byte layout") {
  TempDir dir("layout");
  SlideBag bag;
  bag.slide_id = "tiny";
  bag.embeddings = MatrixF(2, 2);
  bag.embeddings(0, 0) = 1.0f;
  bag.embeddings(1, 1) = 1.0f;

  const auto path = dir.file("tiny.mizb");
  write_bag(bag, path);
  const std::string bytes = slurp(path);

  // header: magic, version=1, flags=0 (no coords), N=2 (u64), D=2 (u32)
  const unsigned char expected_header[] = {
      'M', 'I', 'Z', 'B', 1, 0, 0, 0, 0, 0, 0, 0,
      2,   0,   0,   0,   0, 0, 0, 0, 2, 0, 0, 0};
  REQUIRE(bytes.size() == 24 + 16);
  CHECK(std::memcmp(bytes.data(), expected_header, 24) == 0);
  // payload: 1.0f, 0, 0, 1.0f little-endian
  const unsigned char expected_payload[] = {0, 0, 0x80, 0x3F, 0, 0, 0, 0,
                                            0, 0, 0,    0,    0, 0, 0x80, 0x3F};
  CHECK(std::memcmp(bytes.data() + 24, expected_payload, 16) == 0);
}

TEST_CASE("malformed bag files fail with the designated errors") {
  TempDir dir("bad");

  SUBCASE("bad magic") {
    spit(dir.file("x.mizb"), std::string("XXXX") + std::string(20, '\0'));
    CHECK(code_of([&] { read_bag(dir.file("x.mizb")); }) ==
          ErrorCode::BadMagic);
  }

  SUBCASE("unsupported version") {
    std::string bytes = "MIZB";
    bytes += std::string(1, '\x02') + std::string(19, '\0');
    spit(dir.file("v.mizb"), bytes);
    CHECK(code_of([&] { read_bag(dir.file("v.mizb")); }) ==
          ErrorCode::UnsupportedVersion);
  }

  SUBCASE("truncated payload") {
    SlideBag bag;
    bag.slide_id = "t";
    bag.embeddings = MatrixF(4, 4, 1.0f);
    write_bag(bag, dir.file("t.mizb"));
    std::string bytes = slurp(dir.file("t.mizb"));
    bytes.resize(bytes.size() - 7);
    spit(dir.file("t.mizb"), bytes);
    CHECK(code_of([&] { read_bag(dir.file("t.mizb")); }) ==
          ErrorCode::TruncatedFile);
  }

  SUBCASE("zero dimensions") {
    std::string bytes = "MIZB";
    bytes += std::string(1, '\x01') + std::string(3, '\0');  // version 1
    bytes += std::string(4, '\0');                           // flags
    bytes += std::string(8, '\0');                           // N = 0
    bytes += std::string(1, '\x04') + std::string(3, '\0');  // D = 4
    spit(dir.file("z.mizb"), bytes);
    CHECK(code_of([&] { read_bag(dir.file("z.mizb")); }) ==
          ErrorCode::DimensionMismatch);
  }

  SUBCASE("header demanding more than the cap") {
    std::string bytes = "MIZB";
    bytes += std::string(1, '\x01') + std::string(3, '\0');
    bytes += std::string(4, '\0');
    bytes += std::string(8, '\xFF');                         // N huge
    bytes += std::string(1, '\x04') + std::string(3, '\0');
    spit(dir.file("cap.mizb"), bytes);
    CHECK(code_of([&] { read_bag(dir.file("cap.mizb")); }) ==
          ErrorCode::AllocationCap);
  }

  SUBCASE("missing file") {
    CHECK(code_of([&] { read_bag(dir.file("nope.mizb")); }) ==
          ErrorCode::FileNotFound);
  }
}

TEST_CASE("paired set round trip and malformed header") {
  TempDir dir("pairs");
  PairedEmbeddingSet pairs;
  pairs.image = MatrixF(4, 3);
  pairs.text = MatrixF(4, 2);
  SplitMix64 rng(11);
  for (float& x : pairs.image.storage()) {
    x = static_cast<float>(rng.next_gaussian());
  }
  for (float& x : pairs.text.storage()) {
    x = static_cast<float>(rng.next_gaussian());
  }

  const auto path = dir.file("p.mizp");
  write_paired(pairs, path);
  const auto back = read_paired(path);
  CHECK(back.image == pairs.image);
  CHECK(back.text == pairs.text);

  const auto path2 = dir.file("p2.mizp");
  write_paired(back, path2);
  CHECK(slurp(path) == slurp(path2));

  spit(dir.file("bad.mizp"), "MIZQ....");
  CHECK(code_of([&] { read_paired(dir.file("bad.mizp")); }) ==
        ErrorCode::BadMagic);
}

TEST_CASE("text table parses, dedups and rejects conflicts") {
  TempDir dir("table");

  SUBCASE("two records of one dimension") {
    spit(dir.file("t.jsonl"),
         R"({"text": "alpha", "embedding": [1, 0, 0, 0]})"
         "\n"
         R"({"text": "beta", "embedding": [0, 1, 0, 0]})"
         "\n");
    const auto table = read_text_table(dir.file("t.jsonl"));
    CHECK(table.size() == 2);
    CHECK(table.dim == 4);
    REQUIRE(table.find("alpha") != nullptr);
    CHECK((*table.find("alpha"))[0] == 1.0f);
    CHECK(table.find("gamma") == nullptr);
  }

  SUBCASE("ragged dimensions") {
    spit(dir.file("r.jsonl"),
         R"({"text": "alpha", "embedding": [1, 0, 0, 0]})"
         "\n"
         R"({"text": "beta", "embedding": [0, 1, 0, 0, 0]})"
         "\n");
    CHECK(code_of([&] { read_text_table(dir.file("r.jsonl")); }) ==
          ErrorCode::RaggedDimensions);
  }

  SUBCASE("identical duplicate accepted") {
    spit(dir.file("d.jsonl"),
         R"({"text": "alpha", "embedding": [0.25, -1.5]})"
         "\n"
         R"({"text": "alpha", "embedding": [0.25, -1.5]})"
         "\n");
    const auto table = read_text_table(dir.file("d.jsonl"));
    CHECK(table.size() == 1);
  }

  SUBCASE("conflicting duplicate rejected") {
    spit(dir.file("c.jsonl"),
         R"({"text": "alpha", "embedding": [0.25, -1.5]})"
         "\n"
         R"({"text": "alpha", "embedding": [0.25, -1.4]})"
         "\n");
    CHECK(code_of([&] { read_text_table(dir.file("c.jsonl")); }) ==
          ErrorCode::DuplicateText);
  }

  SUBCASE("round trip through write") {
    TextEmbeddingTable table;
    table.dim = 3;
    table.entries["one"] = {0.1f, 0.2f, 0.3f};
    table.entries["two"] = {-1.0f, 0.0f, 7.0f};
    write_text_table(table, dir.file("w.jsonl"));
    const auto back = read_text_table(dir.file("w.jsonl"));
    CHECK(back.entries == table.entries);
  }
}

TEST_CASE("classifier document round trips and re-checks rows") {
  TempDir dir("clf");
  ZeroShotClassifier clf;
  clf.class_labels = {"first", "second"};
  clf.weights = testutil::random_unit_rows(2, 5, 77);
  clf.provenance = {{{"name a"}, {"TPL CLASSNAME."}},
                    {{"name b"}, {"TPL CLASSNAME."}}};
  clf.trial_seed = 99;

  const auto path = dir.file("c.json");
  write_classifier(clf, path);
  const auto back = read_classifier(path);
  CHECK(back.weights == clf.weights);
  CHECK(back.class_labels == clf.class_labels);
  CHECK(back.provenance == clf.provenance);
  CHECK(back.trial_seed == clf.trial_seed);

  const auto path2 = dir.file("c2.json");
  write_classifier(back, path2);
  CHECK(slurp(path) == slurp(path2));

  SUBCASE("non-unit row rejected on read") {
    std::string text = slurp(path);
    // scale the first weight row by editing the document through the lib
    ZeroShotClassifier bad = clf;
    for (auto& x : bad.weights.storage()) x *= 1.001f;
    CHECK(code_of([&] { write_classifier(bad, dir.file("bad.json")); }) ==
          ErrorCode::NonUnitRow);
  }

  SUBCASE("wrong document type") {
    spit(dir.file("notclf.json"), R"({"format": "something-else"})");
    CHECK(code_of([&] { read_classifier(dir.file("notclf.json")); }) ==
          ErrorCode::BadMagic);
  }
}

TEST_CASE("manifest round trips and checks referenced paths") {
  TempDir dir("manifest");
  SlideBag bag;
  bag.slide_id = "s0";
  bag.embeddings = MatrixF(1, 2, 1.0f);
  std::filesystem::create_directories(dir.file("bags"));
  write_bag(bag, dir.file("bags/s0.mizb"));

  DatasetManifest manifest;
  manifest.classes = {"x", "y"};
  manifest.slides = {{"s0", "bags/s0.mizb", 1}};
  write_manifest(manifest, dir.file("m.json"));

  const auto back = read_manifest(dir.file("m.json"));
  CHECK(back.classes == manifest.classes);
  CHECK(back.slides.size() == 1);
  CHECK(back.slides[0].label == 1);

  SUBCASE("missing referenced bag") {
    manifest.slides.push_back({"s1", "bags/s1.mizb", 0});
    write_manifest(manifest, dir.file("m2.json"));
    CHECK(code_of([&] { read_manifest(dir.file("m2.json")); }) ==
          ErrorCode::FileNotFound);
  }

  SUBCASE("duplicate slide ids") {
    manifest.slides.push_back({"s0", "bags/s0.mizb", 0});
    CHECK(code_of([&] { write_manifest(manifest, dir.file("m3.json")); }) ==
          ErrorCode::DuplicateSlideId);
  }

  SUBCASE("label out of range") {
    manifest.slides[0].label = 2;
    CHECK(code_of([&] { write_manifest(manifest, dir.file("m4.json")); }) ==
          ErrorCode::InvalidLabel);
  }
}
