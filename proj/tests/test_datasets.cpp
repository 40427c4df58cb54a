#include <doctest.h>

#include "support.hpp"

using namespace vlmc;
using namespace vlmc::testing;
using nlohmann::json;

namespace {

InstanceRecord mc(std::string id, std::size_t gold = 0) {
  InstanceRecord r;
  r.id = std::move(id);
  r.image = {ImageRef::Kind::opaque_id, "img"};
  r.family = TaskFamily::VQA_MC;
  r.question = "what?";
  r.choices = {"a", "b", "c", "d"};
  r.gold_choice = gold;
  return r;
}

DatasetManifest manifest(std::string name, TaskFamily family, const std::filesystem::path& val) {
  DatasetManifest m;
  m.name = std::move(name);
  m.family = family;
  m.paths[Split::val] = val;
  return m;
}

}  // namespace

TEST_CASE("validate: clean, duplicate ids, missing gold answers") {
  CHECK(validate({mc("a"), mc("b")}).empty());

  const auto dup = validate({mc("a"), mc("b"), mc("a")});
  REQUIRE(dup.size() == 1);
  CHECK(dup[0].id == "a");
  CHECK(dup[0].row == 2);
  CHECK(dup[0].message.find("rows 0 and 2") != std::string::npos);

  InstanceRecord da;
  da.id = "d";
  da.image = {ImageRef::Kind::opaque_id, "img"};
  da.family = TaskFamily::VQA_DA;
  da.question = "q";
  CHECK(validate({da}).size() == 1);
  da.gold_direct_answers = {"x"};
  CHECK(validate({da}).empty());
}

TEST_CASE("validate: record invariants") {
  CHECK(validate({mc("a", 5)}).size() == 1);
  auto one_choice = mc("a");
  one_choice.choices = {"a"};
  CHECK_FALSE(validate({one_choice}).empty());
  auto dup_choice = mc("a");
  dup_choice.choices = {"Red", "red.", "blue"};
  CHECK(validate({dup_choice}).size() == 1);
  auto no_gold = mc("a");
  no_gold.gold_choice.reset();
  CHECK(validate({no_gold}).size() == 1);
  auto ent = mc("e");
  ent.family = TaskFamily::ENTAILMENT;
  ent.choices = {"yes", "no"};
  ent.gold_choice = 0;
  CHECK(validate({ent}).size() == 1);
  auto empty_image = mc("i");
  empty_image.image.value.clear();
  CHECK(validate({empty_image}).size() == 1);
}

TEST_CASE("ingest canonical JSONL preserves order and round trips") {
  TempDir dir;
  const std::vector<InstanceRecord> recs{mc("z"), mc("a", 3), mc("m", 1)};
  write_canonical_jsonl(dir / "val.jsonl", recs);
  const auto data = ingest(manifest("custom", TaskFamily::VQA_MC, dir / "val.jsonl"));
  CHECK(data.split(Split::val) == recs);
  CHECK(data.split(Split::train).empty());

  // ingest . serialize . ingest is a fixpoint.
  write_canonical_jsonl(dir / "again.jsonl", data.split(Split::val));
  CHECK(slurp(dir / "again.jsonl") == slurp(dir / "val.jsonl"));
  CHECK(ingest(manifest("custom", TaskFamily::VQA_MC, dir / "again.jsonl")).split(Split::val) == recs);
}

TEST_CASE("ingest: strict rejects, lenient drops") {
  TempDir dir;
  write_canonical_jsonl(dir / "val.jsonl", {mc("a"), mc("b", 5), mc("c")});
  const auto m = manifest("custom", TaskFamily::VQA_MC, dir / "val.jsonl");
  try {
    ingest(m);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.ids() == std::vector<std::string>{"b"});
  }
  const auto lenient = ingest(m, IngestOptions{false});
  CHECK(lenient.split(Split::val).size() == 2);
  REQUIRE(lenient.rejected.size() == 1);
  CHECK(lenient.rejected[0].id == "b");
}

TEST_CASE("ingest: parse errors carry file and line") {
  TempDir dir;
  spit(dir / "val.jsonl", to_canonical_jsonl({mc("a")}) + "\n{broken\n");
  try {
    ingest(manifest("custom", TaskFamily::VQA_MC, dir / "val.jsonl"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.file() == (dir / "val.jsonl").string());
  }
  CHECK_THROWS_AS(ingest(manifest("custom", TaskFamily::VQA_MC, dir / "missing.jsonl")), UsageError);
  CHECK_THROWS_AS(ingest(manifest("custom", TaskFamily::VQA_DA, dir / "val.jsonl")), Error);
}

TEST_CASE("A-OKVQA adapter") {
  TempDir dir;
  spit(dir / "val.json", R"([{"question_id":"q1","image_id":42,"question":"What is it?",
    "choices":["a","b","c","d"],"correct_choice_idx":2,"direct_answers":["c","c"],"rationales":["r"]}])");
  const auto data = ingest(manifest("aokvqa", TaskFamily::VQA_MC, dir / "val.json"));
  const auto& r = data.split(Split::val).at(0);
  CHECK(r.id == "q1");
  CHECK(r.family == TaskFamily::VQA_MC);
  CHECK(r.image.value == "000000000042.jpg");
  CHECK(r.gold_choice == 2);
  CHECK(r.choices.size() == 4);
  CHECK(r.gold_direct_answers == std::vector<std::string>{"c", "c"});

  spit(dir / "bad.json", R"([{"question_id":"q1","image_id":1,"question":"q","choices":["a","b","c","d"],
    "correct_choice_idx":5}])");
  CHECK_THROWS_AS(ingest(manifest("aokvqa", TaskFamily::VQA_MC, dir / "bad.json")), ValidationError);
}

TEST_CASE("OK-VQA, e-SNLI-VE, VSR, GQA and CLEVR adapters") {
  TempDir dir;
  spit(dir / "okvqa.json", R"([{"question_id":7,"image_id":9,"question":"q?",
    "answers":[{"answer":"cat","answer_id":1},{"answer":"cat","answer_id":2}]}])");
  auto ok = ingest(manifest("okvqa", TaskFamily::VQA_DA, dir / "okvqa.json")).split(Split::val).at(0);
  CHECK(ok.id == "7");
  CHECK(ok.gold_direct_answers == std::vector<std::string>{"cat", "cat"});

  spit(dir / "snli.jsonl",
       "{\"pairID\":\"p1\",\"Flickr30kID\":\"123\",\"hypothesis\":\"a dog runs\",\"gold_label\":\"neutral\"}\n"
       "{\"pairID\":\"p2\",\"Flickr30kID\":\"124.jpg\",\"hypothesis\":\"a cat\",\"gold_label\":\"contradiction\"}\n");
  auto snli = ingest(manifest("esnlive", TaskFamily::ENTAILMENT, dir / "snli.jsonl")).split(Split::val);
  CHECK(snli[0].choices == std::vector<std::string>{"yes", "no", "maybe"});
  CHECK(snli[0].gold_choice == 2);
  CHECK(snli[0].image.value == "123.jpg");
  CHECK(snli[1].gold_choice == 1);
  CHECK(snli[1].image.value == "124.jpg");

  spit(dir / "vsr.jsonl", "{\"image\":\"x.jpg\",\"caption\":\"the bananas are in a bowl\",\"label\":1}\n"
                          "{\"image\":\"y.jpg\",\"caption\":\"the cat is under the car\",\"label\":0}\n");
  auto vsr = ingest(manifest("vsr", TaskFamily::SPATIAL, dir / "vsr.jsonl")).split(Split::val);
  CHECK(vsr[0].choices == std::vector<std::string>{"yes", "no"});
  CHECK(vsr[0].gold_choice == 0);
  CHECK(vsr[1].gold_choice == 1);
  CHECK(vsr[0].id != vsr[1].id);

  spit(dir / "gqa.json", R"({"g1":{"imageId":"n1","question":"what color?","answer":"red"}})");
  auto gqa = ingest(manifest("gqa", TaskFamily::VQA_DA, dir / "gqa.json")).split(Split::val).at(0);
  CHECK(gqa.id == "g1");
  CHECK(gqa.image.value == "n1.jpg");

  spit(dir / "clevr.json", R"({"questions":[{"question_index":3,"image_filename":"c.png","question":"how many?","answer":"2"}]})");
  auto clevr = ingest(manifest("clevr", TaskFamily::VQA_DA, dir / "clevr.json")).split(Split::val).at(0);
  CHECK(clevr.id == "val-3");
  CHECK(clevr.gold_direct_answers == std::vector<std::string>{"2"});
}

TEST_CASE("fixed choices are forced with gold re-pointed by text") {
  TempDir dir;
  InstanceRecord r;
  r.id = "e1";
  r.image = {ImageRef::Kind::opaque_id, "img"};
  r.family = TaskFamily::ENTAILMENT;
  r.question = "premise";
  r.choices = {"Maybe", "Yes", "No"};
  r.gold_choice = 1;
  write_canonical_jsonl(dir / "val.jsonl", {r});
  const auto got = ingest(manifest("custom", TaskFamily::ENTAILMENT, dir / "val.jsonl")).split(Split::val).at(0);
  CHECK(got.choices == std::vector<std::string>{"yes", "no", "maybe"});
  CHECK(got.gold_choice == 0);
}

TEST_CASE("image_root prefixes references") {
  TempDir dir;
  spit(dir / "val.json", R"([{"question_id":"q","image_id":"a.jpg","question":"q","choices":["x","y"],"correct_choice_idx":0}])");
  auto m = manifest("aokvqa", TaskFamily::VQA_MC, dir / "val.json");
  m.image_root = "https://images.example/coco";
  auto r = ingest(m).split(Split::val).at(0);
  CHECK(r.image.kind == ImageRef::Kind::url);
  CHECK(r.image.value == "https://images.example/coco/a.jpg");
  m.image_root = "/data/coco/";
  r = ingest(m).split(Split::val).at(0);
  CHECK(r.image.kind == ImageRef::Kind::path);
  CHECK(r.image.value == "/data/coco/a.jpg");
}

TEST_CASE("checked-in fixtures ingest to the mock sidecar") {
  const auto sidecar = read_canonical_jsonl(fixtures() / "mock/sidecar.jsonl");
  std::vector<InstanceRecord> loaded;
  for (const auto& m : {aokvqa_manifest(), entailment_manifest(), okvqa_manifest()}) {
    const auto data = ingest(m);
    for (auto s : {Split::val, Split::train}) {
      for (const auto& r : data.split(s)) loaded.push_back(r);
    }
  }
  auto by_id = [](std::vector<InstanceRecord> v) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return v;
  };
  CHECK(by_id(loaded) == by_id(sidecar));
  CHECK(ingest(aokvqa_manifest()).split(Split::val).size() == 50);
  CHECK(ingest(aokvqa_manifest()).split(Split::train).size() == 100);
}

TEST_CASE("manifest JSON resolves relative paths") {
  const auto m = manifest_from_json(json{{"name", "aokvqa"}, {"family", "VQA_MC"}, {"paths", {{"val", "v.json"}}}},
                                    "/base");
  CHECK(m.paths.at(Split::val) == std::filesystem::path("/base/v.json"));
  CHECK_THROWS_AS(manifest_from_json(json{{"name", "imagenet"}, {"family", "VQA_MC"}, {"paths", json::object()}}),
                  UsageError);
}
