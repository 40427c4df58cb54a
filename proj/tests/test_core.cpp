#include <doctest.h>

#include <random>

#include "vlmc/core.hpp"

using namespace vlmc;

TEST_CASE("normalize_text examples") {
  CHECK(normalize_text("  Grass. ").value() == "grass");
  CHECK(normalize_text("no  parking").value() == "no parking");
  CHECK(normalize_text("Riding a HORSE").value() == "riding a horse");
  CHECK(normalize_text("").empty());
  CHECK(normalize_text(" \t\n ").empty());
  CHECK(normalize_text("...").empty());
  // Inner punctuation and articles survive.
  CHECK(normalize_text("The U.S. flag.").value() == "the u.s. flag");
}

TEST_CASE("normalize_text is idempotent and never lengthens") {
  std::mt19937_64 rng(11);
  const std::string alphabet = "aB .\t\nZ,x..  Q";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    const auto len = rng() % 24;
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    const auto once = normalize_text(s);
    CHECK(normalize_text(once.value()) == once);
    CHECK(once.value().size() <= s.size());
    CHECK(once.value().find("  ") == std::string::npos);
  }
}

TEST_CASE("fixed choices per family") {
  CHECK(fixed_choices(TaskFamily::ENTAILMENT) == std::vector<std::string>{"yes", "no", "maybe"});
  CHECK(fixed_choices(TaskFamily::SPATIAL) == std::vector<std::string>{"yes", "no"});
  CHECK(fixed_choices(TaskFamily::VQA_MC).empty());
  CHECK(is_choice_family(TaskFamily::VQA_MC));
  CHECK_FALSE(is_choice_family(TaskFamily::VQA_DA));
}

TEST_CASE("enum text round trips") {
  for (auto f : {TaskFamily::VQA_MC, TaskFamily::VQA_DA, TaskFamily::ENTAILMENT, TaskFamily::SPATIAL}) {
    CHECK(parse_task_family(to_string(f)) == f);
  }
  for (auto s : {Split::train, Split::val, Split::test}) CHECK(parse_split(to_string(s)) == s);
  CHECK_THROWS_AS(parse_task_family("VQA"), UsageError);
  CHECK_THROWS_AS(parse_split("dev"), UsageError);
}

TEST_CASE("gold_text") {
  InstanceRecord r;
  r.family = TaskFamily::VQA_MC;
  r.choices = {"red", "blue"};
  r.gold_choice = 1;
  CHECK(gold_text(r) == "blue");

  InstanceRecord d;
  d.family = TaskFamily::VQA_DA;
  d.gold_direct_answers = {"cat", "dog", "dog", "cat", "bird"};
  CHECK(gold_text(d) == "cat");  // tie goes to first occurrence
  d.gold_direct_answers = {"cat", "dog", "dog"};
  CHECK(gold_text(d) == "dog");
  d.gold_direct_answers.clear();
  CHECK(gold_text(d).empty());
}

TEST_CASE("InstanceRecord JSON round trip") {
  InstanceRecord r;
  r.id = "q1";
  r.image = {ImageRef::Kind::url, "http://example.org/a.jpg"};
  r.family = TaskFamily::ENTAILMENT;
  r.question = "the truck is away from the elephant";
  r.choices = {"yes", "no", "maybe"};
  r.gold_choice = 2;
  r.split = Split::train;
  const nlohmann::json j = r;
  CHECK(j.at("gold_choice") == 2);
  CHECK(j.at("image").at("kind") == "url");
  CHECK(j.get<InstanceRecord>() == r);

  r.gold_choice.reset();
  r.gold_direct_answers = {"x", "x", "y"};
  const nlohmann::json k = r;
  CHECK(k.at("gold_choice").is_null());
  CHECK(k.get<InstanceRecord>() == r);
}

TEST_CASE("ExpertOutput JSON and degeneracy") {
  const ExpertOutput o{"OFA", "a man riding a horse", "horse"};
  const nlohmann::json j = o;
  CHECK(j.at("expert") == "OFA");
  CHECK(j.get<ExpertOutput>() == o);
  CHECK_FALSE(is_degenerate(o));
  CHECK(is_degenerate(ExpertOutput{"OFA", " . ", "horse"}));
  CHECK(is_degenerate(ExpertOutput{"OFA", "cap", ""}));
}
