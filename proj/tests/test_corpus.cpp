#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "support/test_support.hpp"

namespace ls = logicsolver;
using ls::Rational;

namespace {

std::vector<ls::corpus::Problem> generated(std::size_t count, std::uint64_t seed) {
  ls::corpus::SynthConfig cfg;
  cfg.count = count;
  return ls::corpus::synth_generate(testsupport::kb(), cfg, seed);
}

std::vector<std::string> ids(const std::vector<ls::corpus::Problem>& ps) {
  std::vector<std::string> out;
  for (const auto& p : ps) out.push_back(p.id);
  return out;
}

}  // namespace

TEST(MapNumbers, RepeatedLiteralsGetDistinctSlots) {
  auto m = ls::corpus::map_numbers("buy 2 pens at 2 yuan");
  EXPECT_EQ(m.tokens, (std::vector<std::string>{"buy", "N0", "pens", "at", "N1", "yuan"}));
  EXPECT_EQ(m.numbers, (std::vector<Rational>{2, 2}));
}

TEST(MapNumbers, Percent) {
  auto m = ls::corpus::map_numbers("25% of 80");
  EXPECT_EQ(m.numbers, (std::vector<Rational>{Rational(1, 4), 80}));
  EXPECT_EQ(m.tokens.front(), "N0");
}

TEST(MapNumbers, NoNumbers) { EXPECT_TRUE(ls::corpus::map_numbers("how many apples are left ?").numbers.empty()); }

TEST(MapNumbers, DecimalsFractionsAndPunctuation) {
  auto m = ls::corpus::map_numbers("Tom ran 3.5 km in 1/4 hour, then 0.05 more.");
  EXPECT_EQ(m.numbers, (std::vector<Rational>{Rational(7, 2), Rational(1, 4), Rational(1, 20)}));
  EXPECT_EQ(m.tokens.back(), ".");
  EXPECT_EQ(m.tokens.front(), "tom");
}

TEST(MapNumbers, CountMatchesLiterals) {
  ls::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::string text;
    std::size_t literals = 0;
    for (int w = 0; w < 12; ++w) {
      if (rng.bernoulli(0.4)) {
        text += std::to_string(rng.integer(0, 999));
        if (rng.bernoulli(0.3)) text += "." + std::to_string(rng.integer(1, 99));
        ++literals;
      } else {
        text += "word";
      }
      text += ' ';
    }
    EXPECT_EQ(ls::corpus::map_numbers(text).numbers.size(), literals) << text;
  }
}

TEST(LoadCorpus, TenLineFixture) {
  auto ps = ls::corpus::load_corpus(testsupport::fixture("ten.jsonl"), &testsupport::kb());
  EXPECT_EQ(ps.size(), 10u);
  for (const auto& p : ps) EXPECT_TRUE(p.solution_set.has_value());
}

TEST(LoadCorpus, WrongAnswerIsAnswerMismatch) {
  auto dir = testsupport::temp_dir("corpus-mismatch");
  const std::string path = (dir / "c.jsonl").string();
  std::ofstream(path) << R"({"id":"a","text":"N0 and N1","numbers":["2","3"],"prefix":"* N0 N1","answer":"7","logic":[0]})"
                      << "\n";
  try {
    ls::corpus::load_corpus(path);
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::AnswerMismatch);
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
  }
}

TEST(LoadCorpus, TruncatedLineIsSchemaError) {
  auto dir = testsupport::temp_dir("corpus-truncated");
  const std::string path = (dir / "c.jsonl").string();
  std::ofstream(path) << R"({"id":"a","text":"N0 and N1","numbers":["2","3"],"prefix":"* N0)" << "\n";
  try {
    ls::corpus::load_corpus(path);
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::SchemaError);
  }
}

TEST(LoadCorpus, AnswerToleranceIsRelative) {
  EXPECT_TRUE(ls::corpus::answers_match(Rational(1000), Rational(100005, 100)));
  EXPECT_FALSE(ls::corpus::answers_match(Rational(1000), Rational(100011, 100)));
  EXPECT_TRUE(ls::corpus::answers_match(Rational(1, 3), ls::parse_rational("0.33334")));
  EXPECT_FALSE(ls::corpus::answers_match(Rational(1, 3), ls::parse_rational("0.3335")));
}

TEST(SaveCorpus, RoundTrip) {
  auto ps = generated(30, 2);
  auto dir = testsupport::temp_dir("corpus-roundtrip");
  const std::string path = (dir / "c.jsonl").string();
  ls::corpus::save_corpus(path, ps);
  auto back = ls::corpus::load_corpus(path, &testsupport::kb());
  ASSERT_EQ(back.size(), ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(back[i].id, ps[i].id);
    EXPECT_EQ(back[i].text_tokens, ps[i].text_tokens);
    EXPECT_EQ(back[i].numbers, ps[i].numbers);
    EXPECT_EQ(back[i].gold_prefix, ps[i].gold_prefix);
    EXPECT_EQ(back[i].answer, ps[i].answer);
    EXPECT_EQ(back[i].logic, ps[i].logic);
  }
}

TEST(SplitCorpus, Sizes) {
  auto s = ls::corpus::split_corpus(generated(100, 3), 0.8, 0.1, 0.1, 7);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.valid.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
}

TEST(SplitCorpus, DeterministicUnderSeed) {
  auto ps = generated(50, 3);
  auto a = ls::corpus::split_corpus(ps, 0.6, 0.2, 0.2, 9);
  auto b = ls::corpus::split_corpus(ps, 0.6, 0.2, 0.2, 9);
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_EQ(ids(a.test), ids(b.test));
  auto c = ls::corpus::split_corpus(ps, 0.6, 0.2, 0.2, 10);
  EXPECT_NE(ids(a.train), ids(c.train));
}

TEST(SplitCorpus, Partition) {
  auto ps = generated(57, 4);
  auto s = ls::corpus::split_corpus(ps, 0.7, 0.15, 0.15, 1);
  std::multiset<std::string> all;
  for (const auto* part : {&s.train, &s.valid, &s.test}) {
    for (const auto& p : *part) all.insert(p.id);
  }
  auto orig = ids(ps);
  EXPECT_EQ(all, std::multiset<std::string>(orig.begin(), orig.end()));
  EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), ps.size());
}

TEST(SplitCorpus, RatioAndCountModes) {
  std::vector<ls::corpus::Problem> ps(11495);
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].id = std::to_string(i);
  auto r = ls::corpus::split_corpus(ps, 0.826, 0.087, 0.087, 1);
  EXPECT_EQ(r.valid.size(), 1000u);
  EXPECT_EQ(r.test.size(), 1000u);
  EXPECT_EQ(r.train.size(), 9495u);
  auto c = ls::corpus::split_corpus_counts(ps, {9485, 1000, 1000}, 1);
  EXPECT_EQ(c.train.size(), 9485u);
  EXPECT_EQ(c.valid.size(), 1000u);
  EXPECT_EQ(c.test.size(), 1000u);
  EXPECT_EQ(c.unassigned, 10u);
  EXPECT_THROW(ls::corpus::split_corpus_counts(ps, {11000, 1000, 0}, 1), ls::Error);
  EXPECT_THROW(ls::corpus::split_corpus(ps, 0.5, 0.2, 0.2, 1), ls::Error);
}

TEST(CorpusStats, SingleProblem) {
  ls::corpus::Problem p;
  p.id = "x";
  p.text_tokens = {"N0", "times", "N1"};
  p.numbers = {2, 3};
  p.gold_prefix = ls::expr::tokens_from_text("* N0 N1");
  p.answer = 6;
  p.logic.formula_ids = {21};
  auto r = ls::corpus::corpus_stats({p});
  EXPECT_EQ(r.tree_size, (std::map<std::size_t, std::size_t>{{3, 1}}));
  EXPECT_EQ(r.token_length, (std::map<std::size_t, std::size_t>{{3, 1}}));
}

TEST(CorpusStats, FormulaFrequencySumsToOperatorNodes) {
  auto ps = ls::corpus::load_corpus(testsupport::fixture("ten.jsonl"));
  auto r = ls::corpus::corpus_stats(ps);
  std::size_t total = 0;
  for (const auto& [_, n] : r.formula_frequency) total += n;
  std::size_t ops = 0;
  for (const auto& p : ps) ops += ls::expr::operator_count(p.gold_tree());
  EXPECT_EQ(total, ops);
  EXPECT_EQ(r.operator_nodes, ops);
}

TEST(CorpusStats, Empty) {
  auto r = ls::corpus::corpus_stats({});
  EXPECT_TRUE(r.tree_size.empty());
  EXPECT_TRUE(r.token_length.empty());
  EXPECT_TRUE(r.formula_frequency.empty());
}

TEST(SynthGenerate, ForcedFormula) {
  ls::corpus::SynthConfig cfg;
  cfg.count = 1;
  cfg.force_formula = "expenses = price × quantity";
  cfg.force_values = {{"price", "12"}, {"quantity", "5"}};
  auto ps = ls::corpus::synth_generate(testsupport::kb(), cfg, 1);
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps[0].answer, Rational(60));
  EXPECT_EQ(ps[0].logic.formula_ids, (std::vector<std::size_t>{*testsupport::kb().find_by_text("expenses = price × quantity")}));
}

TEST(SynthGenerate, PassesLoadValidation) {
  auto ps = generated(400, 5);
  auto dir = testsupport::temp_dir("synth-validate");
  const std::string path = (dir / "c.jsonl").string();
  ls::corpus::save_corpus(path, ps);
  EXPECT_EQ(ls::corpus::load_corpus(path, &testsupport::kb()).size(), 400u);
}

TEST(SynthGenerate, TreeSizeDistributionMatchesConfig) {
  ls::corpus::SynthConfig cfg;
  cfg.count = 1000;
  auto ps = ls::corpus::synth_generate(testsupport::kb(), cfg, 6);
  std::map<std::size_t, std::size_t> hist;
  for (const auto& p : ps) ++hist[p.gold_prefix.size()];
  double total_weight = 0.0;
  for (const auto& [_, w] : cfg.size_weights) total_weight += w;
  for (const auto& [size, w] : cfg.size_weights) {
    const double observed = static_cast<double>(hist[size]) / 1000.0;
    EXPECT_NEAR(observed, w / total_weight, 0.05) << "size " << size;
  }
  std::size_t covered = 0;
  for (const auto& [size, _] : cfg.size_weights) covered += hist[size];
  EXPECT_EQ(covered, 1000u);
}

TEST(SynthGenerate, Deterministic) {
  auto a = generated(50, 12);
  auto b = generated(50, 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(ls::corpus::problem_to_json(a[i]).dump(), ls::corpus::problem_to_json(b[i]).dump());
  }
}

TEST(SynthGenerate, BadConfig) {
  ls::corpus::SynthConfig cfg;
  cfg.size_weights = {{4, 1.0}};
  EXPECT_THROW(ls::corpus::synth_generate(testsupport::kb(), cfg, 1), ls::Error);
  EXPECT_THROW(ls::corpus::SynthConfig::from_json(nlohmann::json::parse(R"({"count": "many"})")), ls::Error);
}
