#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "apex/common.hpp"
#include "apex/planner.hpp"
#include "test_support.hpp"

using namespace apex;
using apex::testing::bundled_atlas;
using apex::testing::bundled_planner;

namespace {

// Backend with a fixed script, for exercising planner plumbing.
class StubBackend final : public ReasoningBackend {
 public:
  std::vector<std::string> ids;
  std::vector<std::string> inventory;
  std::optional<TrackingProposal> tracking;

  std::vector<std::string> select_sops(const std::string&, std::span<const SopDoc>) override { return ids; }
  std::vector<std::string> propose_inventory(const SopDoc&) override { return inventory; }
  std::optional<TrackingProposal> propose_tracking_plan(const SopDoc&) override { return tracking; }
  GroundedAnswer answer(const std::string&, std::span<const LogRecord>) override { return {}; }
};

// Reference selection written from the rule statement: score every SOP
// title and protocol title by shared stemmed keywords, keep the top scorers.
std::vector<std::string> reference_select(const std::string& intent, const std::vector<SopDoc>& docs,
                                          const PlannerConfig& cfg) {
  auto keys = [&](const std::string& s) {
    std::set<std::string> out;
    for (const auto& tok : text::word_tokens(s)) {
      if (tok.size() < 3) continue;
      if (std::find(cfg.stopwords.begin(), cfg.stopwords.end(), tok) != cfg.stopwords.end()) continue;
      out.insert(text::stem(tok));
    }
    return out;
  };
  const auto want = keys(intent);
  std::vector<std::pair<size_t, std::vector<std::string>>> groups;
  for (const auto& d : docs) groups.push_back({0, {d.id}});
  for (const auto& p : cfg.protocols) groups.push_back({0, p.sop_ids});
  std::vector<std::string> titles;
  for (const auto& d : docs) titles.push_back(d.title);
  for (const auto& p : cfg.protocols) titles.push_back(p.title);
  size_t best = 0;
  for (size_t i = 0; i < groups.size(); ++i) {
    for (const auto& k : keys(titles[i])) groups[i].first += want.count(k);
    best = std::max(best, groups[i].first);
  }
  if (best == 0) return {};
  std::set<std::string> chosen;
  for (const auto& [score, ids] : groups) {
    if (score == best) chosen.insert(ids.begin(), ids.end());
  }
  std::vector<std::string> out;
  for (const auto& id : cfg.canonical_order) {
    if (chosen.erase(id)) out.push_back(id);
  }
  out.insert(out.end(), chosen.begin(), chosen.end());
  return out;
}

}  // namespace

TEST(Planner, ComposesFullFabricationProtocol) {
  FallbackReasoningBackend backend(bundled_planner());
  const auto p = compose_protocol("fabricate SU-8 flexible BCI", bundled_atlas(), backend);
  EXPECT_EQ(p.sop_ids, (std::vector<std::string>{"wafer_cleaning", "rie", "spin_coating", "patterning",
                                                 "developing", "pvd", "lift_off"}));
  EXPECT_EQ(p.intent, "fabricate SU-8 flexible BCI");
}

TEST(Planner, ComposesSingleSop) {
  FallbackReasoningBackend backend(bundled_planner());
  EXPECT_EQ(compose_protocol("spin coat a wafer", bundled_atlas(), backend).sop_ids,
            std::vector<std::string>{"spin_coating"});
}

TEST(Planner, ComposeErrors) {
  FallbackReasoningBackend backend(bundled_planner());
  try {
    (void)compose_protocol("bake a cake", bundled_atlas(), backend);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoMatchingSop);
  }
  StubBackend stub;
  stub.ids = {"rie", "teleport"};
  try {
    (void)compose_protocol("x", bundled_atlas(), stub);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownSop);
  }
  try {
    (void)compose_protocol("x", SopAtlas{}, stub);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(Planner, KeywordSelectionMatchesReference) {
  const auto docs = bundled_atlas().docs();
  std::vector<std::string> vocab;
  for (const auto& d : docs) {
    for (const auto& t : text::word_tokens(d.title)) vocab.push_back(t);
  }
  for (const auto& t : {"fabrication", "flexible", "bci", "the", "please", "cake", "wafers", "coating",
                        "etch", "a", "deposit", "resist"}) {
    vocab.emplace_back(t);
  }
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string intent;
    const int words = 1 + static_cast<int>(rng() % 5);
    for (int w = 0; w < words; ++w) intent += vocab[rng() % vocab.size()] + " ";
    EXPECT_EQ(keyword_select_sops(intent, docs, bundled_planner()),
              reference_select(intent, docs, bundled_planner()))
        << intent;
  }
}

TEST(Planner, ExperimentPlanInventories) {
  FallbackReasoningBackend backend(bundled_planner());
  const auto rie = make_experiment_plan(bundled_atlas().lookup("rie"), backend);
  auto has = [](const ExperimentPlan& p, const std::string& item) {
    return std::find(p.inventory.begin(), p.inventory.end(), item) != p.inventory.end();
  };
  EXPECT_TRUE(has(rie, "Wafer tweezers"));
  EXPECT_TRUE(has(rie, "RF power supply"));
  EXPECT_EQ(rie.steps, bundled_atlas().lookup("rie").steps);
  const auto spin = make_experiment_plan(bundled_atlas().lookup("spin_coating"), backend);
  EXPECT_TRUE(has(spin, "SU-8 TF 6002 photoresist"));
}

TEST(Planner, InventoryUnionIsCaseFolded) {
  SopDoc doc{"d", "D", 1, {"A"}, {{1, "x", {}, {}}}};
  StubBackend stub;
  stub.inventory = {"a", "B", " b ", ""};
  EXPECT_EQ(make_experiment_plan(doc, stub).inventory, (std::vector<std::string>{"A", "B"}));
}

TEST(Planner, BundledTrackingPlans) {
  FallbackReasoningBackend backend(bundled_planner());
  const auto defaults = bundled_planner().defaults;
  const auto rie = make_tracking_plan(bundled_atlas().lookup("rie"), backend, defaults);
  EXPECT_EQ(rie.memory_update_interval, 1);
  EXPECT_EQ(rie.prediction_interval, 3);
  EXPECT_DOUBLE_EQ(rie.confidence_threshold, 0.8);
  EXPECT_EQ(rie.memory_capacity(), 3);
  const auto spin = make_tracking_plan(bundled_atlas().lookup("spin_coating"), backend, defaults);
  EXPECT_EQ(spin.memory_update_interval, 2);
  EXPECT_EQ(spin.prediction_interval, 5);
  EXPECT_DOUBLE_EQ(spin.confidence_threshold, 0.6);
  EXPECT_EQ(spin.memory_capacity(), 3);

  const auto other = make_tracking_plan(bundled_atlas().lookup("pvd"), backend, defaults);
  EXPECT_EQ(other.memory_update_interval, 1);
  EXPECT_EQ(other.prediction_interval, 3);
  EXPECT_DOUBLE_EQ(other.confidence_threshold, 0.7);
  EXPECT_EQ(other.sop_id, "pvd");
}

TEST(Planner, ClampingAlwaysYieldsValidPlans) {
  const StepTrackingPlan defaults{"x", 1, 3, 0.7, ""};
  std::mt19937_64 rng(11);
  const double specials[] = {-1.0, 0.0, 1e-9, 1.0, 2.5, std::nan(""), 1e300, -1e300};
  for (int i = 0; i < 5000; ++i) {
    TrackingProposal p;
    p.memory_update_interval = static_cast<long long>(rng() % 41) - 20;
    p.prediction_interval = static_cast<long long>(rng() % 41) - 20;
    if (i % 50 == 0) p.prediction_interval = (1LL << 40);
    p.confidence_threshold = i % 3 == 0 ? specials[rng() % 8] : static_cast<double>(rng() % 3000) / 1000.0 - 1.0;
    const auto plan = clamp_tracking_plan(p, defaults);
    ASSERT_TRUE(plan.valid()) << p.memory_update_interval << " " << p.prediction_interval << " "
                              << p.confidence_threshold;
    if (p.memory_update_interval >= 1 && p.prediction_interval >= p.memory_update_interval &&
        p.prediction_interval < (1LL << 31)) {
      EXPECT_EQ(plan.memory_update_interval, p.memory_update_interval);
      EXPECT_EQ(plan.prediction_interval, p.prediction_interval);
    }
    if (p.confidence_threshold > 0.01 && p.confidence_threshold <= 1.0) {
      EXPECT_DOUBLE_EQ(plan.confidence_threshold, p.confidence_threshold);
    }
  }
}

TEST(Planner, ConfigRejectsInvalidDefaults) {
  EXPECT_THROW(parse_planner_config(nlohmann::json::parse(
                   R"({"defaults": {"memory_update_interval": 3, "prediction_interval": 1,
                                    "confidence_threshold": 0.5}})")),
               Error);
}
