#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "apex/analysis.hpp"
#include "apex/common.hpp"
#include "apex/planner.hpp"
#include "test_support.hpp"

using namespace apex;
using apex::testing::bundled_atlas;
using apex::testing::bundled_planner;

namespace {

ConfirmedStep voted(int step, double conf, std::int64_t frame = 0) {
  ConfirmedStep c;
  c.frame_index = frame;
  c.ranked[0] = RankedStep{step, conf};
  return c;
}

ContextFrame frame_with(std::vector<Reading> readings, std::int64_t ts = 0) {
  ContextFrame f;
  f.timestamp_ms = ts;
  f.equipment.push_back({"RF power supply", "", std::move(readings)});
  f.action = "adjusting the controller";
  return f;
}

// Reference: the first violating matching reading per parameter, scanning all
// readings in frame order.
std::vector<std::pair<std::string, std::string>> reference_errors(const ContextFrame& f, const SopStep& step) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& spec : step.params) {
    for (const auto& eq : f.equipment) {
      bool found = false;
      for (const auto& r : eq.readings) {
        if (text::name_key(r.name) != text::name_key(spec.name)) continue;
        bool bad;
        if (spec.mode == ParamMode::Numeric) {
          bad = text::casefold(r.unit) != text::casefold(spec.unit) || !r.is_numeric() ||
                std::fabs(std::get<double>(r.value) - std::get<double>(spec.expected)) > spec.tolerance;
        } else {
          bad = text::casefold(r.value_text()) != text::casefold(std::get<std::string>(spec.expected));
        }
        if (bad) {
          out.emplace_back(spec.name, r.value_text());
          found = true;
          break;
        }
      }
      if (found) break;
    }
  }
  return out;
}

}  // namespace

TEST(Records, LoggedAboveThresholdWithReadings) {
  const auto doc = bundled_atlas().lookup("patterning");
  AnalysisHistory h;
  const auto rec = append_record(h, voted(1, 0.85), frame_with({parse_reading("time", "6.2 s")}, 500), 0.8, doc);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->seq, 1);
  EXPECT_EQ(rec->timestamp_ms, 500);
  ASSERT_EQ(rec->key_parameters.size(), 1u);
  EXPECT_EQ(rec->key_parameters[0].name, "time");
  EXPECT_EQ(rec->key_parameters[0].value_text(), "6.2 s");
  EXPECT_EQ(rec->key_actions, std::vector<std::string>{"adjusting the controller"});
  EXPECT_DOUBLE_EQ(rec->progress, 1.0 / doc.step_count());

  EXPECT_FALSE(append_record(h, voted(2, 0.5), frame_with({}), 0.8, doc));
  auto human = voted(2, 0.1);
  human.source = StepSource::Human;
  const auto hr = append_record(h, human, frame_with({}), 0.8, doc);
  ASSERT_TRUE(hr);
  EXPECT_EQ(hr->source, StepSource::Human);
  EXPECT_EQ(hr->seq, 2);
  EXPECT_EQ(h.size(), 2u);
}

TEST(Errors, WrongRiePowerAndTime) {
  const auto rie = bundled_atlas().lookup("rie");
  const auto f = frame_with({parse_reading("RF Power", "100 W"), parse_reading("Time", "10 s")});
  const auto alerts = detect_errors(f, rie.step(4));
  ASSERT_EQ(alerts.size(), 2u);
  EXPECT_EQ(alerts[0].parameter, "time");
  EXPECT_EQ(alerts[0].observed, "10 s");
  EXPECT_EQ(alerts[0].expected, "30 s");
  EXPECT_EQ(alerts[1].parameter, "rf_power");
  EXPECT_NE(alerts[1].message.find("The current settings are incorrect"), std::string::npos);
  EXPECT_NE(alerts[1].message.find("100 W"), std::string::npos);
  EXPECT_NE(alerts[1].message.find("50 W"), std::string::npos);
  for (const auto& a : alerts) EXPECT_EQ(a.kind, AlertKind::ParameterMismatch);
}

TEST(Errors, ExactAndTolerantReadingsPass) {
  const auto rie = bundled_atlas().lookup("rie");
  EXPECT_TRUE(detect_errors(frame_with({parse_reading("rf_power", "50 W"), parse_reading("time", "30 s")}),
                            rie.step(4))
                  .empty());
  const auto spin = bundled_atlas().lookup("spin_coating");
  const auto& bake = spin.step(6);
  const auto* temp = &bake.params[0];
  for (const auto& p : bake.params) {
    if (p.name == "temperature") temp = &p;
  }
  EXPECT_TRUE(detect_errors(frame_with({parse_reading("temperature", "96 " + temp->unit)}), bake).empty());
  EXPECT_EQ(detect_errors(frame_with({parse_reading("temperature", "98 " + temp->unit)}), bake).size(), 1u);
}

TEST(Errors, UnitDisagreementIsFlagged) {
  const auto rie = bundled_atlas().lookup("rie");
  const auto alerts = detect_errors(frame_with({parse_reading("time", "30 min")}), rie.step(4));
  ASSERT_EQ(alerts.size(), 1u);
  EXPECT_TRUE(alerts[0].unit_disagreement);
}

TEST(Errors, IndicatorsCompareTokens) {
  const auto rie = bundled_atlas().lookup("rie");
  EXPECT_TRUE(detect_errors(frame_with({parse_reading("Gas On", "green on")}), rie.step(5)).empty());
  EXPECT_EQ(detect_errors(frame_with({parse_reading("gas_on", "Off")}), rie.step(5)).size(), 1u);
}

TEST(Errors, MatchReferenceOnFuzzedFrames) {
  std::vector<SopStep> with_params;
  for (const auto& doc : bundled_atlas().docs()) {
    for (const auto& s : doc.steps) {
      if (!s.params.empty()) with_params.push_back(s);
    }
  }
  ASSERT_FALSE(with_params.empty());
  std::mt19937_64 rng(99);
  const std::vector<std::string> units = {"s", "W", "rpm", "min", "C", "°C", "rpm/s", ""};
  const std::vector<std::string> tokens = {"Green On", "Off", "green on", "Red"};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& step = with_params[rng() % with_params.size()];
    ContextFrame f;
    const int n_eq = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < n_eq; ++e) {
      EquipmentObservation eq;
      const int n_r = static_cast<int>(rng() % 4);
      for (int r = 0; r < n_r; ++r) {
        const auto& spec = step.params[rng() % step.params.size()];
        Reading reading;
        reading.name = rng() % 2 ? spec.name : text::casefold(spec.name);
        if (rng() % 10 == 0) reading.name = "unrelated";
        if (spec.mode == ParamMode::Numeric && rng() % 8 != 0) {
          const double base = std::get<double>(spec.expected);
          const double jitter = (static_cast<double>(rng() % 2001) / 1000.0 - 1.0) * (spec.tolerance + 1.0);
          reading.value = rng() % 3 == 0 ? base : base + jitter;
          reading.unit = rng() % 6 == 0 ? units[rng() % units.size()] : spec.unit;
        } else {
          reading.value = tokens[rng() % tokens.size()];
        }
        eq.readings.push_back(reading);
      }
      f.equipment.push_back(eq);
    }
    const auto got = detect_errors(f, step);
    const auto want = reference_errors(f, step);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].parameter, want[i].first);
      EXPECT_EQ(got[i].observed, want[i].second);
    }
  }
}

TEST(Guidance, PreviewsNextStep) {
  const auto rie = bundled_atlas().lookup("rie");
  ContextFrame f;
  f.action = "watching pressure gauge";
  const auto g = make_guidance(voted(3, 0.9), f, rie);
  EXPECT_EQ(g.current_action, "watching pressure gauge");
  EXPECT_NE(g.required_action.find("Start Vacuum"), std::string::npos);
  EXPECT_NE(g.next_step_preview.find("Set the etching time to 30 s"), std::string::npos);
  const auto last = make_guidance(voted(8, 0.9), ContextFrame{}, rie);
  EXPECT_EQ(last.next_step_preview, kProcedureComplete);
  EXPECT_EQ(last.current_action, kNoneObserved);
}

TEST(Answers, CiteRecords) {
  const auto rie = bundled_atlas().lookup("rie");
  AnalysisHistory h;
  EXPECT_EQ(keyword_answer("anything?", h.records()).text, kNoRecords);
  for (int step = 1; step <= 5; ++step) {
    std::vector<Reading> readings;
    if (step == 4) readings = {parse_reading("time", "30 s"), parse_reading("rf_power", "50 W")};
    (void)append_record(h, voted(step, 0.9), frame_with(readings, 1000 * step), 0.8, rie);
  }
  const auto a = keyword_answer("did I set the etch time?", h.records());
  EXPECT_NE(a.text.find("30 s"), std::string::npos) << a.text;
  EXPECT_EQ(a.citations, std::vector<std::int64_t>{4});

  const auto b = keyword_answer("when did step 5 finish?", h.records());
  EXPECT_NE(b.text.find("5000"), std::string::npos) << b.text;
  EXPECT_EQ(b.citations, std::vector<std::int64_t>{5});

  FallbackReasoningBackend backend(bundled_planner());
  for (const auto& q : {"step 7?", "zebra", "vacuum pressure", "wafer"}) {
    const auto ans = answer_query(q, h, backend);
    for (auto seq : ans.citations) {
      EXPECT_GE(seq, 1);
      EXPECT_LE(seq, 5);
    }
  }
}
