#include "apex/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

void to_json(json& j, const GroundTruth& t) {
  j = json{{"steps", t.steps}};
  if (!t.equipment.empty()) j["equipment"] = t.equipment;
}

void from_json(const json& j, GroundTruth& t) {
  t.steps = j.at("steps").get<std::vector<int>>();
  t.equipment = j.value("equipment", std::vector<std::vector<std::string>>{});
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedDocument, "cannot open " + path.string());
  try {
    return json::parse(in).get<GroundTruth>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what(), path.string());
  }
}

MeanSem mean_sem(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyScores, "no values to summarize");
  MeanSem out;
  out.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(out.n - 1));
    out.sem = sd / std::sqrt(static_cast<double>(out.n));
  }
  return out;
}

MeanSem summarize_scores(std::span<const int> scores) {
  if (scores.empty()) throw Error(ErrorCode::EmptyScores, "no scores to summarize");
  std::vector<double> values;
  values.reserve(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < 1 || scores[i] > 5) {
      throw Error(ErrorCode::OutOfRangeScore,
                  "score " + std::to_string(scores[i]) + " at position " + std::to_string(i) +
                      " is outside 1..5");
    }
    values.push_back(scores[i]);
  }
  return mean_sem(values);
}

RecognitionReport eval_recognition(std::span<const ContextFrame> frames, const GroundTruth& truth,
                                   std::span<const std::string> classes) {
  if (truth.equipment.size() != frames.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(frames.size()) + " frames but " +
                                               std::to_string(truth.equipment.size()) +
                                               " truth equipment sets");
  }
  std::vector<std::string> names(classes.begin(), classes.end());
  if (names.empty()) {
    std::set<std::string> seen;
    for (const auto& set : truth.equipment) {
      for (const auto& n : set) {
        if (seen.insert(text::casefold(n)).second) names.push_back(n);
      }
    }
  }

  RecognitionReport report;
  std::vector<double> accuracies;
  for (const auto& name : names) {
    const auto key = text::casefold(name);
    int present = 0;
    int hits = 0;
    for (size_t i = 0; i < frames.size(); ++i) {
      const auto& want = truth.equipment[i];
      if (std::none_of(want.begin(), want.end(), [&](const auto& n) { return text::casefold(n) == key; })) {
        continue;
      }
      ++present;
      const auto& seen = frames[i].equipment;
      if (std::any_of(seen.begin(), seen.end(),
                      [&](const auto& e) { return text::casefold(e.name) == key; })) {
        ++hits;
      }
    }
    if (present == 0) {
      report.excluded.push_back(name);
      continue;
    }
    const double acc = static_cast<double>(hits) / present;
    report.per_class[name] = acc;
    accuracies.push_back(acc);
  }
  if (!accuracies.empty()) report.summary = mean_sem(accuracies);
  return report;
}

void to_json(json& j, const Metrics& m) {
  json per_step = json::object();
  for (const auto& [step, acc] : m.per_step_accuracy) per_step[std::to_string(step)] = acc;
  j = json{{"frames", m.frames},
           {"step_accuracy", m.step_accuracy},
           {"per_step_accuracy", per_step},
           {"equipment_accuracy",
            {{"mean", m.equipment_accuracy.mean},
             {"sem", m.equipment_accuracy.sem},
             {"classes", m.equipment_accuracy.n}}},
           {"hitl_count", m.hitl_count},
           {"alerts", m.alerts},
           {"confirmations", m.confirmations}};
}

AnswerPolicy AnswerPolicy::parse(std::string_view s) {
  if (s == "oracle") return {AnswerKind::Oracle, 0};
  if (s == "refuse") return {AnswerKind::Refuse, 0};
  if (s.starts_with("fixed:")) {
    const std::string num{s.substr(6)};
    try {
      size_t used = 0;
      const int k = std::stoi(num, &used);
      if (used == num.size() && k >= 1) return {AnswerKind::Fixed, k};
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::InvalidConfig,
              "answer policy must be oracle, refuse or fixed:K, got '" + std::string{s} + "'");
}

std::string AnswerPolicy::str() const {
  switch (kind) {
    case AnswerKind::Oracle: return "oracle";
    case AnswerKind::Refuse: return "refuse";
    case AnswerKind::Fixed: return "fixed:" + std::to_string(fixed_step);
  }
  return {};
}

SessionConfig replay_config(const SopAtlas& atlas, const Recording& recording,
                            const PlannerConfig& planner) {
  FallbackReasoningBackend fallback(planner);
  auto config = plan_session_config(atlas, fallback, planner.defaults, recording.sop_id);
  if (recording.experiment) config.experiment = *recording.experiment;
  if (recording.tracking) {
    config.tracking = *recording.tracking;
    if (config.tracking.sop_id.empty()) config.tracking.sop_id = recording.sop_id;
  }
  return config;
}

ReplayResult replay(const SopAtlas& atlas, const Recording& recording, const GroundTruth& truth,
                    const SessionConfig& config, AnswerPolicy policy, const PlannerConfig& planner) {
  const size_t n = recording.frames.size();
  if (truth.steps.size() != n) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(n) + " frames but " +
                                               std::to_string(truth.steps.size()) + " truth labels");
  }
  if (!truth.equipment.empty() && truth.equipment.size() != n) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(n) + " frames but " +
                                               std::to_string(truth.equipment.size()) +
                                               " truth equipment sets");
  }

  SessionConfig cfg = config;
  cfg.backend = BackendKind::Scripted;
  cfg.clock = ClockMode::Replay;
  Engine engine(atlas);
  const auto id = engine.create_session(
      cfg, Backends{std::make_shared<ScriptedPerceptionBackend>(),
                    std::make_shared<ScriptedPredictionBackend>(),
                    std::make_shared<FallbackReasoningBackend>(planner)});

  ReplayResult result;
  result.labels.assign(n, 0);
  std::vector<ContextFrame> contexts(n);
  for (size_t i = 0; i < n; ++i) contexts[i].frame_index = recording.frames[i].frame_index;

  Metrics& m = result.metrics;
  int accepted = 0;
  std::int64_t ingested = 0;
  size_t unlabelled = 0;
  const int period = cfg.tracking.prediction_interval;

  auto scan = [&](const std::vector<SessionEvent>& events) {
    std::optional<HitlQuery> query;
    for (const auto& e : events) {
      if (const auto* c = std::get_if<StepConfirmed>(&e.body)) {
        accepted = c->confirmed.top()->step;
        ++m.confirmations;
      } else if (const auto* q = std::get_if<ClarificationRequested>(&e.body)) {
        ++m.hitl_count;
        query = q->query;
      } else if (e.is<AlertRaised>()) {
        ++m.alerts;
      }
    }
    return query;
  };

  for (size_t i = 0; i < n; ++i) {
    const RawFrame& raw = recording.frames[i];
    auto events = engine.handle_event(id, FrameArrival{raw});
    bool aggregation = false;
    for (const auto& e : events) {
      if (const auto* f = std::get_if<FrameIngested>(&e.body)) {
        contexts[i] = f->context;
        aggregation = ++ingested % period == 0;
      }
    }
    if (auto query = scan(events)) {
      std::optional<int> answer;
      if (policy.kind == AnswerKind::Oracle) answer = truth.steps[i];
      if (policy.kind == AnswerKind::Fixed) answer = policy.fixed_step;
      if (answer) {
        const int step = std::clamp(*answer, 1, static_cast<int>(cfg.experiment.steps.size()));
        scan(engine.handle_event(id, HumanAnswer{step, raw.timestamp_ms}));
      }
    }
    if (aggregation) {
      for (; unlabelled <= i; ++unlabelled) result.labels[unlabelled] = accepted;
    }
  }
  for (; unlabelled < n; ++unlabelled) result.labels[unlabelled] = accepted;

  const std::int64_t end_ts = n ? recording.frames.back().timestamp_ms : 0;
  engine.handle_event(id, Close{end_ts});

  m.frames = static_cast<std::int64_t>(n);
  std::map<int, std::pair<int, int>> per_step;
  int correct = 0;
  for (size_t i = 0; i < n; ++i) {
    auto& [hit, total] = per_step[truth.steps[i]];
    ++total;
    if (result.labels[i] == truth.steps[i]) {
      ++hit;
      ++correct;
    }
  }
  if (n > 0) m.step_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  for (const auto& [step, ht] : per_step) {
    m.per_step_accuracy[step] = static_cast<double>(ht.first) / ht.second;
  }
  if (!truth.equipment.empty()) m.equipment_accuracy = eval_recognition(contexts, truth).summary;

  result.log = engine.export_log(id);
  result.events = engine.events(id);
  return result;
}

namespace {

// Uniform draws straight from the engine's bits, so the streams are the same
// on every standard library.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double in_range(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }
int below(std::mt19937_64& rng, int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

}  // namespace

SynthSession synth_session(const SopDoc& doc, int frames_per_step, double flip_prob,
                           std::uint64_t seed, const SynthOptions& options) {
  if (!(flip_prob >= 0.0 && flip_prob < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "flip probability must be in [0, 1)");
  }
  if (frames_per_step < 1) throw Error(ErrorCode::InvalidConfig, "frames per step must be >= 1");
  const int steps = doc.step_count();
  if (steps < 1) throw Error(ErrorCode::InvalidConfig, "SOP has no steps");

  std::mt19937_64 rng(seed);
  SynthSession s;
  s.recording.sop_id = doc.id;
  std::int64_t index = 0;
  for (const auto& step : doc.steps) {
    for (int k = 0; k < frames_per_step; ++k, ++index) {
      FramePrediction p;
      p.frame_index = index;
      const bool flip = steps > 1 && unit(rng) < flip_prob;
      if (flip) {
        int other = 1 + below(rng, steps - 1);
        if (other >= step.index) ++other;
        p.candidates.push_back({other, in_range(rng, options.flipped_lo, options.flipped_hi)});
      } else {
        p.candidates.push_back({step.index, in_range(rng, options.correct_lo, options.correct_hi)});
      }

      ContextFrame ctx;
      ctx.frame_index = index;
      ctx.timestamp_ms = index * options.frame_period_ms;
      for (const auto& eq : step.expected_equipment) ctx.equipment.push_back({eq, "", {}});
      ctx.action = step.instruction;

      RawFrame raw;
      raw.frame_index = index;
      raw.timestamp_ms = ctx.timestamp_ms;
      raw.description = "synthetic frame " + std::to_string(index);
      raw.script.context = ctx;
      raw.script.prediction = p;

      s.recording.frames.push_back(std::move(raw));
      s.truth.steps.push_back(step.index);
      s.truth.equipment.push_back(step.expected_equipment);
      s.predictions.emplace(index, std::move(p));
    }
  }
  return s;
}

double raw_accuracy(const SynthSession& s) {
  if (s.truth.steps.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < s.truth.steps.size(); ++i) {
    const auto& p = s.predictions.at(static_cast<std::int64_t>(i));
    hits += p.candidates.front().step == s.truth.steps[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(s.truth.steps.size());
}

std::vector<BenchCase> load_bench_suite(const std::filesystem::path& dir) {
  const auto path = dir / "suite.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open " + path.string());
  std::vector<BenchCase> out;
  try {
    const auto doc = json::parse(in);
    for (const auto& c : doc.at("cases")) {
      BenchCase b;
      b.name = c.at("name").get<std::string>();
      b.recording = dir / c.at("recording").get<std::string>();
      b.truth = dir / c.at("truth").get<std::string>();
      if (c.contains("config")) b.config = dir / c["config"].get<std::string>();
      b.policy = AnswerPolicy::parse(c.value("answer", std::string{"oracle"}));
      const auto expect = c.value("expect", json::object());
      if (expect.contains("min_step_accuracy")) b.min_step_accuracy = expect["min_step_accuracy"].get<double>();
      if (expect.contains("max_hitl")) b.max_hitl = expect["max_hitl"].get<int>();
      if (expect.contains("alerts")) b.alerts = expect["alerts"].get<int>();
      if (expect.contains("confirmations")) b.confirmations = expect["confirmations"].get<int>();
      out.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what(), path.string());
  }
  return out;
}

std::vector<BenchResult> run_bench(const SopAtlas& atlas, std::span<const BenchCase> cases,
                                   const PlannerConfig& planner) {
  std::vector<BenchResult> out;
  for (const auto& c : cases) {
    BenchResult r;
    r.name = c.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto rec = load_recording(c.recording, &atlas);
      const auto truth = load_truth(c.truth);
      SessionConfig config = replay_config(atlas, rec, planner);
      if (c.config) {
        std::ifstream in(*c.config);
        FallbackReasoningBackend fallback(planner);
        config = session_config_from_json(json::parse(in), atlas, fallback, planner.defaults);
      }
      r.metrics = replay(atlas, rec, truth, config, c.policy, planner).metrics;
      const auto& m = r.metrics;
      if (c.min_step_accuracy && m.step_accuracy < *c.min_step_accuracy) {
        r.failures.push_back("step_accuracy " + text::format_number(m.step_accuracy) + " < " +
                             text::format_number(*c.min_step_accuracy));
      }
      if (c.max_hitl && m.hitl_count > *c.max_hitl) {
        r.failures.push_back("hitl_count " + std::to_string(m.hitl_count) + " > " + std::to_string(*c.max_hitl));
      }
      if (c.alerts && m.alerts != *c.alerts) {
        r.failures.push_back("alerts " + std::to_string(m.alerts) + " != " + std::to_string(*c.alerts));
      }
      if (c.confirmations && m.confirmations != *c.confirmations) {
        r.failures.push_back("confirmations " + std::to_string(m.confirmations) + " != " +
                             std::to_string(*c.confirmations));
      }
    } catch (const std::exception& e) {
      r.failures.push_back(e.what());
    }
    r.passed = r.failures.empty();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

std::string bench_table(std::span<const BenchResult> results) {
  std::ostringstream ss;
  ss << std::left << std::setw(24) << "case" << std::right << std::setw(8) << "frames" << std::setw(10)
     << "step_acc" << std::setw(8) << "hitl" << std::setw(8) << "alerts" << std::setw(10) << "time_s"
     << "  result\n";
  for (const auto& r : results) {
    ss << std::left << std::setw(24) << r.name << std::right << std::setw(8) << r.metrics.frames
       << std::setw(10) << std::fixed << std::setprecision(4) << r.metrics.step_accuracy << std::setw(8)
       << r.metrics.hitl_count << std::setw(8) << r.metrics.alerts << std::setw(10) << std::setprecision(3)
       << r.seconds << "  " << (r.passed ? "PASS" : "FAIL");
    for (const auto& f : r.failures) ss << " [" << f << "]";
    ss << '\n';
  }
  return ss.str();
}

json bench_json(std::span<const BenchResult> results) {
  json out = json::array();
  for (const auto& r : results) {
    out.push_back({{"name", r.name},
                   {"metrics", r.metrics},
                   {"passed", r.passed},
                   {"failures", r.failures},
                   {"seconds", r.seconds}});
  }
  return out;
}

}  // namespace apex
