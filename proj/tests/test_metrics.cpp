#include <doctest.h>

#include <json.hpp>

#include "metrics_oracle.hpp"

using namespace bmx;
using namespace bmx::testing;

namespace {

void check_opt(const std::optional<double>& a, const std::optional<double>& b) {
  REQUIRE(a.has_value() == b.has_value());
  if (a) CHECK(*a == doctest::Approx(*b).epsilon(1e-12));
}

}  // namespace

TEST_CASE("full_report matches the brute-force reference on every fixture") {
  for (const auto& fx : oracle_fixtures()) {
    CAPTURE(fx.name);
    const std::vector<VideoEvaluation> vids{fx.video};
    const auto r = full_report(vids, GradeCodec{});
    const auto o = brute_force(fx.video);
    CHECK(r.frames == 20);
    for (std::size_t t = 0; t < 3; ++t) {
      CAPTURE(t);
      const auto& tr = r.types[t];
      CHECK(tr.scores.f1 == doctest::Approx(o.types[t].f1).epsilon(1e-12));
      CHECK(tr.scores.precision == doctest::Approx(o.types[t].precision).epsilon(1e-12));
      CHECK(tr.scores.recall == doctest::Approx(o.types[t].recall).epsilon(1e-12));
      CHECK(tr.weighted_f1 == doctest::Approx(o.types[t].weighted_f1).epsilon(1e-12));
      CHECK(tr.mse == doctest::Approx(o.types[t].mse).epsilon(1e-12));
      check_opt(tr.clinical.ppv, o.types[t].ppv);
      check_opt(tr.clinical.npv, o.types[t].npv);
      check_opt(tr.cdt.mean, o.types[t].cdt);
      CHECK(tr.cdt.events == o.types[t].cdt_events);
      CHECK(tr.cdt.misses == o.types[t].cdt_misses);
    }
    CHECK(r.f1 == doctest::Approx(o.f1).epsilon(1e-12));
    CHECK(r.weighted_f1 == doctest::Approx(o.weighted_f1).epsilon(1e-12));
    CHECK(r.mse == doctest::Approx(o.mse).epsilon(1e-12));
    check_opt(r.ppv, o.ppv);
    check_opt(r.npv, o.npv);
    check_opt(r.cdt_mean, o.cdt);
  }
}

TEST_CASE("fixture-specific expectations") {
  const auto fx = oracle_fixtures();
  const auto perfect = full_report(std::vector<VideoEvaluation>{fx[0].video}, GradeCodec{});
  CHECK(perfect.type(EventKind::BL).weighted_f1 == doctest::Approx(0.98));
  CHECK(perfect.type(EventKind::BL).scores.f1 == 1.0);
  CHECK(perfect.type(EventKind::BL).mse == doctest::Approx(0.0));
  CHECK(perfect.type(EventKind::BL).cdt.mean == 0.0);

  const auto missed = full_report(std::vector<VideoEvaluation>{fx[2].video}, GradeCodec{});
  const auto& ti = missed.type(EventKind::TI);
  CHECK(ti.cdt.events == 2);
  CHECK(ti.cdt.misses == 1);
  CHECK(ti.cdt.delays == std::vector<std::int64_t>{2});
  CHECK(ti.cdt.mean == 2.0);
}

TEST_CASE("weighted F1 of all-ones grade scores is the weight sum") {
  const std::array<double, 6> ones{1, 1, 1, 1, 1, 1};
  const SeverityWeights w;
  CHECK(weighted_f1(ones, w.effective()) == doctest::Approx(0.98));
  SeverityWeights normalized;
  normalized.normalized = true;
  CHECK(weighted_f1(ones, normalized.effective()) == doctest::Approx(1.0));
  CHECK_THROWS_AS(weighted_f1(ones, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("precision, recall and F1 edge cases") {
  CHECK(precision_recall_f1({}).f1 == 0.0);
  const auto r = precision_recall_f1({3, 1, 10, 2});
  CHECK(r.precision == doctest::Approx(0.75));
  CHECK(r.recall == doctest::Approx(0.6));
  CHECK(r.f1 == doctest::Approx(2 * 0.75 * 0.6 / 1.35));
}

TEST_CASE("mse and ppv/npv helpers") {
  CHECK(mse(std::vector<double>{0, 1}, std::vector<double>{1, 1}) == doctest::Approx(0.5));
  CHECK_THROWS(mse(std::vector<double>{}, std::vector<double>{}));
  EventTimeline t;
  t.true_grades = {0, 3, 4, 1, 0};
  t.predicted_grades = {0, 3, 1, 4, 2};
  const auto c = ppv_npv(t);
  REQUIRE(c.ppv);
  CHECK(*c.ppv == doctest::Approx(0.5));
  REQUIRE(c.npv);
  CHECK(*c.npv == doctest::Approx(0.5));
  EventTimeline none;
  none.true_grades = {0, 0};
  none.predicted_grades = {0, 0};
  CHECK_FALSE(ppv_npv(none).ppv.has_value());
}

TEST_CASE("report across videos pools frames") {
  const auto fx = oracle_fixtures();
  std::vector<VideoEvaluation> all;
  for (const auto& f : fx) all.push_back(f.video);
  const auto r = full_report(all, GradeCodec{});
  CHECK(r.frames == 60);
  std::int64_t support = 0;
  for (const auto& [g, n] : r.grade_support) support += n;
  CHECK(support == 3 * 60);
  CHECK(r.type(EventKind::TI).cdt.events == 3 + 1 + 2);
}

TEST_CASE("report serialisation lists every row") {
  const auto fx = oracle_fixtures();
  const auto r = full_report(std::vector<VideoEvaluation>{fx[1].video}, GradeCodec{});
  const auto j = nlohmann::json::parse(report_to_json(r));
  CHECK(j.at("overall").at("f1").get<double>() == doctest::Approx(r.f1));
  CHECK(j.contains("grade_mse"));
  const std::vector<NamedReport> rows{{"BetaMixer", r}, {"BetaMixer (Genless)", r}};
  for (const auto& csv :
       {classification_table_csv(rows), summary_table_csv(rows), regression_table_csv(rows), cdt_table_csv(rows)}) {
    CHECK(csv.find("BetaMixer,") != std::string::npos);
    CHECK(csv.find("BetaMixer (Genless)") != std::string::npos);
  }
}
