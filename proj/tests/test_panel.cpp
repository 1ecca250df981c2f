#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <set>

#include "doctest.h"
#include "evpanel/censor.hpp"
#include "evpanel/panel.hpp"
#include "test_util.hpp"

using namespace evpanel;
using testutil::TempDir;
using testutil::ToyUnit;
using testutil::toy_panel;

TEST_CASE("builder assembles a sorted validated panel") {
  PanelBuilder b;
  b.outcomes({"y"}).covariates({"x"});
  const int u0 = b.add_unit({.id = "a"});
  const int u1 = b.add_unit({.id = "b"});
  // deliberately out of order
  b.add_cell(u1, 2, {4.0}, {0.4});
  b.add_cell(u0, 2, {2.0}, {0.2});
  b.add_cell(u0, 1, {1.0}, {0.1});
  b.set_anchors(u0, 5, 7);
  PanelDataset p = b.build();

  CHECK(p.n_units() == 2);
  CHECK(p.n_cells() == 3);
  CHECK(p.t_min() == 1);
  CHECK(p.t_max() == 2);
  CHECK(p.cell_at(u0, 1) == 0);
  CHECK(p.cell_at(u0, 2) == 1);
  CHECK(p.cell_at(u1, 2) == 2);
  CHECK(p.cell_at(u1, 1) == -1);
  CHECK(p.outcome("y")[0] == 1.0);
  CHECK(p.covariate("x")[2] == 0.4);
  CHECK(p.unit_index("b") == u1);
  CHECK(*p.anchor_period(u0, Anchor::Shock) == 5);
  CHECK(*p.anchor_period(u0, Anchor::Adoption) == 7);
  CHECK_FALSE(p.anchor_period(u1, Anchor::Adoption).has_value());
}

TEST_CASE("duplicate cells are rejected") {
  PanelBuilder b;
  b.outcomes({"y"});
  const int u = b.add_unit({.id = "a"});
  b.add_cell(u, 1, {1.0}, {});
  b.add_cell(u, 1, {2.0}, {});
  CHECK_THROWS_AS(b.build(), DuplicateCell);
}

TEST_CASE("event_time is the offset from the anchor") {
  auto p = toy_panel({{.id = "a", .shock = 10, .adoption = 12},
                      {.id = "b"}},
                     5, 14, [](int, int) { return 0.0; });
  CHECK(event_time(p, 0, 10, Anchor::Shock) == 0);
  CHECK(event_time(p, 0, 7, Anchor::Shock) == -3);
  CHECK(event_time(p, 0, 14, Anchor::Adoption) == 2);
  CHECK_THROWS_AS(event_time(p, 1, 10, Anchor::Shock), NoAnchor);
}

TEST_CASE("cohort assignment partitions the units") {
  auto p = toy_panel({{.id = "a", .adoption = 5},
                      {.id = "b", .adoption = 5},
                      {.id = "c", .adoption = 9},
                      {.id = "d"}},
                     0, 10, [](int, int) { return 0.0; });
  const auto cohorts = assign_cohorts(p, Anchor::Adoption);
  REQUIRE(cohorts.size() == 4);
  std::map<int, int> sizes;
  for (const auto& [id, g] : cohorts) ++sizes[g];
  CHECK(sizes[5] == 2);
  CHECK(sizes[9] == 1);
  CHECK(sizes[kNeverCohort] == 1);

  const auto codes = unit_cohorts(p, Anchor::Adoption);
  REQUIRE(codes.size() == 4);
  CHECK(codes[0] == 5);
  CHECK(codes[3] == kNeverCohort);
}

TEST_CASE("single shared adoption is one cohort; empty panel is empty") {
  auto p = toy_panel({{.id = "a", .adoption = 3}, {.id = "b", .adoption = 3}},
                     0, 5, [](int, int) { return 0.0; });
  const auto cohorts = assign_cohorts(p, Anchor::Adoption);
  std::set<int> values;
  for (const auto& [id, g] : cohorts) values.insert(g);
  CHECK(values == std::set<int>{3});

  PanelBuilder b;
  b.outcomes({"y"});
  PanelDataset empty = b.build();
  CHECK(assign_cohorts(empty, Anchor::Adoption).empty());
}

TEST_CASE("quarter encoding") {
  CHECK(quarter_index(2017, 1) == 2017 * 4);
  CHECK(quarter_index(2017, 4) == 2017 * 4 + 3);
  CHECK(quarter_index(2018, 1) - quarter_index(2017, 4) == 1);
}

TEST_CASE("delimited panel loading") {
  TempDir dir("panel");

  SUBCASE("three rows give three cells with the right range") {
    testutil::write_file(dir.file("p.tsv"),
                         "unit\tperiod\tanchor\tadoption\ty\n"
                         "a\t1\t\t\t1.5\n"
                         "a\t2\t\t\t2.5\n"
                         "b\t1\t\t\t3.5\n");
    PanelDataset p = load_panel(dir.file("p.tsv"));
    CHECK(p.n_cells() == 3);
    CHECK(p.n_units() == 2);
    CHECK(p.t_min() == 1);
    CHECK(p.t_max() == 2);
    CHECK(p.outcome_names() == std::vector<std::string>{"y"});
  }

  SUBCASE("duplicate (unit, period) rows are rejected") {
    testutil::write_file(dir.file("dup.tsv"),
                         "unit\tperiod\ty\n"
                         "a\t1\t1\n"
                         "a\t1\t2\n");
    CHECK_THROWS_AS(load_panel(dir.file("dup.tsv")), DuplicateCell);
  }

  SUBCASE("missing required column is named") {
    testutil::write_file(dir.file("m.tsv"), "unit\ty\na\t1\n");
    CHECK_THROWS_AS(load_panel(dir.file("m.tsv")), MissingColumn);
  }

  SUBCASE("bad period reports the line") {
    testutil::write_file(dir.file("bad.tsv"),
                         "unit\tperiod\ty\na\t1\t1\na\tzzz\t2\n");
    try {
      load_panel(dir.file("bad.tsv"));
      FAIL("expected MalformedRow");
    } catch (const MalformedRow& e) {
      CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
  }

  SUBCASE("adoption indicator must be absorbing") {
    testutil::write_file(dir.file("ind.tsv"),
                         "unit\tperiod\tadoption\ty\n"
                         "a\t4\t0\t1\n"
                         "a\t5\t1\t1\n"
                         "a\t6\t0\t1\n");
    PanelSchema schema;
    schema.adoption_is_indicator = true;
    CHECK_THROWS_AS(load_panel(dir.file("ind.tsv"), schema), MalformedRow);
    // the absorbing trajectory is accepted and dated at first treatment
    testutil::write_file(dir.file("ok.tsv"),
                         "unit\tperiod\tadoption\ty\n"
                         "a\t4\t0\t1\n"
                         "a\t5\t1\t1\n"
                         "a\t6\t1\t1\n");
    PanelDataset p = load_panel(dir.file("ok.tsv"), schema);
    CHECK(*p.unit(0).adoption_period == 5);
  }

  SUBCASE("cov_ prefix infers covariates") {
    testutil::write_file(dir.file("cov.tsv"),
                         "unit\tperiod\ty\tcov_x\na\t1\t1\t0.5\n");
    PanelDataset p = load_panel(dir.file("cov.tsv"));
    CHECK(p.outcome_names() == std::vector<std::string>{"y"});
    CHECK(p.covariate_names() == std::vector<std::string>{"x"});
    CHECK(p.covariate("x")[0] == 0.5);
  }
}

TEST_CASE("save and reload reproduce the dataset") {
  TempDir dir("roundtrip");
  auto p = toy_panel({{.id = "a", .shock = 3, .adoption = 6,
                       .district = "d1", .provider = "p3"},
                      {.id = "b", .shock = 4},
                      {.id = "c"}},
                     0, 9, [](int u, int t) { return u * 10.0 + t * 0.25; });
  save_panel(p, dir.file("p.tsv"), '\t', "round trip");
  PanelDataset q = load_panel(dir.file("p.tsv"));

  REQUIRE(q.n_units() == p.n_units());
  REQUIRE(q.n_cells() == p.n_cells());
  for (int u = 0; u < p.n_units(); ++u) {
    CHECK(q.unit(u).id == p.unit(u).id);
    CHECK(q.unit(u).shock_period == p.unit(u).shock_period);
    CHECK(q.unit(u).adoption_period == p.unit(u).adoption_period);
    CHECK(q.unit(u).district == p.unit(u).district);
    CHECK(q.unit(u).provider == p.unit(u).provider);
  }
  for (long i = 0; i < p.n_cells(); ++i) {
    CHECK(q.cell_unit()[i] == p.cell_unit()[i]);
    CHECK(q.cell_period()[i] == p.cell_period()[i]);
    CHECK(q.outcome("y")[i] == p.outcome("y")[i]);
    CHECK(q.weights()[i] == p.weights()[i]);
  }

  // a second emit of the reloaded panel is byte-identical
  save_panel(q, dir.file("q.tsv"), '\t', "round trip");
  CHECK(testutil::read_file(dir.file("p.tsv")) ==
        testutil::read_file(dir.file("q.tsv")));
}

TEST_CASE("transition gap masking") {
  auto flat = [](int, int) { return 1.0; };

  SUBCASE("adoption after shock drops the in-between periods") {
    auto p = toy_panel({{.id = "a", .shock = 4, .adoption = 7}}, 0, 10, flat);
    const CensorMask mask = censor_gap_mask(p);
    for (int t = 0; t <= 10; ++t) {
      const bool kept = mask.keep[p.cell_at(0, t)] != 0;
      const bool expect = t < 4 || t >= 7;
      CHECK(kept == expect);
    }
    CHECK(mask.n_dropped() == 3);
  }

  SUBCASE("shock after adoption drops the reversed window") {
    auto p = toy_panel({{.id = "a", .shock = 6, .adoption = 3}}, 0, 10, flat);
    const CensorMask mask = censor_gap_mask(p);
    for (int t = 0; t <= 10; ++t) {
      const bool kept = mask.keep[p.cell_at(0, t)] != 0;
      const bool expect = t < 3 || t >= 6;
      CHECK(kept == expect);
    }
  }

  SUBCASE("equal anchors or a missing anchor keep everything") {
    auto p = toy_panel({{.id = "a", .shock = 5, .adoption = 5},
                        {.id = "b", .shock = 5},
                        {.id = "c", .adoption = 5},
                        {.id = "d"}},
                       0, 10, flat);
    CHECK(censor_gap_mask(p).n_dropped() == 0);
  }

  SUBCASE("every cell is kept or dropped, never both") {
    auto p = toy_panel({{.id = "a", .shock = 2, .adoption = 9},
                        {.id = "b", .shock = 8, .adoption = 1}},
                       0, 10, flat);
    const CensorMask mask = censor_gap_mask(p);
    long kept = 0;
    for (uint8_t k : mask.keep) kept += k ? 1 : 0;
    CHECK(kept + mask.n_dropped() == p.n_cells());
  }

  SUBCASE("censor_gap mirrors the mask into the panel flags") {
    auto p = toy_panel({{.id = "a", .shock = 4, .adoption = 7}}, 0, 10, flat);
    const CensorMask mask = censor_gap(p);
    for (long i = 0; i < p.n_cells(); ++i) {
      CHECK((p.censored()[i] != 0) == (mask.keep[i] == 0));
    }
  }
}

TEST_CASE("censor report and gap histogram") {
  auto p = toy_panel({{.id = "a", .shock = 4, .adoption = 7},
                      {.id = "b", .shock = 9, .adoption = 2},
                      {.id = "c", .shock = 5, .adoption = 5},
                      {.id = "d", .adoption = 3}},
                     0, 12, [](int, int) { return 0.0; });
  const auto report = censor_report(p);
  REQUIRE(report.size() == 2);
  CHECK(report[0].unit == "a");
  CHECK(report[0].t_shock == 4);
  CHECK(report[0].t_adopt == 7);
  CHECK(report[0].drop_from == 4);
  CHECK(report[0].drop_to == 6);
  CHECK(report[1].unit == "b");
  CHECK(report[1].drop_from == 2);
  CHECK(report[1].drop_to == 8);

  const auto hist = censor_gap_histogram(p);
  CHECK(hist.at(3) == 1);  // unit a
  CHECK(hist.at(7) == 1);  // unit b
  CHECK(hist.at(0) == 1);  // unit c
}
