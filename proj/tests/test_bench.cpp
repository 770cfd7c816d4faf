#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "support/fixtures.hpp"

using namespace cardlab;
using cardlab::test::chain_schema;

namespace {

WorkloadScript small_workload(const Schema& schema, Rng& rng, std::size_t rows = 400,
                              std::size_t dml = 150) {
    RowStore full = cardlab::test::random_instance(schema, rng, rows);
    WorkloadConfig cfg;
    cfg.dml_count = dml;
    cfg.train_queries = 8;
    cfg.eval_queries = 6;
    return generate_workload(schema, full, cfg, rng);
}

}  // namespace

TEST_CASE("q-error basics") {
    CHECK(q_error(10, 10) == 1.0);
    CHECK(q_error(5, 50) == 10.0);
    CHECK(q_error(50, 5) == 10.0);
    CHECK_THROWS_AS(q_error(0, 5), NonPositiveError);
    CHECK_THROWS_AS(q_error(5, -1), NonPositiveError);

    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        double a = rng.uniform(0.1, 1000), b = rng.uniform(0.1, 1000);
        CHECK(q_error(a, b) == q_error(b, a));
        CHECK(q_error(a, a) == 1.0);
        CHECK(q_error(a, b) >= 1.0);
    }
}

TEST_CASE("estimates round to integers, half up, floor one") {
    CHECK(estimate_as_integer(0.4) == 1);
    CHECK(estimate_as_integer(1.5) == 2);
    CHECK(estimate_as_integer(2.49) == 2);
    CHECK(estimate_as_integer(0.0) == 1);
    CHECK(estimate_as_integer(1e6 + 0.5) == 1000001);
}

TEST_CASE("pg baseline on single relations") {
    Schema schema = chain_schema();
    Rng rng(2);
    RowStore store = cardlab::test::random_instance(schema, rng, 300);
    auto states = DbStates::build(schema, store, 8, BinMode::EqualWidth);
    PgIndepEstimator pg(100);
    pg.build(schema, store, states);

    // no filters: the relation's build-time row count
    SubQuery q;
    q.relations = {0};
    EstimateContext ctx{q, states, 0};
    CHECK(pg.estimate(ctx) == Catch::Approx(double(store.relation(0).size())));

    // a filter covering the whole domain changes nothing
    q.filters = {{{0, 1}, CmpOp::Ge, 0.0}};
    CHECK(pg.estimate(ctx) == Catch::Approx(double(store.relation(0).size())));
}

TEST_CASE("pg join formula on uniform keys matches the oracle") {
    // r(a) uniform over 1..10, 100 rows; s(a) uniform, 50 rows -> join = 500
    Schema schema({
                      {"r", {{"a", AttrKind::Categorical, 1, 10, {}}}},
                      {"s", {{"a", AttrKind::Categorical, 1, 10, {}}}},
                  },
                  {{{0, 0}, {1, 0}}});
    RowStore store(schema);
    for (int i = 0; i < 100; ++i)
        apply_statement(schema, store, InsertStmt{0, {double(1 + i % 10)}});
    for (int i = 0; i < 50; ++i)
        apply_statement(schema, store, InsertStmt{1, {double(1 + i % 10)}});
    auto states = DbStates::build(schema, store, 8, BinMode::EqualWidth);
    PgIndepEstimator pg;
    pg.build(schema, store, states);

    SubQuery q;
    q.relations = {0, 1};
    q.joins = {{{0, 0}, {1, 0}}};
    EstimateContext ctx{q, states, 0};
    CHECK(pg.estimate(ctx) == Catch::Approx(500.0));
    CHECK(hash_join_count(schema, store, q) == 500);
}

TEST_CASE("uniform sampling at p = 1 reproduces the oracle") {
    Schema schema = chain_schema();
    Rng rng(3);
    RowStore store = cardlab::test::random_instance(schema, rng, 250);
    auto states = DbStates::build(schema, store, 8, BinMode::EqualWidth);
    UniSampEstimator uni(1.0, 77);
    uni.build(schema, store, states);
    for (int i = 0; i < 50; ++i) {
        SubQuery q = generate_query(schema, store, rng);
        for (const auto& sq : enumerate_sub_queries(schema, q)) {
            EstimateContext ctx{sq, states, 0};
            REQUIRE(uni.estimate(ctx) ==
                    Catch::Approx(double(hash_join_count(schema, store, sq))));
        }
    }
}

TEST_CASE("uniform sampling scales counts by the inverse ratio") {
    Schema schema = chain_schema();
    Rng rng(4);
    RowStore store = cardlab::test::random_instance(schema, rng, 300);
    auto states = DbStates::build(schema, store, 8, BinMode::EqualWidth);
    UniSampEstimator uni(0.5, 78);
    uni.build(schema, store, states);

    // sample sizes are ceil(p * |R|)
    for (std::uint32_t r = 0; r < schema.relation_count(); ++r)
        CHECK(uni.samples().relation(r).size() ==
              static_cast<std::size_t>(std::ceil(0.5 * double(store.relation(r).size()))));

    SubQuery q;
    q.relations = {0, 1};
    q.joins = {{{0, 0}, {1, 0}}};
    EstimateContext ctx{q, states, 0};
    const double n_q = double(hash_join_count(schema, uni.samples(), q));
    CHECK(uni.estimate(ctx) == Catch::Approx(n_q / (0.5 * 0.5)));
}

TEST_CASE("optimal pseudo-estimator scores all ones") {
    Schema schema = chain_schema();
    Rng rng(5);
    auto script = small_workload(schema, rng);
    OptimalEstimator optimal;
    auto report = evaluate_estimator(schema, script, 8, BinMode::EqualWidth, optimal);
    REQUIRE_FALSE(report.empty());
    for (const auto& r : report.rows) CHECK(r.q_err == 1.0);
    CHECK(report.quantile(0.5) == 1.0);
    CHECK(report.quantile(0.99) == 1.0);
}

TEST_CASE("empty evaluation stream yields an empty report") {
    Schema schema = chain_schema();
    Rng rng(6);
    RowStore full = cardlab::test::random_instance(schema, rng, 300);
    WorkloadConfig cfg;
    cfg.dml_count = 100;
    cfg.train_queries = 4;
    cfg.eval_queries = 0;
    auto script = generate_workload(schema, full, cfg, rng);
    OptimalEstimator optimal;
    auto report = evaluate_estimator(schema, script, 8, BinMode::EqualWidth, optimal);
    CHECK(report.empty());
    CHECK_THROWS_AS(report.quantile(0.5), Error);
    std::ostringstream summary;
    write_report_summary(summary, {report});
    CHECK(summary.str().find("n/a") != std::string::npos);
}

TEST_CASE("estimate files split by kind and round trip") {
    namespace fs = std::filesystem;
    Schema schema = chain_schema();
    Rng rng(7);
    auto script = small_workload(schema, rng);
    PgIndepEstimator pg;
    auto report = evaluate_estimator(schema, script, 8, BinMode::EqualWidth, pg);
    REQUIRE_FALSE(report.empty());

    const fs::path dir = fs::temp_directory_path() / "cardlab_files_test";
    fs::remove_all(dir);
    emit_estimate_files(report, dir.string());

    auto singles = parse_estimate_file((dir / "single_cards.txt").string());
    auto joins = parse_estimate_file((dir / "join_cards.txt").string());

    std::size_t expect_single = 0, expect_join = 0;
    std::size_t cursor_single = 0, cursor_join = 0;
    for (const auto& r : report.rows) {
        if (r.single) {
            REQUIRE(singles[cursor_single].ordinal == r.ordinal);
            REQUIRE(singles[cursor_single].estimate == estimate_as_integer(r.estimate));
            ++cursor_single;
            ++expect_single;
        } else {
            REQUIRE(joins[cursor_join].ordinal == r.ordinal);
            REQUIRE(joins[cursor_join].estimate == estimate_as_integer(r.estimate));
            ++cursor_join;
            ++expect_join;
        }
    }
    CHECK(singles.size() == expect_single);
    CHECK(joins.size() == expect_join);

    // sub-query text files line up one-to-one
    auto count_lines = [](const fs::path& p) {
        std::ifstream in(p);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) ++n;
        return n;
    };
    CHECK(count_lines(dir / "single_sub_queries.txt") == expect_single);
    CHECK(count_lines(dir / "join_sub_queries.txt") == expect_join);
    fs::remove_all(dir);
}

TEST_CASE("report CSV is stable and quantiles use nearest rank") {
    Schema schema = chain_schema();
    Rng rng(8);
    auto script = small_workload(schema, rng);
    PgIndepEstimator pg;
    auto report = evaluate_estimator(schema, script, 8, BinMode::EqualWidth, pg);

    std::ostringstream a, b;
    write_report_csv(a, report);
    write_report_csv(b, report);
    CHECK(a.str() == b.str());

    // nearest-rank: quantile(p) = sorted[ceil(p * n) - 1]
    auto sorted = report.sorted_q_errors();
    const std::size_t n = sorted.size();
    CHECK(report.quantile(0.5) == sorted[static_cast<std::size_t>(std::ceil(0.5 * n)) - 1]);
    CHECK(report.quantile(0.99) == sorted[static_cast<std::size_t>(std::ceil(0.99 * n)) - 1]);
    CHECK(report.quantile(1.0) == sorted.back());
}

TEST_CASE("learned estimator wrapper reads live states") {
    Schema schema = chain_schema();
    QueryFeaturizer feat(schema);
    AttnModelDims dims{schema.total_attributes(), 8, feat.query_width(), 1, 1, 2};
    AttnCardNet net(dims, Rng(5));
    ModelEstimator est("attn", net, feat);

    Rng rng(9);
    auto script = small_workload(schema, rng);
    auto report = evaluate_estimator(schema, script, 8, BinMode::EqualWidth, est);
    REQUIRE_FALSE(report.empty());
    for (const auto& r : report.rows) {
        CHECK(r.estimate >= 1.0);
        CHECK(r.q_err >= 1.0);
    }
}
