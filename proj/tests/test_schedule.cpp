#include "doctest.h"
#include "tryon/schedule.hpp"

using namespace tryon;

TEST_CASE("linear-beta schedule starts at exactly 1") {
    auto s = build_schedule(ScheduleKind::LinearBeta, 1000);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.T_train == 1000);
    CHECK(s.alpha_bar.size() == 1001);
}

TEST_CASE("cosine schedule is strictly decreasing") {
    auto s = build_schedule(ScheduleKind::Cosine, 1000);
    for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
}

TEST_CASE("linear-beta 1000 terminal value matches an explicit product loop") {
    // Independent oracle: accumulate the product directly from the beta grid.
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        double beta = 1e-4 + (2e-2 - 1e-4) * double(t - 1) / 999.0;
        prod *= 1.0 - beta;
    }
    auto s = build_schedule(ScheduleKind::LinearBeta, 1000);
    CHECK(s.alpha_bar[1000] == doctest::Approx(prod).epsilon(1e-12));
    CHECK(s.alpha_bar[500] > s.alpha_bar[1000]);
}

TEST_CASE("schedule invariants hold across sizes and kinds") {
    for (auto kind : {ScheduleKind::LinearBeta, ScheduleKind::Cosine}) {
        for (int T : {2, 10, 100, 460, 1000}) {
            auto s = build_schedule(kind, T);
            CHECK(s.alpha_bar[0] == 1.0);
            CHECK(s.alpha_bar[T] < 0.01);
            for (int t = 1; t <= T; ++t) {
                CHECK(s.alpha_bar[t] > 0.0);
                CHECK(s.alpha_bar[t] <= 1.0);
                CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            }
        }
    }
}

TEST_CASE("schedule rejects T_train < 2") {
    CHECK_THROWS_AS(build_schedule(ScheduleKind::LinearBeta, 1), InvalidArgument);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::Cosine, 0), InvalidArgument);
}

TEST_CASE("schedule construction is deterministic") {
    auto a = build_schedule(ScheduleKind::Cosine, 777);
    auto b = build_schedule(ScheduleKind::Cosine, 777);
    REQUIRE(a.alpha_bar.size() == b.alpha_bar.size());
    for (size_t i = 0; i < a.alpha_bar.size(); ++i) CHECK(a.alpha_bar[i] == b.alpha_bar[i]);
}

TEST_CASE("step list spans [1, T] ascending") {
    auto sl = build_step_list(50, 1000);
    CHECK(sl.count() == 50);
    CHECK(sl.steps.front() == 1);
    CHECK(sl.steps.back() == 1000);
    for (size_t i = 1; i < sl.steps.size(); ++i) CHECK(sl.steps[i] > sl.steps[i - 1]);

    auto one = build_step_list(1, 1000);
    CHECK(one.count() == 1);
    CHECK(one.steps[0] == 1000);

    // More requested steps than train steps: deduplication shrinks the list.
    auto dense = build_step_list(20, 10);
    CHECK(dense.count() <= 10);
    for (size_t i = 1; i < dense.steps.size(); ++i) CHECK(dense.steps[i] > dense.steps[i - 1]);
    CHECK(dense.steps.back() == 10);
}
