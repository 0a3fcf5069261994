#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "adhdnet/errors.hpp"
#include "adhdnet/optimize.hpp"

using namespace adhdnet;

namespace {

SearchSpace two_dim_space() {
    return SearchSpace({Dimension::continuous("learning_rate", 1e-4, 1e-2, true),
                        Dimension::continuous("dropout_rate", 0.1, 0.6)});
}

double bowl(const Point& p) { return std::pow(std::log10(p[0]) + 3, 2) + std::pow(p[1] - 0.3, 2); }

/// EI by midpoint quadrature of E[max(best - Y, 0)], Y ~ N(mean, sd^2).
double ei_quadrature(double mean, double sd, double best) {
    const int n = 200000;
    const double lo = mean - 12 * sd, hi = mean + 12 * sd, h = (hi - lo) / n;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        const double y = lo + (i + 0.5) * h;
        const double pdf = std::exp(-0.5 * std::pow((y - mean) / sd, 2)) / (sd * std::sqrt(2 * M_PI));
        acc += std::max(best - y, 0.0) * pdf * h;
    }
    return acc;
}

}  // namespace

TEST_CASE("Nelder-Mead finds the Rosenbrock minimum") {
    auto rosen = [](const Eigen::VectorXd& x) { return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2); };
    const auto r = nelder_mead(rosen, Eigen::Vector2d(-1.2, 1.0), 0.5, 4000);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(r.evaluations <= 4000);
}

TEST_CASE("encode/decode round-trips and clamps") {
    const auto space = SearchSpace::hyperparameter_default();
    const Point p{1e-3, 0.25, 1.0, 2, 1};
    const Point back = space.decode(space.encode(p));
    REQUIRE(back.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(back[i] == doctest::Approx(p[i]));
    CHECK(space.contains(p));
    Eigen::VectorXd e = space.encode(p);
    e[0] = 1.7;
    CHECK(space.decode(e)[0] == doctest::Approx(1e-2));
    const auto hp = space.to_hyperparams(p);
    CHECK(hp.batch_size == 64);
    CHECK(hp.optimizer == OptimizerKind::SGDMomentum);
    CHECK(space.from_hyperparams(hp) == p);
}

TEST_CASE("shifted Halton points fill the unit cube") {
    Rng rng = make_rng(3);
    const auto pts = shifted_halton(256, 4, rng);
    std::array<int, 4> low{};
    for (const auto& p : pts)
        for (std::size_t d = 0; d < 4; ++d) {
            CHECK(p[d] >= 0.0);
            CHECK(p[d] < 1.0);
            low[d] += p[d] < 0.5;
        }
    for (int c : low) CHECK(std::abs(c - 128) <= 4);
    CHECK(initial_design(two_dim_space(), 5, 9) == initial_design(two_dim_space(), 5, 9));
}

TEST_CASE("kernel is symmetric with unit diagonal and category decay") {
    const auto space = SearchSpace::hyperparameter_default();
    const auto layout = KernelLayout::of(space);
    CHECK(layout.continuous.size() == 3);
    CHECK(layout.categorical.size() == 2);
    const auto hyper = GpHyper::defaults(layout);
    const auto a = space.encode({1e-3, 0.2, 1.0, 0, 0}), b = space.encode({1e-3, 0.2, 1.0, 0, 1});
    CHECK(gp_kernel(layout, hyper, a, a) == doctest::Approx(hyper.signal_variance));
    CHECK(gp_kernel(layout, hyper, a, b) == doctest::Approx(gp_kernel(layout, hyper, b, a)));
    CHECK(gp_kernel(layout, hyper, a, b) == doctest::Approx(std::exp(-hyper.category_decay * 0.5)));
}

TEST_CASE("GP interpolates noise-free data and has non-negative variance") {
    const auto layout = KernelLayout::all_continuous(1);
    Eigen::MatrixXd x(6, 1);
    Eigen::VectorXd y(6);
    for (int i = 0; i < 6; ++i) {
        x(i, 0) = i / 5.0;
        y[i] = std::sin(3 * x(i, 0));
    }
    Rng rng = make_rng(1);
    const auto gp = GaussianProcess::fit(layout, x, y, rng);
    for (int i = 0; i < 6; ++i) {
        const auto p = gp.predict(x.row(i).transpose());
        CHECK(p.mean == doctest::Approx(y[i]).epsilon(1e-2));
        CHECK(p.variance >= 0.0);
    }
    const auto mid = gp.predict(Eigen::VectorXd::Constant(1, 0.5));
    CHECK(mid.mean == doctest::Approx(std::sin(1.5)).epsilon(0.05));
    CHECK(std::isfinite(gp.log_marginal_likelihood()));
}

TEST_CASE("GP with duplicate inputs stays factorisable") {
    const auto layout = KernelLayout::all_continuous(2);
    Eigen::MatrixXd x(4, 2);
    x << 0.1, 0.2, 0.1, 0.2, 0.1, 0.2, 0.9, 0.9;
    Eigen::VectorXd y(4);
    y << 1.0, 1.0, 1.0, 0.0;
    const GaussianProcess gp(layout, x, y, GpHyper::defaults(layout));
    CHECK(std::isfinite(gp.predict(Eigen::Vector2d(0.5, 0.5)).mean));
}

TEST_CASE("expected improvement matches quadrature") {
    for (auto [mean, sd, best] : {std::tuple{0.0, 1.0, 0.0}, std::tuple{1.0, 0.5, 0.2}, std::tuple{-0.3, 2.0, 0.4}}) {
        CHECK(expected_improvement(mean, sd, best) == doctest::Approx(ei_quadrature(mean, sd, best)).epsilon(1e-6));
    }
    CHECK(expected_improvement(0.5, 0.0, 1.0) == doctest::Approx(0.5));
    CHECK(expected_improvement(1.5, 0.0, 1.0) == 0.0);
    CHECK(acquisition(0.0, 1.0, 0.0, 0.1) == doctest::Approx(expected_improvement(0.0, 1.0, 0.0) - 0.1));
    CHECK(acquisition(0.0, 1.0, 0.0, 0.1, KappaSign::Bonus) ==
          doctest::Approx(expected_improvement(0.0, 1.0, 0.0) + 0.1));
}

TEST_CASE("tune approaches the bowl minimum with a monotone best trace") {
    TuneSettings ts;
    ts.iterations = 25;
    ts.initial_points = 6;
    ts.seed = 2;
    const auto r = tune(bowl, two_dim_space(), ts);
    CHECK(r.history.observations.size() == 25);
    CHECK(r.best_g < 0.05);
    for (std::size_t i = 1; i < r.best_trace.size(); ++i) CHECK(r.best_trace[i] <= r.best_trace[i - 1]);
    CHECK(r.best_g == r.best_trace.back());
}

TEST_CASE("failures are recorded and never chosen as best") {
    TuneSettings ts;
    ts.iterations = 12;
    ts.initial_points = 4;
    ts.failure_value = 100;
    int calls = 0;
    auto flaky = [&](const Point& p) {
        if (++calls % 3 == 0) throw ObjectiveError("flaky");
        return bowl(p);
    };
    const auto r = tune(flaky, two_dim_space(), ts);
    std::size_t failed = 0;
    for (const auto& o : r.history.observations) {
        failed += o.failed;
        if (o.failed) CHECK(o.g == 100.0);
    }
    CHECK(failed == 4);
    CHECK_FALSE(r.history.observations[r.history.best_index()].failed);
    auto always = [](const Point&) -> double { throw ObjectiveError("no"); };
    ts.iterations = 3;
    CHECK_THROWS_AS(tune(always, two_dim_space(), ts), TuningError);
}

TEST_CASE("interrupted searches resume from the log") {
    const auto log = std::filesystem::temp_directory_path() / "adhdnet_bo_resume.jsonl";
    std::filesystem::remove(log);
    TuneSettings ts;
    ts.iterations = 14;
    ts.initial_points = 5;
    ts.seed = 4;
    const auto uninterrupted = tune(bowl, two_dim_space(), ts);

    ts.log_path = log;
    ts.iterations = 8;
    tune(bowl, two_dim_space(), ts);
    int calls = 0;
    ts.iterations = 14;
    const auto resumed = tune([&](const Point& p) { ++calls; return bowl(p); }, two_dim_space(), ts);
    CHECK(calls == 6);
    REQUIRE(resumed.history.observations.size() == 14);
    for (std::size_t i = 0; i < 14; ++i)
        CHECK(resumed.history.observations[i].point == uninterrupted.history.observations[i].point);
    std::ifstream in(log);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("g"));
        CHECK(j.contains("wall_time_s"));
        ++lines;
    }
    CHECK(lines == 14);
    std::filesystem::remove(log);
}

TEST_CASE("settings JSON round-trip") {
    TuneSettings ts;
    ts.iterations = 7;
    ts.bo.kappa = 0.3;
    ts.bo.kappa_sign = KappaSign::Bonus;
    const auto back = TuneSettings::from_json(ts.to_json());
    CHECK(back.iterations == 7);
    CHECK(back.bo.kappa == 0.3);
    CHECK(back.bo.kappa_sign == KappaSign::Bonus);
}
