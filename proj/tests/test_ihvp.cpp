#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "iftk/ihvp.hpp"
#include "iftk/iris.hpp"
#include "iftk/stats.hpp"
#include "iftk/testing/quadratic_model.hpp"
#include "iftk/training.hpp"

#include "support.hpp"

using namespace iftk;
using iftk::testing::QuadraticModel;

TEST_CASE("ihvp_exact on known matrices") {
    DenseHessian identity;
    identity.entries = Matrix::Identity(3, 3);
    const Vector v = iftk_test::random_theta(3, 1);
    const IhvpResult r = ihvp_exact(identity, v, 0.0);
    CHECK((r.t - v).norm() <= 1e-15);
    CHECK(r.residual_norm <= 1e-15);

    DenseHessian diag;
    diag.entries = Matrix::Zero(2, 2);
    diag.entries(0, 0) = 2.0;
    diag.entries(1, 1) = 4.0;
    const IhvpResult d = ihvp_exact(diag, Vector::Ones(2), 0.0);
    CHECK(d.t[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(d.t[1] == Catch::Approx(0.25).margin(1e-15));

    SECTION("damping is applied before the solve") {
        const IhvpResult damped = ihvp_exact(identity, v, 1.0);
        CHECK((damped.t - 0.5 * v).norm() <= 1e-15);
        CHECK(damped.diagnostics.at("damping_used") == 1.0);
    }

    SECTION("non-PD after damping is an error") {
        DenseHessian indefinite;
        indefinite.entries = Matrix::Zero(2, 2);
        indefinite.entries(0, 0) = -1.0;
        indefinite.entries(1, 1) = 1.0;
        CHECK_THROWS_AS(ihvp_exact(indefinite, Vector::Ones(2), 0.1), numerical_error);
    }
}

TEST_CASE("ihvp_exact residual on a trained Iris model") {
    const SplitResult s = split(load_iris(), 0.2, 42, true);
    const Dataset train_data = normalize(s.train, s.test).train;
    ModelSpec spec{4, {5}, 3, Activation::Tanh};
    TrainConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.steps = 20000;
    cfg.weight_decay = 1e-3;
    const TrainedModel m = train(spec, train_data, cfg);
    const Mlp mlp(spec);
    const DenseHessian h =
        exact_hessian(mlp, m.theta_star, train_data, Objective{cfg.weight_decay, std::nullopt});
    const Vector v = iftk_test::random_theta(spec.param_count(), 5);
    const IhvpResult r = ihvp_exact(h, v, 1e-3);
    CHECK(r.residual_norm <= 1e-9);
}

TEST_CASE("ihvp_cg converges in one iteration on alpha * I") {
    const double alpha = 2.5;
    const HvpOracle oracle = [&](const Vector& x) { return (alpha * x).eval(); };
    IhvpConfig cfg;
    cfg.solver = IhvpMethod::Cg;
    const Vector v = iftk_test::random_theta(6, 9);
    const IhvpResult r = ihvp_cg(oracle, v, cfg);
    CHECK(r.iterations_or_depth == 1);
    CHECK((r.t - v / alpha).norm() <= 1e-12);
}

TEST_CASE("ihvp_cg matches the dense solve on random SPD problems") {
    for (std::uint64_t seed : {10ULL, 11ULL, 12ULL}) {
        const int p = 40;
        DenseHessian h;
        h.entries = iftk_test::random_spd(p, seed, 500.0);
        const Vector v = iftk_test::random_theta(p, seed + 100);
        const IhvpResult exact = ihvp_exact(h, v, 0.0);
        IhvpConfig cfg;
        cfg.solver = IhvpMethod::Cg;
        cfg.cg_tol = 1e-12;
        const IhvpResult cg =
            ihvp_cg([&](const Vector& x) { return (h.entries * x).eval(); }, v, cfg);
        CHECK((cg.t - exact.t).norm() <= 1e-8 * exact.t.norm());
    }
}

TEST_CASE("ihvp_cg flags an indefinite Hessian instead of returning NaN") {
    // depth-8 Iris MLP trained without decay has negative curvature directions
    const Dataset iris = load_iris();
    ModelSpec spec{4, {5, 5, 5, 5, 5, 5, 5, 5}, 3, Activation::Tanh};
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.steps = 2000;
    cfg.weight_decay = 0.0;
    cfg.seed = 1;
    const TrainedModel m = train(spec, iris, cfg);
    const Mlp mlp(spec);
    const Objective obj{0.0, std::nullopt};
    const DenseHessian h = exact_hessian(mlp, m.theta_star, iris, obj);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(h.entries);
    REQUIRE(eig.eigenvalues().minCoeff() < -1e-8);  // genuinely indefinite

    IhvpConfig cg;
    cg.solver = IhvpMethod::Cg;
    cg.damping = 0.0;
    cg.cg_tol = 1e-12;
    const Vector v = iftk_test::random_theta(spec.param_count(), 2);
    CHECK_THROWS_AS(ihvp_cg([&](const Vector& x) { return objective_hvp(mlp, m.theta_star,
                                                                        iris, obj, x); },
                            v, cg),
                    numerical_error);
}

TEST_CASE("solvers are linear in the right-hand side") {
    const int p = 25;
    DenseHessian h;
    h.entries = iftk_test::random_spd(p, 33, 80.0);
    const Vector v = iftk_test::random_theta(p, 34);
    const Vector w = iftk_test::random_theta(p, 35);
    const double a = 1.3, b = -2.1;
    const Vector combo = a * v + b * w;

    SECTION("exact") {
        const Vector lhs = ihvp_exact(h, combo, 0.0).t;
        const Vector rhs = a * ihvp_exact(h, v, 0.0).t + b * ihvp_exact(h, w, 0.0).t;
        CHECK((lhs - rhs).norm() <= 1e-10 * rhs.norm());
    }

    SECTION("cg") {
        IhvpConfig cfg;
        cfg.solver = IhvpMethod::Cg;
        cfg.cg_tol = 1e-13;
        const HvpOracle oracle = [&](const Vector& x) { return (h.entries * x).eval(); };
        const Vector lhs = ihvp_cg(oracle, combo, cfg).t;
        const Vector rhs = a * ihvp_cg(oracle, v, cfg).t + b * ihvp_cg(oracle, w, cfg).t;
        CHECK((lhs - rhs).norm() <= 1e-8 * rhs.norm());
    }

    SECTION("lissa with a shared seed") {
        const QuadraticModel model = QuadraticModel::pure(h.entries / 100.0);
        IhvpConfig cfg;
        cfg.solver = IhvpMethod::Lissa;
        cfg.lissa_depth = 400;
        cfg.lissa_repeats = 2;
        cfg.lissa_seed = 77;
        const ParamVector theta = ParamVector::Zero(p);
        const Objective obj{0.0, std::nullopt};
        const Vector lhs = ihvp_lissa(model, theta, obj, combo, cfg).t;
        const Vector rhs = a * ihvp_lissa(model, theta, obj, v, cfg).t +
                           b * ihvp_lissa(model, theta, obj, w, cfg).t;
        CHECK((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }
}

TEST_CASE("lissa recursion sums the geometric series on H = 0.5 I") {
    const int p = 4;
    const QuadraticModel model = QuadraticModel::pure(0.5 * Matrix::Identity(p, p));
    IhvpConfig cfg;
    cfg.solver = IhvpMethod::Lissa;
    cfg.lissa_depth = 200;
    cfg.lissa_repeats = 1;
    cfg.lissa_scale = 1.0;
    const Vector v = iftk_test::random_theta(p, 50);
    const IhvpResult r =
        ihvp_lissa(model, ParamVector::Zero(p), Objective{0.0, std::nullopt}, v, cfg);
    CHECK((r.t - 2.0 * v).norm() <= 1e-12 * v.norm());
    CHECK(r.diagnostics.at("gamma") == 1.0);
}

TEST_CASE("lissa agrees with the exact solver on a trained depth-1 Iris model") {
    const SplitResult s = split(load_iris(), 0.2, 42, true);
    const Dataset train_data = normalize(s.train, s.test).train;
    ModelSpec spec{4, {5}, 3, Activation::Tanh};
    TrainConfig tcfg;
    tcfg.learning_rate = 0.2;
    tcfg.steps = 20000;
    tcfg.weight_decay = 1e-3;
    const TrainedModel m = train(spec, train_data, tcfg);
    const Mlp mlp(spec);
    const Objective obj{tcfg.weight_decay, std::nullopt};
    const DenseHessian h = exact_hessian(mlp, m.theta_star, train_data, obj);
    const Vector v = iftk_test::random_theta(spec.param_count(), 3);
    const Vector exact = ihvp_exact(h, v, 1e-3).t;

    const MlpObjective bound(mlp, train_data);
    std::vector<double> cosines;
    std::vector<double> norm_errors;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        IhvpConfig cfg;
        cfg.solver = IhvpMethod::Lissa;
        cfg.damping = 1e-3;
        cfg.lissa_seed = seed;
        const Vector est = ihvp_lissa(bound, m.theta_star, obj, v, cfg).t;
        cosines.push_back(est.dot(exact) / (est.norm() * exact.norm()));
        norm_errors.push_back(std::abs(est.norm() - exact.norm()) / exact.norm());
    }
    CHECK(median(cosines) >= 0.99);
    CHECK(median(norm_errors) <= 0.05);
}

TEST_CASE("lissa diverges loudly when gamma is below the spectrum") {
    Matrix a = Matrix::Identity(3, 3) * 10.0;  // top eigenvalue 10
    const QuadraticModel model = QuadraticModel::pure(a);
    IhvpConfig cfg;
    cfg.solver = IhvpMethod::Lissa;
    cfg.lissa_depth = 100;
    cfg.lissa_repeats = 1;
    cfg.lissa_scale = 1.0;  // far below 10/1.9
    CHECK_THROWS_WITH(
        ihvp_lissa(model, ParamVector::Zero(3), Objective{0.0, std::nullopt},
                   Vector::Ones(3), cfg),
        Catch::Matchers::ContainsSubstring("gamma"));
}

TEST_CASE("automatic lissa scale tracks the top eigenvalue") {
    const Matrix a = iftk_test::random_spd(15, 60, 30.0);
    const QuadraticModel model = QuadraticModel::pure(a);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double gamma =
        default_lissa_scale(model, ParamVector::Zero(15), Objective{0.0, std::nullopt}, 0.5);
    CHECK(gamma == Catch::Approx(2.0 * lmax + 0.5).epsilon(1e-4));
}

TEST_CASE("IhvpSolver escalates damping when the Hessian is not PD") {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = -5e-4;
    a(1, 1) = 1.0;
    const QuadraticModel model = QuadraticModel::pure(a);
    IhvpConfig cfg;
    cfg.solver = IhvpMethod::Exact;
    cfg.damping = 0.0;
    const IhvpSolver solver(model, ParamVector::Zero(2), Objective{0.0, std::nullopt}, cfg);
    CHECK(solver.damping_used() == 1e-3);

    const Vector v = Vector::Ones(2);
    const IhvpResult r = solver.solve(v);
    Matrix damped = a;
    damped.diagonal().array() += 1e-3;
    CHECK((damped * r.t - v).norm() <= 1e-12);
    CHECK(r.diagnostics.at("damping_used") == 1e-3);
}

TEST_CASE("IhvpSolver keeps the configured damping when it works") {
    const Matrix a = iftk_test::random_spd(10, 70, 20.0);
    const QuadraticModel model = QuadraticModel::pure(a);
    IhvpConfig cfg;
    cfg.solver = IhvpMethod::Exact;
    cfg.damping = 0.01;
    const IhvpSolver solver(model, ParamVector::Zero(10), Objective{0.0, std::nullopt}, cfg);
    CHECK(solver.damping_used() == 0.01);
}

TEST_CASE("IhvpConfig validation") {
    IhvpConfig bad;
    bad.solver = IhvpMethod::Lissa;
    bad.lissa_depth = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.lissa_depth = 10;
    bad.lissa_repeats = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    IhvpConfig neg;
    neg.damping = -0.1;
    CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(ihvp_method_from_string("newton"), config_error);

    IhvpConfig a, b;
    CHECK(a.hash() == b.hash());
    b.damping = 0.5;
    CHECK(a.hash() != b.hash());
}
