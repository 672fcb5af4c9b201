#include <catch2/catch_amalgamated.hpp>

#include "iftk/iris.hpp"
#include "iftk/mlp.hpp"
#include "iftk/objective.hpp"
#include "iftk/testing/quadratic_model.hpp"
#include "iftk/training.hpp"

#include "support.hpp"

using namespace iftk;
using iftk_test::central_difference;
using iftk_test::central_difference_vec;
using iftk_test::random_dataset;
using iftk_test::random_theta;
using iftk_test::random_unit;

TEST_CASE("parameter count and layout") {
    ModelSpec logistic{4, {}, 3, Activation::Tanh};
    CHECK(logistic.param_count() == 4 * 3 + 3);
    ModelSpec deep{4, {5, 5, 5}, 3, Activation::Relu};
    CHECK(deep.param_count() == (4 * 5 + 5) + 2 * (5 * 5 + 5) + (5 * 3 + 3));
    CHECK(deep.depth() == 3);
}

TEST_CASE("init_params is deterministic with zero biases") {
    ModelSpec spec{4, {}, 3, Activation::Tanh};
    const ParamVector a = init_params(spec, 7);
    const ParamVector b = init_params(spec, 7);
    CHECK(a == b);  // bit-identical

    // biases are the trailing block in the depth-0 layout
    for (int i = 0; i < 3; ++i) CHECK(a[4 * 3 + i] == 0.0);

    const ParamVector c = init_params(spec, 8);
    CHECK((a - c).norm() > 0.0);

    ModelSpec deep{4, {6, 5}, 3, Activation::Tanh};
    const ParamVector d = init_params(deep, 3);
    // every weight within the 1/sqrt(fan_in) bound
    const Mlp mlp(deep);
    CHECK(d.size() == deep.param_count());
    CHECK(d.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(4.0) + 1e-15);
}

TEST_CASE("example_loss: uniform softmax at zero parameters") {
    ModelSpec spec{4, {}, 3, Activation::Tanh};
    Mlp mlp(spec);
    const ParamVector theta = ParamVector::Zero(spec.param_count());
    SplitMix64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Example ex;
        ex.features = Vector(4);
        for (int j = 0; j < 4; ++j) ex.features[j] = rng.uniform(-3.0, 3.0);
        ex.label = trial % 3;
        CHECK(mlp.loss(theta, ex) == Catch::Approx(std::log(3.0)).epsilon(1e-14));
    }
}

TEST_CASE("example_loss: large logit margin drives the loss to zero") {
    ModelSpec spec{1, {}, 2, Activation::Tanh};
    Mlp mlp(spec);
    ParamVector theta = ParamVector::Zero(spec.param_count());
    theta[0] = 40.0;   // class-0 weight on the single feature
    theta[1] = -40.0;  // class-1 weight
    Example ex;
    ex.features = Vector::Constant(1, 1.0);
    ex.label = 0;  // margin +80 toward the true class
    CHECK(mlp.loss(theta, ex) >= 0.0);
    CHECK(mlp.loss(theta, ex) < 1e-15);
}

TEST_CASE("example_loss: hand-computed one-hidden-unit tanh value") {
    // W0 = [0.5, -0.25], b0 = 0.1, W1 = [[1], [-1]], b1 = [0.2, -0.2],
    // x = [1, 2], label 0. Expected value computed symbolically by hand.
    ModelSpec spec{2, {1}, 2, Activation::Tanh};
    Mlp mlp(spec);
    ParamVector theta(spec.param_count());
    theta << 0.5, -0.25, 0.1, 1.0, -1.0, 0.2, -0.2;
    Example ex;
    ex.features = Vector(2);
    ex.features << 1.0, 2.0;
    ex.label = 0;
    CHECK(mlp.loss(theta, ex) == Catch::Approx(0.43772328894769041).epsilon(1e-15));
}

TEST_CASE("objective_loss composition") {
    ModelSpec spec{3, {4}, 2, Activation::Tanh};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(9, 3, 2, 21);
    const ParamVector theta = random_theta(spec.param_count(), 5);

    SECTION("single example, no decay, uniform weights equals example_loss") {
        Dataset one = ds;
        one.examples.resize(1);
        CHECK(objective_loss(mlp, theta, one, Objective{}) ==
              Catch::Approx(mlp.loss(theta, one.examples[0])).epsilon(1e-15));
    }

    SECTION("decay-only value on a near-zero-loss dataset") {
        ModelSpec two{1, {}, 2, Activation::Tanh};
        Mlp m2(two);
        ParamVector th = ParamVector::Zero(two.param_count());
        th << 1.0, -1.0, 1.0, -1.0;  // ||theta||^2 = 4, margin 4 per unit feature
        Dataset big;
        big.feature_dim = 1;
        big.num_classes = 2;
        big.name = "margin";
        Example ex;
        ex.features = Vector::Constant(1, 30.0);  // logit margin 120, loss < 1e-52
        ex.label = 0;
        big.examples = {ex};
        CHECK(objective_loss(m2, th, big, Objective{0.5, std::nullopt}) ==
              Catch::Approx(2.0).epsilon(1e-12));
    }

    SECTION("uniform default equals explicit 1/n weights") {
        const double a = objective_loss(mlp, theta, ds, Objective{0.3, std::nullopt});
        Objective explicit_obj{0.3, std::vector<double>(9, 1.0 / 9.0)};
        CHECK(objective_loss(mlp, theta, ds, explicit_obj) == Catch::Approx(a).epsilon(1e-15));
    }

    SECTION("weight length mismatch throws") {
        Objective bad{0.0, std::vector<double>(4, 0.25)};
        CHECK_THROWS_AS(objective_loss(mlp, theta, ds, bad), std::invalid_argument);
    }
}

TEST_CASE("gradient: zero data weights leave only the decay term") {
    ModelSpec spec{3, {4}, 2, Activation::Relu};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(6, 3, 2, 3);
    const ParamVector theta = random_theta(spec.param_count(), 9);
    Objective obj{1.0, std::vector<double>(6, 0.0)};
    const ParamVector g = objective_gradient(mlp, theta, ds, obj);
    CHECK((g - 2.0 * theta).norm() <= 1e-14 * (1.0 + theta.norm()));
}

TEST_CASE("gradient matches central finite differences of objective_loss") {
    for (auto hidden : std::vector<std::vector<int>>{{}, {5}, {4, 4}}) {
        ModelSpec spec{4, hidden, 3, hidden.empty() ? Activation::Tanh : Activation::Tanh};
        Mlp mlp(spec);
        const Dataset ds = random_dataset(12, 4, 3, 77);
        const ParamVector theta = random_theta(spec.param_count(), 13);
        const Objective obj{1e-3, std::nullopt};
        const auto f = [&](const ParamVector& th) { return objective_loss(mlp, th, ds, obj); };
        const ParamVector g = objective_gradient(mlp, theta, ds, obj);

        // 20 random coordinates
        SplitMix64 pick(123);
        const double eps = 5e-6 * (1.0 + theta.norm());
        for (int k = 0; k < 20; ++k) {
            const auto i = static_cast<Eigen::Index>(
                pick.next_below(static_cast<std::size_t>(spec.param_count())));
            Vector e = Vector::Zero(spec.param_count());
            e[i] = 1.0;
            const double fd = central_difference(f, theta, e, eps);
            CHECK(std::abs(fd - g[i]) <= 1e-6 * std::max(std::abs(g[i]), 1e-3));
        }

        // 20 random dense directions
        for (int k = 0; k < 20; ++k) {
            const Vector d = random_unit(spec.param_count(), 1000 + static_cast<std::uint64_t>(k));
            const double fd = central_difference(f, theta, d, eps);
            const double an = g.dot(d);
            CHECK(std::abs(fd - an) <= 1e-6 * std::max(std::abs(an), 1e-3));
        }
    }
}

TEST_CASE("per-example gradients compose into the objective gradient") {
    ModelSpec spec{4, {5}, 3, Activation::Tanh};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(10, 4, 3, 5);
    const ParamVector theta = random_theta(spec.param_count(), 6);
    const double lambda = 0.01;

    ParamVector sum = ParamVector::Zero(spec.param_count());
    for (const auto& ex : ds.examples) sum += per_example_gradient(mlp, theta, ex);
    sum /= static_cast<double>(ds.size());
    sum += 2.0 * lambda * theta;

    const ParamVector g = objective_gradient(mlp, theta, ds, Objective{lambda, std::nullopt});
    CHECK((sum - g).norm() <= 1e-12 * (1.0 + g.norm()));
}

TEST_CASE("per-example gradient at zero parameters matches the softmax formula") {
    // At theta = 0 the softmax is uniform: d loss/d W[k] = (1/c - [k==y]) x,
    // d loss/d b[k] = 1/c - [k==y].
    ModelSpec spec{3, {}, 4, Activation::Tanh};
    Mlp mlp(spec);
    const ParamVector theta = ParamVector::Zero(spec.param_count());
    Example ex;
    ex.features = Vector(3);
    ex.features << 0.3, -1.2, 2.0;
    ex.label = 2;
    const ParamVector g = per_example_gradient(mlp, theta, ex);
    for (int k = 0; k < 4; ++k) {
        const double coeff = 0.25 - (k == 2 ? 1.0 : 0.0);
        for (int j = 0; j < 3; ++j) {
            CHECK(g[k * 3 + j] == Catch::Approx(coeff * ex.features[j]).margin(1e-15));
        }
        CHECK(g[12 + k] == Catch::Approx(coeff).margin(1e-15));
    }

    Example dup = ex;
    CHECK(per_example_gradient(mlp, theta, dup) == g);
}

TEST_CASE("hvp: quadratic surrogate is exact") {
    using iftk::testing::QuadraticModel;
    iftk_test::SplitMix64 rng(2);
    Matrix a(6, 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) a(i, j) = rng.next_gaussian();
    }
    a = (0.5 * (a + a.transpose())).eval();
    const QuadraticModel model = QuadraticModel::pure(a);
    const ParamVector theta = random_theta(6, 31);
    const Vector v = random_theta(6, 32);
    const Vector hv = objective_hvp(model, theta, Objective{0.0, std::nullopt}, v);
    CHECK((hv - a * v).norm() == 0.0);
}

TEST_CASE("hvp linearity") {
    ModelSpec spec{4, {5, 4}, 3, Activation::Tanh};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(8, 4, 3, 17);
    const ParamVector theta = random_theta(spec.param_count(), 19);
    const Objective obj{1e-3, std::nullopt};
    const Vector v = random_theta(spec.param_count(), 41);
    const Vector w = random_theta(spec.param_count(), 42);
    const double alpha = 1.7, beta = -0.4;
    const Vector lhs = objective_hvp(mlp, theta, ds, obj, (alpha * v + beta * w).eval());
    const Vector rhs = alpha * objective_hvp(mlp, theta, ds, obj, v) +
                       beta * objective_hvp(mlp, theta, ds, obj, w);
    CHECK((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
}

TEST_CASE("hvp matches finite differences of the gradient on an Iris MLP") {
    const Dataset iris = load_iris();
    for (auto activation : {Activation::Tanh, Activation::Relu}) {
        ModelSpec spec{4, {5, 5}, 3, activation};
        Mlp mlp(spec);
        const ParamVector theta = init_params(spec, 3);
        const Objective obj{1e-3, std::nullopt};
        const auto grad = [&](const ParamVector& th) -> Vector {
            return objective_gradient(mlp, th, iris, obj);
        };
        const double eps = 1e-5 * (1.0 + theta.norm());
        for (int k = 0; k < 5; ++k) {
            const Vector v = random_unit(spec.param_count(), 500 + static_cast<std::uint64_t>(k));
            const Vector fd = central_difference_vec(grad, theta, v, eps);
            const Vector hv = objective_hvp(mlp, theta, iris, obj, v);
            CHECK((fd - hv).norm() <= 1e-5 * (1.0 + hv.norm()));
        }
    }
}

TEST_CASE("hvp symmetry: v'Hw == w'Hv") {
    ModelSpec spec{4, {6}, 3, Activation::Tanh};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(15, 4, 3, 23);
    const ParamVector theta = random_theta(spec.param_count(), 29);
    const Objective obj{0.0, std::nullopt};
    for (int k = 0; k < 10; ++k) {
        const Vector v = random_theta(spec.param_count(), 600 + static_cast<std::uint64_t>(k));
        const Vector w = random_theta(spec.param_count(), 700 + static_cast<std::uint64_t>(k));
        const double a = v.dot(objective_hvp(mlp, theta, ds, obj, w));
        const double b = w.dot(objective_hvp(mlp, theta, ds, obj, v));
        CHECK(std::abs(a - b) <= 1e-8 * (1.0 + std::abs(a)));
    }
}

TEST_CASE("decay decomposition is exact") {
    ModelSpec spec{4, {5}, 3, Activation::Relu};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(11, 4, 3, 37);
    const ParamVector theta = random_theta(spec.param_count(), 38);
    const Vector v = random_theta(spec.param_count(), 39);
    const double lambda = 0.37;
    const Objective with{lambda, std::nullopt};
    const Objective without{0.0, std::nullopt};

    const double dl = objective_loss(mlp, theta, ds, with) - objective_loss(mlp, theta, ds, without);
    CHECK(std::abs(dl - lambda * theta.squaredNorm()) <= 1e-12 * (1.0 + std::abs(dl)));

    const Vector dg = objective_gradient(mlp, theta, ds, with) -
                      objective_gradient(mlp, theta, ds, without);
    CHECK((dg - 2.0 * lambda * theta).norm() <= 1e-12 * (1.0 + dg.norm()));

    const Vector dh = objective_hvp(mlp, theta, ds, with, v) -
                      objective_hvp(mlp, theta, ds, without, v);
    CHECK((dh - 2.0 * lambda * v).norm() <= 1e-12 * (1.0 + dh.norm()));
}

TEST_CASE("operations are deterministic") {
    ModelSpec spec{4, {5}, 3, Activation::Tanh};
    Mlp mlp(spec);
    const Dataset ds = random_dataset(10, 4, 3, 51);
    const ParamVector theta = random_theta(spec.param_count(), 52);
    const Objective obj{1e-3, std::nullopt};
    const Vector v = random_theta(spec.param_count(), 53);

    CHECK(objective_loss(mlp, theta, ds, obj) == objective_loss(mlp, theta, ds, obj));
    CHECK(objective_gradient(mlp, theta, ds, obj) == objective_gradient(mlp, theta, ds, obj));
    CHECK(objective_hvp(mlp, theta, ds, obj, v) == objective_hvp(mlp, theta, ds, obj, v));
}

TEST_CASE("dimension mismatches are rejected") {
    ModelSpec spec{4, {5}, 3, Activation::Tanh};
    Mlp mlp(spec);
    Example bad;
    bad.features = Vector::Zero(3);
    bad.label = 0;
    const ParamVector theta = ParamVector::Zero(spec.param_count());
    CHECK_THROWS_AS(mlp.loss(theta, bad), std::invalid_argument);
    CHECK_THROWS_AS(mlp.loss(ParamVector::Zero(5), bad), std::invalid_argument);
    Example ok;
    ok.features = Vector::Zero(4);
    ok.label = 0;
    CHECK_THROWS_AS(mlp.loss_hvp(theta, ok, Vector::Zero(7)), std::invalid_argument);
}
