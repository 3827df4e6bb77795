#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dxp/error.hpp"
#include "dxp/ndgrad.hpp"
#include "support.hpp"

using namespace dxp;

TEST_SUITE("ndgrad") {

TEST_CASE("single linear unit: d(out^2)/dw = 2w at input 1") {
    Rng rng(3);
    DenseNet net({1, 1}, Activation::Linear, rng);
    net.parameters()[0] = 0.7;  // weight
    net.parameters()[1] = 0.0;  // bias
    GradTape tape;
    Eigen::MatrixXd x(1, 1);
    x << 1.0;
    const Eigen::MatrixXd out = net.forward(x, tape);
    Eigen::VectorXd grad;
    net.backward(tape, 2.0 * out, grad);
    CHECK(grad[0] == doctest::Approx(1.4).epsilon(1e-15));
    CHECK(grad[1] == doctest::Approx(1.4).epsilon(1e-15));
}

TEST_CASE("reverse mode matches central differences on random networks") {
    const std::vector<std::vector<int>> shapes{{3, 5, 2}, {4, 8, 8, 2}, {6, 7, 7, 4}, {2, 3, 1}};
    for (Activation act : {Activation::Tanh, Activation::Relu}) {
        for (std::size_t s = 0; s < shapes.size(); ++s) {
            for (std::uint64_t seed = 0; seed < 5; ++seed) {
                Rng rng(seed * 31 + s);
                DenseNet net(shapes[s], act, rng);
                net.parameters() += 0.05 * Eigen::VectorXd::Random(net.parameter_count());
                const Eigen::MatrixXd x = Eigen::MatrixXd::Random(shapes[s].front(), 5);
                const Eigen::MatrixXd w = Eigen::MatrixXd::Random(shapes[s].back(), 5);
                // Loss = Σ w ⊙ out + ½‖out‖².
                auto loss = [&](const Eigen::VectorXd& p) {
                    DenseNet copy = net;
                    copy.parameters() = p;
                    const Eigen::MatrixXd o = copy.forward(x);
                    return (w.array() * o.array()).sum() + 0.5 * o.squaredNorm();
                };
                GradTape tape;
                const Eigen::MatrixXd out = net.forward(x, tape);
                Eigen::VectorXd grad;
                net.backward(tape, w + out, grad);
                const auto fd = testing::numeric_gradient(loss, net.parameters(), 1e-5);
                CHECK(testing::relative_error(grad, fd) < 1e-4);
            }
        }
    }
}

TEST_CASE("gradient check on module shapes over 100 seeds") {
    struct Shape {
        std::vector<int> widths;
        Activation act;
    };
    auto shapes = [](int h) {
        return std::vector<Shape>{{{4, h, h, 2}, Activation::Relu},   // classifier
                                  {{10, h, h, 5}, Activation::Relu},  // shared actor-critic
                                  {{10, h, h, 4}, Activation::Relu},  // actor
                                  {{10, h, h, 1}, Activation::Relu},  // critic
                                  {{4, h, 4}, Activation::Tanh}};     // coupling net
    };
    auto check = [](const Shape& sh, std::uint64_t seed) {
        Rng rng(seed);
        DenseNet net(sh.widths, sh.act, rng);
        net.parameters() += 0.05 * Eigen::VectorXd::Random(net.parameter_count());
        const Eigen::MatrixXd x = Eigen::MatrixXd::Random(sh.widths.front(), 3);
        const Eigen::MatrixXd w = Eigen::MatrixXd::Random(sh.widths.back(), 3);
        auto loss = [&](const Eigen::VectorXd& p) {
            DenseNet copy = net;
            copy.parameters() = p;
            return (w.array() * copy.forward(x).array()).sum();
        };
        GradTape tape;
        net.forward(x, tape);
        Eigen::VectorXd grad;
        net.backward(tape, w, grad);
        return testing::relative_error(grad, testing::numeric_gradient(loss, net.parameters(), 1e-5));
    };
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        for (const auto& sh : shapes(16)) worst = std::max(worst, check(sh, 1000 + seed));
    for (std::uint64_t seed = 0; seed < 3; ++seed)
        for (const auto& sh : shapes(64)) worst = std::max(worst, check(sh, 5000 + seed));
    CHECK(worst < 1e-4);
}

TEST_CASE("backward returns the input adjoint") {
    Rng rng(9);
    DenseNet net({3, 4, 2}, Activation::Tanh, rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 1);
    GradTape tape;
    const Eigen::MatrixXd out = net.forward(x, tape);
    Eigen::VectorXd grad;
    const Eigen::MatrixXd dx = net.backward(tape, Eigen::MatrixXd::Ones(2, 1), grad);
    auto f = [&](const Eigen::VectorXd& v) { return net.forward(Eigen::MatrixXd(v)).sum(); };
    const auto fd = testing::numeric_gradient(f, x.col(0), 1e-6);
    CHECK(testing::relative_error(dx.col(0), fd) < 1e-7);
    (void)out;
}

TEST_CASE("forward is deterministic and batched columns are independent") {
    Rng rng(1);
    DenseNet net({3, 6, 2}, Activation::Relu, rng);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
    const Eigen::MatrixXd a = net.forward(x);
    CHECK((a - net.forward(x)).norm() == 0.0);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK((a.col(j) - net.forward_one(x.col(j))).norm() == 0.0);
}

TEST_CASE("zero output scale gives a constant-output network") {
    Rng rng(5);
    DenseNet net({3, 4, 2}, Activation::Relu, rng, 0.0);
    CHECK(net.forward(Eigen::MatrixXd::Random(3, 3)).norm() == 0.0);
}

TEST_CASE("adam: first step moves each coordinate by lr against the gradient sign") {
    Adam opt(3);
    Eigen::VectorXd p(3), g(3);
    p << 1.0, -2.0, 0.5;
    g << 0.3, -4.0, 0.0;
    const Eigen::VectorXd start = p;
    opt.step(p, g, 0.01);
    // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε).
    for (int i = 0; i < 3; ++i) {
        const double expect = start[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
        CHECK(p[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(opt.steps() == 1);
}

TEST_CASE("adam: two steps match the hand recursion") {
    Adam opt(1);
    Eigen::VectorXd p(1), g1(1), g2(1);
    p << 0.0;
    g1 << 1.0;
    g2 << -0.5;
    opt.step(p, g1, 0.1);
    opt.step(p, g2, 0.1);
    double m = 0.0, v = 0.0, x = 0.0;
    for (int t = 1; t <= 2; ++t) {
        const double g = t == 1 ? 1.0 : -0.5;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(p[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    Adam opt(4);
    Eigen::VectorXd p = Eigen::VectorXd::Random(4);
    const Eigen::VectorXd keep = p;
    opt.step(p, Eigen::VectorXd::Random(4), 0.0);
    CHECK((p - keep).norm() == 0.0);
}

TEST_CASE("gradient clipping") {
    Eigen::VectorXd g(2);
    g << 3.0, 4.0;
    clip_grad_norm(g, 1.0);
    CHECK(g.norm() == doctest::Approx(1.0));
    CHECK(g[0] / g[1] == doctest::Approx(0.75));
    Eigen::VectorXd h(2);
    h << 0.1, 0.1;
    clip_grad_norm(h, 1.0);
    CHECK(h[0] == 0.1);
}

TEST_CASE("non-finite values are reported with the layer") {
    Rng rng(2);
    DenseNet net({2, 3, 1}, Activation::Tanh, rng);
    GradTape tape;
    net.forward(Eigen::MatrixXd::Ones(2, 1), tape);
    Eigen::VectorXd grad;
    Eigen::MatrixXd adj(1, 1);
    adj << std::nan("");
    CHECK_THROWS_AS(net.backward(tape, adj, grad), NumericError);
    CHECK_THROWS_AS(require_finite(adj, "adjoint"), NumericError);
}

TEST_CASE("shape errors are contract errors") {
    Rng rng(2);
    CHECK_THROWS_AS(DenseNet({3}, Activation::Relu, rng), ContractError);
    CHECK_THROWS_AS(DenseNet({3, 0, 1}, Activation::Relu, rng), ContractError);
    DenseNet net({2, 3, 1}, Activation::Tanh, rng);
    CHECK_THROWS_AS(net.forward(Eigen::MatrixXd::Ones(3, 1)), ContractError);
}

TEST_CASE("checkpoint round trip is exact") {
    Rng rng(4);
    DenseNet net({3, 5, 2}, Activation::Tanh, rng);
    const auto text = net.to_json().dump();
    const DenseNet back = DenseNet::from_json(nlohmann::json::parse(text));
    CHECK(back.widths() == net.widths());
    CHECK(back.hidden_activation() == net.hidden_activation());
    CHECK((back.parameters() - net.parameters()).norm() == 0.0);
}

}  // TEST_SUITE
