#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hagil/tinynet.hpp"
#include "test_support.hpp"

using namespace hagil;
using hagil::test::random_matrix;
using hagil::test::TempDir;

namespace {

// 2 inputs -> 2 hidden (BN) -> 2 classes with hand-picked parameters.
MlpModel tiny_model() {
    MlpModel m(Architecture{2, {2}, 0.0, true}, 2, 0);
    auto& l = m.hidden()[0];
    l.weight << 1, -1, 0.5, 2;
    l.bias << 0.1, -0.2;
    l.gamma << 2, 0.5;
    l.beta << 0.1, -0.3;
    l.running_mean << 0.2, 0.4;
    l.running_var << 4, 0.25;
    m.head_weight() << 1, -2, 0.5, 1;
    m.head_bias() << 0.05, -0.05;
    return m;
}

std::vector<double> flatten(MlpModel& m) {
    std::vector<double> out;
    for (auto s : m.parameters()) out.insert(out.end(), s.begin(), s.end());
    return out;
}

}  // namespace

TEST_CASE("hand-built network, eval mode") {
    const MlpModel m = tiny_model();
    Matrix x(1, 2);
    x << 0.3, -0.7;
    const Matrix y = m.predict(x);
    // Reference values from an independent numpy evaluation.
    CHECK(y(0, 0) == doctest::Approx(1.04999888).epsilon(1e-7));
    CHECK(y(0, 1) == doctest::Approx(0.44999944).epsilon(1e-7));
}

TEST_CASE("hand-built network, train mode batch statistics") {
    MlpModel m = tiny_model();
    m.set_mode(MlpModel::Mode::Train);
    Matrix x(2, 2);
    x << 0.3, -0.7, -0.4, 0.9;
    const Matrix y = m.forward(x);
    CHECK(y(0, 0) == doctest::Approx(2.14999244).epsilon(1e-7));
    CHECK(y(0, 1) == doctest::Approx(0.99999622).epsilon(1e-7));
    CHECK(y(1, 0) == doctest::Approx(-0.34999754).epsilon(1e-7));
    CHECK(y(1, 1) == doctest::Approx(0.14999877).epsilon(1e-7));
    const auto& l = m.hidden()[0];
    CHECK(l.running_mean(0) == doctest::Approx(0.175));
    CHECK(l.running_mean(1) == doctest::Approx(0.3575));
    CHECK(l.running_var(0) == doctest::Approx(3.8645));
    CHECK(l.running_var(1) == doctest::Approx(0.631125));
}

TEST_CASE("eval forward is repeatable and pure") {
    Rng rng(1);
    MlpModel m(Architecture{10}, 4, 7);
    const Matrix x = random_matrix(rng, 5, 10);
    const auto before = flatten(m);
    CHECK(m.forward(x) == m.forward(x));
    CHECK(flatten(m) == before);
}

TEST_CASE("zero model gives uniform probabilities") {
    MlpModel m(Architecture{6, {8}}, 5, 0);
    for (auto s : m.parameters()) std::fill(s.begin(), s.end(), 0.0);
    Rng rng(2);
    const Matrix p = softmax_rows(m.predict(random_matrix(rng, 3, 6)));
    for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p.data()[i] == doctest::Approx(0.2));
}

TEST_CASE("train forward needs two rows with batch norm") {
    MlpModel m(Architecture{3}, 2, 0);
    m.set_mode(MlpModel::Mode::Train);
    CHECK_THROWS_AS(m.forward(Matrix::Ones(1, 3)), std::invalid_argument);
    CHECK_THROWS_AS(m.forward(Matrix::Ones(2, 4)), std::invalid_argument);
}

TEST_CASE("embedding contract") {
    Rng rng(3);
    MlpModel m(Architecture{12, {16, 8}}, 3, 1);
    const Matrix x = random_matrix(rng, 20, 12);
    const Matrix e = m.embed(x);
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
        if (m.embed(x.row(i), false).norm() > 0) CHECK(std::abs(e.row(i).norm() - 1.0) < 1e-12);
    }
    CHECK(m.embed(x) == e);

    // Instrumented forward: eval-mode hidden stack computed by hand.
    Matrix a = x;
    for (const auto& l : m.hidden()) {
        Matrix z = a * l.weight.transpose();
        z.rowwise() += l.bias.transpose();
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
            z.col(j) = ((z.col(j).array() - l.running_mean(j)) / std::sqrt(l.running_var(j) + kBatchNormEps)) *
                           l.gamma(j) +
                       l.beta(j);
        }
        a = z.cwiseMax(0.0);
    }
    CHECK((m.embed(x, false) - a).cwiseAbs().maxCoeff() < 1e-12);
    const Matrix logits = a * m.head_weight().transpose();
    CHECK(((logits.rowwise() + m.head_bias().transpose()) - m.predict(x)).cwiseAbs().maxCoeff() < 1e-12);

    m.set_mode(MlpModel::Mode::Train);
    CHECK_THROWS_AS(m.embed(x), std::logic_error);
}

TEST_CASE("expand_head keeps old logits") {
    Rng rng(4);
    MlpModel m(Architecture{9}, 2, 5);
    const Matrix x = random_matrix(rng, 100, 9);
    const Matrix before = m.predict(x);
    m.expand_head(1, 11);
    CHECK(m.n_classes() == 3);
    const Matrix after = m.predict(x);
    CHECK(after.leftCols(2) == before);
    CHECK_THROWS_AS(m.expand_head(0, 1), std::invalid_argument);
}

TEST_CASE("two single expansions match one double expansion in shape") {
    MlpModel a(Architecture{5}, 2, 1);
    MlpModel b = a;
    a.expand_head(1, 3);
    a.expand_head(1, 4);
    b.expand_head(2, 3);
    CHECK(a.head_weight().rows() == b.head_weight().rows());
    CHECK(a.head_weight().topRows(2) == b.head_weight().topRows(2));
    CHECK(a.head_bias().head(2) == b.head_bias().head(2));
}

TEST_CASE("dropout keeps the activation expectation") {
    MlpModel m(Architecture{4, {500}, 0.35, false}, 2, 9);
    m.set_mode(MlpModel::Mode::Train);
    ForwardCache cache;
    double sum = 0.0, zeros = 0.0, count = 0.0;
    for (int i = 0; i < 20; ++i) {
        m.forward(Matrix::Ones(2, 4), &cache);
        const Matrix& mask = cache.layers[0].mask;
        sum += mask.sum();
        zeros += (mask.array() == 0.0).count();
        count += static_cast<double>(mask.size());
    }
    CHECK(count >= 1e4);
    CHECK(std::abs(sum / count - 1.0) < 0.02);
    CHECK(std::abs(zeros / count - 0.35) < 0.02);
}

TEST_CASE("property: softmax rows sum to one and ignore shifts") {
    Rng rng(5);
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix z = random_matrix(rng, 4, 7, 10.0);
        const Matrix p = softmax_rows(z);
        for (Eigen::Index i = 0; i < p.rows(); ++i) REQUIRE(std::abs(p.row(i).sum() - 1.0) < 1e-9);
        Matrix zs = z;
        zs.array() += shift(rng);
        REQUIRE((softmax_rows(zs) - p).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("cross entropy value and gradient") {
    Matrix z(1, 3);
    z << 1, 2, 3;
    const std::vector<int> y{0};
    const auto r = cross_entropy(z, y);
    CHECK(r.loss == doctest::Approx(2.40760596444438).epsilon(1e-12));
    CHECK(r.grad(0, 0) == doctest::Approx(-0.90996943).epsilon(1e-7));
    CHECK(r.grad(0, 1) == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(r.grad(0, 2) == doctest::Approx(0.66524096).epsilon(1e-7));
    const std::vector<int> bad{3};
    CHECK_THROWS(cross_entropy(z, bad));
}

TEST_CASE("distillation fixed point") {
    Rng rng(6);
    const Matrix t = random_matrix(rng, 5, 4, 3.0);
    for (auto form : {DistillForm::SigmoidBce, DistillForm::SoftmaxT2}) {
        CHECK(loss_distill(t, t, form).grad.cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("sigmoid distillation at zero logits is ln 2") {
    const Matrix z = Matrix::Zero(1, 1);
    CHECK(loss_distill(z, z, DistillForm::SigmoidBce).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("softmax T=2 distillation value") {
    Matrix t(1, 2), s(1, 2);
    t << 2, 0;
    s << 0, 2;
    const auto r = loss_distill(s, t, DistillForm::SoftmaxT2);
    // Independent scalar evaluation of -sum p_t log p_s at T = 2.
    CHECK(r.loss == doctest::Approx(1.0443202661482278).epsilon(1e-12));
    CHECK(r.grad(0, 0) == doctest::Approx(-0.23105858).epsilon(1e-7));
    CHECK(r.grad(0, 1) == doctest::Approx(0.23105858).epsilon(1e-7));
}

TEST_CASE("property: distillation gradients match finite differences") {
    Rng rng(7);
    for (auto form : {DistillForm::SigmoidBce, DistillForm::SoftmaxT2}) {
        const Matrix t = random_matrix(rng, 3, 4, 2.0);
        Matrix s = random_matrix(rng, 3, 4, 2.0);
        const Matrix g = loss_distill(s, t, form).grad;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            const double h = 1e-6, keep = s.data()[i];
            s.data()[i] = keep + h;
            const double up = loss_distill(s, t, form).loss;
            s.data()[i] = keep - h;
            const double down = loss_distill(s, t, form).loss;
            s.data()[i] = keep;
            CHECK(g.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("plateau scheduler divides by three after a flat stretch") {
    PlateauScheduler s(1e-3, 3.0, 5, 1e-4, 1e-5);
    std::vector<double> lrs;
    for (int e = 0; e < 6; ++e) lrs.push_back(s.step(0.5));
    for (int e = 0; e < 5; ++e) CHECK(lrs[e] == 1e-3);
    CHECK(lrs[5] == doctest::Approx(1e-3 / 3.0));

    PlateauScheduler improving(1e-3, 3.0, 5, 1e-4, 1e-5);
    for (int e = 0; e < 30; ++e) CHECK(improving.step(1.0 - 0.01 * e) == 1e-3);

    PlateauScheduler floor(1e-3, 3.0, 1, 1e-4, 1e-4);
    for (int e = 0; e < 10; ++e) floor.step(1.0);
    CHECK(floor.lr() == 1e-4);
}

TEST_CASE("zero epochs leave the model untouched") {
    Rng rng(8);
    MlpModel m(Architecture{6}, 2, 1);
    TrainData d{random_matrix(rng, 10, 6), std::vector<int>(10, 0)};
    const auto before = flatten(m);
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto report = train_epochs(m, d, cfg);
    CHECK(report.epochs.empty());
    CHECK(flatten(m) == before);
}

TEST_CASE("separable two-class data is fit exactly") {
    Rng rng(9);
    const Eigen::Index n = 60;
    Matrix x = random_matrix(rng, n, 8, 0.3);
    std::vector<int> y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        x(i, 0) += y[i] ? 1.5 : -1.5;
    }
    MlpModel m(Architecture{8}, 2, 2);
    TrainConfig cfg;
    cfg.epochs = 50;
    const auto report = train_epochs(m, {x, y}, cfg);
    CHECK(report.epochs.size() == 50);
    CHECK(m.mode() == MlpModel::Mode::Eval);
    const Matrix logits = m.predict(x);
    int correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index arg;
        logits.row(i).maxCoeff(&arg);
        correct += arg == y[i];
    }
    CHECK(correct == n);
    CHECK(report.epochs.back().loss < report.epochs.front().loss);
}

TEST_CASE("training is deterministic for a seed") {
    Rng rng(10);
    TrainData d{random_matrix(rng, 40, 5), {}};
    for (int i = 0; i < 40; ++i) d.labels.push_back(i % 3);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 77;
    MlpModel a(Architecture{5, {16}}, 3, 3), b = a;
    const auto ra = train_epochs(a, d, cfg);
    const auto rb = train_epochs(b, d, cfg);
    CHECK(flatten(a) == flatten(b));
    CHECK(ra.epochs.back().loss == rb.epochs.back().loss);
}

TEST_CASE("bias-only softmax model gradient is softmax minus one-hot") {
    Rng rng(11);
    MlpModel m(Architecture{3, {}, 0.0, false}, 4, 0);
    m.head_weight().setZero();
    m.head_bias() << 0.3, -0.1, 0.7, 0.0;
    m.set_mode(MlpModel::Mode::Train);
    const Matrix x = random_matrix(rng, 6, 3);
    const std::vector<int> y{0, 1, 2, 3, 2, 1};
    ForwardCache cache;
    const Matrix logits = m.forward(x, &cache);
    const auto g = m.backward(cache, cross_entropy(logits, y).grad);
    Matrix p = softmax_rows(logits);
    for (std::size_t i = 0; i < y.size(); ++i) p(static_cast<Eigen::Index>(i), y[i]) -= 1.0;
    const Vector closed = p.colwise().mean().transpose();
    CHECK((g.head_bias - closed).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradient check passes on a small network and catches a corrupted backward") {
    Rng rng(12);
    MlpModel m(Architecture{7, {6, 5}}, 3, 4);
    const Matrix x = random_matrix(rng, 8, 7);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    CHECK(grad_check(m, x, y) < 1e-6);
    const double broken = grad_check(m, x, y, [](ModelGradients& g) { g.head_bias *= 2.0; });
    CHECK(broken > 1e-1);
    const double broken_bn = grad_check(m, x, y, [](ModelGradients& g) { g.hidden[0].gamma *= 1.5; });
    CHECK(broken_bn > 1e-2);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    TempDir dir("ckpt");
    Rng rng(13);
    MlpModel m(Architecture{9, {12, 6}}, 3, 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    TrainData d{random_matrix(rng, 30, 9), {}};
    for (int i = 0; i < 30; ++i) d.labels.push_back(i % 3);
    train_epochs(m, d, cfg);
    save_model(dir / "m.json", m, {"a", "b", "c"});
    const auto back = load_model(dir / "m.json");
    CHECK(back.classes == std::vector<std::string>{"a", "b", "c"});
    const Matrix x = random_matrix(rng, 50, 9);
    CHECK(back.model.predict(x) == m.predict(x));
    CHECK(back.model.architecture().hidden == m.architecture().hidden);
    CHECK_THROWS(load_model(dir / "missing.json"));
}
