#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sedeg/losses.hpp"

using namespace sedeg;

TEST_CASE("auxiliary classification: hand values and reductions") {
    // two zero logits, true class 0: (-log 0.5 - log 0.5) / 2
    CHECK(loss_aux(Tensor::from({1, 2}, {0, 0}), {0}).item() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-9));
    // saturated correct prediction
    CHECK(loss_aux(Tensor::from({1, 2}, {40, -40}), {0}).item() ==
          doctest::Approx(0.0).epsilon(1e-12));
    // mean reduction: duplicating a row leaves the loss unchanged
    Rng rng(5);
    Tensor one = Tensor::randn({1, 4}, rng);
    std::vector<double> two_vals = one.values();
    two_vals.insert(two_vals.end(), one.values().begin(), one.values().end());
    Tensor two = Tensor::from({2, 4}, two_vals);
    CHECK(loss_aux(two, {1, 1}).item() == doctest::Approx(loss_aux(one, {1}).item()));
    CHECK_THROWS(loss_aux(one, {4}));
    CHECK_THROWS(loss_aux(one, {-1}));
}

TEST_CASE("balanced classification: hand values") {
    // uniform counts reduce to plain softmax cross-entropy
    CHECK(loss_bc(Tensor::from({1, 3}, {0, 0, 0}), {0}, {1, 1, 1}, 1.0).item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-9));
    CHECK(loss_bc(Tensor::from({1, 2}, {1, 0}), {0}, {1, 1}, 1.0).item() ==
          doctest::Approx(0.3132616875182228).epsilon(1e-6));
    // unequal counts shift the partition: -log(1/4)
    CHECK(loss_bc(Tensor::from({1, 2}, {0, 0}), {0}, {1, 3}, 1.0).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
    // a class present in the batch must have a count
    CHECK_THROWS(loss_bc(Tensor::from({1, 2}, {0, 0}), {0}, {0, 3}, 1.0));
    CHECK_THROWS(loss_bc(Tensor::from({1, 2}, {0, 0}), {0}, {1}, 1.0));
}

TEST_CASE("balanced classification: uniform counts equal the CE oracle") {
    Rng rng(11);
    for (int it = 0; it < 10; ++it) {
        const int B = 1 + static_cast<int>(rng.below(4));
        const int C = 2 + static_cast<int>(rng.below(6));
        Tensor o = Tensor::randn({B, C}, rng, 2.0);
        std::vector<int> labels(static_cast<size_t>(B));
        for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<uint64_t>(C)));
        const int64_t s = 1 + static_cast<int64_t>(rng.below(100));
        const std::vector<int64_t> counts(static_cast<size_t>(C), s);
        const double expected = oracle::softmax_ce_mean(o.values(), labels, C);
        CHECK(std::abs(loss_bc(o, labels, counts, 1.0).item() - expected) < 1e-12);
    }
}

TEST_CASE("balanced classification: shift invariance") {
    Rng rng(13);
    Tensor o = Tensor::randn({3, 5}, rng, 2.0);
    std::vector<int64_t> counts = {4, 1, 9, 2, 7};
    std::vector<int> labels = {0, 2, 4};
    const double base = loss_bc(o, labels, counts, 1.0).item();
    const double shifted = loss_bc(add_scalar(o, 57.5), labels, counts, 1.0).item();
    CHECK(std::abs(base - shifted) < 1e-9);
}

TEST_CASE("task embedding distillation: hand values and properties") {
    Tensor e1 = Tensor::from({1, 2}, {1, 0});
    Tensor zero = Tensor::from({1, 2}, {0, 0});
    CHECK(loss_ted({e1}, {e1.clone()}, 2).item() == doctest::Approx(0.0));
    CHECK(loss_ted({e1}, {zero}, 2).item() == doctest::Approx(0.5).epsilon(1e-12));

    // quadratic homogeneity
    Rng rng(17);
    std::vector<Tensor> olds = {Tensor::randn({2, 3}, rng), Tensor::randn({2, 3}, rng)};
    std::vector<Tensor> news = {Tensor::randn({2, 3}, rng), Tensor::randn({2, 3}, rng)};
    const double base = loss_ted(olds, news, 3).item();
    std::vector<Tensor> olds2, news2;
    for (auto& t : olds) olds2.push_back(scale(t, 2.0));
    for (auto& t : news) news2.push_back(scale(t, 2.0));
    CHECK(loss_ted(olds2, news2, 3).item() == doctest::Approx(4.0 * base).epsilon(1e-9));

    CHECK_THROWS(loss_ted({}, {}, 1));  // undefined before the second task
    CHECK_THROWS(loss_ted({e1}, {}, 2));
    CHECK_THROWS(loss_ted({e1}, {Tensor::from({1, 3}, {0, 0, 0})}, 2));
}

TEST_CASE("logits KD: hand values and gradient at agreement") {
    CHECK(loss_kd(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.0})).item() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-9));
    CHECK(loss_kd(Tensor::from({1, 1}, {40.0}), Tensor::from({1, 1}, {40.0})).item() ==
          doctest::Approx(0.0).epsilon(1e-9));

    // at teacher == student the student gradient vanishes
    Rng rng(19);
    Tensor teacher = Tensor::randn({2, 3}, rng, 2.0);
    Tensor student = teacher.clone();
    student.set_requires_grad(true);
    backward(loss_kd(teacher, student));
    for (double g : student.grad()) CHECK(std::abs(g) < 1e-12);

    CHECK_THROWS(loss_kd(Tensor::from({1, 2}, {0, 0}), Tensor::from({1, 3}, {0, 0, 0})));
}

TEST_CASE("divergence loss: uniform logits and label remapping") {
    const int k = 4;
    CHECK(loss_div(Tensor::zeros({2, k + 1}), {0, 4}).item() ==
          doctest::Approx(std::log(k + 1.0)).epsilon(1e-9));
    // perfect "other" prediction for old-class samples
    Tensor confident = Tensor::from({1, 3}, {-40, -40, 40});
    CHECK(loss_div(confident, {2}).item() == doctest::Approx(0.0).epsilon(1e-9));

    // new classes map to task-local order, older labels to the extra index
    const auto mapped = divergence_labels({7, 5, 0, 6}, 5, 3);
    CHECK(mapped == std::vector<int>{2, 0, 3, 1});
    CHECK_THROWS(divergence_labels({8}, 5, 3));
    CHECK_THROWS(divergence_labels({-1}, 5, 3));
}

TEST_CASE("stage totals: hand values and exact composition") {
    LossConfig cfg;
    cfg.alpha = 0.5;
    cfg.lambda = 0.1;
    cfg.mu = 1.0;
    cfg.xi = 0.1;
    Stage1Parts ones{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1),
                     Tensor::scalar(1)};
    CHECK(stage1_loss(ones, cfg).item() == doctest::Approx(2.2).epsilon(1e-12));
    Stage1Parts zeros{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                      Tensor::scalar(0)};
    CHECK(stage1_loss(zeros, cfg).item() == doctest::Approx(0.0));

    LossConfig cfg2;
    cfg2.lambda = 0.1;
    cfg2.beta = 1.0;
    Stage2Parts ones2{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1)};
    CHECK(stage2_loss(ones2, cfg2).item() == doctest::Approx(2.1).epsilon(1e-12));
    Stage2Parts zeros2{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)};
    CHECK(stage2_loss(zeros2, cfg2).item() == doctest::Approx(0.0));

    // machine-precision recomposition on random parts and weights
    Rng rng(23);
    for (int it = 0; it < 20; ++it) {
        LossConfig c;
        c.alpha = rng.uniform();
        c.lambda = rng.uniform();
        c.mu = rng.uniform();
        c.xi = rng.uniform();
        c.beta = rng.uniform();
        const double bc = rng.normal(), kd = rng.normal(), div = rng.normal(),
                     aux = rng.normal(), ted = rng.normal(), bld = rng.normal(),
                     fd = rng.normal();
        Stage1Parts p1{Tensor::scalar(bc), Tensor::scalar(kd), Tensor::scalar(div),
                       Tensor::scalar(aux), Tensor::scalar(ted)};
        const double expect1 =
            (1.0 - c.alpha) * bc + c.alpha * kd + c.lambda * div + c.mu * aux + c.xi * ted;
        CHECK(stage1_loss(p1, c).item() == doctest::Approx(expect1).epsilon(1e-15));
        Stage2Parts p2{Tensor::scalar(bld), Tensor::scalar(div), Tensor::scalar(fd)};
        const double expect2 = bld + c.lambda * div + c.beta * fd;
        CHECK(stage2_loss(p2, c).item() == doctest::Approx(expect2).epsilon(1e-15));
    }

    // undefined parts contribute zero (ablation switches)
    Stage1Parts partial;
    partial.bc = Tensor::scalar(1.0);
    CHECK(stage1_loss(partial, cfg).item() == doctest::Approx(0.5));
}

TEST_CASE("per-class weights: normalization and exponent") {
    const auto uniform = per_class_weights({7, 7, 7}, 1.0);
    for (double w : uniform) CHECK(w == doctest::Approx(1.0));

    const auto w = per_class_weights({1, 3}, 1.0);
    CHECK(w[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-12));

    const auto flat = per_class_weights({1, 10, 200}, 0.0);
    for (double x : flat) CHECK(x == doctest::Approx(1.0));

    CHECK_THROWS(per_class_weights({1, 0}, 1.0));
    CHECK_THROWS(per_class_weights({}, 1.0));
}

TEST_CASE("balanced logits distillation: hand values and linearity") {
    Tensor z = Tensor::from({1, 1}, {0.0});
    CHECK(loss_bld(z, z.clone(), {1.0}, 1.0).item() ==
          doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-9));  // 0.34657
    // saturated teacher: log sigmoid -> 0
    CHECK(loss_bld(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {40.0}), {1.0}, 1.0).item() ==
          doctest::Approx(0.0).epsilon(1e-9));

    Rng rng(29);
    Tensor s = Tensor::randn({2, 3}, rng);
    Tensor t = Tensor::randn({2, 3}, rng);
    const std::vector<double> w1 = {0.5, 1.0, 1.5};
    std::vector<double> w2;
    for (double x : w1) w2.push_back(2.0 * x);
    CHECK(loss_bld(s, t, w2, 1.0).item() ==
          doctest::Approx(2.0 * loss_bld(s, t, w1, 1.0).item()).epsilon(1e-12));

    CHECK_THROWS(loss_bld(s, Tensor::randn({2, 4}, rng), w1, 1.0));
    CHECK_THROWS(loss_bld(s, t, {1.0}, 1.0));
    CHECK_THROWS(loss_bld(s, t, w1, 0.0));
}

TEST_CASE("feature distillation: hand values and homogeneity") {
    Tensor a = Tensor::from({1, 2, 2}, {3, 4, 0, 0});
    Tensor b = Tensor::zeros({1, 2, 2});
    CHECK(loss_fd(a, b).item() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(loss_fd(b, b.clone()).item() == doctest::Approx(0.0));

    Rng rng(31);
    Tensor s = Tensor::randn({3, 2, 4}, rng);
    Tensor t = Tensor::randn({3, 2, 4}, rng);
    const double base = loss_fd(s, t).item();
    // tripling the difference triples the loss
    Tensor s2 = add(t, scale(sub(s, t), 3.0));
    CHECK(loss_fd(s2, t).item() == doctest::Approx(3.0 * base).epsilon(1e-9));
    CHECK_THROWS(loss_fd(s, Tensor::randn({3, 2, 5}, rng)));
}

TEST_CASE("teacher-side inputs never receive gradients") {
    Rng rng(37);
    Tensor teacher = Tensor::randn({2, 4}, rng);
    teacher.set_requires_grad(true);  // even a trainable teacher stays untouched
    Tensor student = Tensor::randn({2, 4}, rng);
    student.set_requires_grad(true);

    backward(loss_kd(teacher, student));
    CHECK_FALSE(teacher.has_grad());
    CHECK(student.has_grad());

    student.zero_grad();
    backward(loss_bld(student, teacher, {1, 1, 1, 1}, 1.0));
    CHECK_FALSE(teacher.has_grad());
    CHECK(student.has_grad());

    Tensor zt = Tensor::randn({2, 3, 2}, rng);
    zt.set_requires_grad(true);
    Tensor zs = Tensor::randn({2, 3, 2}, rng);
    zs.set_requires_grad(true);
    backward(loss_fd(zs, zt));
    CHECK_FALSE(zt.has_grad());
    CHECK(zs.has_grad());
}

TEST_CASE("non-negativity on random valid inputs") {
    Rng rng(41);
    for (int it = 0; it < 20; ++it) {
        const int B = 1 + static_cast<int>(rng.below(4));
        const int C = 2 + static_cast<int>(rng.below(5));
        Tensor o = Tensor::randn({B, C}, rng, 3.0);
        std::vector<int> labels(static_cast<size_t>(B));
        for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<uint64_t>(C)));
        std::vector<int64_t> counts(static_cast<size_t>(C));
        for (auto& s : counts) s = 1 + static_cast<int64_t>(rng.below(50));
        std::vector<double> w(static_cast<size_t>(C));
        for (auto& x : w) x = rng.uniform(0.0, 2.0);

        CHECK(loss_aux(o, labels).item() >= 0.0);
        CHECK(loss_bc(o, labels, counts, 1.0).item() >= 0.0);
        CHECK(loss_bld(o, Tensor::randn({B, C}, rng, 3.0), w, 1.0).item() >= 0.0);
        CHECK(loss_fd(Tensor::randn({B, C}, rng), Tensor::randn({B, C}, rng)).item() >= 0.0);
        CHECK(loss_ted({Tensor::randn({B, C}, rng)}, {Tensor::randn({B, C}, rng)}, 2).item() >=
              0.0);
    }
}

TEST_CASE("bld conventional switch swaps the differentiated side") {
    Rng rng(43);
    Tensor s = Tensor::randn({2, 3}, rng);
    Tensor t = Tensor::randn({2, 3}, rng);
    const std::vector<double> w = {1, 1, 1};
    // conventional: teacher probability times -log sigmoid(student)
    double expected = 0.0;
    for (int i = 0; i < 6; ++i) {
        const double st = 1.0 / (1.0 + std::exp(-t.values()[static_cast<size_t>(i)]));
        expected += st * (-log_sigmoid(s.values()[static_cast<size_t>(i)]));
    }
    expected /= 2.0;
    CHECK(loss_bld(s, t, w, 1.0, true).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("gradient agreement for every loss (sampled)") {
    const auto suite = oracle::run_loss_gradient_suite(4, /*seed=*/7);
    CHECK(suite.aux.ok);
    CHECK(suite.bc.ok);
    CHECK(suite.ted.ok);
    CHECK(suite.kd.ok);
    CHECK(suite.div.ok);
    CHECK(suite.bld.ok);
    CHECK(suite.fd.ok);
}

TEST_CASE("loss config validation") {
    LossConfig bad;
    bad.tau = 0.0;
    CHECK_THROWS(bad.validate());
    LossConfig bad2;
    bad2.alpha = 1.5;
    CHECK_THROWS(bad2.validate());
    LossConfig bad3;
    bad3.xi = -0.1;
    CHECK_THROWS(bad3.validate());
    LossConfig good;
    CHECK_NOTHROW(good.validate());
}
