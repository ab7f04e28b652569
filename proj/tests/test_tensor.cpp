#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "osteo/gradcheck.hpp"
#include "osteo/ops.hpp"
#include "osteo/optim.hpp"
#include "osteo/rng.hpp"
#include "osteo/tensor.hpp"

#include "oracles.hpp"

using osteo::Tape;
using osteo::Tensor;

namespace {

template <typename S>
Tensor<S> tensor2(std::size_t n, std::size_t d, std::vector<S> values, bool grad = false) {
    return Tensor<S>::from_data({n, d}, std::move(values), grad);
}

// Weighted sum of all elements gives every output coordinate a distinct
// influence on the loss, which catches index shuffles plain sum() would miss.
osteo::Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& y,
                                   std::uint64_t seed) {
    osteo::Philox rng(seed, 0xbeef);
    auto w = oracle::random_tensor<double>(y.shape(), rng, 0.5, 1.5);
    return osteo::sum(tape, osteo::mul(tape, y, w));
}

} // namespace

TEST_CASE("conv2d forward examples") {
    Tape<float> tape;

    SECTION("all-ones 3x3 against all-ones kernel sums to 9") {
        auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
        auto k = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
        auto b = Tensor<float>::zeros({1});
        auto y = osteo::conv2d(tape, x, k, b, 1, 0);
        REQUIRE(y.shape() == osteo::Shape{1, 1, 1, 1});
        CHECK(y.data()[0] == Catch::Approx(9.0f));
    }

    SECTION("identity kernel with padding 1 reproduces the input") {
        osteo::Philox rng(7);
        auto x = oracle::random_tensor<float>({2, 1, 5, 5}, rng);
        auto k = Tensor<float>::zeros({1, 1, 3, 3});
        k.data()[4] = 1.0f; // center tap
        auto b = Tensor<float>::zeros({1});
        auto y = osteo::conv2d(tape, x, k, b, 1, 1);
        REQUIRE(y.shape() == x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
    }

    SECTION("matches the naive padded-loop oracle") {
        osteo::Philox rng(11);
        auto x = oracle::random_tensor<float>({2, 3, 8, 8}, rng);
        auto k = oracle::random_tensor<float>({4, 3, 3, 3}, rng);
        auto b = oracle::random_tensor<float>({4}, rng);
        for (const int stride : {1, 2}) {
            for (const int pad : {0, 1, 2}) {
                auto y = osteo::conv2d(tape, x, k, b, stride, pad);
                auto ref = oracle::conv2d(x.data(), 2, 3, 8, 8, k.data(), 4, 3, 3, b.data(),
                                          static_cast<std::size_t>(stride),
                                          static_cast<std::size_t>(pad));
                REQUIRE(y.numel() == ref.size());
                for (std::size_t i = 0; i < ref.size(); ++i)
                    CHECK_THAT(y.data()[i], Catch::Matchers::WithinRel(ref[i], 1e-5f));
            }
        }
    }

    SECTION("channel mismatch raises a dimension error") {
        auto x = Tensor<float>::zeros({1, 2, 4, 4});
        auto k = Tensor<float>::zeros({1, 3, 3, 3});
        auto b = Tensor<float>::zeros({1});
        CHECK_THROWS_AS(osteo::conv2d(tape, x, k, b, 1, 0), osteo::DimensionError);
    }

    SECTION("conv2d is linear in the input when bias is zero") {
        osteo::Philox rng(13);
        auto x = oracle::random_tensor<float>({1, 2, 6, 6}, rng);
        auto k = oracle::random_tensor<float>({3, 2, 3, 3}, rng);
        auto b = Tensor<float>::zeros({3});
        auto y1 = osteo::conv2d(tape, x, k, b, 1, 1);
        auto xs = Tensor<float>::from_data(x.shape(), x.data());
        for (auto& v : xs.data()) v *= 2.5f;
        auto y2 = osteo::conv2d(tape, xs, k, b, 1, 1);
        for (std::size_t i = 0; i < y1.numel(); ++i)
            CHECK_THAT(y2.data()[i], Catch::Matchers::WithinRel(2.5f * y1.data()[i], 1e-5f));
    }
}

TEST_CASE("relu") {
    Tape<float> tape;

    SECTION("clamps negatives") {
        auto x = tensor2<float>(1, 3, {-1.0f, 0.0f, 2.0f});
        auto y = osteo::relu(tape, x);
        CHECK(y.data() == std::vector<float>{0.0f, 0.0f, 2.0f});
    }

    SECTION("all-negative input becomes all zeros") {
        auto x = Tensor<float>::full({2, 2, 2, 2}, -3.5f);
        auto y = osteo::relu(tape, x);
        for (const float v : y.data()) CHECK(v == 0.0f);
    }

    SECTION("gradient is the positive-side indicator") {
        Tape<double> dt;
        auto x = tensor2<double>(1, 2, {-1.0, 2.0}, true);
        auto loss = osteo::sum(dt, osteo::relu(dt, x));
        osteo::backward(dt, loss);
        CHECK(x.grad() == std::vector<double>{0.0, 1.0});
    }
}

TEST_CASE("maxpool2d") {
    Tape<float> tape;

    SECTION("2x2 window picks the max") {
        auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
        auto y = osteo::maxpool2d(tape, x, 2, 2);
        REQUIRE(y.numel() == 1);
        CHECK(y.data()[0] == 4.0f);
    }

    SECTION("constant input stays constant") {
        auto x = Tensor<float>::full({1, 2, 4, 4}, 0.75f);
        auto y = osteo::maxpool2d(tape, x, 2, 2);
        for (const float v : y.data()) CHECK(v == 0.75f);
    }

    SECTION("matches the naive per-window oracle") {
        osteo::Philox rng(3);
        auto x = oracle::random_tensor<float>({1, 2, 6, 6}, rng);
        auto y = osteo::maxpool2d(tape, x, 2, 2);
        auto ref = oracle::maxpool2d(x.data(), 1, 2, 6, 6, 2, 2);
        REQUIRE(y.numel() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == ref[i]);
    }

    SECTION("window larger than the spatial dims errors") {
        auto x = Tensor<float>::zeros({1, 1, 3, 3});
        CHECK_THROWS_AS(osteo::maxpool2d(tape, x, 4, 1), osteo::DimensionError);
    }

    SECTION("tied maxima route gradient to the first in row-major order") {
        Tape<double> dt;
        auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1.0, 1.0, 1.0, 1.0}, true);
        auto loss = osteo::sum(dt, osteo::maxpool2d(dt, x, 2, 2));
        osteo::backward(dt, loss);
        CHECK(x.grad() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
    }
}

TEST_CASE("affine") {
    Tape<float> tape;

    SECTION("identity weight and zero bias is the identity") {
        auto x = tensor2<float>(2, 3, {1, 2, 3, 4, 5, 6});
        auto w = Tensor<float>::zeros({3, 3});
        for (std::size_t i = 0; i < 3; ++i) w.data()[i * 3 + i] = 1.0f;
        auto b = Tensor<float>::zeros({3});
        auto y = osteo::affine(tape, x, w, b);
        CHECK(y.data() == x.data());
    }

    SECTION("zero weight broadcasts the bias over rows") {
        auto x = tensor2<float>(3, 2, {1, 2, 3, 4, 5, 6});
        auto w = Tensor<float>::zeros({2, 4});
        auto b = Tensor<float>::from_data({4}, {9, 8, 7, 6});
        auto y = osteo::affine(tape, x, w, b);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(y.data()[i * 4 + j] == b.data()[j]);
    }

    SECTION("matches the naive triple-loop oracle") {
        osteo::Philox rng(21);
        auto x = oracle::random_tensor<float>({3, 4}, rng);
        auto w = oracle::random_tensor<float>({4, 2}, rng);
        auto b = oracle::random_tensor<float>({2}, rng);
        auto y = osteo::affine(tape, x, w, b);
        auto ref = oracle::affine(x.data(), 3, 4, w.data(), 2, b.data());
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK_THAT(y.data()[i], Catch::Matchers::WithinRel(ref[i], 1e-6f));
    }

    SECTION("inner dimension mismatch errors") {
        auto x = Tensor<float>::zeros({2, 3});
        auto w = Tensor<float>::zeros({4, 2});
        auto b = Tensor<float>::zeros({2});
        CHECK_THROWS_AS(osteo::affine(tape, x, w, b), osteo::DimensionError);
    }
}

TEST_CASE("softmax") {
    Tape<float> tape;

    SECTION("symmetric inputs split evenly") {
        auto y = osteo::softmax(tape, tensor2<float>(1, 2, {0, 0}));
        CHECK(y.data()[0] == Catch::Approx(0.5f));
        CHECK(y.data()[1] == Catch::Approx(0.5f));

        auto t = osteo::softmax(tape, tensor2<float>(1, 3, {4, 4, 4}));
        for (const float v : t.data()) CHECK(v == Catch::Approx(1.0f / 3.0f));
    }

    SECTION("huge logits saturate without overflow") {
        auto y = osteo::softmax(tape, tensor2<float>(1, 2, {1000.0f, 0.0f}));
        CHECK(y.data()[0] == Catch::Approx(1.0f));
        CHECK(y.data()[1] >= 0.0f);
        CHECK(std::isfinite(y.data()[0]));
    }

    SECTION("rows sum to one and stay positive up to magnitude 1e3") {
        osteo::Philox rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            auto x = oracle::random_tensor<float>({4, 5}, rng, -1000.0, 1000.0);
            auto y = osteo::softmax(tape, x);
            for (std::size_t i = 0; i < 4; ++i) {
                float sum = 0;
                for (std::size_t j = 0; j < 5; ++j) {
                    CHECK(y.data()[i * 5 + j] >= 0.0f);
                    sum += y.data()[i * 5 + j];
                }
                CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0f, 1e-6));
            }
        }
    }
}

TEST_CASE("cross_entropy") {
    SECTION("uniform logits give ln 2") {
        Tape<float> tape;
        auto loss = osteo::cross_entropy(tape, tensor2<float>(1, 2, {0, 0}), {0});
        CHECK(loss.data()[0] == Catch::Approx(std::log(2.0f)).epsilon(1e-5));
    }

    SECTION("confident correct logits give near-zero loss") {
        Tape<float> tape;
        auto loss = osteo::cross_entropy(tape, tensor2<float>(1, 2, {20.0f, -20.0f}), {0});
        CHECK(loss.data()[0] < 1e-6f);
    }

    SECTION("out-of-range label errors") {
        Tape<float> tape;
        CHECK_THROWS_AS(osteo::cross_entropy(tape, tensor2<float>(1, 2, {0, 0}), {2}),
                        osteo::InputError);
    }

    SECTION("gradient equals (softmax - onehot)/N") {
        Tape<double> tape;
        osteo::Philox rng(17);
        auto logits = oracle::random_tensor<double>({4, 2}, rng, -2.0, 2.0, true);
        const std::vector<int> labels = {0, 1, 1, 0};
        auto loss = osteo::cross_entropy(tape, logits, labels);
        osteo::backward(tape, loss);
        auto probs = oracle::softmax_rows(logits.data(), 4, 2);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const double expect =
                    (probs[i * 2 + j] - (labels[i] == static_cast<int>(j) ? 1.0 : 0.0)) / 4.0;
                CHECK_THAT(logits.grad()[i * 2 + j], Catch::Matchers::WithinAbs(expect, 1e-12));
            }
    }
}

TEST_CASE("concat and slice") {
    Tape<float> tape;

    SECTION("single part is the identity") {
        auto a = tensor2<float>(2, 2, {1, 2, 3, 4});
        auto y = osteo::concat(tape, {a});
        CHECK(y.data() == a.data());
    }

    SECTION("two row vectors concatenate in order") {
        auto a = tensor2<float>(1, 2, {1, 2});
        auto b = tensor2<float>(1, 2, {3, 4});
        auto y = osteo::concat(tape, {a, b});
        CHECK(y.data() == std::vector<float>{1, 2, 3, 4});
    }

    SECTION("slice at recorded offsets recovers each part exactly") {
        osteo::Philox rng(23);
        std::vector<Tensor<float>> parts;
        std::vector<std::size_t> widths = {3, 1, 4};
        for (const auto w : widths) parts.push_back(oracle::random_tensor<float>({2, w}, rng));
        auto y = osteo::concat(tape, parts);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            auto back = osteo::slice_cols(tape, y, offset, widths[p]);
            CHECK(back.data() == parts[p].data());
            offset += widths[p];
        }
    }

    SECTION("mismatched leading dimension errors") {
        auto a = Tensor<float>::zeros({2, 2});
        auto b = Tensor<float>::zeros({3, 2});
        CHECK_THROWS_AS(osteo::concat(tape, {a, b}), osteo::DimensionError);
    }
}

TEST_CASE("add, mul, scale") {
    Tape<float> tape;
    osteo::Philox rng(31);
    auto x = oracle::random_tensor<float>({2, 3}, rng);

    SECTION("add with zeros is the identity and add commutes bitwise") {
        auto z = Tensor<float>::zeros({2, 3});
        CHECK(osteo::add(tape, x, z).data() == x.data());

        auto y = oracle::random_tensor<float>({2, 3}, rng);
        auto ab = osteo::add(tape, x, y);
        auto ba = osteo::add(tape, y, x);
        CHECK(ab.data() == ba.data());
    }

    SECTION("scale by one and zero") {
        CHECK(osteo::scale(tape, x, 1.0f).data() == x.data());
        auto zeroed = osteo::scale(tape, x, 0.0f);
        for (const float v : zeroed.data()) CHECK(v == 0.0f);
    }

    SECTION("shape mismatch errors") {
        auto y = Tensor<float>::zeros({3, 2});
        CHECK_THROWS_AS(osteo::add(tape, x, y), osteo::DimensionError);
        CHECK_THROWS_AS(osteo::mul(tape, x, y), osteo::DimensionError);
    }

    SECTION("tensor-scalar scale routes gradient to the factor") {
        Tape<double> dt;
        auto xd = tensor2<double>(1, 2, {3.0, 4.0}, true);
        auto s = Tensor<double>::scalar(2.0, true);
        auto loss = osteo::sum(dt, osteo::scale(dt, xd, s));
        osteo::backward(dt, loss);
        CHECK(s.grad()[0] == Catch::Approx(7.0)); // d/ds sum(s*x) = sum(x)
        CHECK(xd.grad() == std::vector<double>{2.0, 2.0});
    }

    SECTION("per-row scale multiplies each row by its own factor") {
        auto rows = tensor2<float>(2, 2, {1, 2, 3, 4});
        auto s = Tensor<float>::from_data({2, 1}, {2.0f, 10.0f});
        auto y = osteo::scale(tape, rows, s);
        CHECK(y.data() == std::vector<float>{2, 4, 30, 40});
    }
}

TEST_CASE("backward semantics") {
    SECTION("loss = sum(x) gives all-ones gradient") {
        Tape<double> tape;
        auto x = Tensor<double>::full({2, 3}, 1.5, true);
        auto loss = osteo::sum(tape, x);
        osteo::backward(tape, loss);
        for (const double g : x.grad()) CHECK(g == 1.0);
    }

    SECTION("loss = sum(x*x) at x=3 gives gradient 6") {
        Tape<double> tape;
        auto x = Tensor<double>::from_data({1}, {3.0}, true);
        auto loss = osteo::sum(tape, osteo::mul(tape, x, x));
        osteo::backward(tape, loss);
        CHECK(x.grad()[0] == Catch::Approx(6.0));
    }

    SECTION("repeated backward without reset errors") {
        Tape<double> tape;
        auto x = Tensor<double>::from_data({1}, {2.0}, true);
        auto loss = osteo::sum(tape, x);
        osteo::backward(tape, loss);
        CHECK_THROWS_AS(osteo::backward(tape, loss), osteo::StateError);
        tape.reset();
        CHECK(tape.size() == 0);
    }

    SECTION("non-scalar loss errors") {
        Tape<double> tape;
        auto x = Tensor<double>::full({2}, 1.0, true);
        auto y = osteo::relu(tape, x);
        CHECK_THROWS_AS(osteo::backward(tape, y), osteo::InputError);
    }

    SECTION("empty tape errors") {
        Tape<double> tape;
        auto x = Tensor<double>::scalar(1.0, true);
        CHECK_THROWS_AS(osteo::backward(tape, x), osteo::InputError);
    }

    SECTION("recorded nodes are topologically ordered") {
        Tape<double> tape;
        osteo::Philox rng(41);
        auto x = oracle::random_tensor<double>({2, 4}, rng, -1, 1, true);
        auto w = oracle::random_tensor<double>({4, 3}, rng, -1, 1, true);
        auto b = Tensor<double>::zeros({3}, true);
        auto h = osteo::relu(tape, osteo::affine(tape, x, w, b));
        auto loss = osteo::sum(tape, h);
        (void)loss;
        for (const auto& node : tape.nodes())
            for (const long in : node.inputs) CHECK(in < node.output);
    }
}

TEST_CASE("sgd_step") {
    SECTION("plain step without momentum") {
        auto p = Tensor<float>::from_data({1}, {1.0f}, true);
        p.storage()->ensure_grad();
        p.grad()[0] = 2.0f;
        osteo::SgdState<float> sgd(0.1f, 0.0f, 0.0f);
        std::vector<Tensor<float>> params = {p};
        sgd.step(params);
        CHECK(p.data()[0] == Catch::Approx(0.8f));
        CHECK(p.grad()[0] == 0.0f); // gradient zeroed after the step
    }

    SECTION("zero gradient leaves the parameter unchanged") {
        auto p = Tensor<float>::from_data({1}, {4.0f}, true);
        p.storage()->ensure_grad();
        osteo::SgdState<float> sgd(0.1f, 0.0f, 0.0f);
        std::vector<Tensor<float>> params = {p};
        sgd.step(params);
        CHECK(p.data()[0] == 4.0f);
    }

    SECTION("momentum follows the hand recurrence v2 = 1.9 g") {
        const double g = 0.5;
        auto p = Tensor<double>::from_data({1}, {1.0}, true);
        osteo::SgdState<double> sgd(0.1, 0.9, 0.0);
        std::vector<Tensor<double>> params = {p};

        p.storage()->ensure_grad();
        p.grad()[0] = g;
        sgd.step(params);
        const double p1 = 1.0 - 0.1 * g;
        CHECK(p.data()[0] == Catch::Approx(p1));

        p.grad()[0] = g;
        sgd.step(params);
        CHECK(p.data()[0] == Catch::Approx(p1 - 0.1 * 1.9 * g));
    }

    SECTION("missing gradient is a state error") {
        auto p = Tensor<float>::from_data({1}, {1.0f}, true);
        osteo::SgdState<float> sgd(0.1f, 0.9f, 0.0f);
        std::vector<Tensor<float>> params = {p};
        CHECK_THROWS_AS(sgd.step(params), osteo::StateError);
    }

    SECTION("weight decay pulls parameters toward zero") {
        auto p = Tensor<double>::from_data({1}, {2.0}, true);
        p.storage()->ensure_grad();
        osteo::SgdState<double> sgd(0.5, 0.0, 0.1);
        std::vector<Tensor<double>> params = {p};
        sgd.step(params);
        // v = 0 + 0 + 0.1*2 = 0.2; p = 2 - 0.5*0.2
        CHECK(p.data()[0] == Catch::Approx(1.9));
    }
}

TEST_CASE("gradients match central finite differences for every op kind") {
    const osteo::GradCheckOptions opt{.eps = 1e-3,
                                      .rel_tol = 1e-4,
                                      .abs_tol = 1e-6,
                                      .max_coords_per_param = 12,
                                      .seed = 99};

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DYNAMIC_SECTION("seed " << seed) {
            osteo::Philox rng(seed, 0x9d);

            SECTION("conv2d") {
                auto x = oracle::random_tensor<double>({1, 2, 5, 5}, rng, -1, 1, true);
                auto k = oracle::random_tensor<double>({3, 2, 3, 3}, rng, -1, 1, true);
                auto b = oracle::random_tensor<double>({3}, rng, -1, 1, true);
                auto report = osteo::grad_check(
                    [&](Tape<double>& t) {
                        return weighted_sum(t, osteo::conv2d(t, x, k, b, 2, 1), seed);
                    },
                    {{"input", x}, {"kernel", k}, {"bias", b}}, opt);
                INFO("max rel err " << report.max_rel_err);
                CHECK(report.pass());
            }

            SECTION("relu+maxpool") {
                auto x = oracle::random_tensor<double>({1, 2, 6, 6}, rng, -1, 1, true);
                auto report = osteo::grad_check(
                    [&](Tape<double>& t) {
                        return weighted_sum(t, osteo::maxpool2d(t, osteo::relu(t, x), 2, 2), seed);
                    },
                    {{"input", x}}, opt);
                CHECK(report.pass());
            }

            SECTION("affine+softmax") {
                auto x = oracle::random_tensor<double>({3, 4}, rng, -1, 1, true);
                auto w = oracle::random_tensor<double>({4, 3}, rng, -1, 1, true);
                auto b = oracle::random_tensor<double>({3}, rng, -1, 1, true);
                auto report = osteo::grad_check(
                    [&](Tape<double>& t) {
                        return weighted_sum(t, osteo::softmax(t, osteo::affine(t, x, w, b)), seed);
                    },
                    {{"x", x}, {"w", w}, {"b", b}}, opt);
                CHECK(report.pass());
            }

            SECTION("cross_entropy") {
                auto logits = oracle::random_tensor<double>({4, 2}, rng, -2, 2, true);
                auto report = osteo::grad_check(
                    [&](Tape<double>& t) { return osteo::cross_entropy(t, logits, {0, 1, 1, 0}); },
                    {{"logits", logits}}, opt);
                CHECK(report.pass());
            }

            SECTION("concat+slice+scale") {
                auto a = oracle::random_tensor<double>({2, 3}, rng, -1, 1, true);
                auto b = oracle::random_tensor<double>({2, 2}, rng, -1, 1, true);
                auto s = oracle::random_tensor<double>({2, 1}, rng, 0.5, 1.5, true);
                auto report = osteo::grad_check(
                    [&](Tape<double>& t) {
                        auto joined = osteo::concat(t, {a, b});
                        auto part = osteo::slice_cols(t, joined, 1, 3);
                        return weighted_sum(t, osteo::scale(t, part, s), seed);
                    },
                    {{"a", a}, {"b", b}, {"s", s}}, opt);
                CHECK(report.pass());
            }

            SECTION("add+mul+reshape") {
                auto a = oracle::random_tensor<double>({2, 4}, rng, -1, 1, true);
                auto b = oracle::random_tensor<double>({2, 4}, rng, -1, 1, true);
                auto report = osteo::grad_check(
                    [&](Tape<double>& t) {
                        auto y = osteo::mul(t, osteo::add(t, a, b), b);
                        return weighted_sum(t, osteo::reshape(t, y, {4, 2}), seed);
                    },
                    {{"a", a}, {"b", b}}, opt);
                CHECK(report.pass());
            }
        }
    }
}

TEST_CASE("determinism: same seed and inputs give bit-identical results") {
    const auto run = [](std::uint64_t seed) {
        osteo::Philox rng(seed);
        Tape<double> tape;
        auto x = oracle::random_tensor<double>({2, 3, 6, 6}, rng, -1, 1, true);
        auto k = oracle::random_tensor<double>({4, 3, 3, 3}, rng, -1, 1, true);
        auto b = oracle::random_tensor<double>({4}, rng, -1, 1, true);
        auto conv = osteo::relu(tape, osteo::conv2d(tape, x, k, b, 1, 1));
        auto pooled = osteo::maxpool2d(tape, conv, 2, 2);
        auto flat = osteo::reshape(tape, pooled, {2, pooled.numel() / 2});
        auto loss = osteo::sum(tape, flat);
        osteo::backward(tape, loss);
        std::vector<double> out = pooled.data();
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), k.grad().begin(), k.grad().end());
        return out;
    };
    const auto a = run(12345);
    const auto b = run(12345);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("grad_check tooling") {
    SECTION("linear model matches to machine precision") {
        auto w = Tensor<double>::from_data({3, 1}, {0.5, -0.25, 2.0}, true);
        auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        auto b = Tensor<double>::zeros({1}, true);
        auto report = osteo::grad_check(
            [&](Tape<double>& t) { return osteo::sum(t, osteo::affine(t, x, w, b)); },
            {{"w", w}, {"b", b}});
        CHECK(report.pass());
        CHECK(report.max_rel_err < 1e-7);
    }

    SECTION("conv+relu layer stays below 1e-5") {
        osteo::Philox rng(77);
        auto x = oracle::random_tensor<double>({1, 1, 6, 6}, rng, -1, 1, false);
        auto k = oracle::random_tensor<double>({2, 1, 3, 3}, rng, -1, 1, true);
        auto b = oracle::random_tensor<double>({2}, rng, -1, 1, true);
        auto report = osteo::grad_check(
            [&](Tape<double>& t) {
                return weighted_sum(t, osteo::relu(t, osteo::conv2d(t, x, k, b, 1, 1)), 7);
            },
            {{"kernel", k}, {"bias", b}});
        CHECK(report.pass());
        CHECK(report.max_rel_err < 1e-5);
    }

    SECTION("an intentionally corrupted gradient fails the check") {
        auto w = Tensor<double>::from_data({2, 1}, {1.0, 2.0}, true);
        auto x = Tensor<double>::from_data({1, 2}, {3.0, 4.0});
        auto b = Tensor<double>::zeros({1}, true);
        osteo::GradCheckOptions opt;
        opt.inject_bug = true;
        auto report = osteo::grad_check(
            [&](Tape<double>& t) { return osteo::sum(t, osteo::affine(t, x, w, b)); },
            {{"w", w}, {"b", b}}, opt);
        CHECK_FALSE(report.pass());
    }
}
