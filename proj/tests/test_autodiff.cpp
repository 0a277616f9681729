#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;

namespace {

Tensor random_tensor(Philox& rng, std::vector<int64_t> shape, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) {
        t.at(i) = scale * rng.gaussian();
    }
    return t;
}

// Mixes any tensor down to a scalar with fixed pseudo-random coefficients so
// gradients do not cancel by symmetry.
Var mix_to_scalar(Var x, uint64_t salt) {
    Philox rng(0xC0FFEE, salt);
    Tensor coef = random_tensor(rng, x.value().shape());
    return sum_all(mul(x, x.tape->constant(std::move(coef))));
}

using GraphBuilder = std::function<Var(Tape&, ParameterStore&)>;

GradCheckReport check_graph(ParameterStore& store, const GraphBuilder& builder, double step = 1e-5) {
    auto value = [&]() {
        Tape tape;
        return builder(tape, store).value().at(0);
    };
    auto grad = [&]() {
        Tape tape;
        Var loss = builder(tape, store);
        tape.backward(loss);
        return loss.value().at(0);
    };
    return finite_difference_check(store, value, grad, step);
}

}  // namespace

TEST_CASE("softmax of uniform logits is uniform and sums to one") {
    Tape tape;
    Var s = softmax_rows(tape.constant(Tensor::vector({0.0, 0.0, 0.0})));
    for (int i = 0; i < 3; ++i) {
        CHECK(s.value().at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }

    Philox rng(4, 0);
    Tensor logits = random_tensor(rng, {8, 5}, 3.0);
    Var sm = softmax_rows(tape.constant(logits));
    for (int64_t i = 0; i < 8; ++i) {
        double total = 0.0;
        for (int64_t j = 0; j < 5; ++j) {
            const double p = sm.value().at(i, j);
            CHECK(p > 0.0);
            total += p;
        }
        CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("l2 normalization of a 3-4-5 vector") {
    Tape tape;
    Var y = l2_normalize_rows(tape.constant(Tensor::vector({3.0, 4.0})));
    CHECK(y.value().at(0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y.value().at(1) == doctest::Approx(0.8).epsilon(1e-15));

    Philox rng(5, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor(rng, {11}, 2.0);
        Var n = l2_normalize_rows(tape.constant(x));
        double norm = 0.0;
        for (int64_t i = 0; i < 11; ++i) {
            norm += n.value().at(i) * n.value().at(i);
        }
        CHECK(std::fabs(std::sqrt(norm) - 1.0) <= 1e-12);
    }
}

TEST_CASE("l2 normalization maps the zero vector to zero and flags it") {
    Tape tape;
    Var y = l2_normalize_rows(tape.constant(Tensor::zeros({4})));
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(y.value().at(i) == 0.0);
    }
    CHECK(tape.zero_norm_rows() == 1);
}

TEST_CASE("max over axis 0 picks columnwise maxima") {
    Tape tape;
    Var m = max_axis(tape.constant(Tensor::matrix(2, 2, {1, 5, 2, 2})), 0);
    CHECK(m.value().at(0) == 2.0);
    CHECK(m.value().at(1) == 5.0);
}

TEST_CASE("shape mismatch raises a structured error naming the op") {
    Tape tape;
    Var a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Var b = tape.constant(Tensor::vector({1.0, 2.0}));
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2]") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("non-finite op output raises NumericError when checking is on") {
    Tape tape(true);
    Var big = tape.constant(Tensor::vector({1e308}));
    CHECK_THROWS_AS(affine(big, 10.0, 0.0), NumericError);

    Tape lax(false);
    Var big2 = lax.constant(Tensor::vector({1e308}));
    CHECK_NOTHROW(affine(big2, 10.0, 0.0));
}

TEST_CASE("backward of sum of squares and gradient accumulation") {
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::vector({1.0, 2.0}));

    Tape tape;
    Var v = tape.leaf(p);
    Var loss = sum_all(mul(v, v));
    tape.backward(loss);
    CHECK(p.grad.at(0) == 2.0);
    CHECK(p.grad.at(1) == 4.0);

    // repeated backward without reset accumulates
    tape.backward(loss);
    CHECK(p.grad.at(0) == 4.0);
    CHECK(p.grad.at(1) == 8.0);

    store.zero_grads();
    CHECK(p.grad.at(0) == 0.0);
}

TEST_CASE("backward with no reachable parameter writes nothing") {
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::vector({1.0}));
    Tape tape;
    Var c = tape.constant(Tensor::scalar(5.0));
    Var loss = affine(c, 2.0, 1.0);
    tape.backward(loss);
    CHECK(p.grad.at(0) == 0.0);
    CHECK(tape.grad(loss.id) == nullptr);
}

TEST_CASE("backward rejects non-scalar loss") {
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::vector({1.0, 2.0}));
    Tape tape;
    Var v = tape.leaf(p);
    CHECK_THROWS_AS(tape.backward(v), ShapeError);
}

TEST_CASE("frozen parameters receive no gradient") {
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::vector({1.0, 2.0}), /*trainable=*/false);
    Tape tape;
    Var loss = sum_all(mul(tape.leaf(p), tape.leaf(p)));
    tape.backward(loss);  // nothing trainable reachable
    CHECK(p.grad.at(0) == 0.0);
}

TEST_CASE("max pool ties route the gradient to the lowest index") {
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::matrix(3, 2, {1, 7, 1, 7, 1, 7}));
    Tape tape;
    Var m = max_axis(tape.leaf(p), 0);
    tape.backward(sum_all(m));
    CHECK(p.grad.at(0, 0) == 1.0);
    CHECK(p.grad.at(0, 1) == 1.0);
    CHECK(p.grad.at(1, 0) == 0.0);
    CHECK(p.grad.at(2, 1) == 0.0);
}

TEST_CASE("closed-form check: linear layer with squared loss") {
    Philox rng(21, 0);
    ParameterStore store;
    store.create("w", random_tensor(rng, {3, 2}, 0.5));
    store.create("b", random_tensor(rng, {2}, 0.5));
    Tensor x = random_tensor(rng, {4, 3});
    Tensor target = random_tensor(rng, {4, 2});

    auto builder = [&](Tape& tape, ParameterStore& s) {
        Var out = linear(tape.constant(x), tape.leaf(s.at("w")), tape.leaf(s.at("b")));
        Var d = sub(out, tape.constant(target));
        return sum_all(mul(d, d));
    };
    auto report = check_graph(store, builder);
    CHECK(report.ok(1e-7));
}

TEST_CASE("every differentiable op passes a finite-difference check") {
    // Points are sampled away from relu/max kinks; tolerance per the
    // module-level gradient property.
    Philox rng(33, 0);

    auto run = [&](const char* name, std::vector<std::pair<std::string, Tensor>> params, GraphBuilder builder) {
        ParameterStore store;
        for (auto& [pname, init] : params) {
            store.create(pname, std::move(init));
        }
        auto report = check_graph(store, builder);
        INFO(name);
        CHECK(report.ok(1e-4));
    };

    run("add/add_row/add_scalar/affine",
        {{"a", random_tensor(rng, {3, 4})}, {"v", random_tensor(rng, {4})}, {"s", Tensor::scalar(0.3)}},
        [](Tape& t, ParameterStore& s) {
            Var x = add(add(t.leaf(s.at("a")), t.leaf(s.at("v"))), t.leaf(s.at("s")));
            return mix_to_scalar(affine(x, 1.3, -0.2), 1);
        });

    run("add_cols", {{"a", random_tensor(rng, {3, 4})}, {"v", random_tensor(rng, {3})}},
        [](Tape& t, ParameterStore& s) {
            return mix_to_scalar(add_cols(t.leaf(s.at("a")), t.leaf(s.at("v"))), 2);
        });

    run("mul/mul_scalar", {{"a", random_tensor(rng, {2, 5})}, {"b", random_tensor(rng, {2, 5})}, {"s", Tensor::scalar(-0.7)}},
        [](Tape& t, ParameterStore& s) {
            return mix_to_scalar(mul(mul(t.leaf(s.at("a")), t.leaf(s.at("b"))), t.leaf(s.at("s"))), 3);
        });

    run("matmul/transpose", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {4, 2})}},
        [](Tape& t, ParameterStore& s) {
            return mix_to_scalar(transpose(matmul(t.leaf(s.at("a")), t.leaf(s.at("b")))), 4);
        });

    run("matmul_nt", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {5, 4})}},
        [](Tape& t, ParameterStore& s) {
            return mix_to_scalar(matmul_nt(t.leaf(s.at("a")), t.leaf(s.at("b"))), 5);
        });

    {
        // relu: keep inputs away from the kink
        Tensor a = random_tensor(rng, {4, 4});
        for (int64_t i = 0; i < a.numel(); ++i) {
            if (std::fabs(a.at(i)) < 1e-2) {
                a.at(i) = a.at(i) < 0 ? a.at(i) - 0.5 : a.at(i) + 0.5;
            }
        }
        run("relu", {{"a", a}},
            [](Tape& t, ParameterStore& s) { return mix_to_scalar(relu(t.leaf(s.at("a"))), 6); });
    }

    run("gelu", {{"a", random_tensor(rng, {4, 3})}},
        [](Tape& t, ParameterStore& s) { return mix_to_scalar(gelu(t.leaf(s.at("a"))), 7); });

    run("sigmoid", {{"a", random_tensor(rng, {4, 3})}},
        [](Tape& t, ParameterStore& s) { return mix_to_scalar(sigmoid(t.leaf(s.at("a"))), 8); });

    run("softmax_rows", {{"a", random_tensor(rng, {4, 6}, 2.0)}},
        [](Tape& t, ParameterStore& s) { return mix_to_scalar(softmax_rows(t.leaf(s.at("a"))), 9); });

    run("layer_norm_rows",
        {{"x", random_tensor(rng, {4, 8})},
         {"g", random_tensor(rng, {8}, 0.5)},
         {"b", random_tensor(rng, {8}, 0.5)}},
        [](Tape& t, ParameterStore& s) {
            return mix_to_scalar(layer_norm_rows(t.leaf(s.at("x")), t.leaf(s.at("g")), t.leaf(s.at("b"))), 10);
        });

    run("l2_normalize_rows", {{"a", random_tensor(rng, {3, 7})}},
        [](Tape& t, ParameterStore& s) { return mix_to_scalar(l2_normalize_rows(t.leaf(s.at("a"))), 11); });

    {
        // max without ties: spread values
        Tensor a = Tensor::zeros({4, 5});
        for (int64_t i = 0; i < a.numel(); ++i) {
            a.at(i) = 0.37 * static_cast<double>((i * 7919) % 23) + 0.01 * static_cast<double>(i);
        }
        run("max_axis0/max_axis1", {{"a", a}}, [](Tape& t, ParameterStore& s) {
            Var m0 = max_axis(t.leaf(s.at("a")), 0);
            Var m1 = max_axis(t.leaf(s.at("a")), 1);
            return add(mix_to_scalar(m0, 12), mix_to_scalar(m1, 13));
        });
    }

    run("sum/mean/sum_all", {{"a", random_tensor(rng, {4, 5})}}, [](Tape& t, ParameterStore& s) {
        Var a = t.leaf(s.at("a"));
        return add(add(mix_to_scalar(sum_axis(a, 0), 14), mix_to_scalar(mean_axis(a, 1), 15)), sum_all(a));
    });

    run("concat/slice/reshape",
        {{"a", random_tensor(rng, {2, 3})}, {"b", random_tensor(rng, {3, 3})}, {"c", random_tensor(rng, {5, 2})}},
        [](Tape& t, ParameterStore& s) {
            Var rows = concat_rows({t.leaf(s.at("a")), t.leaf(s.at("b"))});        // 5x3
            Var cols = concat_cols({rows, t.leaf(s.at("c"))});                     // 5x5
            Var sl = slice_cols(slice_rows(cols, 1, 4), 0, 4);                     // 3x4
            return mix_to_scalar(reshape(sl, {12}), 16);
        });

    run("gather_rows/diag/element", {{"t", random_tensor(rng, {6, 3})}, {"m", random_tensor(rng, {4, 4})}},
        [](Tape& t, ParameterStore& s) {
            Var g = gather_rows(t.leaf(s.at("t")), {0, 2, 2, 5});
            Var d = diag(t.leaf(s.at("m")));
            return add(add(mix_to_scalar(g, 17), mix_to_scalar(d, 18)), element(d, 2));
        });
}

TEST_CASE("finite difference check completes on all-zero inputs without NaN") {
    ParameterStore store;
    store.create("w", Tensor::zeros({3, 3}));
    auto builder = [](Tape& t, ParameterStore& s) {
        Var x = t.constant(Tensor::zeros({2, 3}));
        return sum_all(gelu(matmul(x, t.leaf(s.at("w")))));
    };
    auto report = check_graph(store, builder);
    CHECK(report.all_finite);
    CHECK(report.entries.size() == 1);
    CHECK(report.entries[0].elements_checked == 9);
}

TEST_CASE("forward evaluation is bit-deterministic") {
    Philox rng(55, 0);
    Tensor a = random_tensor(rng, {6, 6});
    Tensor b = random_tensor(rng, {6, 6});
    auto eval = [&]() {
        Tape tape;
        Var x = matmul(tape.constant(a), tape.constant(b));
        Var y = softmax_rows(layer_norm_rows(x, tape.constant(Tensor::filled({6}, 1.0)),
                                             tape.constant(Tensor::zeros({6}))));
        std::vector<double> out(y.value().data(), y.value().data() + y.value().numel());
        return out;
    };
    CHECK(eval() == eval());
}
