#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kam/gradcheck.hpp"
#include "kam/rng.hpp"
#include "kam/tape.hpp"

using namespace kam;

namespace {

Tensor<double> rand_t(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

std::vector<size_t> all_axes(const Tensor<double>& t) {
    std::vector<size_t> a(t.rank());
    for (size_t i = 0; i < a.size(); ++i) a[i] = i;
    return a;
}

// Reduces an arbitrary node to a scalar loss sum(out * w) with fixed random
// weights, so the whole Jacobian is exercised.
int scalarize(Tape<double>& tp, int id, const Tensor<double>& w) {
    int wid = tp.leaf(w, false);
    return tp.reduce_sum(tp.mul(id, wid), all_axes(tp.val(id)), false);
}

// Checks tape gradients of build(tp, x_id) -> node against central finite
// differences through a weighted-sum loss.
template <class Build>
void check_grad(const Tensor<double>& x0, Build build, double tol = 1e-6, uint64_t wseed = 99) {
    Tape<double> tp;
    int xid = tp.leaf(x0, true);
    int out = build(tp, xid);
    Rng wr(wseed);
    Tensor<double> w = rand_t(tp.val(out).shape, wr);
    int loss = scalarize(tp, out, w);
    REQUIRE(tp.val(loss).numel() == 1);
    tp.backward(loss);
    Tensor<double> g = tp.grad(xid);

    auto f = [&](const Tensor<double>& x) {
        Tape<double> t2;
        int id = t2.leaf(x, true);
        return t2.val(scalarize(t2, build(t2, id), w)).data[0];
    };
    Tensor<double> fd = finite_diff_grad(f, x0);
    CHECK(max_rel_err(g, fd) < tol);
}

} // namespace

TEST_CASE("finite difference oracle sanity: d(x*x)/dx at 2 is 4") {
    Tensor<double> x = Tensor<double>::scalar(2.0);
    auto f = [](const Tensor<double>& t) { return t.data[0] * t.data[0]; };
    Tensor<double> g = finite_diff_grad(f, x);
    CHECK(std::fabs(g.data[0] - 4.0) < 1e-8);
}

TEST_CASE("elementwise forward values") {
    Tape<double> tp;
    int a = tp.leaf(Tensor<double>({2}, {1.0, -2.0}));
    int b = tp.leaf(Tensor<double>({2}, {3.0, 4.0}));
    CHECK(tp.val(tp.add(a, b)).data[0] == 4.0);
    CHECK(tp.val(tp.sub(a, b)).data[1] == -6.0);
    CHECK(tp.val(tp.mul(a, b)).data[1] == -8.0);
    CHECK(tp.val(tp.div(b, a)).data[1] == -2.0);
    CHECK(tp.val(tp.relu(a)).data[1] == 0.0);
    CHECK(tp.val(tp.exp_(a)).data[0] == doctest::Approx(std::exp(1.0)));
    CHECK(tp.val(tp.sigmoid(tp.leaf(Tensor<double>::scalar(0.0)))).data[0] == 0.5);
    // softplus(0) = log 2; elu(-2) = e^-2 - 1
    CHECK(tp.val(tp.softplus(tp.leaf(Tensor<double>::scalar(0.0)))).data[0] ==
          doctest::Approx(std::log(2.0)));
    CHECK(tp.val(tp.elu(a)).data[1] == doctest::Approx(std::exp(-2.0) - 1.0));
}

TEST_CASE("scalar broadcast in binary ops") {
    Tape<double> tp;
    int s = tp.leaf(Tensor<double>::scalar(3.0));
    int v = tp.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto out = tp.val(tp.mul(s, v));
    CHECK(out.shape == std::vector<size_t>{2, 2});
    CHECK(out.data[3] == 12.0);
    CHECK(tp.val(tp.add(v, s)).data[0] == 4.0);
}

TEST_CASE("matmul matches hand computation") {
    Tape<double> tp;
    int A = tp.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    int B = tp.leaf(Tensor<double>({3, 2}, {7, 8, 9, 10, 11, 12}));
    auto C = tp.val(tp.matmul(A, B));
    CHECK(C.shape == std::vector<size_t>{2, 2});
    CHECK(C(0, 0) == 58.0);
    CHECK(C(0, 1) == 64.0);
    CHECK(C(1, 0) == 139.0);
    CHECK(C(1, 1) == 154.0);
}

TEST_CASE("softmax rows sum to one and duplicate rows match") {
    Rng rng(5);
    Tensor<double> x = rand_t({4, 7}, rng, -3, 3);
    for (size_t j = 0; j < 7; ++j) x(3, j) = x(0, j); // duplicate row
    Tape<double> tp;
    auto p = tp.val(tp.softmax_last(tp.leaf(x)));
    for (size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (size_t j = 0; j < 7; ++j) {
            CHECK(p(i, j) >= 0.0);
            s += p(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (size_t j = 0; j < 7; ++j) CHECK(p(3, j) == p(0, j));
}

TEST_CASE("pairwise squared distances: brute force, symmetry, zero diagonal") {
    Rng rng(11);
    Tensor<double> x = rand_t({5, 3}, rng, -2, 2);
    Tape<double> tp;
    auto d2 = tp.val(tp.pairwise_sqdist(tp.leaf(x)));
    for (size_t i = 0; i < 5; ++i) {
        CHECK(d2(i, i) == 0.0); // exact
        for (size_t j = 0; j < 5; ++j) {
            CHECK(d2(i, j) == d2(j, i)); // exact
            double ref = 0;
            for (size_t k = 0; k < 3; ++k) {
                double d = x(i, k) - x(j, k);
                ref += d * d;
            }
            CHECK(d2(i, j) == doctest::Approx(ref).epsilon(1e-12));
            CHECK(d2(i, j) >= 0.0);
        }
    }
}

TEST_CASE("reductions and reshape forward") {
    Tape<double> tp;
    int x = tp.leaf(Tensor<double>({2, 3}, {1, 5, 2, 4, 0, 6}));
    CHECK(tp.val(tp.reduce_sum(x, {0, 1}, false)).data[0] == 18.0);
    auto m = tp.val(tp.reduce_mean(x, {1}, false));
    CHECK(m.data[0] == doctest::Approx(8.0 / 3.0));
    auto mx = tp.val(tp.reduce_max(x, {1}, false));
    CHECK(mx.data[0] == 5.0);
    CHECK(mx.data[1] == 6.0);
    auto r = tp.val(tp.reshape(x, {3, 2}));
    CHECK(r(2, 1) == 6.0);
}

TEST_CASE("slice and concat round trip") {
    Rng rng(3);
    Tensor<double> x = rand_t({3, 6}, rng);
    Tape<double> tp;
    int id = tp.leaf(x);
    int a = tp.slice(id, 1, 0, 2), b = tp.slice(id, 1, 2, 4);
    auto back = tp.val(tp.concat({a, b}, 1));
    CHECK(back.same_shape(x));
    for (size_t i = 0; i < x.numel(); ++i) CHECK(back.data[i] == x.data[i]);
}

TEST_CASE("avg_pool with unit window is the identity") {
    Rng rng(4);
    Tensor<double> x = rand_t({2, 3, 2, 5}, rng);
    Tape<double> tp;
    auto y = tp.val(tp.avg_pool(tp.leaf(x), 1, 1));
    CHECK(y.same_shape(x));
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("gradients of elementwise primitives match finite differences") {
    Rng rng(21);
    Tensor<double> x = rand_t({3, 4}, rng, 0.3, 2.0); // positive: safe for div and kinks
    Tensor<double> y = rand_t({3, 4}, rng, 0.5, 1.5);

    check_grad(x, [](Tape<double>& tp, int id) { return tp.exp_(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.square(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.sigmoid(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.softplus(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.relu(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.elu(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.neg(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.add_const(id, 0.7); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.mul_const(id, -1.3); });
    check_grad(x, [&](Tape<double>& tp, int id) { return tp.add(id, tp.leaf(y)); });
    check_grad(x, [&](Tape<double>& tp, int id) { return tp.sub(tp.leaf(y), id); });
    check_grad(x, [&](Tape<double>& tp, int id) { return tp.mul(id, tp.leaf(y)); });
    check_grad(x, [&](Tape<double>& tp, int id) { return tp.div(tp.leaf(y), id); });
    // x used twice in one graph: accumulation path
    check_grad(x, [](Tape<double>& tp, int id) { return tp.mul(id, tp.exp_(id)); });
}

TEST_CASE("gradients of scalar broadcast") {
    Rng rng(22);
    Tensor<double> s = Tensor<double>::scalar(0.8);
    Tensor<double> v = rand_t({2, 3}, rng);
    check_grad(s, [&](Tape<double>& tp, int id) { return tp.mul(id, tp.leaf(v)); });
    check_grad(v, [](Tape<double>& tp, int id) {
        return tp.mul(tp.leaf(Tensor<double>::scalar(0.8)), id);
    });
}

TEST_CASE("gradients of linear algebra ops") {
    Rng rng(23);
    Tensor<double> A = rand_t({3, 4}, rng), B = rand_t({4, 2}, rng), b = rand_t({4}, rng);
    check_grad(A, [&](Tape<double>& tp, int id) { return tp.matmul(id, tp.leaf(B)); });
    check_grad(B, [&](Tape<double>& tp, int id) { return tp.matmul(tp.leaf(A), id); });
    check_grad(A, [](Tape<double>& tp, int id) { return tp.transpose2d(id); });
    check_grad(A, [&](Tape<double>& tp, int id) { return tp.add_rowvec(id, tp.leaf(b)); });
    check_grad(b, [&](Tape<double>& tp, int id) { return tp.add_rowvec(tp.leaf(A), id); });
    check_grad(A, [](Tape<double>& tp, int id) { return tp.pairwise_sqdist(id); });
}

TEST_CASE("gradients of structural and reduction ops") {
    Rng rng(24);
    Tensor<double> x = rand_t({2, 3, 2, 4}, rng);
    check_grad(x, [](Tape<double>& tp, int id) { return tp.reduce_sum(id, {2, 3}, false); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.reduce_mean(id, {1}, true); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.reduce_max(id, {2, 3}, false); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.avg_pool(id, 1, 2); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.flatten2d(id); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.reshape(id, {4, 12}); });
    check_grad(x, [](Tape<double>& tp, int id) { return tp.slice(id, 1, 1, 2); });
    check_grad(x, [](Tape<double>& tp, int id) {
        return tp.concat({tp.slice(id, 3, 0, 1), tp.slice(id, 3, 1, 3)}, 3);
    });
    Tensor<double> logits = rand_t({4, 3}, rng, -2, 2);
    check_grad(logits, [](Tape<double>& tp, int id) {
        return tp.softmax_last(id);
    }, 1e-5);
    check_grad(logits, [](Tape<double>& tp, int id) {
        return tp.cross_entropy(id, {0, 2, 1, 0});
    }, 1e-5);
}

TEST_CASE("gradients of gates") {
    Rng rng(25);
    Tensor<double> x = rand_t({2, 3, 2, 2}, rng);
    Tensor<double> s = rand_t({2, 3}, rng, 0.1, 0.9);
    Tensor<double> sp = rand_t({2, 1, 2, 2}, rng, 0.1, 0.9);
    check_grad(x, [&](Tape<double>& tp, int id) { return tp.channel_gate(id, tp.leaf(s)); });
    check_grad(s, [&](Tape<double>& tp, int id) { return tp.channel_gate(tp.leaf(x), id); });
    check_grad(x, [&](Tape<double>& tp, int id) { return tp.spatial_gate(id, tp.leaf(sp)); });
    check_grad(sp, [&](Tape<double>& tp, int id) { return tp.spatial_gate(tp.leaf(x), id); });
}

TEST_CASE("gradients of random composed stacks") {
    Rng rng(26);
    for (uint64_t trial = 0; trial < 8; ++trial) {
        Rng tr(Rng::subseed(100, trial));
        Tensor<double> x = rand_t({3, 3}, tr, 0.2, 1.2);
        Tensor<double> W = rand_t({3, 3}, tr);
        size_t depth = 2 + tr.uniform_int(5);
        auto build = [&](Tape<double>& tp, int id) {
            int z = id;
            Rng ops(Rng::subseed(200, trial));
            for (size_t d = 0; d < depth; ++d) {
                switch (ops.uniform_int(6)) {
                    case 0: z = tp.sigmoid(z); break;
                    case 1: z = tp.elu(z); break;
                    case 2: z = tp.matmul(z, tp.leaf(W)); break;
                    case 3: z = tp.add(z, id); break;
                    case 4: z = tp.softplus(z); break;
                    default: z = tp.mul_const(z, 0.7); break;
                }
            }
            return z;
        };
        check_grad(x, build, 1e-6, 300 + trial);
    }
}

TEST_CASE("backward with explicit cotangent selects one output") {
    Tape<double> tp;
    int x = tp.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}), true);
    int y = tp.square(x);
    Tensor<double> cot({2, 2});
    cot.fill(0.0);
    cot(1, 0) = 1.0;
    tp.backward(y, cot);
    auto g = tp.grad(x);
    CHECK(g(0, 0) == 0.0);
    CHECK(g(1, 0) == 6.0);
    CHECK(g(1, 1) == 0.0);
}

TEST_CASE("rng is deterministic and shuffle is a permutation") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(7);
    std::vector<size_t> v(20);
    for (size_t i = 0; i < v.size(); ++i) v[i] = i;
    c.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < v.size(); ++i) CHECK(sorted[i] == i);
    CHECK(Rng::subseed(1, 0) != Rng::subseed(1, 1));
}
