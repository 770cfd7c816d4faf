#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numeric>

#include "cardlab/gradcheck.hpp"
#include "support/fixtures.hpp"

using namespace cardlab;
using ad::ParamStore;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(r, c);
    t.fill_uniform(rng, lo, hi);
    return t;
}

AttnModelDims tiny_dims() { return {3, 4, 8, 1, 1, 2}; }

}  // namespace

TEST_CASE("attention with zero logits averages the values") {
    Rng rng(1);
    Tape tape;
    auto q = tape.constant(Tensor(2, 3, 0.0));
    auto k = tape.constant(Tensor(4, 3, 0.0));
    Tensor v = random_tensor(4, 2, rng);
    auto out = tape.value(attention(tape, q, k, tape.constant(v)));
    REQUIRE(out.rows == 2);
    REQUIRE(out.cols == 2);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = (v.at(0, j) + v.at(1, j) + v.at(2, j) + v.at(3, j)) / 4.0;
        CHECK(out.at(0, j) == Catch::Approx(mean).margin(1e-12));
        CHECK(out.at(1, j) == Catch::Approx(mean).margin(1e-12));
    }
}

TEST_CASE("attention over a single key returns that value row") {
    Rng rng(2);
    Tape tape;
    auto q = tape.constant(random_tensor(3, 5, rng));
    auto k = tape.constant(random_tensor(1, 5, rng));
    Tensor v = random_tensor(1, 4, rng);
    auto out = tape.value(attention(tape, q, k, tape.constant(v)));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(r, j) == v.at(0, j));
}

TEST_CASE("a dominant key wins the attention weights") {
    Tape tape;
    // one key aligned with the query, one orthogonal; logit gap >> 1
    auto q = tape.constant(Tensor(1, 2, {10.0, 0.0}));
    auto k = tape.constant(Tensor(2, 2, {10.0, 0.0, 0.0, 10.0}));
    Tensor v(2, 2, {1.0, 2.0, -5.0, 7.0});
    auto out = tape.value(attention(tape, q, k, tape.constant(v)));
    CHECK(out.at(0, 0) == Catch::Approx(1.0).margin(1e-3));
    CHECK(out.at(0, 1) == Catch::Approx(2.0).margin(1e-3));
}

TEST_CASE("attention rows stay probability vectors inside the net") {
    Rng rng(3);
    Tape tape;
    auto logits = tape.scale(
        tape.matmul_nt(tape.constant(random_tensor(5, 6, rng, -3, 3)),
                       tape.constant(random_tensor(7, 6, rng, -3, 3))),
        1.0 / std::sqrt(6.0));
    auto w = tape.value(tape.softmax_rows(logits));
    for (std::size_t r = 0; r < w.rows; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < w.cols; ++j) {
            CHECK(w.at(r, j) >= 0.0);
            sum += w.at(r, j);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("single-head multi-head with identity projections equals plain attention") {
    Rng rng(4);
    ParamStore ps;
    detail::ParamBuilder builder(ps, rng);
    auto mh = builder.multi_head("mh", 4, 1);
    // overwrite the projections with identities
    auto identity = [](std::size_t n) {
        Tensor t(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    };
    ps.tensor(mh.wq[0]) = identity(4);
    ps.tensor(mh.wk[0]) = identity(4);
    ps.tensor(mh.wv[0]) = identity(4);
    ps.tensor(mh.wm) = identity(4);

    Tensor q = random_tensor(2, 4, rng), k = random_tensor(5, 4, rng), v = random_tensor(5, 4, rng);
    Tape tape(&ps);
    auto a = tape.value(detail::multi_head_forward(tape, mh, tape.constant(q), tape.constant(k),
                                                   tape.constant(v)));
    auto b = tape.value(attention(tape, tape.constant(q), tape.constant(k), tape.constant(v)));
    REQUIRE(a.same_shape(b));
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.data[i] == Catch::Approx(b.data[i]).margin(1e-12));
}

TEST_CASE("multi-head output keeps the value width for any head count") {
    Rng rng(5);
    for (std::size_t h : {1, 2, 3, 8}) {
        ParamStore ps;
        detail::ParamBuilder builder(ps, rng);
        auto mh = builder.multi_head("mh", 10, h);  // 10 % 8 != 0 exercises the w^m fixup
        Tape tape(&ps);
        auto out = tape.value(detail::multi_head_forward(
            tape, mh, tape.constant(random_tensor(3, 10, rng)),
            tape.constant(random_tensor(6, 10, rng)), tape.constant(random_tensor(6, 10, rng))));
        CHECK(out.rows == 3);
        CHECK(out.cols == 10);
    }
}

TEST_CASE("encoder output shape and row-permutation equivariance") {
    Rng rng(6);
    AttnModelDims dims{5, 6, 9, 2, 2, 2};
    AttnCardNet net(dims, Rng(99));

    for (int trial = 0; trial < 10; ++trial) {
        Tensor states = random_tensor(5, 6, rng, 0, 1);
        Tape tape(&net.params());
        auto z = tape.value(net.encode(tape, states));
        REQUIRE(z.rows == 5);
        REQUIRE(z.cols == 9);

        // permute DB-state rows, encode, and compare against permuted rows
        std::vector<std::size_t> perm(5);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        Tensor shuffled(5, 6);
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 6; ++c) shuffled.at(r, c) = states.at(perm[r], c);
        Tape tape2(&net.params());
        auto z2 = tape2.value(net.encode(tape2, shuffled));
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 9; ++c)
                REQUIRE(std::abs(z2.at(r, c) - z.at(perm[r], c)) < 1e-9);

        // the analyzer's scalar does not see the row order
        Tensor query = random_tensor(1, 9, rng, 0, 1);
        CHECK(std::abs(net.predict_log_card(states, query) -
                       net.predict_log_card(shuffled, query)) < 1e-9);
    }
}

TEST_CASE("analyzer emits one finite scalar, deterministically") {
    Rng rng(7);
    AttnModelDims dims = tiny_dims();
    AttnCardNet net(dims, Rng(11));
    Tensor states = random_tensor(3, 4, rng, 0, 1);
    Tensor query = random_tensor(1, 8, rng, 0, 1);
    const double a = net.predict_log_card(states, query);
    const double b = net.predict_log_card(states, query);
    CHECK(std::isfinite(a));
    CHECK(a == b);
}

TEST_CASE("estimates are cardinalities of at least one") {
    CHECK(CardModel::log_card_to_estimate(0.0) == 1.0);
    CHECK(CardModel::log_card_to_estimate(std::log(100.0)) == Catch::Approx(100.0));
    CHECK(CardModel::log_card_to_estimate(-40.0) == 1.0);

    Rng rng(8);
    AttnCardNet net(tiny_dims(), Rng(21));
    for (int i = 0; i < 20; ++i)
        CHECK(net.estimate(random_tensor(3, 4, rng, 0, 1), random_tensor(1, 8, rng, 0, 1)) >= 1.0);
}

TEST_CASE("full model gradients match finite differences at tiny dims") {
    for (int seed = 0; seed < 5; ++seed) {
        AttnCardNet net(tiny_dims(), Rng(40 + seed));
        Rng data_rng(140 + seed);
        auto rep = gradcheck::check_model(net, data_rng);
        INFO(rep.worst);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("mlp baseline flattens states and trains the same interface") {
    Rng rng(9);
    MlpModelDims dims{3, 4, 8, 32, 3};
    MlpCardNet net(dims, Rng(12));
    Tensor states = random_tensor(3, 4, rng, 0, 1);
    Tensor query = random_tensor(1, 8, rng, 0, 1);
    CHECK(std::isfinite(net.predict_log_card(states, query)));
    CHECK(net.estimate(states, query) >= 1.0);

    auto rep = gradcheck::check_model(net, rng);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("checkpoints restore parameters and manifest exactly") {
    Rng rng(10);
    AttnCardNet net(tiny_dims(), Rng(31));
    auto manifest = net.manifest();
    manifest["bin_mode"] = "equal-width";
    manifest["join_variant"] = "full";
    const std::string path = (std::filesystem::temp_directory_path() / "cardlab_ckpt_test.bin")
                                 .string();
    save_checkpoint(path, net.params(), manifest);

    auto ck = load_checkpoint(path);
    CHECK(ck.manifest.at("model") == "attn");
    CHECK(ck.manifest.at("bin_mode") == "equal-width");
    auto restored = model_from_checkpoint(ck);
    CHECK(restored->param_count() == net.param_count());

    Tensor states = random_tensor(3, 4, rng, 0, 1);
    Tensor query = random_tensor(1, 8, rng, 0, 1);
    CHECK(restored->predict_log_card(states, query) == net.predict_log_card(states, query));
    std::filesystem::remove(path);
}

TEST_CASE("parameter count is reported") {
    AttnCardNet net(tiny_dims(), Rng(1));
    CHECK(net.param_count() > 0);
    std::size_t total = 0;
    for (std::size_t p = 0; p < net.params().count(); ++p) total += net.params().tensor(p).size();
    CHECK(net.param_count() == total);
}
