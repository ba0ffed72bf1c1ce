#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mbsl/errors.hpp"
#include "mbsl/objective.hpp"
#include "mbsl/rng.hpp"

using namespace mbsl;

namespace {

Tensor rows(std::vector<std::vector<double>> data, bool requires_grad = false) {
    const int n = static_cast<int>(data.size());
    const int d = static_cast<int>(data[0].size());
    std::vector<double> flat;
    for (auto& r : data) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from_data({n, d}, std::move(flat), requires_grad);
}

Tensor random_rows(int n, int d, Rng& rng, bool requires_grad = false) {
    Tensor t = Tensor::zeros({n, d}, requires_grad);
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("nt_xent matches the two-sample orthogonal enumeration") {
    Tape tape(false);
    Tensor h = rows({{1, 0}, {0, 1}});
    Tensor loss = pairwise_nt_xent(tape, h, h, 1.0);
    // direct enumeration: per anchor -log(e / (e + 1))
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::fabs(loss.item() - 0.31326) <= 1e-5);
}

TEST_CASE("nt_xent vanishes in the low-temperature separable limit") {
    Tape tape(false);
    Tensor h = rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    Tensor loss = pairwise_nt_xent(tape, h, h, 1e-3);
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() <= 1e-12);
}

TEST_CASE("nt_xent is invariant to rescaling an embedding row") {
    Rng rng(3);
    Tape tape(false);
    Tensor a = random_rows(4, 6, rng);
    Tensor b = random_rows(4, 6, rng);
    const double base = pairwise_nt_xent(tape, a, b, 0.1).item();

    Tensor a_scaled = Tensor::from_data(a.shape(), a.data());
    for (int j = 0; j < 6; ++j) a_scaled.data()[static_cast<std::size_t>(2) * 6 + j] *= 5.0;
    const double scaled = pairwise_nt_xent(tape, a_scaled, b, 0.1).item();
    CHECK(std::fabs(base - scaled) <= 1e-12);
}

TEST_CASE("nt_xent rejects degenerate inputs") {
    Tape tape(false);
    Tensor ok = rows({{1, 0}, {0, 1}});
    Tensor zero = rows({{0, 0}, {0, 1}});
    CHECK_THROWS_AS(pairwise_nt_xent(tape, zero, ok, 1.0), DegenerateInputError);
    CHECK_THROWS_AS(pairwise_nt_xent(tape, ok, ok, 0.0), ParameterError);
    Tensor one = rows({{1, 0}});
    CHECK_THROWS_AS(pairwise_nt_xent(tape, one, one, 1.0), ContractError);
}

TEST_CASE("cross_modal_loss sums the enumerated group pairs") {
    Rng rng(7);
    Tape tape(false);
    std::vector<Tensor> groups;
    for (int k = 0; k < 3; ++k) groups.push_back(random_rows(5, 8, rng));

    Tensor loss = cross_modal_loss(tape, groups, 0.1);
    double expected = 0.0;
    expected += pairwise_nt_xent(tape, groups[0], groups[1], 0.1).item();
    expected += pairwise_nt_xent(tape, groups[0], groups[2], 0.1).item();
    expected += pairwise_nt_xent(tape, groups[1], groups[2], 0.1).item();
    CHECK(std::fabs(loss.item() - expected) <= 1e-12);

    // K = 2 is exactly one pairwise term
    Tensor two = cross_modal_loss(tape, {groups[0], groups[1]}, 0.1);
    CHECK(std::fabs(two.item() - pairwise_nt_xent(tape, groups[0], groups[1], 0.1).item()) <= 1e-15);

    CHECK_THROWS_AS(cross_modal_loss(tape, {groups[0]}, 0.1), ContractError);
}

TEST_CASE("cross_modal_loss is invariant to a simultaneous sample permutation") {
    Rng rng(11);
    Tape tape(false);
    std::vector<Tensor> groups;
    for (int k = 0; k < 2; ++k) groups.push_back(random_rows(6, 4, rng));
    const double base = cross_modal_loss(tape, groups, 0.2).item();

    std::vector<int> perm = {3, 1, 5, 0, 2, 4};
    std::vector<Tensor> permuted;
    for (const Tensor& g : groups) {
        Tensor p = Tensor::zeros(g.shape());
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 4; ++j) {
                p.data()[static_cast<std::size_t>(i) * 4 + j] =
                    g.data()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * 4 + j];
            }
        }
        permuted.push_back(p);
    }
    CHECK(std::fabs(cross_modal_loss(tape, permuted, 0.2).item() - base) <= 1e-12);
}

TEST_CASE("cross_modal_loss is non-negative on random batches") {
    Rng rng(13);
    Tape tape(false);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<Tensor> groups;
        const int k = 2 + static_cast<int>(rng.uniform_int(3));
        for (int g = 0; g < k; ++g) groups.push_back(random_rows(4, 5, rng));
        CHECK(cross_modal_loss(tape, groups, 0.1).item() >= -1e-12);
    }
}

TEST_CASE("loss decreases as the positive cosine rises with negatives fixed") {
    Tape tape(false);
    double prev = 1e300;
    for (double align : {0.1, 0.4, 0.7, 0.95}) {
        // anchor [1,0]; positive rotated toward it as align grows; negative fixed
        Tensor v1 = rows({{1, 0}, {0, 1}});
        Tensor v2 = rows({{align, std::sqrt(1 - align * align)}, {0, 1}});
        const double loss = pairwise_nt_xent(tape, v1, v2, 0.5).item();
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("instance loss equals nt_xent on the same arguments") {
    Rng rng(17);
    Tape tape(false);
    Tensor a = random_rows(4, 6, rng);
    Tensor b = random_rows(4, 6, rng);
    CHECK(instance_contrastive_loss(tape, a, b, 0.1).item() ==
          pairwise_nt_xent(tape, a, b, 0.1).item());
}

TEST_CASE("both_views mode adds same-view negatives and raises the loss") {
    Rng rng(19);
    Tape tape(false);
    Tensor a = random_rows(5, 4, rng);
    Tensor b = random_rows(5, 4, rng);
    const double cross = pairwise_nt_xent(tape, a, b, 0.2, NegativeMode::cross_view).item();
    const double both = pairwise_nt_xent(tape, a, b, 0.2, NegativeMode::both_views).item();
    CHECK(both > cross);  // a strictly larger denominator
}

TEST_CASE("gradients of the contrastive losses match finite differences") {
    Rng rng(23);
    for (NegativeMode mode : {NegativeMode::cross_view, NegativeMode::both_views}) {
        Tensor a = random_rows(4, 5, rng, true);
        Tensor b = random_rows(4, 5, rng, true);
        Tensor c = random_rows(4, 5, rng, true);
        auto res = testing::gradcheck_loss(
            [&](Tape& t) { return cross_modal_loss(t, {a, b, c}, 0.1, mode); }, {a, b, c}, 1e-5,
            1e-4);
        CHECK(res.pass_fraction() >= 0.99);
    }
}

TEST_CASE("regression metrics") {
    auto r = metrics({1.0, 3.0}, {2.0, 2.0});
    CHECK(r.mae == doctest::Approx(1.0));
    CHECK(r.rmse == doctest::Approx(1.0));
    CHECK(r.sd_mae == doctest::Approx(0.0));

    auto perfect = metrics({0.5, 0.25, -1.0}, {0.5, 0.25, -1.0});
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.rmse == 0.0);

    CHECK_THROWS_AS(metrics(std::vector<double>{}, std::vector<double>{}), ParameterError);
    CHECK_THROWS_AS(metrics(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                    DimensionError);
}

TEST_CASE("classification metrics on a hand case") {
    // 3 classes; two mistakes
    std::vector<std::vector<double>> scores = {
        {0.8, 0.1, 0.1},  // 0 -> 0
        {0.2, 0.7, 0.1},  // 1 -> 1
        {0.5, 0.3, 0.2},  // 1 -> 0 (miss)
        {0.1, 0.2, 0.7},  // 2 -> 2
        {0.3, 0.4, 0.3},  // 0 -> 1 (miss)
        {0.2, 0.2, 0.6},  // 2 -> 2
    };
    std::vector<int> labels = {0, 1, 1, 2, 0, 2};
    auto r = metrics(scores, labels);
    CHECK(r.acc == doctest::Approx(4.0 / 6.0));
    // class recalls: 0: 1/2, 1: 1/2, 2: 2/2 -> macro 2/3
    CHECK(r.recall == doctest::Approx((0.5 + 0.5 + 1.0) / 3.0));
    // precisions: 0: 1/2, 1: 1/2, 2: 1; f1: 1/2, 1/2, 1 -> macro 2/3
    CHECK(r.f1 == doctest::Approx((0.5 + 0.5 + 1.0) / 3.0));
    CHECK(metrics({{1.0, 0.0}, {0.0, 1.0}}, {0, 1}).acc == 1.0);
}

TEST_CASE("auprc equals exhaustive threshold enumeration on a 6-point set") {
    // one-vs-rest for class 1 of 2
    std::vector<std::vector<double>> scores = {
        {0.9, 0.1}, {0.4, 0.6}, {0.65, 0.35}, {0.2, 0.8}, {0.45, 0.55}, {0.7, 0.3},
    };
    std::vector<int> labels = {0, 1, 0, 1, 0, 0};
    auto r = metrics(scores, labels);

    // independent enumeration over the distinct positive-class scores
    auto enumerate_auprc = [&](int cls) {
        std::vector<double> s;
        for (const auto& row : scores) s.push_back(row[static_cast<std::size_t>(cls)]);
        std::vector<double> thresholds = s;
        std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
        double total_pos = 0;
        for (int l : labels) total_pos += l == cls ? 1 : 0;
        double area = 0, prev_r = 0, prev_p = 1;
        for (double th : thresholds) {
            double tp = 0, pred = 0;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (s[i] >= th) {
                    pred += 1;
                    tp += labels[i] == cls ? 1 : 0;
                }
            }
            const double rec = tp / total_pos;
            const double prec = tp / pred;
            area += (rec - prev_r) * 0.5 * (prec + prev_p);
            prev_r = rec;
            prev_p = prec;
        }
        return area;
    };
    const double expected = 0.5 * (enumerate_auprc(0) + enumerate_auprc(1));
    CHECK(r.auprc == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("metric report serializes with the documented field names") {
    auto r = metrics({1.0, 3.0}, {2.0, 2.0});
    const std::string j = r.to_json();
    CHECK(j.find("\"MAE\"") != std::string::npos);
    CHECK(j.find("\"SD_of_MAE\"") != std::string::npos);
    CHECK(j.find("\"RMSE\"") != std::string::npos);

    auto c = metrics({{1.0, 0.0}, {0.0, 1.0}}, {0, 1});
    const std::string jc = c.to_json();
    for (const char* key : {"\"Acc\"", "\"F1\"", "\"Recall\"", "\"AUPRC\""}) {
        CHECK(jc.find(key) != std::string::npos);
    }
    CHECK(c.acc >= 0.0);
    CHECK(c.acc <= 1.0);
    CHECK(c.auprc >= 0.0);
    CHECK(c.auprc <= 1.0);
}
