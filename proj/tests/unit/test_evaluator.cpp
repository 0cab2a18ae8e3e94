#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "pasrec/evaluator.hpp"
#include "pasrec/model.hpp"

using namespace pasrec;
using namespace pasrec::eval;

TEST_SUITE("evaluator") {
  TEST_CASE("hit and NDCG at single ranks") {
    for (int k : {1, 5, 10}) {
      CHECK(hit_at_k(1, k) == 1);
      CHECK(ndcg_at_k(1, k) == 1.0);
    }
    CHECK(hit_at_k(6, 5) == 0);
    CHECK(ndcg_at_k(6, 5) == 0.0);
    CHECK(ndcg_at_k(3, 10) == 0.5);
    CHECK_THROWS(hit_at_k(0, 5));
  }

  TEST_CASE("ranking an orthonormal catalog with exclusions") {
    Matrix table = Matrix::Zero(5, 4);
    table.bottomRows(4) = Matrix::Identity(4, 4);
    RowVector q = table.row(3) + 0.5 * table.row(1);
    auto order = rank_items(q, table);
    CHECK(order.front() == 3);
    CHECK(order[1] == 1);
    auto without = rank_items(q, table, {3});
    CHECK(without.front() == 1);
    CHECK(without.size() == 3);
    // Ties fall back to ascending item index.
    CHECK(order[2] == 2);
    CHECK(order[3] == 4);
  }

  TEST_CASE("ranking matches a brute-force sort on a toy table") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix table(7, 3);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = n(rng);
    RowVector q(3);
    q << 0.3, -1.0, 0.7;
    const auto order = rank_items(q, table);
    std::vector<std::pair<double, int>> ref;
    for (int i = 1; i <= 6; ++i) ref.emplace_back(-q.dot(table.row(i)), i);
    std::sort(ref.begin(), ref.end());
    REQUIRE(order.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(order[static_cast<size_t>(i)] == ref[static_cast<size_t>(i)].second);
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6});
    CHECK(rank_items(3.5 * q, table) == order);
  }

  TEST_CASE("target rank agrees with the position in the ranking") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix table(9, 4);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = n(rng);
    table.row(5) = table.row(2);  // a tie
    const RowVector q = table.row(2);
    const Matrix scores = encoder::score_candidates(q, table, false);
    const auto order = rank_items(q, table);
    for (int target = 1; target <= 8; ++target) {
      const auto pos = std::find(order.begin(), order.end(), target) - order.begin();
      CHECK(target_rank(scores.row(0), target) == pos + 1);
    }
    std::vector<std::uint8_t> ex(9, 0);
    ex[static_cast<size_t>(order[0])] = 1;
    CHECK(target_rank(scores.row(0), order[1], &ex) == 1);
    // The target itself is never excluded.
    ex[static_cast<size_t>(order[1])] = 1;
    CHECK(target_rank(scores.row(0), order[1], &ex) == 1);
  }

  TEST_CASE("uniform ranks give the exact baseline") {
    std::vector<int> ranks(100);
    std::iota(ranks.begin(), ranks.end(), 1);
    const auto r = report_from_ranks(ranks, {5, 10});
    CHECK(r.hr.at(5) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(r.hr.at(10) == doctest::Approx(0.10).epsilon(1e-15));
    CHECK(r.ndcg.at(5) <= r.hr.at(5));
    CHECK(r.metric("H@5") == r.hr.at(5));
    CHECK_THROWS(r.metric("H@7"));
  }

  TEST_CASE("a model that outputs the target embedding hits every time") {
    Matrix table = Matrix::Zero(11, 10);
    table.bottomRows(10) = Matrix::Identity(10, 10);
    std::vector<int> ranks;
    for (int target = 1; target <= 10; ++target) {
      const Matrix s = encoder::score_candidates(table.row(target), table, false);
      ranks.push_back(target_rank(s.row(0), target));
    }
    CHECK(report_from_ranks(ranks, {5}).hr.at(5) == 1.0);
  }

  TEST_CASE("evaluation equals per-sample recomputation and is deterministic") {
    const auto data = testing::synth_data(20);
    PASRec model(testing::tiny_model(), data.vocab.item_count());
    EvalConfig cfg;
    cfg.batch_size = 3;
    const auto& test = data.bundle.test;
    REQUIRE(test.size() == 20);
    const auto report = evaluate(model, test, cfg);
    const Matrix& table = model.params().value("item_embedding");
    for (size_t i = 0; i < test.size(); ++i) {
      const std::vector<data::SequenceSample> one{test[i]};
      const std::vector<std::uint64_t> seed{noise_seed(cfg.seed, i)};
      const auto p = predict(model, make_batch(one), seed);
      const auto order = rank_items(p.e0_hat.row(0), table);
      const auto pos = std::find(order.begin(), order.end(), test[i].target_item) - order.begin();
      CHECK(report.ranks[i] == pos + 1);
    }
    const auto again = report_from_ranks(report.ranks, cfg.ks);
    for (int k : cfg.ks) {
      CHECK(report.hr.at(k) == again.hr.at(k));
      CHECK(report.ndcg.at(k) == again.ndcg.at(k));
    }
    CHECK(report.hr.at(10) >= report.hr.at(5));
    CHECK(report.ndcg.at(10) >= report.ndcg.at(5));
    CHECK(report.toi_cosine.size() == 20);
    const auto repeat = evaluate(model, test, cfg);
    CHECK(repeat.ranks == report.ranks);
    CHECK(repeat.toi_cosine == report.toi_cosine);
    cfg.threads = 3;
    CHECK(evaluate(model, test, cfg).ranks == report.ranks);
  }

  TEST_CASE("histogram and median") {
    const auto h = histogram({-1.0, -0.85, 0.0, 0.99, 1.0}, 20);
    CHECK(h.edges.size() == 21);
    CHECK(h.counts.front() == 1);
    CHECK(h.counts[1] == 1);
    CHECK(h.counts[10] == 1);
    CHECK(h.counts.back() == 2);
    CHECK(histogram_csv(h).rfind("bin_lo,bin_hi,count\n", 0) == 0);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
    CHECK_THROWS(median({}));
  }

  TEST_CASE("report JSON carries the configured cutoffs") {
    MetricsReport r = report_from_ranks({1, 4, 12}, {5, 10});
    r.toi_cosine = {0.5, 0.9, 0.7};
    const auto j = to_json(r);
    CHECK(j.at("H@5").get<double>() == doctest::Approx(2.0 / 3.0));
    CHECK(j.at("toi_cosine_median").get<double>() == 0.7);
    CHECK(j.at("sample_count").get<int>() == 3);
  }
}
