#include <doctest.h>

#include <cmath>
#include <random>

#include "pasrec/objectives.hpp"

using namespace pasrec;
using namespace pasrec::objectives;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

// Unit vector at angle a, so cosine against (1, 0) is cos(a).
RowVector at_angle(double a) { return row({std::cos(a), std::sin(a)}); }

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("reconstruction loss") {
    const RowVector a = row({1.0, 2.0});
    CHECK(loss_normal(a, a) == 0.0);
    CHECK(loss_normal(row({4.0, 6.0}), row({1.0, 2.0})) == 25.0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    RowVector x(8), y(8);
    for (int i = 0; i < 8; ++i) {
      x[i] = n(rng);
      y[i] = n(rng);
    }
    double sum = 0.0;
    for (int i = 0; i < 8; ++i) sum += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(loss_normal(x, y) == doctest::Approx(sum).epsilon(1e-14));
  }

  TEST_CASE("negative centroids") {
    Matrix targets(3, 2);
    targets << 9, 9, 1, 0, 0, 1;
    std::mt19937_64 rng(2);
    const RowVector one = negative_centroid(targets, 0, 1, rng);
    CHECK(((one == targets.row(1)) || (one == targets.row(2))));
    const RowVector two = negative_centroid(targets, 0, 2, rng);
    CHECK(two[0] == 0.5);
    CHECK(two[1] == 0.5);

    Matrix six(6, 2);
    for (int i = 0; i < 6; ++i) six.row(i) << i, i * i;
    std::mt19937_64 a(7), b(7);
    const RowVector got = negative_centroid(six, 2, 4, a);
    // Reference: partial Fisher-Yates over the non-positive indices with the same stream.
    std::vector<int> pool{0, 1, 3, 4, 5};
    for (int i = 0; i < 4; ++i) {
      std::uniform_int_distribution<int> pick(i, 4);
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(b))]);
    }
    RowVector expect = RowVector::Zero(2);
    for (int i = 0; i < 4; ++i) expect += six.row(pool[static_cast<size_t>(i)]);
    expect /= 4.0;
    CHECK(got == expect);

    const auto neg = sample_negatives(6, 3, 10, a);
    CHECK(neg.size() == 5);
    for (int j : neg) CHECK(j != 3);
  }

  TEST_CASE("mix matrix rows average k distinct other samples") {
    std::mt19937_64 rng(3);
    int clamped = 0;
    const Matrix mix = negative_mix_matrix(5, 4, rng, &clamped);
    CHECK(clamped == 0);
    for (int i = 0; i < 5; ++i) {
      CHECK(mix(i, i) == 0.0);
      CHECK(mix.row(i).sum() == doctest::Approx(1.0).epsilon(1e-15));
      CHECK((mix.row(i).array() > 0).count() == 4);
    }
    negative_mix_matrix(3, 4, rng, &clamped);
    CHECK(clamped == 3);
  }

  TEST_CASE("centroid BPR values") {
    const RowVector e = row({1.0, 0.0});
    CHECK(loss_bpr(e, e, e, e, 4, BprSignMode::Intended) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    // Positive cosine 1, negative cosine 0.
    const double l = loss_bpr(e, e, row({0.0, 1.0}), e, 4, BprSignMode::Intended);
    CHECK(l == doctest::Approx(std::log1p(std::exp(-4.0))).epsilon(1e-14));
    CHECK(l == doctest::Approx(0.018150).epsilon(1e-4));
    const double v = loss_bpr(e, e, row({0.0, 1.0}), e, 4, BprSignMode::Verbatim);
    CHECK(v == doctest::Approx(std::log1p(std::exp(4.0))).epsilon(1e-14));
    int degenerate = 0;
    CHECK(loss_bpr(RowVector::Zero(2), e, e, e, 4, BprSignMode::Intended, &degenerate) == 0.0);
    CHECK(degenerate == 1);
  }

  TEST_CASE("BPR is monotone in both similarities") {
    const RowVector ref = row({1.0, 0.0});
    const RowVector neg_hat = at_angle(1.0);
    double prev = 1e9;
    for (int i = 0; i <= 10; ++i) {
      const double a = 3.0 - 0.3 * i;  // cosine rises as the angle shrinks
      const double l = loss_bpr(at_angle(a), ref, neg_hat, ref, 4, BprSignMode::Intended);
      CHECK(l < prev);
      prev = l;
    }
    const RowVector pos_hat = at_angle(0.5);
    prev = -1.0;
    for (int i = 0; i <= 10; ++i) {
      const double l = loss_bpr(pos_hat, ref, at_angle(3.0 - 0.3 * i), ref, 4, BprSignMode::Intended);
      CHECK(l > prev);
      prev = l;
    }
  }

  TEST_CASE("loss blends") {
    const auto one = combine(1.3, 2.7, -0.4, 1.0, 0.3);
    CHECK(one.l_ioi == one.l_normal);
    const auto full = combine(1.3, 2.7, -0.4, 0.4, 1.0);
    CHECK(full.l_total == full.l_ioi);
    const auto ex = combine(1.0, 2.0, -0.5, 0.4, 0.2);
    CHECK(ex.l_ioi == doctest::Approx(1.6).epsilon(1e-15));
    CHECK(ex.l_total == doctest::Approx(-0.08).epsilon(1e-14));
    const auto scaled = combine(2.6, 5.4, -0.8, 0.4, 0.2);
    CHECK(scaled.l_total == doctest::Approx(2.0 * combine(1.3, 2.7, -0.4, 0.4, 0.2).l_total).epsilon(1e-14));
  }

  TEST_CASE("tape versions agree with the scalar forms") {
    ad::Tape tape(false);
    Matrix a(2, 3), b(2, 3);
    a << 1, 2, 3, -1, 0, 2;
    b << 0, 2, 1, 1, 1, 1;
    const double batch = loss_normal(tape.constant(a), tape.constant(b)).value()(0, 0);
    CHECK(batch == doctest::Approx(0.5 * (loss_normal(a.row(0), b.row(0)) + loss_normal(a.row(1), b.row(1)))));
  }
}
