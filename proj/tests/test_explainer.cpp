#include "bbox_oracle.hpp"
#include "test_support.hpp"

#include "prodg/explainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace prodg;
using namespace prodg::testing;

namespace {

FeatureMap map_from_channels(const std::vector<Matrix>& channels) {
  const Index h = channels.front().rows(), w = channels.front().cols();
  Matrix values(static_cast<Index>(channels.size()), h * w);
  for (std::size_t c = 0; c < channels.size(); ++c)
    for (Index r = 0; r < h; ++r)
      for (Index q = 0; q < w; ++q) values(static_cast<Index>(c), r * w + q) = channels[c](r, q);
  return FeatureMap(values, h, w);
}

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

OrthogonalBasis basis_with_u(const Matrix& u) { return OrthogonalBasis(Matrix::Zero(u.rows(), u.cols()), u); }

// Scores recomputed straight from the definition, no shared code.
Vector brute_scores(const FeatureMap& feat, const Matrix& u, const Matrix& w, const Vector& bias) {
  const Matrix z = u * feat.values;
  const Vector gap = z.rowwise().mean();
  const Vector logits = w * u.transpose() * gap + bias;
  Index yhat = 0;
  for (Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(yhat)) yhat = i;
  const Matrix fused = w * u.transpose();
  Vector s(z.rows());
  for (Index c = 0; c < z.rows(); ++c) s(c) = fused(yhat, c) * std::max(0.0, gap(c));
  return s;
}

Matrix random_rotation(Index n, std::mt19937_64& rng) {
  OrthogonalBasis b(n);
  b.set_generator(random_matrix(n, n, rng, 0.8));
  b.recompute();
  return b.u();
}

}  // namespace

TEST_CASE("attribution: hand example gives S = [3, -3, 0]") {
  // One class row W = [2, -1, 0.5]; a 1x1 map so GAP is the map itself.
  Matrix values(3, 1);
  values << 1.5, 3.0, -2.0;
  const FeatureMap feat(values, 1, 1);
  Matrix w(1, 3);
  w << 2.0, -1.0, 0.5;
  const auto basis = make_basis(3);
  const auto head = fuse_head(w, Vector::Zero(1), basis);
  const auto a = attribute(feat, basis, head, 1);
  CHECK(a.predicted_class == 0);
  CHECK(a.scores(0) == doctest::Approx(3.0));
  CHECK(a.scores(1) == doctest::Approx(-3.0));
  CHECK(a.scores(2) == doctest::Approx(0.0));
  REQUIRE(a.top.size() == 1);
  CHECK(a.top[0].channel == 0);
  CHECK(a.top[0].score == doctest::Approx(3.0));
}

TEST_CASE("attribution: zero features tie-break to the lowest channels") {
  const FeatureMap feat(Matrix::Zero(5, 4), 2, 2);
  std::mt19937_64 rng(1);
  const auto basis = make_basis(5);
  const auto head = fuse_head(random_matrix(3, 5, rng), Vector::Zero(3), basis);
  const auto a = attribute(feat, basis, head, 3);
  CHECK(a.scores.isZero(0.0));
  REQUIRE(a.top.size() == 3);
  for (Index i = 0; i < 3; ++i) CHECK(a.top[static_cast<std::size_t>(i)].channel == i);
  CHECK_FALSE(a.k_clamped);
}

TEST_CASE("attribution: k above C clamps and flags") {
  const FeatureMap feat(Matrix::Ones(3, 4), 2, 2);
  const auto basis = make_basis(3);
  const auto head = fuse_head(Matrix::Identity(3, 3), Vector::Zero(3), basis);
  const auto a = attribute(feat, basis, head, 7);
  CHECK(a.k_clamped);
  CHECK(a.top.size() == 3);
}

TEST_CASE("attribution: matches brute-force recomputation on random instances") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index c = 2 + static_cast<Index>(rng() % 7), classes = 1 + static_cast<Index>(rng() % 5);
    const FeatureMap feat(random_matrix(c, 9, rng), 3, 3);
    const Matrix u = random_rotation(c, rng);
    const Matrix w = random_matrix(classes, c, rng);
    const Vector bias = random_matrix(classes, 1, rng, 0.1);
    const auto basis = basis_with_u(u);
    const auto a = attribute(feat, basis, fuse_head(w, bias, basis), c);
    const Vector expect = brute_scores(feat, u, w, bias);
    CHECK((a.scores - expect).cwiseAbs().maxCoeff() < 1e-12);
    for (std::size_t i = 1; i < a.top.size(); ++i) {
      const auto& prev = a.top[i - 1];
      const auto& cur = a.top[i];
      CHECK((prev.score > cur.score || (prev.score == cur.score && prev.channel < cur.channel)));
    }
  }
}

TEST_CASE("attribution: score sum equals W[yhat] . relu(GAP(Z))") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Index c = 6;
    const FeatureMap feat(random_matrix(c, 16, rng), 4, 4);
    const Matrix u = random_rotation(c, rng);
    const Matrix w = random_matrix(4, c, rng);
    const auto basis = basis_with_u(u);
    const auto head = fuse_head(w, Vector::Zero(4), basis);
    const auto a = attribute(feat, basis, head, 3);
    const Vector gap = (u * feat.values).rowwise().mean();
    const double direct = (w * u.transpose()).row(a.predicted_class).dot(gap.cwiseMax(0.0));
    CHECK(std::abs(a.scores.sum() - direct) < 1e-5);
  }
}

TEST_CASE("attribution: permuting the rows of U permutes the scores") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const Index c = 7;
    const FeatureMap feat(random_matrix(c, 9, rng), 3, 3);
    const Matrix u = random_rotation(c, rng);
    const Matrix w = random_matrix(5, c, rng);
    std::vector<Index> perm(static_cast<std::size_t>(c));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix pu(c, c);
    for (Index i = 0; i < c; ++i) pu.row(i) = u.row(perm[static_cast<std::size_t>(i)]);

    const auto b0 = basis_with_u(u);
    const auto b1 = basis_with_u(pu);
    const auto a0 = attribute(feat, b0, fuse_head(w, Vector::Zero(5), b0), c);
    const auto a1 = attribute(feat, b1, fuse_head(w, Vector::Zero(5), b1), c);
    CHECK(a0.predicted_class == a1.predicted_class);
    for (Index i = 0; i < c; ++i) CHECK(std::abs(a1.scores(i) - a0.scores(perm[static_cast<std::size_t>(i)])) < 1e-10);
  }
}

TEST_CASE("spatial purity map: hand examples") {
  const auto basis = make_basis(2);
  const auto single = map_from_channels({Matrix::Constant(1, 1, 2.0), Matrix::Zero(1, 1)});
  CHECK(spatial_purity_map(single, basis, 0)(0, 0) == doctest::Approx(1.0));

  const auto feat = map_from_channels({mat2(2, -1, 0, 1), mat2(0, 1, 2, 0)});
  const Matrix p0 = spatial_purity_map(feat, basis, 0);
  CHECK(p0.isApprox(mat2(1, 0, 0, 1)));

  const auto negative = map_from_channels({mat2(-1, -2, -0.5, -3), mat2(1, 1, 1, 1)});
  CHECK(spatial_purity_map(negative, basis, 0).isZero(0.0));
}

TEST_CASE("spatial purity map: denominator is the un-rectified norm") {
  // Channel 1 is negative; rectifying it would leave P_0 = 1.
  const auto feat = map_from_channels({Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, -4.0)});
  CHECK(spatial_purity_map(feat, make_basis(2), 0)(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("relative magnitude map: hand examples") {
  const auto basis = make_basis(2);
  const auto feat = map_from_channels({mat2(2, 0, 0, 1), mat2(0, 1, 2, 0)});
  CHECK(relative_magnitude_map(feat, basis, 0).isApprox(mat2(1, 0, 0, 0.5)));
  const auto constant = map_from_channels({Matrix::Constant(2, 2, 0.7), Matrix::Zero(2, 2)});
  CHECK(relative_magnitude_map(constant, basis, 0).isApprox(Matrix::Ones(2, 2)));
  const auto negative = map_from_channels({Matrix::Constant(2, 2, -0.7), Matrix::Ones(2, 2)});
  CHECK(relative_magnitude_map(negative, basis, 0).isZero(0.0));
}

TEST_CASE("concept heatmap: product of the two maps, then upsampled") {
  const auto basis = make_basis(2);
  const auto feat = map_from_channels({mat2(2, -1, 0, 1), mat2(0, 1, 2, 0)});
  // P_0 = [[1,0],[0,1]], M_0 = [[1,0],[0,0.5]].
  const auto h = concept_heatmap(feat, basis, 0, {3, 8, 8});
  CHECK(h.channel == 0);
  CHECK(h.values.isApprox(mat2(1, 0, 0, 0.5)));
  CHECK(h.upsampled.rows() == 8);
  CHECK(h.upsampled.cols() == 8);
  CHECK(h.upsampled.maxCoeff() <= h.values.maxCoeff() + 1e-12);
  CHECK(h.upsampled.minCoeff() >= 0.0);

  const auto zero = concept_heatmap(FeatureMap(Matrix::Zero(2, 4), 2, 2), basis, 1, {1, 4, 4});
  CHECK(zero.values.isZero(0.0));
  CHECK(zero.upsampled.isZero(0.0));
}

TEST_CASE("property: heatmap entries stay in [0, 1] for arbitrary maps and bases") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 500; ++trial) {
    const Index c = 1 + static_cast<Index>(rng() % 8), h = 1 + static_cast<Index>(rng() % 6),
                w = 1 + static_cast<Index>(rng() % 6);
    const FeatureMap feat(random_matrix(c, h * w, rng, scale(rng)), h, w);
    const auto basis = basis_with_u(random_rotation(c, rng));
    const Index ch = static_cast<Index>(rng() % static_cast<std::uint64_t>(c));
    const auto heat = concept_heatmap(feat, basis, ch, {1, h * 3 + 1, w * 2 + 3});
    CHECK(heat.values.minCoeff() >= 0.0);
    CHECK(heat.values.maxCoeff() <= 1.0);
    CHECK(heat.upsampled.minCoeff() >= 0.0);
    CHECK(heat.upsampled.maxCoeff() <= 1.0);
    CHECK(spatial_purity_map(feat, basis, ch).maxCoeff() <= 1.0);
  }
}

TEST_CASE("bilinear resize: identity size, constants and range") {
  std::mt19937_64 rng(22);
  const Matrix src = uniform_matrix(5, 4, rng, -2.0, 3.0);
  CHECK(bilinear_resize(src, 5, 4).isApprox(src));
  CHECK(bilinear_resize(Matrix::Constant(3, 3, 0.25), 11, 7).isApprox(Matrix::Constant(11, 7, 0.25)));
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix m = uniform_matrix(1 + rng() % 6, 1 + rng() % 6, rng, -1.0, 1.0);
    const Matrix out = bilinear_resize(m, 1 + static_cast<Index>(rng() % 20), 1 + static_cast<Index>(rng() % 20));
    CHECK(out.maxCoeff() <= m.maxCoeff() + 1e-12);
    CHECK(out.minCoeff() >= m.minCoeff() - 1e-12);
  }
}

TEST_CASE("bbox: hand examples") {
  Matrix heat(3, 3);
  heat << 0.9, 0.85, 0, 0, 0, 0, 0, 0.82, 0.95;
  const auto box = extract_bbox(heat);
  CHECK_FALSE(box.empty);
  CHECK(box.row_min == 0);
  CHECK(box.row_max == 0);
  CHECK(box.col_min == 0);
  CHECK(box.col_max == 1);

  Matrix single = Matrix::Zero(5, 6);
  single(2, 3) = 0.4;
  CHECK(extract_bbox(single) == BoundingBox{2, 2, 3, 3, false});

  CHECK(extract_bbox(Matrix::Zero(4, 4)).empty);
}

TEST_CASE("bbox: diagonal neighbours join only under 8-connectivity") {
  Matrix heat = Matrix::Zero(3, 3);
  heat(0, 0) = heat(1, 1) = heat(2, 2) = 1.0;
  CHECK(extract_bbox(heat, 0.8, Connectivity::kFour) == BoundingBox{0, 0, 0, 0, false});
  CHECK(extract_bbox(heat, 0.8, Connectivity::kEight) == BoundingBox{0, 2, 0, 2, false});
}

TEST_CASE("bbox: every 3x3 binary mask agrees with the union-find oracle") {
  for (const auto conn : {Connectivity::kFour, Connectivity::kEight}) {
    int mismatches = 0;
    for (int mask = 0; mask < 512; ++mask) {
      Matrix heat(3, 3);
      for (Index i = 0; i < 9; ++i) heat(i / 3, i % 3) = (mask >> i) & 1 ? 1.0 : 0.0;
      const auto got = extract_bbox(heat, 0.8, conn);
      const auto want = bbox_oracle(heat, 0.8, conn);
      mismatches += !(got == want);
      if (!got.empty) {
        CHECK(got.row_min <= got.row_max);
        CHECK(got.col_min <= got.col_max);
      }
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("bbox: random real-valued heatmaps agree with the oracle") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> frac(0.3, 0.95);
  for (const auto conn : {Connectivity::kFour, Connectivity::kEight}) {
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const Index rows = trial % 4 == 0 ? 8 : 1 + static_cast<Index>(rng() % 12);
      const Index cols = trial % 4 == 0 ? 8 : 1 + static_cast<Index>(rng() % 12);
      Matrix heat = uniform_matrix(rows, cols, rng, 0.0, 1.0);
      // Quantize some maps so equal-size components and plateaus occur.
      if (trial % 3 == 0) heat = (heat * 4.0).array().floor().matrix() / 4.0;
      const double t = trial % 2 ? 0.8 : frac(rng);
      mismatches += !(extract_bbox(heat, t, conn) == bbox_oracle(heat, t, conn));
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("explain: toy closure for k = 1 and determinism") {
  const auto toy = small_toy(4);
  const auto world = toy::make_world(toy);
  const Backends b = toy::make_backends(toy);
  // The exact unmixing basis.
  const auto basis = basis_with_u(world->mixing.transpose());
  const auto& enc = *b.encoder;
  BankInit init;
  init.rank = 4;
  PromptBank bank = init_bank(4, {enc.token_count(), enc.embed_dim(), enc.pooled_dim()}, init);
  for (Index c = 0; c < 4; ++c) {
    const auto emb = enc.encode(b.class_names[static_cast<std::size_t>(c)]);
    bank.at(c).pe_anchor = emb.pe;
    bank.at(c).ppe_anchor = emb.ppe;
    bank.at(c).anchor_label = b.class_names[static_cast<std::size_t>(c)];
  }

  ExplainOptions options;
  options.k = 1;
  options.samples_per_channel = 3;
  options.seed = 99;
  for (Index concept_index = 0; concept_index < 4; ++concept_index) {
    const auto report = explain(world->concept_image(concept_index), basis, bank, b, options);
    REQUIRE(report.channels.size() == 1);
    const auto& ch = report.channels.front();
    CHECK(ch.channel == concept_index);
    CHECK(ch.prototypes.size() == 3);
    for (const auto& p : ch.prototypes) {
      const auto feat = b.extractor->extract(p.image);
      const double own = purity(feat, basis, concept_index);
      for (Index other = 0; other < 4; ++other)
        if (other != concept_index) CHECK(own > purity(feat, basis, other));
      CHECK(p.heatmap.values.maxCoeff() <= 1.0);
    }

    const auto again = explain(world->concept_image(concept_index), basis, bank, b, options);
    REQUIRE(again.channels.size() == 1);
    for (std::size_t n = 0; n < ch.prototypes.size(); ++n) {
      CHECK(again.channels[0].prototypes[n].seed == ch.prototypes[n].seed);
      CHECK(again.channels[0].prototypes[n].image.pixels == ch.prototypes[n].image.pixels);
      CHECK(again.channels[0].prototypes[n].bbox == ch.prototypes[n].bbox);
    }
  }
}

TEST_CASE("explain: default k is 3 and the report is sorted") {
  const auto toy = small_toy(6);
  const auto world = toy::make_world(toy);
  const Backends b = toy::make_backends(toy);
  const auto bank = perturbed_bank(b, 4, 5);
  ExplainOptions options;
  CHECK(options.k == 3);
  const auto report = explain(world->concept_image(2), make_basis(6), bank, b, options);
  REQUIRE(report.channels.size() == 3);
  for (std::size_t i = 1; i < report.channels.size(); ++i)
    CHECK(report.channels[i - 1].score >= report.channels[i].score);
  CHECK_FALSE(report.channels[0].input_heatmap.has_value());

  options.input_heatmaps = true;
  const auto with_input = explain(world->concept_image(2), make_basis(6), bank, b, options);
  CHECK(with_input.channels[0].input_heatmap.has_value());
  CHECK(with_input.channels[0].input_bbox.has_value());
}
