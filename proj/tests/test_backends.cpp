#include "prodg/backends.hpp"
#include "prodg/toy_backends.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace prodg;
using prodg::testing::random_matrix;
using prodg::testing::relative_error;

namespace {

Image random_image(const ImageShape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img = Image::zeros(s);
  for (Index i = 0; i < img.pixels.size(); ++i) img.pixels(i) = u(rng);
  return img;
}

}  // namespace

TEST_CASE("toy extractor is deterministic and spatially constant on a blank image") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  const Image blank = Image::zeros(b.extractor->input_shape());
  const auto f1 = extract_features(*b.extractor, blank);
  const auto f2 = extract_features(*b.extractor, blank);
  CHECK(f1.values == f2.values);
  for (Index p = 1; p < f1.locations(); ++p) CHECK(f1.values.col(p) == f1.values.col(0));
  CHECK(f1.values.allFinite());
  CHECK(f1.channels() == 8);
  CHECK(f1.height == 4);
  CHECK(f1.width == 4);
}

TEST_CASE("planted concept images light up their own channel") {
  for (Index channels : {4, 8, 12}) {
    toy::ToyConfig cfg;
    cfg.channels = channels;
    const auto world = toy::make_world(cfg);
    const toy::PlantedExtractor extractor(world);
    for (Index i = 0; i < channels; ++i) {
      const Vector gap = global_average_pool(extract_features(extractor, world->concept_image(i)));
      for (Index j = 0; j < channels; ++j)
        if (j != i) CHECK(gap(i) > gap(j));
    }
  }
}

TEST_CASE("concept images stay inside the unit pixel range") {
  const auto world = toy::make_world(toy::ToyConfig{});
  for (Index i = 0; i < 8; ++i) {
    const Image img = world->concept_image(i);
    CHECK(img.pixels.minCoeff() >= 0.0);
    CHECK(img.pixels.maxCoeff() <= 1.0);
  }
}

TEST_CASE("classify is the linear head on pooled features") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  std::mt19937_64 rng(31);
  const auto feat = extract_features(*b.extractor, random_image(b.extractor->input_shape(), rng));
  const auto& head = b.extractor->head();
  const Vector oracle = head.weights * feat.values.rowwise().mean() + head.bias;
  CHECK((classify(*b.extractor, feat) - oracle).cwiseAbs().maxCoeff() < 1e-12);

  Matrix ident = Matrix::Identity(2, 2);
  Matrix v(2, 2);
  v << 1, 1, 2, 2;
  const FeatureMap f(v, 1, 2);
  CHECK(head_logits(ident, Vector::Zero(2), f) == Vector::LinSpaced(2, 1, 2));
  const Vector bias = Vector::Constant(2, 0.25);
  CHECK(head_logits(Matrix::Zero(2, 2), bias, f) == bias);

  const FeatureMap wrong(Matrix::Zero(3, 16), 4, 4);
  CHECK_THROWS_AS(classify(*b.extractor, wrong), InvalidArgument);
}

TEST_CASE("hash encoder is deterministic and separates prompts") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  const auto a1 = encode_text(*b.encoder, "class_0");
  const auto a2 = encode_text(*b.encoder, "class_0");
  const auto c1 = encode_text(*b.encoder, "class_1");
  CHECK(a1.pe == a2.pe);
  CHECK(a1.ppe == a2.ppe);
  CHECK((a1.pe != c1.pe || a1.ppe != c1.ppe));
  CHECK(a1.pe.rows() == 4);
  CHECK(a1.pe.cols() == 8);
  CHECK(a1.ppe.size() == 8);
  CHECK_THROWS_AS(encode_text(*b.encoder, ""), InvalidArgument);
}

TEST_CASE("adapter backends carry the large-model dimensions and are unavailable") {
  AdapterSpec spec;
  CHECK(spec.token_count == 512);
  CHECK(spec.embed_dim == 4096);
  spec.kind = "flux";
  CHECK_THROWS_AS(require_adapter(spec), BackendError);
}

TEST_CASE("toy generator is deterministic and latent-sensitive") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  const auto e = encode_text(*b.encoder, "class_3");
  const Image x1 = generate(*b.generator, e.pe, e.ppe, 42);
  const Image x2 = generate(*b.generator, e.pe, e.ppe, 42);
  const Image x3 = generate(*b.generator, e.pe, e.ppe, 43);
  CHECK(x1.pixels == x2.pixels);
  CHECK(x1.pixels != x3.pixels);
  CHECK(x1.shape == b.extractor->input_shape());
  CHECK_THROWS_AS(generate(*b.generator, e.pe.leftCols(4), e.ppe, 1), InvalidArgument);
}

TEST_CASE("class prompts generate their own concept") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  const auto& dec = dynamic_cast<const toy::Decoder&>(*b.generator);
  for (Index i = 0; i < 8; ++i) {
    const auto e = encode_text(*b.encoder, b.class_names[static_cast<std::size_t>(i)]);
    Index best = -1;
    dec.concept_weights(e.pe, e.ppe, 5).maxCoeff(&best);
    CHECK(best == i);
  }
}

TEST_CASE("generator backward matches finite differences of a linear image functional") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  std::mt19937_64 rng(32);
  const auto e = encode_text(*b.encoder, "class_2");
  Matrix pe = e.pe + random_matrix(e.pe.rows(), e.pe.cols(), rng, 0.2);
  Vector ppe = e.ppe + Vector(random_matrix(e.ppe.size(), 1, rng, 0.2));
  const Image probe(b.generator->image_shape(), random_matrix(b.generator->image_shape().size(), 1, rng));
  auto f = [&] { return probe.pixels.dot(generate(*b.generator, pe, ppe, 9).pixels); };
  const auto grad = b.generator->backward(pe, ppe, 9, probe);

  for (int k = 0; k < 8; ++k) {
    const Index i = static_cast<Index>(rng() % pe.rows()), j = static_cast<Index>(rng() % pe.cols());
    CHECK(relative_error(prodg::testing::central_difference(pe(i, j), f, 1e-5), grad.pe(i, j)) < 1e-3);
    const Index q = static_cast<Index>(rng() % ppe.size());
    CHECK(relative_error(prodg::testing::central_difference(ppe(q), f, 1e-5), grad.ppe(q)) < 1e-3);
  }
}

TEST_CASE("extractor backward matches finite differences") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  std::mt19937_64 rng(33);
  Image img = random_image(b.extractor->input_shape(), rng);
  const Matrix probe = random_matrix(8, 16, rng);
  auto f = [&] { return (probe.array() * extract_features(*b.extractor, img).values.array()).sum(); };
  const Image grad = b.extractor->backward(img, probe);
  for (int k = 0; k < 12; ++k) {
    const Index i = static_cast<Index>(rng() % img.pixels.size());
    CHECK(relative_error(prodg::testing::central_difference(img.pixels(i), f, 1e-6), grad.pixels(i)) < 1e-3);
  }
}

TEST_CASE("toy perceptual distance is a symmetric nonnegative dissimilarity") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  std::mt19937_64 rng(34);
  for (int t = 0; t < 50; ++t) {
    const Image x = random_image(b.extractor->input_shape(), rng);
    const Image y = random_image(b.extractor->input_shape(), rng);
    CHECK(perceptual_distance(*b.metric, x, x) == 0.0);
    const double d = perceptual_distance(*b.metric, x, y);
    CHECK(d >= 0.0);
    CHECK(d == perceptual_distance(*b.metric, y, x));
  }
  const auto world = toy::make_world(toy::ToyConfig{});
  CHECK(perceptual_distance(*b.metric, world->concept_image(0), world->concept_image(5)) > 0.1);
  CHECK_THROWS_AS(perceptual_distance(*b.metric, Image::zeros({3, 16, 16}), Image::zeros({1, 16, 16})),
                  InvalidArgument);
}

TEST_CASE("extractor rejects images of the wrong shape") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  CHECK_THROWS_AS(extract_features(*b.extractor, Image::zeros({3, 8, 8})), InvalidArgument);
  CHECK_THROWS_AS(Image({1, 2, 2}, Vector::Zero(3)), InvalidArgument);
}

TEST_CASE("backends report consistent dimensions") {
  const auto b = toy::make_backends(toy::ToyConfig{});
  CHECK_NOTHROW(b.check_compatible());
  Backends broken = b;
  broken.generator = nullptr;
  CHECK_THROWS_AS(broken.check_compatible(), InvalidArgument);
}
