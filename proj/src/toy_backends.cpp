#include "prodg/toy_backends.hpp"

#include "prodg/expm.hpp"
#include "prodg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace prodg::toy {
namespace {

Vector latent_vector(Index dim, std::uint64_t latent_seed) {
  return standard_normal(dim, 1, derive_seed({static_cast<std::uint64_t>(Stream::kLatent),
                                              latent_seed}))
      .col(0);
}

}  // namespace

std::vector<std::string> default_class_names(Index count) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

Image ToyWorld::concept_image(Index concept_index, double amplitude) const {
  if (concept_index < 0 || concept_index >= config.channels)
    throw InvalidArgument("concept_image: concept index out of range");
  Image img = Image::zeros(image_shape());
  const Vector pattern = amplitude * pixel_scale * templates.row(concept_index).transpose();
  for (Index p = 0; p < grid() * grid(); ++p) add_block(img, p, pattern);
  return img;
}

Vector ToyWorld::block(const Image& image, Index location) const {
  const Index g = grid(), ps = config.patch;
  const Index by = location / g, bx = location % g;
  Vector out(patch_dim());
  Index d = 0;
  for (Index c = 0; c < config.image_channels; ++c)
    for (Index dy = 0; dy < ps; ++dy)
      for (Index dx = 0; dx < ps; ++dx) out(d++) = image.at(c, by * ps + dy, bx * ps + dx);
  return out;
}

void ToyWorld::add_block(Image& image, Index location, const Vector& values) const {
  const Index g = grid(), ps = config.patch;
  const Index by = location / g, bx = location % g;
  Index d = 0;
  for (Index c = 0; c < config.image_channels; ++c)
    for (Index dy = 0; dy < ps; ++dy)
      for (Index dx = 0; dx < ps; ++dx) image.at(c, by * ps + dy, bx * ps + dx) += values(d++);
}

std::shared_ptr<const ToyWorld> make_world(const ToyConfig& config) {
  if (config.channels <= 0) throw InvalidArgument("toy: channels must be positive");
  if (config.patch <= 0 || config.image_size % config.patch != 0)
    throw InvalidArgument("toy: image_size must be a multiple of patch");
  auto world = std::make_shared<ToyWorld>();
  world->config = config;
  const Index dims = world->patch_dim();
  if (config.channels > dims)
    throw InvalidArgument("toy: more channels than block dimensions (" + std::to_string(dims) + ")");

  world->class_names =
      config.class_names.empty() ? default_class_names(config.channels) : config.class_names;
  if (static_cast<Index>(world->class_names.size()) != config.channels)
    throw InvalidArgument("toy: planted world needs exactly one class name per channel");

  const std::uint64_t base = derive_seed({static_cast<std::uint64_t>(Stream::kToyWorld), config.seed});

  // Disjoint supports: shuffle block coordinates, deal them round-robin.
  std::vector<Index> order(static_cast<std::size_t>(dims));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 gen(derive_seed({base, 1}));
  std::shuffle(order.begin(), order.end(), gen);
  world->templates = Matrix::Zero(config.channels, dims);
  for (Index i = 0; i < dims; ++i) world->templates(i % config.channels, order[i]) = 1.0;
  Index min_support = dims;
  for (Index j = 0; j < config.channels; ++j) {
    const double count = world->templates.row(j).sum();
    min_support = std::min(min_support, static_cast<Index>(count));
    world->templates.row(j) /= std::sqrt(count);
  }
  // Brightest pixel stays below 0.8 for any amplitude the decoder produces.
  world->pixel_scale =
      0.8 * std::sqrt(static_cast<double>(min_support)) / (1.0 + config.amplitude_jitter);

  // Plane rotations by `mixing` radians on disjoint random channel pairs.
  // Below pi/4 every channel keeps its own concept as the dominant share.
  std::vector<Index> channels(static_cast<std::size_t>(config.channels));
  std::iota(channels.begin(), channels.end(), Index{0});
  std::shuffle(channels.begin(), channels.end(), gen);
  std::bernoulli_distribution coin(0.5);
  Matrix skew = Matrix::Zero(config.channels, config.channels);
  for (std::size_t i = 0; i + 1 < channels.size(); i += 2) {
    const double sign = coin(gen) ? 1.0 : -1.0;
    skew(channels[i], channels[i + 1]) = sign;
    skew(channels[i + 1], channels[i]) = -sign;
  }
  world->mixing = expm(config.mixing * skew);
  return world;
}

// ---------------------------------------------------------------------------

HashEncoder::HashEncoder(Index token_count, Index embed_dim, Index pooled_dim, std::uint64_t seed)
    : token_count_(token_count), embed_dim_(embed_dim), pooled_dim_(pooled_dim), seed_(seed) {
  if (token_count <= 0 || embed_dim <= 0 || pooled_dim <= 0)
    throw InvalidArgument("toy_hash: dims must be positive");
}

TextEmbedding HashEncoder::encode(const std::string& prompt) const {
  if (prompt.empty()) throw InvalidArgument("encode_text: empty prompt");
  const std::uint64_t s = derive_seed({seed_, fnv1a64(prompt)});
  return {standard_normal(token_count_, embed_dim_, derive_seed({s, 1})),
          standard_normal(pooled_dim_, 1, derive_seed({s, 2})).col(0)};
}

// ---------------------------------------------------------------------------

PlantedExtractor::PlantedExtractor(std::shared_ptr<const ToyWorld> world) : world_(std::move(world)) {
  const Index c = world_->config.channels;
  const std::uint64_t s = derive_seed({static_cast<std::uint64_t>(Stream::kToyWorld),
                                       world_->config.seed, 2});
  head_.weights = 2.0 * world_->mixing.transpose() + 0.05 * standard_normal(c, c, derive_seed({s, 1}));
  head_.bias = 0.01 * standard_normal(c, 1, derive_seed({s, 2})).col(0);
}

FeatureMap PlantedExtractor::extract(const Image& image) const {
  if (!(image.shape == input_shape()))
    throw InvalidArgument("toy_planted: image shape does not match extractor input");
  const auto& w = *world_;
  const Index locations = w.grid() * w.grid();
  Matrix response(w.config.channels, locations);
  for (Index p = 0; p < locations; ++p) {
    response.col(p) =
        (w.templates * w.block(image, p)).array() + w.config.bias;
  }
  response = response.cwiseMax(0.0);
  return FeatureMap(w.mixing * response, w.grid(), w.grid(), name());
}

Image PlantedExtractor::backward(const Image& image, const Matrix& grad_features) const {
  const auto& w = *world_;
  const Index locations = w.grid() * w.grid();
  if (grad_features.rows() != w.config.channels || grad_features.cols() != locations)
    throw InvalidArgument("toy_planted: gradient shape mismatch");
  Image grad = Image::zeros(input_shape());
  const Matrix grad_response = w.mixing.transpose() * grad_features;
  for (Index p = 0; p < locations; ++p) {
    const Vector pre = (w.templates * w.block(image, p)).array() + w.config.bias;
    const Vector g = (pre.array() > 0.0).select(grad_response.col(p), 0.0);
    w.add_block(grad, p, w.templates.transpose() * g);
  }
  return grad;
}

// ---------------------------------------------------------------------------

Decoder::Decoder(std::shared_ptr<const ToyWorld> world, const TextEncoder& encoder)
    : world_(std::move(world)) {
  const auto& cfg = world_->config;
  if (encoder.token_count() != cfg.token_count || encoder.embed_dim() != cfg.embed_dim ||
      encoder.pooled_dim() != cfg.pooled_dim)
    throw InvalidArgument("toy_decoder: encoder dims differ from world config");
  keys_.resize(cfg.channels, cfg.embed_dim + cfg.pooled_dim);
  for (Index j = 0; j < cfg.channels; ++j) {
    const auto emb = encoder.encode(world_->class_names[static_cast<std::size_t>(j)]);
    keys_.row(j) = query(emb.pe, emb.ppe).transpose();
  }
  const std::uint64_t s = derive_seed({static_cast<std::uint64_t>(Stream::kToyWorld), cfg.seed, 3});
  const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  latent_logits_ = inv_sqrt_l * standard_normal(cfg.channels, cfg.latent_dim, derive_seed({s, 1}));
  latent_amplitude_ =
      inv_sqrt_l * standard_normal(world_->grid() * world_->grid(), cfg.latent_dim, derive_seed({s, 2}));
}

Vector Decoder::query(const Matrix& pe, const Vector& ppe) const {
  Vector q(pe.cols() + ppe.size());
  q << pe.colwise().mean().transpose(), ppe;
  return q;
}

Decoder::Forward Decoder::forward(const Matrix& pe, const Vector& ppe,
                                  std::uint64_t latent_seed) const {
  const auto& cfg = world_->config;
  Forward f;
  f.latent = latent_vector(cfg.latent_dim, latent_seed);
  const double q_dim = static_cast<double>(keys_.cols());
  Vector logits = (cfg.temperature / q_dim) * (keys_ * query(pe, ppe)) +
                  cfg.latent_logit_scale * (latent_logits_ * f.latent);
  logits.array() -= logits.maxCoeff();
  f.weights = logits.array().exp();
  f.weights /= f.weights.sum();
  f.amplitude = (latent_amplitude_ * f.latent).array().tanh() * cfg.amplitude_jitter + 1.0;
  return f;
}

Vector Decoder::concept_weights(const Matrix& pe, const Vector& ppe,
                                std::uint64_t latent_seed) const {
  return forward(pe, ppe, latent_seed).weights;
}

Image Decoder::generate(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed) const {
  if (pe.rows() != token_count() || pe.cols() != embed_dim() || ppe.size() != pooled_dim())
    throw InvalidArgument("toy_decoder: embedding dims mismatch");
  const auto f = forward(pe, ppe, latent_seed);
  const Vector pattern = world_->pixel_scale * (world_->templates.transpose() * f.weights);
  Image img = Image::zeros(image_shape());
  for (Index p = 0; p < f.amplitude.size(); ++p) world_->add_block(img, p, f.amplitude(p) * pattern);
  return img;
}

EmbeddingGrad Decoder::backward(const Matrix& pe, const Vector& ppe, std::uint64_t latent_seed,
                                const Image& grad_image) const {
  if (!(grad_image.shape == image_shape())) throw InvalidArgument("toy_decoder: gradient shape mismatch");
  const auto& cfg = world_->config;
  const auto f = forward(pe, ppe, latent_seed);

  Vector grad_pattern = Vector::Zero(world_->patch_dim());
  for (Index p = 0; p < f.amplitude.size(); ++p)
    grad_pattern += f.amplitude(p) * world_->block(grad_image, p);
  const Vector grad_weights = world_->pixel_scale * (world_->templates * grad_pattern);
  // softmax VJP
  const Vector grad_logits =
      f.weights.cwiseProduct((grad_weights.array() - f.weights.dot(grad_weights)).matrix());
  const double q_dim = static_cast<double>(keys_.cols());
  const Vector grad_q = (cfg.temperature / q_dim) * (keys_.transpose() * grad_logits);

  EmbeddingGrad g;
  const Vector grad_mean = grad_q.head(cfg.embed_dim) / static_cast<double>(cfg.token_count);
  g.pe = Vector::Ones(cfg.token_count) * grad_mean.transpose();
  g.ppe = grad_q.tail(cfg.pooled_dim);
  return g;
}

// ---------------------------------------------------------------------------

CosineMetric::CosineMetric(std::shared_ptr<const FeatureExtractor> extractor)
    : extractor_(std::move(extractor)) {}

double CosineMetric::distance(const Image& a, const Image& b) const {
  if (!(a.shape == b.shape)) throw InvalidArgument("toy_cosine: image shapes differ");
  const Vector va = global_average_pool(extract_features(*extractor_, a));
  const Vector vb = global_average_pool(extract_features(*extractor_, b));
  const Vector na = va / std::max(va.norm(), kPurityEpsilon);
  const Vector nb = vb / std::max(vb.norm(), kPurityEpsilon);
  return 0.5 * (na - nb).squaredNorm();
}

Backends make_backends(const ToyConfig& config) {
  auto world = make_world(config);
  auto encoder = std::make_shared<HashEncoder>(config.token_count, config.embed_dim,
                                               config.pooled_dim, config.seed);
  auto extractor = std::make_shared<PlantedExtractor>(world);
  Backends b;
  b.extractor = extractor;
  b.encoder = encoder;
  b.generator = std::make_shared<Decoder>(world, *encoder);
  b.metric = std::make_shared<CosineMetric>(extractor);
  b.class_names = world->class_names;
  return b;
}

}  // namespace prodg::toy
