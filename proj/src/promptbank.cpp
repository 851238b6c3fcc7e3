#include "prodg/promptbank.hpp"

#include "prodg/rng.hpp"

#include <cmath>

namespace prodg {
namespace {

Matrix sigma(const Matrix& logvar) {
  return (0.5 * logvar.array().max(kLogvarMin).min(kLogvarMax)).exp().matrix();
}

// Shared log-variance broadcasts a 1x1 value over the full shape.
Matrix broadcast(const Matrix& s, Index rows, Index cols) {
  return s.size() == 1 ? Matrix::Constant(rows, cols, s(0, 0)) : s;
}

Matrix reduce_like(const Matrix& g, const Matrix& like) {
  return like.size() == 1 ? Matrix::Constant(1, 1, g.sum()) : g;
}

}  // namespace

EntryParams EntryParams::zeros_like() const {
  return {Matrix::Zero(lora_a.rows(), lora_a.cols()), Matrix::Zero(lora_b.rows(), lora_b.cols()),
          Vector::Zero(delta_ppe.size()), Matrix::Zero(logvar_pe.rows(), logvar_pe.cols()),
          Vector::Zero(logvar_ppe.size())};
}

EntryParams& EntryParams::operator+=(const EntryParams& o) {
  lora_a += o.lora_a;
  lora_b += o.lora_b;
  delta_ppe += o.delta_ppe;
  logvar_pe += o.logvar_pe;
  logvar_ppe += o.logvar_ppe;
  return *this;
}

EntryParams& EntryParams::operator*=(double s) {
  lora_a *= s;
  lora_b *= s;
  delta_ppe *= s;
  logvar_pe *= s;
  logvar_ppe *= s;
  return *this;
}

double EntryParams::squared_norm() const {
  return lora_a.squaredNorm() + lora_b.squaredNorm() + delta_ppe.squaredNorm() +
         logvar_pe.squaredNorm() + logvar_ppe.squaredNorm();
}

bool EntryParams::all_finite() const {
  return lora_a.allFinite() && lora_b.allFinite() && delta_ppe.allFinite() &&
         logvar_pe.allFinite() && logvar_ppe.allFinite();
}

PromptBankEntry& PromptBank::at(Index c) {
  if (c < 0 || c >= channels()) throw InvalidArgument("prompt bank: channel out of range");
  return entries[static_cast<std::size_t>(c)];
}

const PromptBankEntry& PromptBank::at(Index c) const {
  if (c < 0 || c >= channels()) throw InvalidArgument("prompt bank: channel out of range");
  return entries[static_cast<std::size_t>(c)];
}

PromptBank init_bank(Index channels, BankDims dims, const BankInit& init) {
  if (init.rank <= 0) throw InvalidArgument("init_bank: rank must be positive");
  if (channels <= 0) throw InvalidArgument("init_bank: channel count must be positive");
  if (dims.token_count <= 0 || dims.embed_dim <= 0 || dims.pooled_dim <= 0)
    throw InvalidArgument("init_bank: embedding dims must be positive");
  PromptBank bank;
  bank.rank = init.rank;
  bank.dims = dims;
  bank.entries.reserve(static_cast<std::size_t>(channels));
  for (Index c = 0; c < channels; ++c) {
    PromptBankEntry e;
    e.pe_anchor = Matrix::Zero(dims.token_count, dims.embed_dim);
    e.ppe_anchor = Vector::Zero(dims.pooled_dim);
    const auto s = derive_seed({static_cast<std::uint64_t>(Stream::kInit), init.seed,
                                static_cast<std::uint64_t>(c)});
    e.theta.lora_a = init.init_scale * standard_normal(dims.token_count, init.rank, s);
    e.theta.lora_b = Matrix::Zero(init.rank, dims.embed_dim);
    e.theta.delta_ppe = Vector::Zero(dims.pooled_dim);
    if (init.shared_logvar) {
      e.theta.logvar_pe = Matrix::Constant(1, 1, init.logvar);
      e.theta.logvar_ppe = Vector::Constant(1, init.logvar);
    } else {
      e.theta.logvar_pe = Matrix::Constant(dims.token_count, dims.embed_dim, init.logvar);
      e.theta.logvar_ppe = Vector::Constant(dims.pooled_dim, init.logvar);
    }
    clamp_logvars(e);
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

NoiseSample draw_noise(const BankDims& dims, std::uint64_t seed) {
  NoiseSample n;
  n.seed = seed;
  n.eps_pe = standard_normal(dims.token_count, dims.embed_dim, derive_seed({seed, 1}));
  n.eps_ppe = standard_normal(dims.pooled_dim, 1, derive_seed({seed, 2})).col(0);
  return n;
}

std::uint64_t noise_seed(std::uint64_t global_seed, std::int64_t step, Index channel, Index variation) {
  return derive_seed({static_cast<std::uint64_t>(Stream::kEmbeddingNoise), global_seed,
                      static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(channel),
                      static_cast<std::uint64_t>(variation)});
}

std::uint64_t latent_seed(std::uint64_t global_seed, std::int64_t step, Index channel, Index variation) {
  return derive_seed({static_cast<std::uint64_t>(Stream::kLatent), global_seed,
                      static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(channel),
                      static_cast<std::uint64_t>(variation)});
}

Matrix compute_delta_pe(const PromptBankEntry& entry) { return entry.theta.lora_a * entry.theta.lora_b; }

SampledEmbedding sample_embeddings(const PromptBankEntry& entry, const NoiseSample& noise) {
  const Index t = entry.token_count(), d = entry.embed_dim();
  if (noise.eps_pe.rows() != t || noise.eps_pe.cols() != d || noise.eps_ppe.size() != entry.pooled_dim())
    throw InvalidArgument("sample_embeddings: noise shape does not match entry");
  const Matrix sd_pe = broadcast(sigma(entry.theta.logvar_pe), t, d);
  const Vector sd_ppe =
      broadcast(sigma(entry.theta.logvar_ppe), entry.pooled_dim(), 1).col(0);
  return {entry.pe_anchor + compute_delta_pe(entry) + sd_pe.cwiseProduct(noise.eps_pe),
          entry.ppe_anchor + entry.theta.delta_ppe + sd_ppe.cwiseProduct(noise.eps_ppe)};
}

EntryParams sample_embeddings_backward(const PromptBankEntry& entry, const NoiseSample& noise,
                                       const Matrix& grad_pe, const Vector& grad_ppe) {
  const Index t = entry.token_count(), d = entry.embed_dim();
  EntryParams g;
  g.lora_a = grad_pe * entry.theta.lora_b.transpose();
  g.lora_b = entry.theta.lora_a.transpose() * grad_pe;
  g.delta_ppe = grad_ppe;
  // d/dlogvar of exp(logvar/2) * eps = 0.5 * exp(logvar/2) * eps
  const Matrix sd_pe = broadcast(sigma(entry.theta.logvar_pe), t, d);
  const Vector sd_ppe = broadcast(sigma(entry.theta.logvar_ppe), entry.pooled_dim(), 1).col(0);
  g.logvar_pe = reduce_like(0.5 * grad_pe.cwiseProduct(sd_pe).cwiseProduct(noise.eps_pe),
                            entry.theta.logvar_pe);
  g.logvar_ppe = reduce_like(0.5 * grad_ppe.cwiseProduct(sd_ppe).cwiseProduct(noise.eps_ppe),
                             entry.theta.logvar_ppe)
                     .col(0);
  return g;
}

double delta_penalty(const PromptBankEntry& entry) {
  const Matrix dpe = compute_delta_pe(entry);
  return dpe.squaredNorm() / static_cast<double>(dpe.size()) +
         entry.theta.delta_ppe.squaredNorm() / static_cast<double>(entry.theta.delta_ppe.size());
}

EntryParams delta_penalty_grad(const PromptBankEntry& entry) {
  const Matrix dpe = compute_delta_pe(entry);
  const Matrix g_dpe = (2.0 / static_cast<double>(dpe.size())) * dpe;
  EntryParams g = entry.theta.zeros_like();
  g.lora_a = g_dpe * entry.theta.lora_b.transpose();
  g.lora_b = entry.theta.lora_a.transpose() * g_dpe;
  g.delta_ppe = (2.0 / static_cast<double>(entry.theta.delta_ppe.size())) * entry.theta.delta_ppe;
  return g;
}

void clamp_logvars(PromptBankEntry& entry) {
  entry.theta.logvar_pe = entry.theta.logvar_pe.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
  entry.theta.logvar_ppe = entry.theta.logvar_ppe.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
}

std::vector<Index> assign_channels(const Matrix& mean_purity) {
  std::vector<Index> out(static_cast<std::size_t>(mean_purity.cols()), 0);
  for (Index c = 0; c < mean_purity.cols(); ++c) {
    Index best = 0;
    for (Index i = 1; i < mean_purity.rows(); ++i)
      if (mean_purity(i, c) > mean_purity(best, c)) best = i;
    out[static_cast<std::size_t>(c)] = best;
  }
  return out;
}

DiscoveryResult discover_anchors(PromptBank& bank, const std::vector<std::string>& class_names,
                                 const Backends& backends, const DiscoveryOptions& options) {
  if (class_names.empty()) throw InvalidArgument("discover_anchors: empty class list");
  if (options.images_per_class <= 0) throw InvalidArgument("discover_anchors: images_per_class must be positive");
  backends.check_compatible();
  const Index channels = bank.channels();
  if (backends.extractor->channels() != channels)
    throw InvalidArgument("discover_anchors: bank and extractor channel counts differ");

  const OrthogonalBasis identity = make_basis(channels);
  const auto n_classes = static_cast<Index>(class_names.size());
  DiscoveryResult result;
  result.mean_purity = Matrix::Zero(n_classes, channels);
  std::vector<TextEmbedding> embeddings;
  embeddings.reserve(class_names.size());

  for (Index i = 0; i < n_classes; ++i) {
    auto emb = encode_text(*backends.encoder, class_names[static_cast<std::size_t>(i)]);
    for (Index n = 0; n < options.images_per_class; ++n) {
      const auto seed = derive_seed({static_cast<std::uint64_t>(Stream::kLatent), options.seed,
                                     static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(n)});
      const Image img = generate(*backends.generator, emb.pe, emb.ppe, seed);
      const FeatureMap feat = extract_features(*backends.extractor, img);
      for (Index c = 0; c < channels; ++c) result.mean_purity(i, c) += purity(feat, identity, c);
    }
    embeddings.push_back(std::move(emb));
  }
  result.mean_purity /= static_cast<double>(options.images_per_class);
  result.assigned_class = assign_channels(result.mean_purity);

  result.best_mean_purity.resize(static_cast<std::size_t>(channels));
  for (Index c = 0; c < channels; ++c) {
    const Index cls = result.assigned_class[static_cast<std::size_t>(c)];
    auto& entry = bank.at(c);
    const auto& emb = embeddings[static_cast<std::size_t>(cls)];
    if (emb.pe.rows() != entry.token_count() || emb.pe.cols() != entry.embed_dim() ||
        emb.ppe.size() != entry.pooled_dim())
      throw InvalidArgument("discover_anchors: encoder dims differ from bank dims");
    entry.pe_anchor = emb.pe;
    entry.ppe_anchor = emb.ppe;
    entry.anchor_label = class_names[static_cast<std::size_t>(cls)];
    result.best_mean_purity[static_cast<std::size_t>(c)] = result.mean_purity(cls, c);
  }
  return result;
}

}  // namespace prodg
