#include "prodg/trainer.hpp"

#include "prodg/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace prodg {

void TrainConfig::validate(Index channels) const {
  if (iterations < 0) throw InvalidConfiguration("train: iterations must be nonnegative");
  if (warmup < 0 || warmup > iterations)
    throw InvalidConfiguration("train: warmup must lie in [0, iterations]");
  if (variations < 2) throw InvalidConfiguration("train: K must be at least 2");
  if (batch <= 0 || batch % variations != 0)
    throw InvalidConfiguration("train: batch size must be a positive multiple of K");
  if (!(lr_u > 0.0) || !(lr_bank > 0.0)) throw InvalidConfiguration("train: learning rates must be positive");
  if (checkpoint_every < 0) throw InvalidConfiguration("train: checkpoint_every must be nonnegative");
  loss.validate();
  std::set<Index> seen;
  for (Index c : channels_to_train) {
    if (c < 0 || c >= channels) throw InvalidConfiguration("train: channels_to_train index out of range");
    if (!seen.insert(c).second) throw InvalidConfiguration("train: duplicate channel in channels_to_train");
  }
}

std::vector<Index> TrainConfig::trainable_channels(Index channels) const {
  if (!channels_to_train.empty()) return channels_to_train;
  std::vector<Index> all(static_cast<std::size_t>(channels));
  std::iota(all.begin(), all.end(), Index{0});
  return all;
}

const char* phase_name(Phase p) { return p == Phase::kBasis ? "U" : "bank"; }

Phase phase_for_step(std::int64_t step, std::int64_t warmup) {
  if (step < warmup) return Phase::kBasis;
  return (step - warmup) % 2 == 0 ? Phase::kBasis : Phase::kBank;
}

std::string to_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["phase"] = phase_name(m.phase);
  j["mean_purity"] = m.mean_purity;
  j["loss_U"] = m.loss_u;
  j["loss_reg"] = m.loss_reg;
  j["loss_div"] = m.loss_div;
  j["combined"] = m.combined;
  return j.dump();
}

TrainState make_initial_state(PromptBank bank) {
  TrainState s;
  s.basis = make_basis(bank.channels());
  s.moments_a = AdamMoments::like(s.basis.generator());
  s.moments_bank.resize(bank.entries.size());
  for (std::size_t c = 0; c < bank.entries.size(); ++c) {
    const auto& t = bank.entries[c].theta;
    auto& m = s.moments_bank[c];
    m.lora_a = AdamMoments::like(t.lora_a);
    m.lora_b = AdamMoments::like(t.lora_b);
    m.delta_ppe = AdamMoments::like(t.delta_ppe);
    m.logvar_pe = AdamMoments::like(t.logvar_pe);
    m.logvar_ppe = AdamMoments::like(t.logvar_ppe);
  }
  s.bank = std::move(bank);
  return s;
}

BatchPlan plan_batch(const TrainConfig& config, Index channels, std::int64_t step) {
  std::vector<Index> pool = config.trainable_channels(channels);
  const Index unique =
      std::min<Index>(config.batch / config.variations, static_cast<Index>(pool.size()));
  std::mt19937_64 gen(derive_seed({static_cast<std::uint64_t>(Stream::kChannelSampling), config.seed,
                                   static_cast<std::uint64_t>(step)}));
  // Partial Fisher-Yates: the first `unique` slots are a uniform sample.
  for (Index i = 0; i < unique; ++i) {
    std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(gen))]);
  }
  pool.resize(static_cast<std::size_t>(unique));
  return {step, config.seed, std::move(pool), config.variations};
}

EntryParams BatchResult::grad_bank(std::size_t i) const {
  EntryParams g = grad_bank_u.at(i);
  g += grad_bank_reg.at(i);
  g += grad_bank_div.at(i);
  return g;
}

namespace {

struct Sample {
  Index unique_index = 0;
  Index channel = 0;
  NoiseSample noise;
  std::uint64_t latent = 0;
  SampledEmbedding embedding;
  Image image;
  FeatureMap features;
  PurityGrad purity;
  Vector pooled;
};

EntryParams backprop_to_bank(const Sample& s, const PromptBankEntry& entry, const Backends& backends,
                             const Matrix& grad_features) {
  const Image grad_image = backends.extractor->backward(s.image, grad_features);
  const EmbeddingGrad g =
      backends.generator->backward(s.embedding.pe, s.embedding.ppe, s.latent, grad_image);
  return sample_embeddings_backward(entry, s.noise, g.pe, g.ppe);
}

}  // namespace

BatchResult evaluate_batch(const OrthogonalBasis& basis, const PromptBank& bank,
                           const Backends& backends, const LossConfig& loss, const BatchPlan& plan,
                           GradTarget target) {
  if (plan.channels.empty()) throw InvalidArgument("evaluate_batch: no channels planned");
  const Matrix& u = basis.u();
  const Index k_count = plan.variations;

  std::vector<Sample> samples;
  samples.reserve(plan.channels.size() * static_cast<std::size_t>(k_count));
  for (std::size_t i = 0; i < plan.channels.size(); ++i) {
    const Index c = plan.channels[i];
    const auto& entry = bank.at(c);
    for (Index k = 0; k < k_count; ++k) {
      Sample s;
      s.unique_index = static_cast<Index>(i);
      s.channel = c;
      s.noise = draw_noise(bank.dims, noise_seed(plan.seed, plan.step, c, k));
      s.latent = latent_seed(plan.seed, plan.step, c, k);
      s.embedding = sample_embeddings(entry, s.noise);
      if (!s.embedding.pe.allFinite() || !s.embedding.ppe.allFinite())
        throw NumericalFailure("non-finite prompt embedding for channel " + std::to_string(c), plan.step, {});
      try {
        s.image = generate(*backends.generator, s.embedding.pe, s.embedding.ppe, s.latent);
        if (!s.image.pixels.allFinite())
          throw NumericalFailure("non-finite generated image for channel " + std::to_string(c), plan.step, {});
        s.features = extract_features(*backends.extractor, s.image);
      } catch (const BackendError& e) {
        throw BackendError("step " + std::to_string(plan.step) + ", channel " + std::to_string(c) +
                           ": " + e.what());
      }
      s.purity = purity_with_grad(u * s.features.values, c);
      s.pooled = global_average_pool(s.features);
      samples.push_back(std::move(s));
    }
  }

  BatchResult r;
  const auto n_images = static_cast<double>(samples.size());
  for (const auto& s : samples) {
    r.image_channels.push_back(s.channel);
    r.purities.push_back(s.purity.value);
  }
  r.loss_u = loss_u(r.purities);
  r.mean_purity = -r.loss_u;
  r.loss_reg = loss_reg(bank, r.image_channels);

  std::vector<std::pair<Vector, Vector>> pairs;
  std::vector<std::pair<std::size_t, std::size_t>> pair_index;
  for (std::size_t i = 0; i < plan.channels.size(); ++i) {
    const std::size_t base = i * static_cast<std::size_t>(k_count);
    for (Index a = 0; a < k_count; ++a)
      for (Index b = a + 1; b < k_count; ++b) {
        const std::size_t ia = base + static_cast<std::size_t>(a);
        const std::size_t ib = base + static_cast<std::size_t>(b);
        pairs.emplace_back(samples[ia].pooled, samples[ib].pooled);
        pair_index.emplace_back(ia, ib);
      }
  }
  r.loss_div = loss_div(pairs);
  if (!std::isfinite(r.loss_u) || !std::isfinite(r.loss_reg) || !std::isfinite(r.loss_div))
    throw NumericalFailure("non-finite loss at step " + std::to_string(plan.step), plan.step, {});
  r.combined = combined_prompt_loss(r.loss_u, r.loss_reg, r.loss_div, loss);

  if (target == GradTarget::kBasis) {
    Matrix grad_u = Matrix::Zero(u.rows(), u.cols());
    for (const auto& s : samples)
      grad_u.noalias() += (-1.0 / n_images) * s.purity.grad_z * s.features.values.transpose();
    r.grad_a = basis.generator_gradient(grad_u);
  }

  if (target == GradTarget::kBank) {
    const std::size_t n_unique = plan.channels.size();
    for (std::size_t i = 0; i < n_unique; ++i) {
      const auto zero = bank.at(plan.channels[i]).theta.zeros_like();
      r.grad_bank_u.push_back(zero);
      r.grad_bank_reg.push_back(zero);
      r.grad_bank_div.push_back(zero);
    }

    if (loss.weight_u() != 0.0) {
      for (const auto& s : samples) {
        const Matrix grad_f = (-loss.weight_u() / n_images) * (u.transpose() * s.purity.grad_z);
        r.grad_bank_u[static_cast<std::size_t>(s.unique_index)] +=
            backprop_to_bank(s, bank.at(s.channel), backends, grad_f);
      }
    }

    if (loss.weight_div() != 0.0) {
      std::vector<Vector> grad_pooled(samples.size());
      for (auto& g : grad_pooled) g = Vector::Zero(samples.front().pooled.size());
      const double coef = loss.weight_div() / static_cast<double>(pairs.size());
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto cg = cosine_with_grad(pairs[p].first, pairs[p].second);
        grad_pooled[pair_index[p].first] += coef * cg.grad_a;
        grad_pooled[pair_index[p].second] += coef * cg.grad_b;
      }
      for (std::size_t b = 0; b < samples.size(); ++b) {
        const auto& s = samples[b];
        const auto locations = static_cast<double>(s.features.locations());
        const Matrix grad_f = grad_pooled[b] * Vector::Ones(s.features.locations()).transpose() / locations;
        r.grad_bank_div[static_cast<std::size_t>(s.unique_index)] +=
            backprop_to_bank(s, bank.at(s.channel), backends, grad_f);
      }
    }

    if (loss.weight_reg() != 0.0) {
      // Each unique channel appears K times among the images.
      const double coef = loss.weight_reg() * static_cast<double>(k_count) / n_images;
      for (std::size_t i = 0; i < n_unique; ++i) {
        EntryParams g = delta_penalty_grad(bank.at(plan.channels[i]));
        g *= coef;
        r.grad_bank_reg[i] = std::move(g);
      }
    }
  }
  return r;
}

namespace {

void check_finite(const BatchResult& r, std::int64_t step) {
  if (!std::isfinite(r.loss_u) || !std::isfinite(r.loss_reg) || !std::isfinite(r.loss_div) ||
      !std::isfinite(r.combined))
    throw NumericalFailure("non-finite loss at step " + std::to_string(step), step, {});
}

StepMetrics metrics_of(const BatchResult& r, std::int64_t step, Phase phase) {
  return {step, phase, r.mean_purity, r.loss_u, r.loss_reg, r.loss_div, r.combined};
}

}  // namespace

StepMetrics phase_u_step(TrainState& state, const TrainConfig& config, const Backends& backends) {
  const auto plan = plan_batch(config, state.bank.channels(), state.step);
  const auto r = evaluate_batch(state.basis, state.bank, backends, config.loss, plan, GradTarget::kBasis);
  check_finite(r, state.step);
  if (!r.grad_a.allFinite())
    throw NumericalFailure("non-finite gradient for A at step " + std::to_string(state.step), state.step, {});
  Matrix a = state.basis.generator();
  adam_step(a, r.grad_a, state.moments_a, config.lr_u);
  state.basis.set_generator(std::move(a));
  state.basis.recompute();
  auto m = metrics_of(r, state.step, Phase::kBasis);
  state.history.push_back(m);
  return m;
}

StepMetrics phase_bank_step(TrainState& state, const TrainConfig& config, const Backends& backends) {
  if (state.step < config.warmup) throw InvalidState("phase_bank_step: called during warmup");
  const auto plan = plan_batch(config, state.bank.channels(), state.step);
  const auto r = evaluate_batch(state.basis, state.bank, backends, config.loss, plan, GradTarget::kBank);
  check_finite(r, state.step);
  std::vector<EntryParams> grads;
  for (std::size_t i = 0; i < plan.channels.size(); ++i) {
    grads.push_back(r.grad_bank(i));
    if (!grads.back().all_finite())
      throw NumericalFailure("non-finite bank gradient at step " + std::to_string(state.step),
                             state.step, {});
  }
  for (std::size_t i = 0; i < plan.channels.size(); ++i) {
    const auto c = static_cast<std::size_t>(plan.channels[i]);
    auto& theta = state.bank.entries[c].theta;
    auto& mom = state.moments_bank[c];
    const auto& g = grads[i];
    adam_step(theta.lora_a, g.lora_a, mom.lora_a, config.lr_bank);
    adam_step(theta.lora_b, g.lora_b, mom.lora_b, config.lr_bank);
    adam_step(theta.delta_ppe, Matrix(g.delta_ppe), mom.delta_ppe, config.lr_bank);
    adam_step(theta.logvar_pe, g.logvar_pe, mom.logvar_pe, config.lr_bank);
    adam_step(theta.logvar_ppe, Matrix(g.logvar_ppe), mom.logvar_ppe, config.lr_bank);
    clamp_logvars(state.bank.entries[c]);
  }
  auto m = metrics_of(r, state.step, Phase::kBank);
  state.history.push_back(m);
  return m;
}

void train(TrainState& state, const TrainConfig& config, const Backends& backends,
           const TrainHooks& hooks) {
  config.validate(state.bank.channels());
  backends.check_compatible();
  if (backends.extractor->channels() != state.bank.channels())
    throw InvalidArgument("train: extractor channels differ from bank channels");

  std::string last_checkpoint;
  auto checkpoint = [&] {
    if (hooks.checkpoint) last_checkpoint = hooks.checkpoint(state);
  };
  // A fresh run keeps its initial state on disk so a failure always has a fallback.
  if (state.step == 0 && config.iterations > 0) checkpoint();

  while (state.step < config.iterations) {
    StepMetrics m;
    try {
      m = phase_for_step(state.step, config.warmup) == Phase::kBasis
              ? phase_u_step(state, config, backends)
              : phase_bank_step(state, config, backends);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(e.what(), e.step, last_checkpoint);
    }
    if (hooks.metrics) hooks.metrics(m);
    ++state.step;
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 &&
        state.step < config.iterations)
      checkpoint();
  }
  checkpoint();
}

}  // namespace prodg
