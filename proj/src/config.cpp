#include "prodg/config.hpp"

#include "prodg/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace prodg {
namespace {

using nlohmann::json;

// Subtrees whose contents are not validated against the defaults.
bool is_free_form(const std::string& path) { return path == "generator.options"; }

void check_against_schema(const json& schema, const json& value, const std::string& path) {
  if (is_free_form(path)) {
    if (!value.is_object()) throw InvalidConfiguration("config: '" + path + "' must be an object");
    return;
  }
  if (schema.is_object()) {
    if (!value.is_object()) throw InvalidConfiguration("config: '" + path + "' must be an object");
    for (const auto& [key, v] : value.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      if (!schema.contains(key)) throw InvalidConfiguration("config: unknown key '" + sub + "'");
      check_against_schema(schema.at(key), v, sub);
    }
    return;
  }
  const bool ok = schema.is_null()      ? (value.is_null() || value.is_string())
                  : schema.is_boolean() ? value.is_boolean()
                  : schema.is_number()  ? value.is_number()
                  : schema.is_string()  ? value.is_string()
                  : schema.is_array()   ? value.is_array()
                                        : false;
  if (!ok) throw InvalidConfiguration("config: '" + path + "' has the wrong type");
}

void merge_into(json& base, const json& patch) {
  for (const auto& [key, v] : patch.items()) {
    if (v.is_object() && base.contains(key) && base[key].is_object()) merge_into(base[key], v);
    else base[key] = v;
  }
}

template <typename T>
T read(const json& tree, const std::string& dotted) {
  const json* node = &tree;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw InvalidConfiguration("config: '" + dotted + "' has an invalid value");
  }
}

Index read_positive(const json& tree, const std::string& dotted) {
  const auto v = read<std::int64_t>(tree, dotted);
  if (v <= 0) throw InvalidConfiguration("config: '" + dotted + "' must be positive");
  return static_cast<Index>(v);
}

void check_kind(const std::string& key, const std::string& kind, const std::string& toy) {
  if (kind != toy && kind.rfind("adapter:", 0) != 0)
    throw InvalidConfiguration("config: '" + key + "' must be '" + toy + "' or 'adapter:<name>'");
}

}  // namespace

json default_config_tree() {
  const TrainConfig t;
  const LossConfig l;
  const BankInit b;
  const toy::ToyConfig toy;
  const ExplainOptions e;
  return json{
      {"seed", 0},
      {"extractor",
       {{"kind", "toy_planted"},
        {"channels", toy.channels},
        {"image_channels", toy.image_channels},
        {"image_size", toy.image_size},
        {"patch", toy.patch},
        {"mixing", toy.mixing},
        {"bias", toy.bias},
        {"world_seed", toy.seed}}},
      {"generator",
       {{"kind", "toy_decoder"},
        {"latent_dim", toy.latent_dim},
        {"temperature", toy.temperature},
        {"amplitude_jitter", toy.amplitude_jitter},
        {"latent_logit_scale", toy.latent_logit_scale},
        {"options", json::object()}}},
      {"encoder",
       {{"kind", "toy_hash"},
        {"token_count", toy.token_count},
        {"embed_dim", toy.embed_dim},
        {"pooled_dim", toy.pooled_dim}}},
      {"metric", {{"kind", "toy_cosine"}}},
      {"train",
       {{"iterations", t.iterations},
        {"warmup", t.warmup},
        {"batch", t.batch},
        {"K", t.variations},
        {"lr_U", t.lr_u},
        {"lr_bank", t.lr_bank},
        {"checkpoint_every", t.checkpoint_every},
        {"channels_to_train", json::array()},
        {"rank", b.rank},
        {"init_scale", b.init_scale},
        {"logvar_init", b.logvar},
        {"shared_logvar", b.shared_logvar}}},
      {"loss",
       {{"lambda_reg", l.lambda_reg},
        {"lambda_div", l.lambda_div},
        {"enable_U", l.enable_u},
        {"enable_reg", l.enable_reg},
        {"enable_div", l.enable_div}}},
      {"discovery", {{"class_file", nullptr}, {"class_names", json::array()}, {"images_per_class", 4}}},
      {"explain",
       {{"k", e.k},
        {"samples_per_channel", e.samples_per_channel},
        {"connectivity", static_cast<int>(e.connectivity)},
        {"threshold_frac", e.threshold_frac},
        {"input_heatmaps", e.input_heatmaps}}},
      {"paths", {{"workdir", "prodg-run"}}},
  };
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidConfiguration("override '" + assignment + "' is not of the form key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &tree;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty() || std::any_of(parts.begin(), parts.end(), [](const std::string& p) { return p.empty(); }))
    throw InvalidConfiguration("override '" + assignment + "' has an empty key segment");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
    if (!node->is_object() && !node->is_null())
      throw InvalidConfiguration("override '" + path + "': '" + parts[i] + "' is not a section");
  }
  (*node)[parts.back()] = value;
}

RunConfig config_from_tree(const json& tree) {
  check_against_schema(default_config_tree(), tree, "");
  RunConfig c;
  c.resolved = tree;
  const auto seed = read<std::int64_t>(tree, "seed");
  if (seed < 0) throw InvalidConfiguration("config: 'seed' must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);

  c.extractor_kind = read<std::string>(tree, "extractor.kind");
  c.generator_kind = read<std::string>(tree, "generator.kind");
  c.encoder_kind = read<std::string>(tree, "encoder.kind");
  c.metric_kind = read<std::string>(tree, "metric.kind");
  check_kind("extractor.kind", c.extractor_kind, "toy_planted");
  check_kind("generator.kind", c.generator_kind, "toy_decoder");
  check_kind("encoder.kind", c.encoder_kind, "toy_hash");
  check_kind("metric.kind", c.metric_kind, "toy_cosine");
  for (const auto& [k, v] : tree.at("generator").at("options").items())
    c.generator_options[k] = v.is_string() ? v.get<std::string>() : v.dump();

  auto& toy = c.toy;
  toy.channels = read_positive(tree, "extractor.channels");
  toy.image_channels = read_positive(tree, "extractor.image_channels");
  toy.image_size = read_positive(tree, "extractor.image_size");
  toy.patch = read_positive(tree, "extractor.patch");
  toy.mixing = read<double>(tree, "extractor.mixing");
  toy.bias = read<double>(tree, "extractor.bias");
  toy.seed = read<std::uint64_t>(tree, "extractor.world_seed");
  toy.latent_dim = read_positive(tree, "generator.latent_dim");
  toy.temperature = read<double>(tree, "generator.temperature");
  toy.amplitude_jitter = read<double>(tree, "generator.amplitude_jitter");
  toy.latent_logit_scale = read<double>(tree, "generator.latent_logit_scale");
  toy.token_count = read_positive(tree, "encoder.token_count");
  toy.embed_dim = read_positive(tree, "encoder.embed_dim");
  toy.pooled_dim = read_positive(tree, "encoder.pooled_dim");

  auto& t = c.train;
  t.iterations = read<std::int64_t>(tree, "train.iterations");
  t.warmup = read<std::int64_t>(tree, "train.warmup");
  t.batch = read_positive(tree, "train.batch");
  t.variations = read_positive(tree, "train.K");
  t.lr_u = read<double>(tree, "train.lr_U");
  t.lr_bank = read<double>(tree, "train.lr_bank");
  t.checkpoint_every = read<std::int64_t>(tree, "train.checkpoint_every");
  t.channels_to_train = read<std::vector<Index>>(tree, "train.channels_to_train");
  t.seed = c.seed;
  t.loss.lambda_reg = read<double>(tree, "loss.lambda_reg");
  t.loss.lambda_div = read<double>(tree, "loss.lambda_div");
  t.loss.enable_u = read<bool>(tree, "loss.enable_U");
  t.loss.enable_reg = read<bool>(tree, "loss.enable_reg");
  t.loss.enable_div = read<bool>(tree, "loss.enable_div");
  t.validate(toy.channels);

  c.bank.rank = read_positive(tree, "train.rank");
  c.bank.init_scale = read<double>(tree, "train.init_scale");
  c.bank.logvar = read<double>(tree, "train.logvar_init");
  c.bank.shared_logvar = read<bool>(tree, "train.shared_logvar");
  c.bank.seed = c.seed;

  if (!tree.at("discovery").at("class_file").is_null())
    c.class_file = read<std::string>(tree, "discovery.class_file");
  c.class_names = read<std::vector<std::string>>(tree, "discovery.class_names");
  c.images_per_class = read_positive(tree, "discovery.images_per_class");

  auto& e = c.explain;
  e.k = read_positive(tree, "explain.k");
  e.samples_per_channel = read_positive(tree, "explain.samples_per_channel");
  const int conn = read<int>(tree, "explain.connectivity");
  if (conn != 4 && conn != 8) throw InvalidConfiguration("config: 'explain.connectivity' must be 4 or 8");
  e.connectivity = conn == 4 ? Connectivity::kFour : Connectivity::kEight;
  e.threshold_frac = read<double>(tree, "explain.threshold_frac");
  if (!(e.threshold_frac > 0.0 && e.threshold_frac <= 1.0))
    throw InvalidConfiguration("config: 'explain.threshold_frac' must be in (0, 1]");
  e.input_heatmaps = read<bool>(tree, "explain.input_heatmaps");
  e.seed = c.seed;

  c.workdir = read<std::string>(tree, "paths.workdir");
  return c;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides, const char* env_seed) {
  json tree = default_config_tree();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw InvalidConfiguration("cannot read config file " + file->string());
    json patch;
    try {
      patch = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidConfiguration("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    check_against_schema(tree, patch, "");
    merge_into(tree, patch);
  }
  if (env_seed && *env_seed) {
    try {
      tree["seed"] = std::stoll(env_seed);
    } catch (const std::exception&) {
      throw InvalidConfiguration(std::string("PRODG_SEED is not an integer: ") + env_seed);
    }
  }
  for (const auto& o : overrides) apply_override(tree, o);
  return config_from_tree(tree);
}

std::vector<std::string> load_class_names(const RunConfig& config) {
  std::vector<std::string> names;
  if (config.class_file) {
    std::ifstream in(*config.class_file);
    if (!in) throw InvalidConfiguration("class file not found: " + *config.class_file);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) names.push_back(line);
    }
    if (names.empty()) throw InvalidConfiguration("class file is empty: " + *config.class_file);
    return names;
  }
  if (!config.class_names.empty()) return config.class_names;
  return toy::default_class_names(config.toy.channels);
}

Backends build_backends(const RunConfig& config, const std::vector<std::string>& class_names) {
  auto adapter = [&](const std::string& kind) {
    AdapterSpec spec;
    spec.kind = kind.substr(std::string("adapter:").size());
    spec.options = config.generator_options;
    require_adapter(spec);
  };
  for (const auto* kind : {&config.extractor_kind, &config.generator_kind, &config.encoder_kind, &config.metric_kind})
    if (kind->rfind("adapter:", 0) == 0) adapter(*kind);
  toy::ToyConfig toy = config.toy;
  toy.class_names = class_names;
  return toy::make_backends(toy);
}

std::string architecture_hash(const RunConfig& config, const std::vector<std::string>& class_names) {
  const auto& r = config.resolved;
  json arch = {{"extractor", r.at("extractor")},
               {"generator", r.at("generator")},
               {"encoder", r.at("encoder")},
               {"rank", r.at("train").at("rank")},
               {"shared_logvar", r.at("train").at("shared_logvar")},
               {"class_names", class_names}};
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(arch.dump())));
  return buf;
}

}  // namespace prodg
