#include "prodg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace prodg {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "tensor archive assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'D', 'G', 'T', 'A', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError("tensor archive truncated reading " + what);
  return v;
}

const Matrix& require(const TensorMap& t, const std::string& key) {
  auto it = t.find(key);
  if (it == t.end()) throw LoadError("checkpoint is missing tensor '" + key + "'");
  return it->second;
}

const Matrix& require_shape(const TensorMap& t, const std::string& key, Index rows, Index cols) {
  const Matrix& m = require(t, key);
  if (m.rows() != rows || m.cols() != cols)
    throw LoadError("tensor '" + key + "' has shape " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  return m;
}

void put_moments(TensorMap& t, const std::string& key, const AdamMoments& m) {
  t[key + "/m"] = m.m;
  t[key + "/v"] = m.v;
  t[key + "/t"] = Matrix::Constant(1, 1, static_cast<double>(m.t));
}

AdamMoments get_moments(const TensorMap& t, const std::string& key, Index rows, Index cols) {
  AdamMoments m;
  m.m = require_shape(t, key + "/m", rows, cols);
  m.v = require_shape(t, key + "/v", rows, cols);
  m.t = static_cast<std::int64_t>(require_shape(t, key + "/t", 1, 1)(0, 0));
  return m;
}

std::string channel_key(const char* name, std::size_t c) { return std::string(name) + "/" + std::to_string(c); }

constexpr int kMetricColumns = 7;

}  // namespace

void write_tensor_archive(const fs::path& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, m] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

TensorMap read_tensor_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open tensor archive " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw LoadError("not a tensor archive: " + path.string());
  const auto count = get<std::uint64_t>(in, "count");
  TensorMap out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    if (len > 4096) throw LoadError("tensor archive corrupt: name length " + std::to_string(len));
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw LoadError("tensor archive truncated reading name");
    const auto rows = get<std::uint64_t>(in, name + " rows");
    const auto cols = get<std::uint64_t>(in, name + " cols");
    if (rows > (1ull << 32) || cols > (1ull << 32) || rows * cols > (1ull << 34))
      throw LoadError("tensor archive corrupt: implausible shape for '" + name + "'");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, name);
    if (!out.emplace(name, std::move(m)).second) throw LoadError("tensor archive has duplicate key '" + name + "'");
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw LoadError("tensor archive has trailing bytes");
  return out;
}

nlohmann::ordered_json Manifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "prodg-checkpoint";
  j["version"] = version;
  j["step"] = step;
  j["dims"] = {{"C", channels}, {"H", height}, {"W", width}};
  j["rank"] = rank;
  j["token_count"] = token_count;
  j["embed_dim"] = embed_dim;
  j["pooled_dim"] = pooled_dim;
  j["shared_logvar"] = shared_logvar;
  j["anchor_labels"] = anchor_labels;
  j["class_names"] = class_names;
  j["config_hash"] = config_hash;
  j["tensors"] = "tensors.bin";
  return j;
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "prodg-checkpoint") throw LoadError("manifest: unknown format");
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion)
      throw LoadError("manifest: unsupported version " + std::to_string(m.version));
    m.step = j.at("step").get<std::int64_t>();
    m.channels = j.at("dims").at("C").get<Index>();
    m.height = j.at("dims").at("H").get<Index>();
    m.width = j.at("dims").at("W").get<Index>();
    m.rank = j.at("rank").get<Index>();
    m.token_count = j.at("token_count").get<Index>();
    m.embed_dim = j.at("embed_dim").get<Index>();
    m.pooled_dim = j.at("pooled_dim").get<Index>();
    m.shared_logvar = j.at("shared_logvar").get<bool>();
    m.anchor_labels = j.at("anchor_labels").get<std::vector<std::string>>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    if (m.channels <= 0 || m.rank <= 0 || m.token_count <= 0 || m.embed_dim <= 0 || m.pooled_dim <= 0)
      throw LoadError("manifest: nonpositive dimension");
    if (static_cast<Index>(m.anchor_labels.size()) != m.channels)
      throw LoadError("manifest: anchor_labels length differs from C");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("manifest: ") + e.what());
  }
}

Manifest manifest_for(const TrainState& state, const CheckpointMeta& meta) {
  Manifest m;
  m.step = state.step;
  m.channels = state.bank.channels();
  m.height = meta.height;
  m.width = meta.width;
  m.rank = state.bank.rank;
  m.token_count = state.bank.dims.token_count;
  m.embed_dim = state.bank.dims.embed_dim;
  m.pooled_dim = state.bank.dims.pooled_dim;
  m.shared_logvar = !state.bank.entries.empty() && state.bank.entries.front().shared_logvar();
  for (const auto& e : state.bank.entries) m.anchor_labels.push_back(e.anchor_label);
  m.class_names = meta.class_names;
  m.config_hash = meta.config_hash;
  return m;
}

TensorMap state_to_tensors(const TrainState& state) {
  TensorMap t;
  t["A"] = state.basis.generator();
  t["U"] = state.basis.u();
  for (std::size_t c = 0; c < state.bank.entries.size(); ++c) {
    const auto& e = state.bank.entries[c];
    t[channel_key("pe_anchor", c)] = e.pe_anchor;
    t[channel_key("ppe_anchor", c)] = e.ppe_anchor;
    t[channel_key("lora_A", c)] = e.theta.lora_a;
    t[channel_key("lora_B", c)] = e.theta.lora_b;
    t[channel_key("delta_ppe", c)] = e.theta.delta_ppe;
    t[channel_key("logvar_pe", c)] = e.theta.logvar_pe;
    t[channel_key("logvar_ppe", c)] = e.theta.logvar_ppe;
    const auto& mom = state.moments_bank.at(c);
    put_moments(t, channel_key("adam/lora_A", c), mom.lora_a);
    put_moments(t, channel_key("adam/lora_B", c), mom.lora_b);
    put_moments(t, channel_key("adam/delta_ppe", c), mom.delta_ppe);
    put_moments(t, channel_key("adam/logvar_pe", c), mom.logvar_pe);
    put_moments(t, channel_key("adam/logvar_ppe", c), mom.logvar_ppe);
  }
  put_moments(t, "adam/A", state.moments_a);
  Matrix metrics(static_cast<Index>(state.history.size()), kMetricColumns);
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& h = state.history[i];
    metrics.row(static_cast<Index>(i)) << static_cast<double>(h.step),
        h.phase == Phase::kBasis ? 0.0 : 1.0, h.mean_purity, h.loss_u, h.loss_reg, h.loss_div, h.combined;
  }
  t["metrics"] = metrics;
  return t;
}

TrainState state_from_tensors(const TensorMap& t, const Manifest& mf) {
  const Index c_count = mf.channels;
  TrainState s;
  s.step = mf.step;
  s.basis = OrthogonalBasis(require_shape(t, "A", c_count, c_count), require_shape(t, "U", c_count, c_count));
  s.bank.rank = mf.rank;
  s.bank.dims = {mf.token_count, mf.embed_dim, mf.pooled_dim};
  const Index lv_rows = mf.shared_logvar ? 1 : mf.token_count;
  const Index lv_cols = mf.shared_logvar ? 1 : mf.embed_dim;
  const Index lv_pooled = mf.shared_logvar ? 1 : mf.pooled_dim;
  for (std::size_t c = 0; c < static_cast<std::size_t>(c_count); ++c) {
    PromptBankEntry e;
    e.pe_anchor = require_shape(t, channel_key("pe_anchor", c), mf.token_count, mf.embed_dim);
    e.ppe_anchor = require_shape(t, channel_key("ppe_anchor", c), mf.pooled_dim, 1);
    e.theta.lora_a = require_shape(t, channel_key("lora_A", c), mf.token_count, mf.rank);
    e.theta.lora_b = require_shape(t, channel_key("lora_B", c), mf.rank, mf.embed_dim);
    e.theta.delta_ppe = require_shape(t, channel_key("delta_ppe", c), mf.pooled_dim, 1);
    e.theta.logvar_pe = require_shape(t, channel_key("logvar_pe", c), lv_rows, lv_cols);
    e.theta.logvar_ppe = require_shape(t, channel_key("logvar_ppe", c), lv_pooled, 1);
    e.anchor_label = mf.anchor_labels[c];
    EntryMoments mom;
    mom.lora_a = get_moments(t, channel_key("adam/lora_A", c), mf.token_count, mf.rank);
    mom.lora_b = get_moments(t, channel_key("adam/lora_B", c), mf.rank, mf.embed_dim);
    mom.delta_ppe = get_moments(t, channel_key("adam/delta_ppe", c), mf.pooled_dim, 1);
    mom.logvar_pe = get_moments(t, channel_key("adam/logvar_pe", c), lv_rows, lv_cols);
    mom.logvar_ppe = get_moments(t, channel_key("adam/logvar_ppe", c), lv_pooled, 1);
    s.bank.entries.push_back(std::move(e));
    s.moments_bank.push_back(std::move(mom));
  }
  s.moments_a = get_moments(t, "adam/A", c_count, c_count);
  const Matrix& metrics = require(t, "metrics");
  if (metrics.rows() > 0 && metrics.cols() != kMetricColumns) throw LoadError("tensor 'metrics' has wrong width");
  for (Index i = 0; i < metrics.rows(); ++i) {
    StepMetrics m;
    m.step = static_cast<std::int64_t>(metrics(i, 0));
    m.phase = metrics(i, 1) == 0.0 ? Phase::kBasis : Phase::kBank;
    m.mean_purity = metrics(i, 2);
    m.loss_u = metrics(i, 3);
    m.loss_reg = metrics(i, 4);
    m.loss_div = metrics(i, 5);
    m.combined = metrics(i, 6);
    s.history.push_back(m);
  }
  return s;
}

void save_checkpoint(const fs::path& dir, const TrainState& state, const CheckpointMeta& meta) {
  fs::create_directories(dir);
  write_tensor_archive(dir / "tensors.bin", state_to_tensors(state));
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw LoadError("cannot write manifest in " + dir.string());
  out << manifest_for(state, meta).to_json().dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("checkpoint manifest not found: " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  LoadedCheckpoint out;
  out.manifest = Manifest::from_json(j);
  out.state = state_from_tensors(read_tensor_archive(dir / "tensors.bin"), out.manifest);
  return out;
}

void check_compatible(const Manifest& m, const Backends& backends, const std::string& config_hash) {
  const auto& ex = *backends.extractor;
  if (m.channels != ex.channels() || m.height != ex.feature_height() || m.width != ex.feature_width())
    throw LoadError("checkpoint feature dims " + std::to_string(m.channels) + "x" + std::to_string(m.height) +
                    "x" + std::to_string(m.width) + " do not match extractor " + std::to_string(ex.channels()) +
                    "x" + std::to_string(ex.feature_height()) + "x" + std::to_string(ex.feature_width()));
  const auto& enc = *backends.encoder;
  if (m.token_count != enc.token_count() || m.embed_dim != enc.embed_dim() || m.pooled_dim != enc.pooled_dim())
    throw LoadError("checkpoint embedding dims do not match encoder");
  if (!config_hash.empty() && m.config_hash != config_hash)
    throw LoadError("checkpoint config hash " + m.config_hash + " does not match current architecture " +
                    config_hash);
}

TrainState resume(const fs::path& checkpoint_dir, const TrainConfig& config, const Backends& backends,
                  const std::string& config_hash, const TrainHooks& hooks) {
  auto loaded = load_checkpoint(checkpoint_dir);
  check_compatible(loaded.manifest, backends, config_hash);
  loaded.state.basis.recompute();
  train(loaded.state, config, backends, hooks);
  return std::move(loaded.state);
}

}  // namespace prodg
