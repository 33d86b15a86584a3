#pragma once

// Agent checkpoints. Layout:
//   8 bytes   magic "VVCRLCK1"
//   8 bytes   header length n (little-endian uint64)
//   n bytes   JSON header: kind, configs, metadata, tensor table
//   rest      float64 values (little-endian), tensors in table order,
//             each column-major
// Every tensor is listed by name with its shape, so a file can be inspected
// without this library.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vvcrl/config.hpp"

namespace vvcrl {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'V', 'V', 'C', 'R', 'L', 'C', 'K', '1'};

class TensorWriter {
 public:
  void add(const std::string& name, const Matrix& m) {
    table_.push_back(ojson{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    blob_.insert(blob_.end(), m.data(), m.data() + m.size());
  }
  void add(const std::string& name, const Vector& v) { add(name, Matrix(v)); }

  void add_net(const std::string& prefix, const nn::DenseNet& net) { add_layers(prefix, net.layers()); }
  void add_layers(const std::string& prefix, const nn::LayerBuffers& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      add(prefix + "/" + std::to_string(l) + "/weight", layers[l].weight);
      add(prefix + "/" + std::to_string(l) + "/bias", layers[l].bias);
    }
  }
  void add_adam(const std::string& prefix, const nn::AdamState& a, ojson& steps) {
    add_layers(prefix + "/m", a.m);
    add_layers(prefix + "/v", a.v);
    steps[prefix] = a.step;
  }

  const ojson& table() const { return table_; }
  const std::vector<double>& blob() const { return blob_; }

 private:
  ojson table_ = ojson::array();
  std::vector<double> blob_;
};

class TensorReader {
 public:
  TensorReader(const nlohmann::json& table, const std::vector<double>& blob, std::string origin) : origin_(std::move(origin)) {
    std::size_t offset = 0;
    for (const auto& t : table) {
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      const auto n = static_cast<std::size_t>(rows * cols);
      if (offset + n > blob.size()) throw ConfigError("checkpoint data shorter than its tensor table", origin_);
      Matrix m(rows, cols);
      std::copy(blob.begin() + static_cast<std::ptrdiff_t>(offset), blob.begin() + static_cast<std::ptrdiff_t>(offset + n), m.data());
      offset += n;
      tensors_.emplace(t.at("name").get<std::string>(), std::move(m));
    }
    if (offset != blob.size()) throw ConfigError("checkpoint data longer than its tensor table", origin_);
  }

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }

  const Matrix& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'", origin_);
    return it->second;
  }

  nn::LayerBuffers layers(const std::string& prefix) const {
    nn::LayerBuffers out;
    for (std::size_t l = 0; has(prefix + "/" + std::to_string(l) + "/weight"); ++l)
      out.push_back({get(prefix + "/" + std::to_string(l) + "/weight"), Vector(get(prefix + "/" + std::to_string(l) + "/bias"))});
    if (out.empty()) throw ConfigError("checkpoint is missing network '" + prefix + "'", origin_);
    return out;
  }

  nn::DenseNet net(const std::string& prefix) const { return nn::DenseNet(layers(prefix)); }

  nn::AdamState adam(const std::string& prefix, const nn::DenseNet& net, const nlohmann::json& steps, nn::AdamConfig cfg) const {
    nn::AdamState a;
    a.config = cfg;
    a.m = layers(prefix + "/m");
    a.v = layers(prefix + "/v");
    a.step = steps.at(prefix).get<std::int64_t>();
    if (a.m.size() != net.layer_count() || a.v.size() != net.layer_count())
      throw ConfigError("optimizer state '" + prefix + "' does not match its network", origin_);
    return a;
  }

 private:
  std::string origin_;
  std::map<std::string, Matrix> tensors_;
};

// -- agents <-> tensors ------------------------------------------------------

inline void write_twin(TensorWriter& w, const std::string& p, const TwinCritic& c, ojson& steps) {
  w.add_net(p + "/q1", c.q1);
  w.add_net(p + "/q2", c.q2);
  w.add_net(p + "/target1", c.target1);
  w.add_net(p + "/target2", c.target2);
  w.add_adam(p + "/adam1", c.adam1, steps);
  w.add_adam(p + "/adam2", c.adam2, steps);
}

inline TwinCritic read_twin(const TensorReader& r, const std::string& p, const nlohmann::json& steps, nn::AdamConfig cfg) {
  TwinCritic c;
  c.q1 = r.net(p + "/q1");
  c.q2 = r.net(p + "/q2");
  c.target1 = r.net(p + "/target1");
  c.target2 = r.net(p + "/target2");
  c.adam1 = r.adam(p + "/adam1", c.q1, steps, cfg);
  c.adam2 = r.adam(p + "/adam2", c.q2, steps, cfg);
  return c;
}

inline ojson write_sac(TensorWriter& w, const std::string& p, const SacAgent& a) {
  ojson steps;
  w.add_net(p + "/policy", a.policy().net());
  w.add_adam(p + "/policy_adam", a.policy_adam(), steps);
  write_twin(w, p + "/critic", a.critics(), steps);
  return ojson{{"config", to_json(a.config())},
               {"state_dim", a.state_dim()},
               {"action_dim", a.action_dim()},
               {"adam_steps", steps}};
}

inline SacAgent read_sac(const TensorReader& r, const std::string& p, const nlohmann::json& h, const std::string& origin) {
  const auto cfg = sac_config_from_json(h.at("config"), origin + " config");
  const auto& steps = h.at("adam_steps");
  const int action_dim = h.at("action_dim").get<int>();
  nn::GaussianPolicy policy(r.net(p + "/policy"), action_dim, cfg.policy);
  auto adam = r.adam(p + "/policy_adam", policy.net(), steps, cfg.adam);
  return SacAgent(std::move(policy), std::move(adam), read_twin(r, p + "/critic", steps, cfg.adam), cfg);
}

inline ojson write_adversarial(TensorWriter& w, const std::string& p, const AdversarialAgent& a) {
  ojson steps;
  w.add_net(p + "/protagonist", a.protagonist().net());
  w.add_net(p + "/adversary", a.adversary().net());
  w.add_adam(p + "/protagonist_adam", a.protagonist_adam(), steps);
  w.add_adam(p + "/adversary_adam", a.adversary_adam(), steps);
  write_twin(w, p + "/critic", a.critic(), steps);
  if (a.adversary_critic()) write_twin(w, p + "/adversary_critic", *a.adversary_critic(), steps);
  return ojson{{"config", to_json(a.config())},
               {"state_dim", a.state_dim()},
               {"protagonist_dim", a.protagonist_dim()},
               {"adversary_dim", a.adversary_dim()},
               {"adam_steps", steps}};
}

inline AdversarialAgent read_adversarial(const TensorReader& r, const std::string& p, const nlohmann::json& h,
                                         const std::string& origin) {
  const auto cfg = adversarial_config_from_json(h.at("config"), origin + " config");
  const auto& steps = h.at("adam_steps");
  const auto& pc = cfg.base.policy;
  nn::GaussianPolicy pro(r.net(p + "/protagonist"), h.at("protagonist_dim").get<int>(), pc);
  nn::GaussianPolicy adv(r.net(p + "/adversary"), h.at("adversary_dim").get<int>(), pc);
  auto pa = r.adam(p + "/protagonist_adam", pro.net(), steps, cfg.base.adam);
  auto oa = r.adam(p + "/adversary_adam", adv.net(), steps, cfg.base.adam);
  auto critic = read_twin(r, p + "/critic", steps, cfg.base.adam);
  std::optional<TwinCritic> adv_critic;
  if (cfg.mode == CriticMode::separate) adv_critic = read_twin(r, p + "/adversary_critic", steps, cfg.base.adam);
  return AdversarialAgent(cfg, std::move(pro), std::move(adv), std::move(pa), std::move(oa), std::move(critic), std::move(adv_critic));
}

// -- checkpoint files --------------------------------------------------------

/// What an offline run hands to the online stage.
struct Checkpoint {
  std::string algorithm;  // sac | asac | jasac
  ojson meta = ojson::object();  // case, seed, dimensions, episodes, version, ...
  std::optional<SacAgent> sac;   // sac runs: the agent itself; asac/jasac: the transferred agent
  std::optional<AdversarialAgent> adversarial;
  std::optional<DistillReport> transfer;

  /// The agent the online stage continues with.
  const SacAgent& online_agent() const {
    if (!sac) throw ConfigError("checkpoint carries no SAC-compatible agent", algorithm);
    return *sac;
  }
};

inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  TensorWriter w;
  ojson header;
  header["format"] = "vvcrl-checkpoint";
  header["version"] = 1;
  header["algorithm"] = c.algorithm;
  header["meta"] = c.meta;
  if (c.sac) header["sac"] = write_sac(w, "sac", *c.sac);
  if (c.adversarial) header["adversarial"] = write_adversarial(w, "adversarial", *c.adversarial);
  if (c.transfer) header["transfer"] = to_json(*c.transfer);
  header["tensors"] = w.table();
  const std::string text = header.dump();
  std::vector<char> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  const std::uint64_t n = text.size();
  const char* np = reinterpret_cast<const char*>(&n);
  out.insert(out.end(), np, np + 8);
  out.insert(out.end(), text.begin(), text.end());
  const char* bp = reinterpret_cast<const char*>(w.blob().data());
  out.insert(out.end(), bp, bp + w.blob().size() * sizeof(double));
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& origin = "<checkpoint>") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw ConfigError("not a vvcrl checkpoint (bad magic)", origin);
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 8);
  if (16 + n > bytes.size()) throw ConfigError("truncated checkpoint header", origin);
  const auto header = detail::parse_json(std::string_view(bytes.data() + 16, n), origin);
  const std::size_t blob_bytes = bytes.size() - 16 - n;
  if (blob_bytes % sizeof(double) != 0) throw ConfigError("checkpoint data is not a whole number of float64 values", origin);
  std::vector<double> blob(blob_bytes / sizeof(double));
  std::memcpy(blob.data(), bytes.data() + 16 + n, blob_bytes);
  if (field<std::string>(header, "format", origin) != "vvcrl-checkpoint") throw ConfigError("unknown checkpoint format", origin);
  if (field<int>(header, "version", origin) != 1) throw ConfigError("unsupported checkpoint version", origin);

  TensorReader r(header.at("tensors"), blob, origin);
  Checkpoint c;
  c.algorithm = field<std::string>(header, "algorithm", origin);
  // Re-read with insertion order kept so that a decoded checkpoint re-encodes byte-identically.
  c.meta = ojson::parse(std::string_view(bytes.data() + 16, n)).at("meta");
  try {
    if (header.contains("sac")) c.sac = read_sac(r, "sac", header.at("sac"), origin);
    if (header.contains("adversarial")) c.adversarial = read_adversarial(r, "adversarial", header.at("adversarial"), origin);
    if (header.contains("transfer")) c.transfer = distill_report_from_json(header.at("transfer"), origin + " transfer");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what(), origin);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("inconsistent checkpoint: ") + e.what(), origin);
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write", path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found", path.string());
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace vvcrl
