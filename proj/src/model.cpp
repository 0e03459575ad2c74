#include "scar/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "scar/rng.hpp"

namespace scar {

using nlohmann::json;

void ModelConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(mask_temp_start > 0.0) || !(mask_temp_end > 0.0)) {
    throw ConfigError("masking temperature must stay > 0");
  }
  if (!(budget > 0.0 && budget < 1.0)) throw ConfigError("budget must lie in (0,1)");
  if (patch_length == 0 || vocab_size == 0) throw ConfigError("input geometry unset");
}

double ModelConfig::mask_temperature(double progress) const {
  const double p = std::clamp(progress, 0.0, 1.0);
  return mask_temp_start + (mask_temp_end - mask_temp_start) * p;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"embed_dim", c.embed_dim},
           {"encoder_hidden", c.encoder_hidden},
           {"masker_hidden", c.masker_hidden},
           {"selector_hidden", c.selector_hidden},
           {"text_hidden", c.text_hidden},
           {"temperature", c.temperature},
           {"mask_temp_start", c.mask_temp_start},
           {"mask_temp_end", c.mask_temp_end},
           {"budget", c.budget},
           {"pooling", c.pooling == Pooling::mean ? "mean" : "selector"},
           {"patch_length", c.patch_length},
           {"vocab_size", c.vocab_size}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.encoder_hidden = j.value("encoder_hidden", d.encoder_hidden);
  c.masker_hidden = j.value("masker_hidden", d.masker_hidden);
  c.selector_hidden = j.value("selector_hidden", d.selector_hidden);
  c.text_hidden = j.value("text_hidden", d.text_hidden);
  c.temperature = j.value("temperature", d.temperature);
  c.mask_temp_start = j.value("mask_temp_start", d.mask_temp_start);
  c.mask_temp_end = j.value("mask_temp_end", d.mask_temp_end);
  c.budget = j.value("budget", d.budget);
  const std::string pool = j.value("pooling", std::string("selector"));
  if (pool == "selector") {
    c.pooling = Pooling::selector;
  } else if (pool == "mean") {
    c.pooling = Pooling::mean;
  } else {
    throw ConfigError("unknown pooling '" + pool + "'");
  }
  c.patch_length = j.value("patch_length", d.patch_length);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
}

ModelConfig model_config_for(const CorpusConfig& corpus, ModelConfig base) {
  base.patch_length = corpus.patch_length;
  base.vocab_size = corpus.vocab_size;
  return base;
}

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::masker: return "masker";
    case ParamGroup::selector: return "selector";
    case ParamGroup::text: return "text";
  }
  return "?";
}

namespace {

ParamGroup group_from_name(const std::string& s) {
  if (s == "encoder") return ParamGroup::encoder;
  if (s == "masker") return ParamGroup::masker;
  if (s == "selector") return ParamGroup::selector;
  if (s == "text") return ParamGroup::text;
  throw FormatError("unknown parameter group '" + s + "'");
}

Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::matrix(in, out);
  for (auto& v : w.data()) v = uniform(rng, -a, a);
  return w;
}

void add_mlp(ScarParams& ps, const std::string& prefix, ParamGroup g, std::size_t in,
             const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  std::size_t prev = in;
  std::size_t layer = 0;
  auto push = [&](std::size_t width) {
    ps.params.push_back({prefix + ".w" + std::to_string(layer), g, xavier(prev, width, rng)});
    ps.params.push_back({prefix + ".b" + std::to_string(layer), g, Tensor::matrix(1, width)});
    prev = width;
    ++layer;
  };
  for (auto h : hidden) push(h);
  push(out);
}

std::size_t mlp_layers(const BoundParams& p, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& [name, v] : p.vars()) {
    if (name.rfind(prefix + ".w", 0) == 0) ++n;
  }
  return n;
}

ag::Var mlp(const BoundParams& p, const std::string& prefix, ag::Var x) {
  const std::size_t n = mlp_layers(p, prefix);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string k = std::to_string(i);
    x = ag::add_bias(ag::matmul(x, p(prefix + ".w" + k)), p(prefix + ".b" + k));
    if (i + 1 < n) x = ag::tanh(x);
  }
  return x;
}

}  // namespace

const Tensor& ScarParams::get(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.value;
  }
  throw std::out_of_range("no parameter named " + name);
}

Tensor& ScarParams::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ScarParams&>(*this).get(name));
}

std::string ScarParams::checksum(ParamGroup g) const {
  std::string bytes;
  for (const auto& p : params) {
    if (p.group != g) continue;
    bytes += p.name;
    const auto* raw = reinterpret_cast<const char*>(p.value.raw());
    bytes.append(raw, p.value.size() * sizeof(double));
  }
  return fnv1a_hex(bytes);
}

ScarParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x5ca2));
  ScarParams ps;
  const std::size_t d = cfg.embed_dim;
  add_mlp(ps, "enc", ParamGroup::encoder, cfg.patch_length, cfg.encoder_hidden, d, rng);
  add_mlp(ps, "mask", ParamGroup::masker, d, cfg.masker_hidden, 1, rng);
  add_mlp(ps, "sel", ParamGroup::selector, d, cfg.selector_hidden, 1, rng);
  {
    Tensor emb = Tensor::matrix(cfg.vocab_size, d);
    for (auto& v : emb.data()) v = 0.5 * standard_normal(rng);
    ps.params.push_back({"text.emb", ParamGroup::text, std::move(emb)});
  }
  add_mlp(ps, "text", ParamGroup::text, d, {cfg.text_hidden}, d, rng);
  // Start the masker near the budget: P(b + Gumbel > 0) = rho.
  const std::size_t last = cfg.masker_hidden.size();
  ps.get("mask.b" + std::to_string(last))[0] = std::log(-std::log(1.0 - cfg.budget));
  return ps;
}

BoundParams::BoundParams(ag::Tape& tape, const ScarParams& params,
                         std::span<const ParamGroup> trainable)
    : tape_(&tape) {
  vars_.reserve(params.params.size());
  for (const auto& p : params.params) {
    const bool train = std::find(trainable.begin(), trainable.end(), p.group) != trainable.end();
    vars_.emplace_back(p.name, tape.leaf(p.value, train));
  }
}

ag::Var BoundParams::operator()(const std::string& name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no bound parameter named " + name);
}

ag::Var encode_tokens(const BoundParams& p, ag::Var patches) { return mlp(p, "enc", patches); }

ag::Var masker_logits(const BoundParams& p, ag::Var tokens) { return mlp(p, "mask", tokens); }

ag::Var selector_scores(const BoundParams& p, ag::Var tokens) { return mlp(p, "sel", tokens); }

ag::Var adversarial_gates(ag::Var logits, const Tensor& noise, double mask_temperature,
                          std::span<const std::uint8_t> cell_valid) {
  if (!(mask_temperature > 0.0)) throw ConfigError("masking temperature must be > 0");
  const std::vector<std::size_t> shape = logits.value().shape();
  const std::size_t n = logits.value().size();
  if (noise.size() != n || cell_valid.size() != n) {
    throw DimensionError("gate noise/validity length does not match logits");
  }
  ag::Tape& t = logits.tape();
  ag::Var g = ag::sigmoid(ag::scale(ag::add(logits, t.constant(noise.reshaped(shape))),
                                    1.0 / mask_temperature));
  bool all_valid = true;
  for (auto v : cell_valid) all_valid = all_valid && v;
  if (all_valid) return g;
  Tensor keep(shape), force(shape);
  for (std::size_t i = 0; i < n; ++i) {
    keep[i] = cell_valid[i] ? 1.0 : 0.0;
    force[i] = 1.0 - keep[i];
  }
  return ag::add(ag::mul(g, t.constant(std::move(keep))), t.constant(std::move(force)));
}

std::vector<std::uint8_t> hard_gates(const Tensor& logits, std::span<const std::uint8_t> cell_valid) {
  std::vector<std::uint8_t> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (!cell_valid[i] || logits[i] > 0.0) ? 1 : 0;
  }
  return out;
}

ag::Var mask_tokens(ag::Var tokens, ag::Var gates) {
  return ag::scale_rows(tokens, ag::add_scalar(ag::neg(gates), 1.0));
}

Pooled select_and_pool(const BoundParams& p, ag::Var tokens, std::span<const std::uint8_t> visible,
                       std::size_t segment, Pooling pooling) {
  ag::Tape& t = tokens.tape();
  const std::size_t n = tokens.value().rows();
  if (visible.size() != n) throw DimensionError("visible set length does not match tokens");
  ag::Var weights;
  if (pooling == Pooling::selector) {
    weights = ag::segment_softmax(selector_scores(p, tokens), visible, segment);
  } else {
    Tensor w = Tensor::matrix(n, 1);
    for (std::size_t base = 0; base < n; base += segment) {
      std::size_t count = 0;
      for (std::size_t i = base; i < base + segment; ++i) count += visible[i] ? 1 : 0;
      if (count == 0) {
        throw ag::EmptyVisibleSetError("all cells masked in record " + std::to_string(base / segment));
      }
      for (std::size_t i = base; i < base + segment; ++i) {
        w[i] = visible[i] ? 1.0 / static_cast<double>(count) : 0.0;
      }
    }
    weights = t.constant(std::move(w));
  }
  return {ag::segment_weighted_sum(tokens, weights, segment), weights};
}

ag::Var full_view_embed(ag::Var tokens, std::span<const std::uint8_t> cell_valid,
                        std::size_t segment) {
  const std::size_t n = tokens.value().rows();
  Tensor w = Tensor::matrix(n, 1);
  for (std::size_t base = 0; base < n; base += segment) {
    std::size_t count = 0;
    for (std::size_t i = base; i < base + segment; ++i) count += cell_valid[i] ? 1 : 0;
    if (count == 0) throw ag::EmptyVisibleSetError("full-view record has no valid cell");
    for (std::size_t i = base; i < base + segment; ++i) {
      w[i] = cell_valid[i] ? 1.0 / static_cast<double>(count) : 0.0;
    }
  }
  return ag::segment_weighted_sum(tokens, tokens.tape().constant(std::move(w)), segment);
}

ag::Var encode_report(const BoundParams& p, std::span<const std::size_t> ids,
                      std::size_t report_length) {
  const Tensor& emb = p("text.emb").value();
  if (report_length == 0 || ids.size() % report_length != 0) {
    throw DimensionError("report ids not a multiple of report_length");
  }
  for (auto id : ids) {
    if (id >= emb.rows()) {
      throw FormatError("report token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(emb.rows()));
    }
  }
  Tensor w = Tensor::matrix(ids.size(), 1);
  for (std::size_t base = 0; base < ids.size(); base += report_length) {
    std::size_t count = 0;
    for (std::size_t i = base; i < base + report_length; ++i) count += ids[i] != kPadToken;
    for (std::size_t i = base; i < base + report_length; ++i) {
      w[i] = (ids[i] != kPadToken) ? 1.0 / static_cast<double>(count) : 0.0;
    }
  }
  ag::Var rows = ag::gather_rows(p("text.emb"), ids);
  ag::Var bag = ag::segment_weighted_sum(rows, p.tape().constant(std::move(w)), report_length);
  return mlp(p, "text", bag);
}

std::vector<std::uint8_t> training_visible_set(const Tensor& gates,
                                               std::span<const std::uint8_t> cell_valid) {
  std::vector<std::uint8_t> vis(gates.size());
  for (std::size_t i = 0; i < gates.size(); ++i) vis[i] = (gates[i] < 0.5 && cell_valid[i]) ? 1 : 0;
  return vis;
}

// ---- checkpoint -------------------------------------------------------------

json checkpoint_to_json(const Checkpoint& ck) {
  json params = json::array();
  for (const auto& p : ck.params.params) {
    params.push_back({{"name", p.name},
                      {"group", group_name(p.group)},
                      {"shape", p.value.shape()},
                      {"data", p.value.data()}});
  }
  return json{{"format", "scar-checkpoint"},
              {"version", 1},
              {"step", ck.step},
              {"model_config", ck.config},
              {"params", std::move(params)}};
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "scar-checkpoint") throw FormatError("not a checkpoint");
  if (j.value("version", 0) != 1) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  try {
    ck.config = j.at("model_config").get<ModelConfig>();
    ck.step = j.at("step").get<std::uint64_t>();
    const ScarParams expected = init_params(ck.config, 0);
    for (const auto& jp : j.at("params")) {
      Param p;
      p.name = jp.at("name").get<std::string>();
      p.group = group_from_name(jp.at("group").get<std::string>());
      p.value = Tensor(jp.at("shape").get<std::vector<std::size_t>>(),
                       jp.at("data").get<std::vector<double>>());
      ck.params.params.push_back(std::move(p));
    }
    if (ck.params.params.size() != expected.params.size()) {
      throw FormatError("checkpoint parameter count does not match config");
    }
    for (std::size_t i = 0; i < expected.params.size(); ++i) {
      const auto& e = expected.params[i];
      const auto& g = ck.params.params[i];
      if (e.name != g.name || e.group != g.group || !e.value.same_shape(g.value)) {
        throw FormatError("checkpoint tensor '" + g.name + "' does not match config shape " +
                          e.value.shape_string());
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f << checkpoint_to_json(ck).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  try {
    return checkpoint_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("corrupt checkpoint: ") + e.what());
  }
}

}  // namespace scar
