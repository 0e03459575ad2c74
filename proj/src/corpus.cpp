#include "scar/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "scar/rng.hpp"

namespace scar {

using nlohmann::json;

void CorpusConfig::validate() const {
  if (num_leads == 0 || signal_length == 0 || patch_length == 0) {
    throw ConfigError("leads, signal length and patch length must be positive");
  }
  if (signal_length % patch_length != 0) {
    throw ConfigError("signal_length " + std::to_string(signal_length) +
                      " is not divisible by patch_length " + std::to_string(patch_length));
  }
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  // Token 0 is the pad; each class owns four dedicated ids after it.
  if (4 * num_classes + 1 > vocab_size) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " cannot hold 4 tokens for " +
                      std::to_string(num_classes) + " classes plus the pad token");
  }
  if (report_length < 8) throw ConfigError("report_length must be at least 8");
  const std::size_t needed = 2 * (1 + secondary_cues);
  if (cells() < needed) throw ConfigError("token lattice too small for planted evidence");
  if (secondary_cues < 2) throw ConfigError("secondary_cues must be at least 2");
  if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  if (train_records == 0 || val_records == 0 || test_records == 0) {
    throw ConfigError("every split needs at least one record");
  }
}

void to_json(json& j, const CorpusConfig& c) {
  j = json{{"num_leads", c.num_leads},
           {"signal_length", c.signal_length},
           {"patch_length", c.patch_length},
           {"num_classes", c.num_classes},
           {"vocab_size", c.vocab_size},
           {"report_length", c.report_length},
           {"train_records", c.train_records},
           {"val_records", c.val_records},
           {"test_records", c.test_records},
           {"noise_std", c.noise_std},
           {"baseline_amplitude", c.baseline_amplitude},
           {"secondary_amplitude", c.secondary_amplitude},
           {"primary_ratio", c.primary_ratio},
           {"secondary_cues", c.secondary_cues},
           {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  CorpusConfig d;
  c.num_leads = j.value("num_leads", d.num_leads);
  c.signal_length = j.value("signal_length", d.signal_length);
  c.patch_length = j.value("patch_length", d.patch_length);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.report_length = j.value("report_length", d.report_length);
  c.train_records = j.value("train_records", d.train_records);
  c.val_records = j.value("val_records", d.val_records);
  c.test_records = j.value("test_records", d.test_records);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.baseline_amplitude = j.value("baseline_amplitude", d.baseline_amplitude);
  c.secondary_amplitude = j.value("secondary_amplitude", d.secondary_amplitude);
  c.primary_ratio = j.value("primary_ratio", d.primary_ratio);
  c.secondary_cues = j.value("secondary_cues", d.secondary_cues);
  c.seed = j.value("seed", d.seed);
}

std::vector<double> class_motif(std::size_t cls, std::size_t patch_length) {
  const double n = static_cast<double>(patch_length);
  const std::size_t family = cls % 5;
  const double variant = static_cast<double>(cls / 5);
  std::vector<double> m(patch_length);
  for (std::size_t i = 0; i < patch_length; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / n;  // (0,1)
    const double c = x - 0.5;
    switch (family) {
      case 0: {  // narrow positive spike
        const double w = 0.06 + 0.02 * variant;
        m[i] = std::exp(-c * c / (2 * w * w));
        break;
      }
      case 1: {  // broad negative dip
        const double w = 0.2 + 0.03 * variant;
        m[i] = -std::exp(-c * c / (2 * w * w));
        break;
      }
      case 2: {  // windowed oscillation burst
        const double cycles = 3.0 + variant;
        const double hann = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * x);
        m[i] = hann * std::sin(2 * std::numbers::pi * cycles * x);
        break;
      }
      case 3: {  // plateau
        const double half = 0.25 + 0.05 * variant;
        m[i] = std::abs(c) < half ? 1.0 : 0.0;
        break;
      }
      default: {  // biphasic wave
        const double w = 0.1 + 0.02 * variant;
        m[i] = -c / w * std::exp(-c * c / (2 * w * w));
        break;
      }
    }
  }
  double ss = 0.0;
  for (double v : m) ss += v * v;
  const double rms = std::sqrt(ss / n);
  for (double& v : m) v /= rms;
  return m;
}

std::vector<std::size_t> class_tokens(std::size_t cls) {
  return {4 * cls + 1, 4 * cls + 2, 4 * cls + 3, 4 * cls + 4};
}

std::vector<std::size_t> class_prompt(std::size_t cls, const CorpusConfig& cfg) {
  std::vector<std::size_t> p = class_tokens(cls);
  p.resize(cfg.report_length, kPadToken);
  return p;
}

void minmax_normalize(Tensor& signal) {
  if (signal.size() == 0) return;
  const auto [lo, hi] = std::minmax_element(signal.data().begin(), signal.data().end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    signal.fill(0.5);
    return;
  }
  for (double& v : signal.data()) v = (v - mn) / (mx - mn);
}

namespace {

// Values are stored at 1e-6 resolution so the text export round-trips exactly.
double quantize(double v) { return std::round(v * 1e6) / 1e6; }

Cell draw_free_cell(Rng& rng, const CorpusConfig& cfg, std::vector<std::uint8_t>& used) {
  const std::size_t s = cfg.patches_per_lead();
  for (;;) {
    const std::size_t idx = uniform_index(rng, cfg.cells());
    if (!used[idx]) {
      used[idx] = 1;
      return Cell{idx / s, idx % s};
    }
  }
}

}  // namespace

SignalRecord generate_record(const CorpusConfig& cfg, int split, std::size_t index,
                             RecordComponents* components) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(split), index));
  const std::size_t L = cfg.num_leads, C = cfg.signal_length, P = cfg.patch_length;
  const std::size_t K = cfg.num_classes;

  SignalRecord rec;
  rec.id = static_cast<std::uint64_t>(split) * 1'000'000'000ULL + index;
  rec.labels.assign(K, 0);

  // 1 positive with probability 0.6, otherwise 2.
  const std::size_t n_pos = (K >= 2 && uniform01(rng) >= 0.6) ? 2 : 1;
  std::vector<std::size_t> classes(K);
  for (std::size_t k = 0; k < K; ++k) classes[k] = k;
  shuffle_range(classes.begin(), classes.end(), rng);
  classes.resize(n_pos);
  std::sort(classes.begin(), classes.end());

  std::vector<std::uint8_t> used(cfg.cells(), 0);
  for (std::size_t k : classes) {
    rec.labels[k] = 1;
    ClassEvidence ev;
    ev.cls = k;
    ev.primary = draw_free_cell(rng, cfg, used);
    for (std::size_t i = 0; i < cfg.secondary_cues; ++i) {
      ev.secondary.push_back(draw_free_cell(rng, cfg, used));
    }
    rec.evidence.push_back(std::move(ev));
  }

  // Quasi-periodic baseline, one rhythm per record with per-lead phase.
  Tensor baseline = Tensor::matrix(L, C);
  const double period = uniform(rng, 80.0, 140.0);
  for (std::size_t c = 0; c < L; ++c) {
    const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
    const double gain = cfg.baseline_amplitude * uniform(rng, 0.7, 1.3);
    for (std::size_t t = 0; t < C; ++t) {
      const double w = 2 * std::numbers::pi * static_cast<double>(t) / period;
      baseline.at(c, t) = gain * (std::sin(w + phase) + 0.4 * std::sin(2 * w + 1.7 * phase));
    }
  }

  Tensor motifs = Tensor::matrix(L, C);
  auto plant = [&](const Cell& cell, const std::vector<double>& shape, double amp) {
    for (std::size_t i = 0; i < P; ++i) motifs.at(cell.lead, cell.patch * P + i) += amp * shape[i];
  };
  for (const auto& ev : rec.evidence) {
    const auto shape = class_motif(ev.cls, P);
    plant(ev.primary, shape, cfg.secondary_amplitude * cfg.primary_ratio);
    for (const auto& cell : ev.secondary) plant(cell, shape, cfg.secondary_amplitude);
  }

  Tensor signal = Tensor::matrix(L, C);
  for (std::size_t i = 0; i < signal.size(); ++i) {
    signal[i] = baseline[i] + motifs[i];
    if (cfg.noise_std > 0.0) signal[i] += cfg.noise_std * standard_normal(rng);
  }
  minmax_normalize(signal);
  for (double& v : signal.data()) v = quantize(v);
  rec.signal = std::move(signal);

  // Report: >=2 dedicated tokens per positive class, filler, trailing pads.
  std::vector<std::size_t> body;
  for (std::size_t k : classes) {
    auto toks = class_tokens(k);
    shuffle_range(toks.begin(), toks.end(), rng);
    const std::size_t take = 2 + uniform_index(rng, 3);  // 2..4
    body.insert(body.end(), toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(take));
  }
  const std::size_t first_filler = 4 * K + 1;
  const std::size_t n_pad = uniform_index(rng, 4);
  const std::size_t target = cfg.report_length - n_pad;
  while (body.size() < target && first_filler < cfg.vocab_size) {
    body.push_back(first_filler + uniform_index(rng, cfg.vocab_size - first_filler));
  }
  shuffle_range(body.begin(), body.end(), rng);
  body.resize(cfg.report_length, kPadToken);
  rec.report = std::move(body);

  if (components) {
    components->baseline = std::move(baseline);
    components->motifs = std::move(motifs);
  }
  return rec;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  auto fill = [&](std::vector<SignalRecord>& out, int split, std::size_t n) {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_record(cfg, split, i));
  };
  fill(corpus.train, 0, cfg.train_records);
  fill(corpus.val, 1, cfg.val_records);
  fill(corpus.test, 2, cfg.test_records);
  return corpus;
}

// ---- serialisation ----------------------------------------------------------

json record_to_json(const SignalRecord& r) {
  json sig = json::array();
  const std::size_t L = r.signal.rows(), C = r.signal.cols();
  for (std::size_t c = 0; c < L; ++c) {
    json row = json::array();
    for (std::size_t t = 0; t < C; ++t) row.push_back(r.signal.at(c, t));
    sig.push_back(std::move(row));
  }
  json ev = json::array();
  for (const auto& e : r.evidence) {
    json sec = json::array();
    for (const auto& s : e.secondary) sec.push_back({s.lead, s.patch});
    ev.push_back({{"class", e.cls}, {"primary", {e.primary.lead, e.primary.patch}}, {"secondary", sec}});
  }
  json j{{"id", r.id}, {"signal", std::move(sig)}, {"labels", r.labels}, {"report", r.report},
         {"evidence_map", std::move(ev)}};
  if (!r.missing.empty()) j["missing"] = r.missing;
  return j;
}

SignalRecord record_from_json(const json& j) {
  SignalRecord r;
  try {
    r.id = j.at("id").get<std::uint64_t>();
    const auto& sig = j.at("signal");
    const std::size_t L = sig.size();
    const std::size_t C = L ? sig.at(0).size() : 0;
    std::vector<double> data;
    data.reserve(L * C);
    for (const auto& row : sig) {
      if (row.size() != C) throw FormatError("ragged signal rows");
      for (const auto& v : row) data.push_back(v.get<double>());
    }
    r.signal = Tensor({L, C}, std::move(data));
    r.labels = j.at("labels").get<std::vector<std::uint8_t>>();
    r.report = j.at("report").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("evidence_map")) {
      ClassEvidence ev;
      ev.cls = e.at("class").get<std::size_t>();
      ev.primary = Cell{e.at("primary").at(0).get<std::size_t>(), e.at("primary").at(1).get<std::size_t>()};
      for (const auto& s : e.at("secondary")) {
        ev.secondary.push_back(Cell{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      }
      r.evidence.push_back(std::move(ev));
    }
    if (j.contains("missing")) r.missing = j.at("missing").get<std::vector<std::uint8_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed record: ") + e.what());
  }
  return r;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

const char* kSplitNames[] = {"train", "val", "test"};

std::string dump_split(const std::vector<SignalRecord>& recs) {
  std::string out;
  for (const auto& r : recs) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

}  // namespace

json export_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::vector<SignalRecord>* splits[] = {&corpus.train, &corpus.val, &corpus.test};
  json files = json::object();
  for (int s = 0; s < 3; ++s) {
    const std::string text = dump_split(*splits[s]);
    const auto path = dir / (std::string(kSplitNames[s]) + ".jsonl");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    files[kSplitNames[s]] = {{"records", splits[s]->size()}, {"fnv1a", fnv1a_hex(text)}};
  }
  json manifest{{"format", "scar-corpus"}, {"version", 1}, {"config", corpus.config},
                {"seed", corpus.config.seed}, {"files", files}};
  std::ofstream m(dir / "manifest.json", std::ios::binary);
  if (!m) throw std::runtime_error("cannot write manifest in " + dir.string());
  m << manifest.dump(2) << '\n';
  return manifest;
}

Corpus import_corpus(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.json");
  if (!m) throw FormatError("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "scar-corpus") throw FormatError("not a corpus manifest");
  Corpus corpus;
  corpus.config = manifest.at("config").get<CorpusConfig>();
  std::vector<SignalRecord>* splits[] = {&corpus.train, &corpus.val, &corpus.test};
  for (int s = 0; s < 3; ++s) {
    const auto path = dir / (std::string(kSplitNames[s]) + ".jsonl");
    std::ifstream f(path);
    if (!f) throw FormatError("missing " + path.string());
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      try {
        splits[s]->push_back(record_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
      }
    }
    const auto expected = manifest.at("files").at(kSplitNames[s]).at("records").get<std::size_t>();
    if (splits[s]->size() != expected) {
      throw FormatError(path.string() + ": record count differs from manifest");
    }
  }
  return corpus;
}

}  // namespace scar
