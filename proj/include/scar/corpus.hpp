#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scar/tensor.hpp"

namespace scar {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kPadToken = 0;

struct CorpusConfig {
  std::size_t num_leads = 12;
  std::size_t signal_length = 500;
  std::size_t patch_length = 50;
  std::size_t num_classes = 5;
  std::size_t vocab_size = 64;
  std::size_t report_length = 16;
  std::size_t train_records = 2000;
  std::size_t val_records = 400;
  std::size_t test_records = 400;
  double noise_std = 0.1;
  // Generator shape knobs. Primary motifs are primary_ratio times the
  // secondary amplitude.
  double baseline_amplitude = 0.5;
  double secondary_amplitude = 0.5;
  double primary_ratio = 3.0;
  std::size_t secondary_cues = 3;
  std::uint64_t seed = 20240601;

  std::size_t patches_per_lead() const { return signal_length / patch_length; }
  std::size_t cells() const { return num_leads * patches_per_lead(); }
  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct Cell {
  std::size_t lead = 0;
  std::size_t patch = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct ClassEvidence {
  std::size_t cls = 0;
  Cell primary;
  std::vector<Cell> secondary;
};

struct SignalRecord {
  std::uint64_t id = 0;
  Tensor signal;                      // L×C, values in [0,1]
  std::vector<std::uint8_t> missing;  // L×C sentinel; empty means fully observed
  std::vector<std::uint8_t> labels;   // length K
  std::vector<std::size_t> report;    // token ids, length report_length
  std::vector<ClassEvidence> evidence;

  bool is_missing(std::size_t lead, std::size_t t) const {
    return !missing.empty() && missing[lead * signal.cols() + t] != 0;
  }
};

struct Corpus {
  CorpusConfig config;
  std::vector<SignalRecord> train;
  std::vector<SignalRecord> val;
  std::vector<SignalRecord> test;
};

/// Clean components of one generated record, before noise and normalisation.
struct RecordComponents {
  Tensor baseline;  // L×C
  Tensor motifs;    // L×C, sum of all planted motifs
};

Corpus generate_corpus(const CorpusConfig& cfg);
/// Generates a single record of a split (0 train, 1 val, 2 test).
SignalRecord generate_record(const CorpusConfig& cfg, int split, std::size_t index,
                             RecordComponents* components = nullptr);

/// Unit-RMS motif template of length patch_length for a class.
std::vector<double> class_motif(std::size_t cls, std::size_t patch_length);

/// Dedicated report tokens owned by a class (4 per class).
std::vector<std::size_t> class_tokens(std::size_t cls);
/// Canonical prompt: the class's dedicated tokens in order, padded.
std::vector<std::size_t> class_prompt(std::size_t cls, const CorpusConfig& cfg);

/// Per-record min-max scaling to [0,1]; a constant signal becomes all 0.5.
void minmax_normalize(Tensor& signal);

// ---- NDJSON export / import ------------------------------------------------

nlohmann::json record_to_json(const SignalRecord& r);
SignalRecord record_from_json(const nlohmann::json& j);

/// Writes train/val/test .jsonl files plus manifest.json. Returns the manifest.
nlohmann::json export_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus import_corpus(const std::filesystem::path& dir);

/// FNV-1a 64-bit over raw bytes, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace scar
