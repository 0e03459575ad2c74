#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "scar/corpus.hpp"
#include "scar/tokenizer.hpp"

using namespace scar;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_config() {
  CorpusConfig c;
  c.train_records = 60;
  c.val_records = 10;
  c.test_records = 10;
  return c;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scar_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(CorpusConfig, RejectsInvalidGeometry) {
  CorpusConfig c;
  c.signal_length = 501;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CorpusConfig{};
  c.num_classes = 16;  // 4*16+1 > 64
  EXPECT_THROW(c.validate(), ConfigError);
  c = CorpusConfig{};
  EXPECT_NO_THROW(c.validate());
}

TEST(Corpus, SameSeedGivesIdenticalRecords) {
  const auto a = generate_corpus(small_config());
  const auto b = generate_corpus(small_config());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(record_to_json(a.train[i]).dump(), record_to_json(b.train[i]).dump());
  }
}

TEST(Corpus, RecordInvariantsHold) {
  const auto corpus = generate_corpus(small_config());
  const auto& cfg = corpus.config;
  for (const auto* split : {&corpus.train, &corpus.val, &corpus.test}) {
    for (const auto& r : *split) {
      const auto [lo, hi] = std::minmax_element(r.signal.data().begin(), r.signal.data().end());
      EXPECT_NEAR(*lo, 0.0, 1e-6);
      EXPECT_NEAR(*hi, 1.0, 1e-6);
      std::size_t positives = 0;
      for (auto l : r.labels) positives += l;
      EXPECT_GE(positives, 1u);
      EXPECT_LE(positives, 2u);
      EXPECT_EQ(r.evidence.size(), positives);
      EXPECT_EQ(r.report.size(), cfg.report_length);

      std::set<std::pair<std::size_t, std::size_t>> used;
      for (const auto& ev : r.evidence) {
        EXPECT_EQ(r.labels[ev.cls], 1);
        EXPECT_GE(ev.secondary.size(), 2u);
        EXPECT_TRUE(used.insert({ev.primary.lead, ev.primary.patch}).second);
        for (const auto& c : ev.secondary) EXPECT_TRUE(used.insert({c.lead, c.patch}).second);
      }
      // Labels are recoverable from report tokens by dedicated-set membership.
      for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        const auto toks = class_tokens(k);
        std::size_t hits = 0;
        for (auto t : r.report) hits += std::count(toks.begin(), toks.end(), t);
        EXPECT_EQ(hits > 0, r.labels[k] == 1);
        if (r.labels[k]) {
          EXPECT_GE(hits, 2u);
        }
      }
    }
  }
}

TEST(Corpus, ClassBalanceOnDefaultTrainSplit) {
  CorpusConfig c;
  c.val_records = 1;
  c.test_records = 1;
  const auto corpus = generate_corpus(c);
  std::vector<std::size_t> counts(c.num_classes, 0);
  for (const auto& r : corpus.train) {
    for (std::size_t k = 0; k < c.num_classes; ++k) counts[k] += r.labels[k];
  }
  for (auto n : counts) {
    EXPECT_GE(n, 300u);
    EXPECT_LE(n, 900u);
  }
}

TEST(Corpus, PrimaryCellCarriesTheLargestNoiseFreeDeviation) {
  CorpusConfig c = small_config();
  c.noise_std = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    RecordComponents comp;
    const auto r = generate_record(c, 0, i, &comp);
    const std::size_t S = c.signal_length / c.patch_length;
    std::vector<double> energy(c.num_leads * S, 0.0);
    for (std::size_t l = 0; l < c.num_leads; ++l) {
      for (std::size_t t = 0; t < c.signal_length; ++t) {
        const double v = comp.motifs[l * c.signal_length + t];
        energy[l * S + t / c.patch_length] += v * v;
      }
    }
    for (const auto& ev : r.evidence) {
      const double e = energy[ev.primary.lead * S + ev.primary.patch];
      for (std::size_t cell = 0; cell < energy.size(); ++cell) EXPECT_GE(e + 1e-12, energy[cell]);
      for (const auto& s : ev.secondary) EXPECT_GT(e, energy[s.lead * S + s.patch]);
    }
  }
}

TEST(Corpus, MinmaxNormalizeHandlesConstantSignal) {
  Tensor t({2, 3}, 4.0);
  minmax_normalize(t);
  for (double v : t.data()) EXPECT_EQ(v, 0.5);
  Tensor u({1, 3}, std::vector<double>{-1.0, 0.0, 3.0});
  minmax_normalize(u);
  EXPECT_EQ(u[0], 0.0);
  EXPECT_EQ(u[2], 1.0);
  EXPECT_DOUBLE_EQ(u[1], 0.25);
}

TEST(Corpus, PromptsAreDisjointAndPadded) {
  CorpusConfig c;
  for (std::size_t a = 0; a < c.num_classes; ++a) {
    const auto pa = class_prompt(a, c);
    EXPECT_EQ(pa.size(), c.report_length);
    EXPECT_EQ(pa, class_prompt(a, c));
    for (std::size_t b = a + 1; b < c.num_classes; ++b) {
      const auto pb = class_prompt(b, c);
      for (auto t : pa) {
        if (t != kPadToken) {
          EXPECT_EQ(std::count(pb.begin(), pb.end(), t), 0);
        }
      }
    }
  }
}

TEST(CorpusIo, RoundTripIsExactAndManifestStable) {
  const auto corpus = generate_corpus(small_config());
  const fs::path dir = temp_dir("corpus_rt");
  const auto m1 = export_corpus(corpus, dir);
  const auto back = import_corpus(dir);
  ASSERT_EQ(back.test.size(), corpus.test.size());
  for (std::size_t i = 0; i < corpus.test.size(); ++i) {
    EXPECT_EQ(back.test[i].signal, corpus.test[i].signal);
    EXPECT_EQ(back.test[i].labels, corpus.test[i].labels);
    EXPECT_EQ(back.test[i].report, corpus.test[i].report);
    EXPECT_EQ(back.test[i].evidence.size(), corpus.test[i].evidence.size());
  }
  const auto m2 = export_corpus(back, temp_dir("corpus_rt2"));
  EXPECT_EQ(m1.dump(), m2.dump());
  fs::remove_all(dir);
  fs::remove_all(temp_dir("corpus_rt2"));
}

TEST(CorpusIo, MalformedInputsAreFormatErrors) {
  EXPECT_THROW(import_corpus(temp_dir("does_not_exist")), FormatError);
  EXPECT_THROW(record_from_json(nlohmann::json{{"id", 1}}), FormatError);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

// ---- tokenizer ---------------------------------------------------------------

TEST(Tokenizer, PatchifySmallExample) {
  const Tensor sig({1, 4}, std::vector<double>{1, 2, 3, 4});
  const auto g = patchify(sig, {}, 2);
  EXPECT_EQ(g.patches.shape(), (std::vector<std::size_t>{1, 2, 2}));
  EXPECT_EQ(g.patches.data(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(g.valid_count(), 2u);
}

TEST(Tokenizer, RoundTripOnRandomInput) {
  const auto r = generate_record(small_config(), 2, 3);
  const auto g = patchify(r.signal, r.missing, 50);
  EXPECT_EQ(g.cells(), 120u);
  EXPECT_EQ(unpatchify(g), r.signal);
}

TEST(Tokenizer, NonDivisibleLengthThrows) {
  EXPECT_THROW(patchify(Tensor({2, 7}, 0.0), {}, 2), TokenizationError);
}

TEST(Tokenizer, CellValidityFollowsTheMissingSentinel) {
  Tensor sig({2, 6}, 0.0);  // zeros everywhere, only some flagged missing
  std::vector<std::uint8_t> missing(12, 0);
  for (std::size_t t = 0; t < 6; ++t) missing[t] = 1;  // lead 0 fully missing
  missing[6] = 1;                                      // lead 1, first patch partially missing
  const auto g = patchify(sig, missing, 3);
  EXPECT_EQ(g.cell_valid, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_EQ(g.valid_count(), 2u);
}

TEST(Tokenizer, CanonicalizeLeads) {
  const auto& names = canonical_lead_names();
  Tensor sig({12, 2}, 0.0);
  for (std::size_t l = 0; l < 12; ++l) sig[l * 2] = sig[l * 2 + 1] = static_cast<double>(l);
  EXPECT_EQ(canonicalize_leads(sig, names), sig);
  std::vector<std::string> reversed(names.rbegin(), names.rend());
  Tensor rev({12, 2}, 0.0);
  for (std::size_t l = 0; l < 12; ++l) rev[l * 2] = rev[l * 2 + 1] = static_cast<double>(11 - l);
  const Tensor once = canonicalize_leads(rev, reversed);
  EXPECT_EQ(once, sig);
  EXPECT_EQ(canonicalize_leads(once, names), once);
  auto bad = names;
  bad[3] = "aVX";
  EXPECT_THROW(canonicalize_leads(sig, bad), TokenizationError);
  bad = names;
  bad[3] = bad[4];
  EXPECT_THROW(canonicalize_leads(sig, bad), TokenizationError);
}
