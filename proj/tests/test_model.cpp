#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "fd_oracle.hpp"
#include "scar/corpus.hpp"
#include "scar/model.hpp"
#include "scar/rng.hpp"
#include "scar/tokenizer.hpp"

using namespace scar;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig m;
  m.embed_dim = 4;
  m.encoder_hidden = {6};
  m.masker_hidden = {5};
  m.selector_hidden = {5};
  m.text_hidden = 6;
  m.patch_length = 3;
  m.vocab_size = 21;
  return m;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.data()) v = standard_normal(rng);
  return t;
}

}  // namespace

TEST(ModelConfig, ValidatesRanges) {
  ModelConfig m;
  EXPECT_NO_THROW(m.validate());
  m.budget = 1.0;
  EXPECT_THROW(m.validate(), ConfigError);
  m = ModelConfig{};
  m.temperature = 0.0;
  EXPECT_THROW(m.validate(), ConfigError);
  m = ModelConfig{};
  EXPECT_DOUBLE_EQ(m.mask_temperature(0.0), 1.0);
  EXPECT_DOUBLE_EQ(m.mask_temperature(1.0), 0.3);
  EXPECT_DOUBLE_EQ(m.mask_temperature(0.5), 0.65);
}

TEST(Model, InitialGateProbabilityMatchesBudget) {
  // The output bias alone gives P(bias + Gumbel > 0) = rho.
  ModelConfig m = tiny_config();
  ScarParams ps = init_params(m, 3);
  const double b = ps.get("mask.b1")[0];
  EXPECT_NEAR(1.0 - std::exp(-std::exp(b)), m.budget, 1e-12);
}

TEST(Model, EncoderSharesWeightsAcrossPatches) {
  const ModelConfig m = tiny_config();
  const ScarParams ps = init_params(m, 1);
  ag::Tape tape;
  BoundParams p(tape, ps, {});
  Tensor x = random_matrix(4, 3, 5);
  Tensor y = x;
  for (std::size_t j = 0; j < 3; ++j) std::swap(y[0 * 3 + j], y[2 * 3 + j]);
  const Tensor hx = encode_tokens(p, tape.constant(x)).value();
  const Tensor hy = encode_tokens(p, tape.constant(y)).value();
  EXPECT_EQ(hx.shape(), (std::vector<std::size_t>{4, 4}));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(hx[0 * 4 + j], hy[2 * 4 + j]);
    EXPECT_EQ(hx[2 * 4 + j], hy[0 * 4 + j]);
    EXPECT_EQ(hx[1 * 4 + j], hy[1 * 4 + j]);
  }
  const Tensor hz = encode_tokens(p, tape.constant(Tensor::matrix(2, 3))).value();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(hz[j], hz[4 + j]);
}

TEST(Model, DefaultLatticeShape) {
  const CorpusConfig cc;
  const ModelConfig m = model_config_for(cc);
  const ScarParams ps = init_params(m, 1);
  const auto r = generate_record(cc, 0, 0);
  const auto grid = patchify(r.signal, r.missing, cc.patch_length);
  ag::Tape tape;
  BoundParams p(tape, ps, {});
  const auto h = encode_tokens(p, tape.constant(grid.patches.reshaped({grid.cells(), cc.patch_length})));
  EXPECT_EQ(h.value().shape(), (std::vector<std::size_t>{120, 32}));
}

TEST(Model, GateExamples) {
  ag::Tape tape;
  const std::vector<std::uint8_t> valid{1, 1, 0};
  auto g = adversarial_gates(tape.constant(Tensor({3, 1}, std::vector<double>{0.0, 2.0, -5.0})),
                             Tensor({3, 1}, 0.0), 1.0, valid);
  EXPECT_DOUBLE_EQ(g.value()[0], 0.5);
  EXPECT_EQ(g.value()[2], 1.0);
  auto sharp = adversarial_gates(tape.constant(Tensor({1, 1}, std::vector<double>{2.0})),
                                 Tensor({1, 1}, 0.0), 0.01, std::vector<std::uint8_t>{1});
  EXPECT_GT(sharp.value()[0], 1.0 - 1e-3);
  EXPECT_THROW(adversarial_gates(tape.constant(Tensor({1, 1})), Tensor({1, 1}), 0.0,
                                 std::vector<std::uint8_t>{1}),
               ConfigError);
  EXPECT_EQ(hard_gates(Tensor({3, 1}, std::vector<double>{0.1, -0.1, -3.0}), valid),
            (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Model, GatesStayInsideTheOpenIntervalForModerateLogits) {
  ag::Tape tape;
  Rng rng(9);
  Tensor logits = random_matrix(200, 1, 2);
  Tensor noise({200, 1});
  for (auto& v : noise.data()) v = gumbel(rng);
  const auto g = adversarial_gates(tape.constant(logits), noise, 0.3, std::vector<std::uint8_t>(200, 1));
  for (double v : g.value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Model, GateGradientReachesMaskerParameters) {
  const ModelConfig m = tiny_config();
  const ScarParams ps = init_params(m, 4);
  ag::Tape tape;
  const ParamGroup groups[] = {ParamGroup::masker};
  BoundParams p(tape, ps, groups);
  const Tensor x = random_matrix(6, 3, 8);
  auto h = encode_tokens(p, tape.constant(x));
  auto g = adversarial_gates(masker_logits(p, h), Tensor({6, 1}, 0.0), 1.0, std::vector<std::uint8_t>(6, 1));
  tape.backward(ag::sum(g));
  double norm = 0.0;
  for (double v : p("mask.w0").grad().data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
  for (double v : p("enc.w0").grad().data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, GateFiniteDifferencesOnToyLattice) {
  const ModelConfig m = tiny_config();
  const ScarParams ps = init_params(m, 4);
  const Tensor x = random_matrix(6, 3, 8);  // a 2x3 lattice
  const Tensor noise = random_matrix(6, 1, 11);
  const Tensor w0 = ps.get("mask.w0"), b0 = ps.get("mask.b0"), w1 = ps.get("mask.w1");
  auto rep = scar::testing::check_gradients(
      [&](ag::Tape& tape, const std::vector<ag::Var>& v) {
        ScarParams local = ps;
        BoundParams p(tape, local, {});
        auto h = encode_tokens(p, tape.constant(x));
        auto hidden = ag::tanh(ag::add_bias(ag::matmul(h, v[0]), v[1]));
        auto logits = ag::add_bias(ag::matmul(hidden, v[2]), p("mask.b1"));
        auto g = adversarial_gates(logits, noise, 0.7, std::vector<std::uint8_t>(6, 1));
        return ag::sum(ag::square(g));
      },
      {w0, b0, w1});
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(Model, MaskTokensExamples) {
  ag::Tape tape;
  const Tensor h = random_matrix(3, 4, 1);
  const auto out = mask_tokens(tape.constant(h), tape.constant(Tensor({3, 1}, std::vector<double>{0.0, 1.0, 0.5})));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(out.value()[j], h[j]);
    EXPECT_EQ(out.value()[4 + j], 0.0);
    EXPECT_DOUBLE_EQ(out.value()[8 + j], 0.5 * h[8 + j]);
  }
}

TEST(Model, SelectorPoolingProperties) {
  const ModelConfig m = tiny_config();
  ScarParams ps = init_params(m, 2);
  const Tensor h = random_matrix(6, 4, 3);
  const std::vector<std::uint8_t> vis{1, 0, 1, 0, 0, 1};

  ag::Tape t1;
  BoundParams p1(t1, ps, {});
  const Pooled a = select_and_pool(p1, t1.constant(h), vis, 6, Pooling::selector);
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    total += a.weights.value()[i];
    if (!vis[i]) {
      EXPECT_EQ(a.weights.value()[i], 0.0);
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-12);

  // Shifting every selector score by a constant leaves alpha and z unchanged.
  ps.get("sel.b1")[0] += 37.5;
  ag::Tape t2;
  BoundParams p2(t2, ps, {});
  const Pooled b = select_and_pool(p2, t2.constant(h), vis, 6, Pooling::selector);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.weights.value()[i], b.weights.value()[i], 1e-12);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.embedding.value()[j], b.embedding.value()[j], 1e-10);

  // Mean pooling is the plain average of visible rows.
  const Pooled mp = select_and_pool(p2, t2.constant(h), vis, 6, Pooling::mean);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(mp.embedding.value()[j], (h[0 * 4 + j] + h[2 * 4 + j] + h[5 * 4 + j]) / 3.0, 1e-12);
  }
  // A single visible cell returns that cell.
  const std::vector<std::uint8_t> one{0, 0, 0, 1, 0, 0};
  const Pooled s = select_and_pool(p2, t2.constant(h), one, 6, Pooling::selector);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(s.embedding.value()[j], h[3 * 4 + j]);

  EXPECT_THROW(select_and_pool(p2, t2.constant(h), std::vector<std::uint8_t>(6, 0), 6, Pooling::selector),
               ag::EmptyVisibleSetError);
  EXPECT_THROW(select_and_pool(p2, t2.constant(h), std::vector<std::uint8_t>(6, 0), 6, Pooling::mean),
               ag::EmptyVisibleSetError);
}

TEST(Model, FullViewEmbedIsTheValidMean) {
  ag::Tape tape;
  const Tensor h = random_matrix(1, 4, 6);
  const auto z = full_view_embed(tape.constant(h), std::vector<std::uint8_t>{1}, 1);
  EXPECT_EQ(z.value().data(), h.data());

  Tensor twice = Tensor::matrix(4, 4);
  const Tensor base = random_matrix(2, 4, 7);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) twice[i * 4 + j] = base[(i % 2) * 4 + j];
  }
  const auto z1 = full_view_embed(tape.constant(base), std::vector<std::uint8_t>{1, 1}, 2);
  const auto z2 = full_view_embed(tape.constant(twice), std::vector<std::uint8_t>{1, 1, 1, 1}, 4);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(z1.value()[j], z2.value()[j], 1e-15);
}

TEST(Model, FullViewIsIndependentOfMaskerAndSelector) {
  const ModelConfig m = tiny_config();
  const ScarParams ps = init_params(m, 2);
  ag::Tape tape;
  const ParamGroup groups[] = {ParamGroup::encoder, ParamGroup::masker, ParamGroup::selector};
  BoundParams p(tape, ps, groups);
  auto h = encode_tokens(p, tape.constant(random_matrix(6, 3, 1)));
  tape.backward(ag::sum(full_view_embed(h, std::vector<std::uint8_t>(6, 1), 3)));
  for (const auto& [name, v] : p.vars()) {
    if (name.rfind("mask.", 0) == 0 || name.rfind("sel.", 0) == 0) {
      for (double g : v.grad().data()) EXPECT_EQ(g, 0.0) << name;
    }
  }
}

TEST(Model, ReportEncoderProperties) {
  const ModelConfig m = tiny_config();
  const ScarParams ps = init_params(m, 2);
  ag::Tape tape;
  BoundParams p(tape, ps, {});
  const std::vector<std::size_t> pads(4, kPadToken);
  const auto a = encode_report(p, pads, 4).value();
  const auto b = encode_report(p, pads, 4).value();
  EXPECT_EQ(a, b);

  const std::vector<std::size_t> r1{1, 2, 3, 0}, r1p{3, 0, 1, 2}, r2{5, 6, 7, 8};
  const auto u1 = encode_report(p, r1, 4).value();
  const auto u1p = encode_report(p, r1p, 4).value();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(u1[j], u1p[j], 1e-14);
  const auto u2 = encode_report(p, r2, 4).value();
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    dot += u1[j] * u2[j];
    n1 += u1[j] * u1[j];
    n2 += u2[j] * u2[j];
  }
  EXPECT_LT(dot / std::sqrt(n1 * n2), 1.0 - 1e-9);

  EXPECT_THROW(encode_report(p, std::vector<std::size_t>{1, 2, 99, 0}, 4), FormatError);
}

TEST(Model, TrainingVisibleSet) {
  const Tensor g({4, 1}, std::vector<double>{0.1, 0.5, 0.49, 0.2});
  EXPECT_EQ(training_visible_set(g, std::vector<std::uint8_t>{1, 1, 1, 0}),
            (std::vector<std::uint8_t>{1, 0, 1, 0}));
}

TEST(Model, ParameterGroupsAreDisjoint) {
  const ScarParams ps = init_params(tiny_config(), 1);
  std::set<std::string> names;
  for (const auto& p : ps.params) EXPECT_TRUE(names.insert(p.name).second);
  EXPECT_NE(ps.checksum(ParamGroup::encoder), ps.checksum(ParamGroup::masker));
}

TEST(Checkpoint, RoundTripAndShapeValidation) {
  const ModelConfig m = tiny_config();
  Checkpoint ck{m, init_params(m, 5), 42};
  const fs::path path = fs::temp_directory_path() / "scar_test_ck.json";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.step, 42u);
  for (auto g : {ParamGroup::encoder, ParamGroup::masker, ParamGroup::selector, ParamGroup::text}) {
    EXPECT_EQ(back.params.checksum(g), ck.params.checksum(g));
  }
  auto j = checkpoint_to_json(ck);
  j["model_config"]["embed_dim"] = 5;
  EXPECT_THROW(checkpoint_from_json(j), FormatError);
  fs::remove(path);
}
