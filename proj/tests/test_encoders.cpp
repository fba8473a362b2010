#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "probeforge/encoders.hpp"
#include "probeforge/errors.hpp"

namespace pf = probeforge;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTexts{"Entecavir may be able to prevent [MASK] .", "Hepatitis B",
                                      "Magnesium deficiency", "listen", "silent"};

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("probeforge_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(ReferenceEncoder, EncodeIsDeterministicAndFinite) {
  auto enc = pf::reference_encoder(32, 7, 4);
  const auto a = enc->encode(kTexts, 4);
  const auto b = enc->encode(kTexts, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rows(), 5);
  EXPECT_EQ(a.cols(), 32);
  EXPECT_TRUE(a.allFinite());
}

TEST(ReferenceEncoder, FullLayerLimitEqualsUnrestricted) {
  auto enc = pf::reference_encoder(32, 7, 6);
  EXPECT_TRUE(enc->encode(kTexts).isApprox(enc->encode(kTexts, 6), 1e-12));
  EXPECT_FALSE(enc->encode(kTexts, 2).isApprox(enc->encode(kTexts, 6), 1e-6));
}

TEST(ReferenceEncoder, BatchPartitionDoesNotMatter) {
  auto enc = pf::reference_encoder(16, 3, 3);
  const auto whole = enc->encode(kTexts, 3);
  for (std::size_t i = 0; i < kTexts.size(); ++i) {
    const auto row = enc->encode(std::span(kTexts).subspan(i, 1), 3);
    EXPECT_LT((row.row(0) - whole.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(ReferenceEncoder, LayerLimitOutOfRange) {
  auto enc = pf::reference_encoder(16, 3, 3);
  EXPECT_THROW((void)enc->encode(kTexts, 0), pf::ConfigError);
  EXPECT_THROW((void)enc->encode(kTexts, 4), pf::ConfigError);
}

TEST(ReferenceEncoder, SameDimAndSeedGiveSameVectors) {
  EXPECT_EQ(pf::reference_encoder(16, 9)->encode(kTexts), pf::reference_encoder(16, 9)->encode(kTexts));
  EXPECT_NE(pf::reference_encoder(16, 9)->encode(kTexts), pf::reference_encoder(16, 10)->encode(kTexts));
  EXPECT_THROW(pf::reference_encoder(4, 1), pf::PreconditionError);
}

TEST(ReferenceEncoder, AnagramsEncodeDifferently) {
  auto enc = pf::reference_encoder(32, 1);
  const std::vector<std::string> pair{"listen", "silent"};
  const auto m = enc->encode(pair);
  EXPECT_GT((m.row(0) - m.row(1)).norm(), 1e-6);
}

TEST(ReferenceEncoder, TruncatedEncodingNeverReadsDeeperBlocks) {
  auto enc = pf::reference_encoder(16, 2, 12);
  std::set<int> touched;
  enc->set_layer_observer([&touched](int l) { touched.insert(l); });
  (void)enc->encode(kTexts, 5);
  EXPECT_EQ(touched, (std::set<int>{1, 2, 3, 4, 5}));
}

TEST(ReferenceEncoder, GradientStepChangesOutput) {
  auto enc = pf::reference_encoder(16, 2, 3);
  const auto before = enc->encode(kTexts);
  pf::Matrix grad = pf::Matrix::Ones(before.rows(), before.cols());
  enc->apply_gradient(kTexts, grad, 1e-2, 3);
  EXPECT_EQ(enc->step(), 1);
  EXPECT_GT((enc->encode(kTexts) - before).cwiseAbs().maxCoeff(), 0.0);
}

// Backprop checked against central finite differences of L = <G, encode(x)>.
TEST(ReferenceEncoder, GradientMatchesFiniteDifferences) {
  pf::ReferenceEncoderConfig cfg;
  cfg.dim = 8;
  cfg.layers = 3;
  cfg.buckets = 64;
  cfg.seed = 4;
  pf::ReferenceEncoder enc(cfg);
  std::mt19937 rng(1);
  std::normal_distribution<double> normal;
  pf::Matrix g(static_cast<Eigen::Index>(kTexts.size()), cfg.dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  auto loss = [&](const pf::ReferenceEncoder& e) { return (e.encode(kTexts, 3).array() * g.array()).sum(); };

  const pf::Vector w0 = enc.flat_weights();
  const double lr = 1.0;
  auto stepped = enc;
  stepped.apply_gradient(kTexts, g, lr, 3);
  const pf::Vector grad = (w0 - stepped.flat_weights()) / lr;

  const double h = 1e-6;
  std::uniform_int_distribution<Eigen::Index> pick(0, w0.size() - 1);
  int checked = 0;
  for (int t = 0; t < 400 && checked < 40; ++t) {
    const auto i = pick(rng);
    pf::Vector wp = w0, wm = w0;
    wp(i) += h;
    wm(i) -= h;
    auto ep = enc, em = enc;
    ep.set_flat_weights(wp);
    em.set_flat_weights(wm);
    const double fd = (loss(ep) - loss(em)) / (2 * h);
    if (std::abs(fd) < 1e-9 && std::abs(grad(i)) < 1e-9) continue;
    ++checked;
    EXPECT_NEAR(grad(i), fd, 1e-5 * std::max(1.0, std::abs(fd))) << "weight " << i;
  }
  EXPECT_GE(checked, 20);
}

TEST(ReferenceEncoder, CheckpointRoundTrip) {
  auto enc = pf::reference_encoder(16, 5, 2);
  pf::Matrix grad = pf::Matrix::Ones(static_cast<Eigen::Index>(kTexts.size()), 16);
  enc->apply_gradient(kTexts, grad, 1e-2, 2);
  const auto dir = temp_dir("ckpt");
  enc->save_checkpoint(dir);
  const auto info = pf::read_checkpoint_info(dir);
  EXPECT_EQ(info.identity, enc->identity());
  EXPECT_EQ(info.embedding_dim, 16);
  EXPECT_EQ(info.max_layers, 2);
  EXPECT_EQ(info.step, 1);

  auto fresh = pf::reference_encoder(16, 5, 2);
  fresh->load_checkpoint(dir);
  EXPECT_EQ(fresh->identity(), enc->identity());
  EXPECT_EQ(fresh->encode(kTexts), enc->encode(kTexts));

  auto other = pf::reference_encoder(16, 6, 2);
  EXPECT_THROW(other->load_checkpoint(dir), pf::ConfigError);
  fs::remove_all(dir);
}

TEST(MakeEncoder, ParsesReferenceSpec) {
  auto enc = pf::make_encoder("reference:dim=128,seed=7");
  EXPECT_EQ(enc->embedding_dim(), 128);
  EXPECT_EQ(enc->max_layers(), 12);
  EXPECT_EQ(enc->identity(), "reference:dim=128,seed=7,layers=12,buckets=2048@0");
  EXPECT_THROW(pf::make_encoder("bert-base-uncased"), pf::ConfigError);
  EXPECT_THROW(pf::make_encoder("reference:dim=abc"), pf::ConfigError);
  EXPECT_THROW(pf::make_encoder("reference:size=3"), pf::ConfigError);
}

namespace {

pf::TableMLM one_hot_stub() {
  pf::TableRow a{{{"alpha", 0.0}}, -1e30};
  pf::TableRow b{{{"beta", 0.0}}, -1e30};
  pf::TableRow c{{{"gamma", 0.0}}, -1e30};
  return pf::TableMLM("stub", {"alpha", "beta", "gamma", "."}, "<mask>",
                      {{1, a, {}}, {2, b, {}}, {3, c, {}}});
}

}  // namespace

TEST(MaskLogprobs, OneHotRowsExponentiateToOneHot) {
  const auto stub = one_hot_stub();
  const auto s = pf::mask_logprobs(stub, "x [MASK] [MASK] [MASK] .");
  ASSERT_EQ(s.log_probs.rows(), 3);
  EXPECT_EQ(s.positions, (std::vector<std::size_t>{1, 2, 3}));
  const pf::Matrix p = s.log_probs.array().exp();
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(p(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(p.sum(), 3.0);
}

TEST(MaskLogprobs, RowsSumToOne) {
  pf::TableMLM stub("s", {"a", "b", "c"}, "[MASK]", {{-2, {{{"a", 1.5}, {"b", -0.3}}, 0.2}, {}}});
  const auto s = pf::mask_logprobs(stub, "q [MASK] [MASK] .");
  for (Eigen::Index r = 0; r < s.log_probs.rows(); ++r)
    EXPECT_NEAR(s.log_probs.row(r).array().exp().sum(), 1.0, 1e-4);
}

TEST(MaskLogprobs, PartiallyFilledQueryIsConditioned) {
  pf::TableRow base{{{"x", 1.0}}, 0.0};
  pf::TableRow given{{{"y", 5.0}}, 0.0};
  pf::TableMLM stub("s", {"x", "y", "z"}, "[MASK]", {{1, base, {}}, {2, base, {{1, "z", given}}}});
  const auto open = pf::mask_logprobs(stub, "q [MASK] [MASK]");
  EXPECT_EQ(open.log_probs.rows(), 2);
  const auto filled = pf::mask_logprobs(stub, "q z [MASK]");
  ASSERT_EQ(filled.log_probs.rows(), 1);
  Eigen::Index best;
  filled.log_probs.row(0).maxCoeff(&best);
  EXPECT_EQ(best, 1);  // "y"
}

TEST(MaskLogprobs, NoMaskIsPreconditionError) {
  const auto stub = one_hot_stub();
  EXPECT_THROW(pf::mask_logprobs(stub, "no masks here"), pf::PreconditionError);
}

TEST(TableMLM, LoadsBundledStub) {
  const auto stub = pf::TableMLM::load(fs::path(PROBEFORGE_DATA_DIR) / "fixtures" / "stub_mlm.json");
  EXPECT_FALSE(stub.vocab().empty());
  const auto s = pf::mask_logprobs(stub, "Zorvax may be able to prevent [MASK] .");
  EXPECT_NEAR(s.log_probs.row(0).array().exp().sum(), 1.0, 1e-4);
}
