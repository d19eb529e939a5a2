#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "mini.hpp"
#include "oracles.hpp"
#include "ssar/errors.hpp"
#include "ssar/gradcheck.hpp"
#include "ssar/ops.hpp"
#include "ssar/phantom.hpp"
#include "ssar/training.hpp"
#include "ssar/weights_io.hpp"

using namespace ssar;
namespace fs = std::filesystem;

namespace {

Tensor<float> random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<float>(std::move(shape), std::move(v));
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ssar_models_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t find_count(const ParamList<float>& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p.tensor.numel();
  return 0;
}

}  // namespace

TEST(SliceSeq, ShapeTraceWithResNet18Widths) {
  SliceSeqConfig cfg;
  cfg.seq_len = 12;
  EXPECT_EQ(cfg.pooled_len(), 4u);
  EXPECT_EQ(cfg.regressor_width(), 512u);
  SliceSeqAgeNet<float> net(cfg, 1);
  EXPECT_EQ(net.regressor_weight().shape(), (Shape{1, 512}));
  auto input = random_input({12, 1, 50, 50}, 2);
  auto features = net.backbone_features(input);
  EXPECT_EQ(features.shape(), (Shape{12, 512}));
  auto y = net.forward(input);
  EXPECT_EQ(y.shape(), (Shape{1}));
  EXPECT_TRUE(std::isfinite(y.item()));
}

TEST(SliceSeq, SingleSliceGivesFeatureVector) {
  std::mt19937_64 rng(1);
  Backbone<float> bb(BackboneConfig{}, 2, rng);
  EXPECT_EQ(bb.forward(random_input({1, 1, 50, 50}, 3)).shape(), (Shape{1, 512}));
}

TEST(SliceSeq, ConstantHead) {
  SliceSeqAgeNet<float> net(mini::sliceseq(), 4);
  for (auto& v : net.regressor_weight().mutable_data()) v = 0.0f;
  net.regressor_bias().mutable_data()[0] = 3.25f;
  for (std::uint64_t s = 0; s < 3; ++s) EXPECT_EQ(net.forward(random_input({6, 1, 8, 8}, s)).item(), 3.25f);
}

TEST(SliceSeq, RejectsWrongInputShape) {
  SliceSeqAgeNet<float> net(mini::sliceseq(), 4);
  try {
    net.forward(random_input({5, 1, 8, 8}, 1));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("5"), std::string::npos) << msg;
  }
  EXPECT_THROW(net.forward(random_input({6, 1, 9, 8}, 1)), ShapeError);
}

TEST(SliceSeq, NonFiniteIntermediateNamesStage) {
  SliceSeqAgeNet<float> net(mini::sliceseq(), 4);
  for (auto& p : net.parameters()) {
    if (p.name == "backbone.stem.weight") {
      for (auto& v : p.tensor.mutable_data()) v = 3e37f;
    }
  }
  try {
    net.forward(Tensor<float>::full({6, 1, 8, 8}, 10.0f));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("backbone"), std::string::npos) << e.what();
  }
}

TEST(SliceSeq, OrderSensitiveButFeaturesPerSlice) {
  SliceSeqAgeNet<float> net(mini::sliceseq(), 5);
  auto input = random_input({6, 1, 8, 8}, 6);
  std::vector<Tensor<float>> rev;
  for (std::size_t i = 6; i-- > 0;) rev.push_back(select(input, i));
  auto reversed = stack(rev);
  EXPECT_GT(std::abs(net.forward(input).item() - net.forward(reversed).item()), 1e-6);

  auto f = net.backbone_features(input);
  auto fr = net.backbone_features(reversed);
  const std::size_t d = f.dim(1);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(f.data()[i * d + j], fr.data()[(5 - i) * d + j]);
}

TEST(Models, NormalizationInvariance) {
  PipelineConfig pipeline;
  pipeline.target_hw = {8, 8};
  pipeline.n_slices = 6;
  auto v = generate_phantom(2.0, 6.0, {10, 10, 9}, 0.1, 3);
  auto doubled = v;
  for (auto& x : doubled.voxels) x *= 2.0f;
  SliceSeqAgeNet<float> net(mini::sliceseq(), 7);
  const float a = predict(net, prepare_input(ModelKind::SliceSeq, v, pipeline));
  const float b = predict(net, prepare_input(ModelKind::SliceSeq, doubled, pipeline));
  EXPECT_NEAR(a, b, 1e-5);
  Volumetric3DNet<float> net3(mini::vol3d(), 7);
  EXPECT_NEAR(predict(net3, prepare_input(ModelKind::Volumetric3D, v, pipeline)),
              predict(net3, prepare_input(ModelKind::Volumetric3D, doubled, pipeline)), 1e-5);
}

TEST(Vol3D, ConstantHeadAndShapes) {
  Volumetric3DNet<float> net(mini::vol3d(), 1);
  for (auto& v : net.head_weight().mutable_data()) v = 0.0f;
  net.head_bias().mutable_data()[0] = -1.5f;
  EXPECT_EQ(net.forward(random_input({1, 5, 6, 7}, 1)).item(), -1.5f);
  EXPECT_THROW(net.forward(random_input({1, 2, 6, 7}, 1)), ShapeError);
  EXPECT_THROW(net.forward(random_input({2, 5, 6, 7}, 1)), ShapeError);
}

TEST(Vol3D, FullSizeInput) {
  Volumetric3DNet<float> net(Vol3DConfig{}, 2);
  auto y = net.forward(random_input({1, 12, 50, 50}, 4));
  EXPECT_EQ(y.shape(), (Shape{1}));
  EXPECT_TRUE(std::isfinite(y.item()));
}

TEST(ParamCount, MatchesLayerTable) {
  SliceSeqConfig cfg;  // seq_len 36, pool 3, hidden 64
  SliceSeqAgeNet<float> net(cfg, 0);
  const auto params = net.parameters();
  EXPECT_EQ(find_count(params, "backbone.stem.weight"), 3136u);

  // Hand-enumerated per-layer counts of the 2D trunk.
  const std::size_t trunk = 3136                          // stem 64x1x7x7
                            + 4 * 36864                   // layer1: four 64x64x3x3
                            + 73728 + 147456 + 8192       // layer2.0: conv1, conv2, projection
                            + 2 * 147456                  // layer2.1
                            + 294912 + 589824 + 32768     // layer3.0
                            + 2 * 589824                  // layer3.1
                            + 1179648 + 2359296 + 131072  // layer4.0
                            + 2 * 2359296;                // layer4.1
  const std::size_t lstm = 2 * 4 * (64 * 512 + 64 * 64 + 64);
  const std::size_t regressor = 12 * 128 + 1;
  EXPECT_EQ(param_count(net), trunk + lstm + regressor);

  SliceSeqConfig twelve;
  twelve.seq_len = 12;
  SliceSeqAgeNet<float> small(twelve, 0);
  const auto p12 = small.parameters();
  EXPECT_EQ(find_count(p12, "regressor.weight") + find_count(p12, "regressor.bias"), 513u);

  Volumetric3DNet<float> v3(Vol3DConfig{}, 0);
  const std::size_t trunk3 = 64 * 27 + 4 * 64 * 64 * 27 + (128 * 64 * 27 + 128 * 128 * 27 + 128 * 64) +
                             2 * 128 * 128 * 27 + (256 * 128 * 27 + 256 * 256 * 27 + 256 * 128) +
                             2 * 256 * 256 * 27 + (512 * 256 * 27 + 512 * 512 * 27 + 512 * 256) + 2 * 512 * 512 * 27;
  EXPECT_EQ(param_count(v3), trunk3 + 513);
}

TEST(Weights, SaveLoadSaveIsByteIdentical) {
  const auto dir = temp_dir("roundtrip");
  SliceSeqAgeNet<float> net(mini::sliceseq(), 9);
  save_weights(net, dir / "a.ssar", {{"data.n_slices", "6"}});
  auto loaded = load_weights(dir / "a.ssar");
  EXPECT_EQ(loaded.descriptor.at("data.n_slices"), "6");
  save_weights(*loaded.model, dir / "b.ssar", {{"data.n_slices", "6"}});
  EXPECT_EQ(slurp(dir / "a.ssar"), slurp(dir / "b.ssar"));
  EXPECT_EQ(param_count(*loaded.model), param_count(net));

  auto input = random_input({6, 1, 8, 8}, 10);
  EXPECT_EQ(predict(net, input), predict(*loaded.model, input));

  Volumetric3DNet<float> net3(mini::vol3d(), 9);
  save_weights(net3, dir / "c.ssar");
  auto loaded3 = load_weights(dir / "c.ssar");
  EXPECT_EQ(loaded3.model->kind(), ModelKind::Volumetric3D);
  auto vin = random_input({1, 6, 8, 8}, 11);
  EXPECT_EQ(predict(net3, vin), predict(*loaded3.model, vin));
}

TEST(Weights, ArchitectureMismatchListsLayers) {
  const auto dir = temp_dir("mismatch");
  SliceSeqAgeNet<float> net(mini::sliceseq(6), 1);
  save_weights(net, dir / "w.ssar");
  SliceSeqAgeNet<float> other(mini::sliceseq(9), 1);
  try {
    load_weights_into(other, dir / "w.ssar");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("architecture mismatch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("regressor.weight"), std::string::npos) << msg;
  }
}

TEST(Weights, RejectsCorruptFiles) {
  const auto dir = temp_dir("corrupt");
  {
    std::ofstream(dir / "bad.ssar") << "NOTSSAR";
  }
  EXPECT_THROW(load_weights(dir / "bad.ssar"), DataError);
  SliceSeqAgeNet<float> net(mini::sliceseq(), 1);
  save_weights(net, dir / "w.ssar");
  auto bytes = slurp(dir / "w.ssar");
  {
    std::ofstream out(dir / "trunc.ssar", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 3);
  }
  EXPECT_THROW(load_weights(dir / "trunc.ssar"), DataError);
  EXPECT_THROW(load_weights(dir / "missing.ssar"), DataError);
}

TEST(Models, DescriptorRebuildsArchitecture) {
  SliceSeqAgeNet<float> net(mini::sliceseq(), 3);
  auto rebuilt = make_model<float>(net.descriptor(), 3);
  EXPECT_EQ(rebuilt->descriptor(), net.descriptor());
  EXPECT_EQ(param_count(*rebuilt), param_count(net));
  auto d = net.descriptor();
  d["model"] = "transformer";
  EXPECT_THROW(make_model<float>(d), ConfigError);
}

TEST(Models, GradientSuitePasses) {
  GradCheckOptions opts;
  for (const auto& row : run_gradcheck_suite(GradCheckScope::Model, 5, opts)) {
    EXPECT_TRUE(row.passed) << row.name << " " << row.max_rel_error;
  }
}
