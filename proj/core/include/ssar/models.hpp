#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssar/layers.hpp"
#include "ssar/tensor.hpp"

namespace ssar {

enum class ModelKind { SliceSeq, Volumetric3D };

std::string to_string(ModelKind kind);
/// Accepts "sliceseq" and "vol3d".
ModelKind parse_model_kind(const std::string& text);

/// ResNet18-style trunk: stem convolution, optional 3x3 stride-2 max-pool,
/// then one stage per width with `blocks_per_stage` BasicBlocks. Every stage
/// after the first halves the resolution in its first block.
struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  bool stem_maxpool = true;
  std::vector<std::size_t> widths = {64, 128, 256, 512};
  std::size_t blocks_per_stage = 2;

  std::size_t feature_width() const { return widths.back(); }
  void validate() const;
};

struct SliceSeqConfig {
  BackboneConfig backbone;
  std::size_t seq_len = 36;
  std::size_t slice_height = 50;
  std::size_t slice_width = 50;
  std::size_t pool_k = 3;
  std::size_t hidden = 64;

  std::size_t pooled_len() const { return seq_len / pool_k; }
  std::size_t regressor_width() const { return pooled_len() * 2 * hidden; }
  void validate() const;
};

struct Vol3DConfig {
  BackboneConfig backbone{1, 64, 3, 2, true, {64, 128, 256, 512}, 2};
  void validate() const;
};

/// Common surface of both age regressors. Parameters are exposed as aliasing
/// handles so an optimizer can update them in place.
template <typename T>
class AgeModel {
 public:
  virtual ~AgeModel() = default;

  virtual ModelKind kind() const = 0;
  /// Throws ShapeError naming expected vs actual extents.
  virtual void validate_input(const Shape& shape) const = 0;
  /// Predicted age as a [1] tensor.
  virtual Tensor<T> forward(const Tensor<T>& input) const = 0;
  virtual ParamList<T> parameters() const = 0;
  /// Architecture as key=value pairs; enough to rebuild the model.
  virtual std::map<std::string, std::string> descriptor() const = 0;
};

template <typename T>
std::size_t param_count(const AgeModel<T>& model);

/// Residual trunk shared by both models, 2D or 3D.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::size_t spatial_rank, std::mt19937_64& rng);

  /// [N, C, H, W] (2D) or [C, D, H, W] (3D) in; globally averaged features
  /// [N, F] or [F] out.
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  std::size_t spatial_rank_ = 2;
  Tensor<T> stem_;
  std::vector<BasicBlock<T>> blocks_;
};

/// 2D residual backbone applied per slice, average pooling over groups of
/// adjacent slices, bidirectional LSTM, linear regressor on the concatenated
/// LSTM outputs.
template <typename T>
class SliceSeqAgeNet final : public AgeModel<T> {
 public:
  SliceSeqAgeNet(const SliceSeqConfig& config, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::SliceSeq; }
  void validate_input(const Shape& shape) const override;
  /// input: [seq_len, 1, H, W]
  Tensor<T> forward(const Tensor<T>& input) const override;
  ParamList<T> parameters() const override;
  std::map<std::string, std::string> descriptor() const override;

  /// Per-slice features [n, F].
  Tensor<T> backbone_features(const Tensor<T>& input) const;

  const SliceSeqConfig& config() const { return config_; }
  const LstmParams<T>& lstm_forward() const { return lstm_fwd_; }
  const LstmParams<T>& lstm_backward() const { return lstm_bwd_; }
  Tensor<T>& regressor_weight() { return reg_w_; }
  Tensor<T>& regressor_bias() { return reg_b_; }

 private:
  SliceSeqConfig config_;
  Backbone<T> backbone_;
  LstmParams<T> lstm_fwd_;
  LstmParams<T> lstm_bwd_;
  Tensor<T> reg_w_;
  Tensor<T> reg_b_;
};

/// 3D residual network with global average pooling and a scalar head.
template <typename T>
class Volumetric3DNet final : public AgeModel<T> {
 public:
  Volumetric3DNet(const Vol3DConfig& config, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::Volumetric3D; }
  void validate_input(const Shape& shape) const override;
  /// input: [1, D, H, W]
  Tensor<T> forward(const Tensor<T>& input) const override;
  ParamList<T> parameters() const override;
  std::map<std::string, std::string> descriptor() const override;

  const Vol3DConfig& config() const { return config_; }
  Tensor<T>& head_weight() { return head_w_; }
  Tensor<T>& head_bias() { return head_b_; }

 private:
  Vol3DConfig config_;
  Backbone<T> backbone_;
  Tensor<T> head_w_;
  Tensor<T> head_b_;
};

/// Rebuilds a freshly initialized model from descriptor key=value pairs.
/// Unknown keys are ignored so callers may store extra metadata alongside.
template <typename T>
std::unique_ptr<AgeModel<T>> make_model(const std::map<std::string, std::string>& descriptor, std::uint64_t seed = 0);

extern template class Backbone<float>;
extern template class Backbone<double>;
extern template class SliceSeqAgeNet<float>;
extern template class SliceSeqAgeNet<double>;
extern template class Volumetric3DNet<float>;
extern template class Volumetric3DNet<double>;

}  // namespace ssar
