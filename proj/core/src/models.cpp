#include "ssar/models.hpp"

#include <numeric>
#include <sstream>

#include "ssar/errors.hpp"
#include "ssar/ops.hpp"

namespace ssar {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::SliceSeq ? "sliceseq" : "vol3d";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "sliceseq") return ModelKind::SliceSeq;
  if (text == "vol3d") return ModelKind::Volumetric3D;
  throw ConfigError("unknown model kind '" + text + "' (expected sliceseq or vol3d)");
}

void BackboneConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0 || stem_kernel == 0 || stem_stride == 0) {
    throw ConfigError("backbone: channel counts, stem kernel and stem stride must be positive");
  }
  if (widths.empty()) throw ConfigError("backbone: at least one stage width is required");
  for (auto w : widths) {
    if (w == 0) throw ConfigError("backbone: stage widths must be positive");
  }
  if (blocks_per_stage == 0) throw ConfigError("backbone: blocks_per_stage must be positive");
}

void SliceSeqConfig::validate() const {
  backbone.validate();
  if (pool_k == 0) throw ConfigError("sliceseq: pool_k must be positive");
  if (hidden == 0) throw ConfigError("sliceseq: hidden size must be positive");
  if (seq_len < pool_k) {
    throw ConfigError("sliceseq: seq_len " + std::to_string(seq_len) + " shorter than pool_k " +
                      std::to_string(pool_k));
  }
  if (slice_height == 0 || slice_width == 0) throw ConfigError("sliceseq: slice size must be positive");
}

void Vol3DConfig::validate() const { backbone.validate(); }

template <typename T>
std::size_t param_count(const AgeModel<T>& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.numel();
  return n;
}

namespace {

template <typename F>
auto run_stage(const char* stage, F&& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("stage ") + stage + ": " + e.what());
  }
}

std::string join(const std::vector<std::size_t>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

void describe_backbone(const BackboneConfig& c, std::map<std::string, std::string>& d) {
  d["backbone.in_channels"] = std::to_string(c.in_channels);
  d["backbone.stem_channels"] = std::to_string(c.stem_channels);
  d["backbone.stem_kernel"] = std::to_string(c.stem_kernel);
  d["backbone.stem_stride"] = std::to_string(c.stem_stride);
  d["backbone.stem_maxpool"] = c.stem_maxpool ? "1" : "0";
  d["backbone.widths"] = join(c.widths);
  d["backbone.blocks_per_stage"] = std::to_string(c.blocks_per_stage);
}

const std::string& require_key(const std::map<std::string, std::string>& d, const std::string& key) {
  auto it = d.find(key);
  if (it == d.end()) throw ConfigError("architecture descriptor lacks '" + key + "'");
  return it->second;
}

std::size_t parse_size(const std::map<std::string, std::string>& d, const std::string& key) {
  const auto& text = require_key(d, key);
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("descriptor key '" + key + "' is not a non-negative integer: '" + text + "'");
  }
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw ConfigError("descriptor key '" + key + "' has a malformed entry '" + item + "'");
    }
  }
  return out;
}

BackboneConfig read_backbone(const std::map<std::string, std::string>& d) {
  BackboneConfig c;
  c.in_channels = parse_size(d, "backbone.in_channels");
  c.stem_channels = parse_size(d, "backbone.stem_channels");
  c.stem_kernel = parse_size(d, "backbone.stem_kernel");
  c.stem_stride = parse_size(d, "backbone.stem_stride");
  c.stem_maxpool = parse_size(d, "backbone.stem_maxpool") != 0;
  c.widths = parse_sizes("backbone.widths", require_key(d, "backbone.widths"));
  c.blocks_per_stage = parse_size(d, "backbone.blocks_per_stage");
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::size_t spatial_rank, std::mt19937_64& rng)
    : config_(config), spatial_rank_(spatial_rank) {
  config_.validate();
  Shape stem_shape{config_.stem_channels, config_.in_channels};
  std::size_t fan_in = config_.in_channels;
  for (std::size_t d = 0; d < spatial_rank_; ++d) {
    stem_shape.push_back(config_.stem_kernel);
    fan_in *= config_.stem_kernel;
  }
  stem_ = uniform_init<T>(stem_shape, fan_in, rng);
  std::size_t channels = config_.stem_channels;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      blocks_.push_back(BasicBlock<T>::init(channels, config_.widths[s], stride, spatial_rank_, rng));
      channels = config_.widths[s];
    }
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x) const {
  const T eps = static_cast<T>(kInstanceNormEps);
  Tensor<T> y = spatial_conv(x, stem_, spatial_rank_, config_.stem_stride, config_.stem_kernel / 2);
  y = relu(instance_norm(y, eps, spatial_rank_));
  if (config_.stem_maxpool) {
    y = spatial_rank_ == 3 ? max_pool3d(y, 3, 2, 1) : max_pool2d(y, 3, 2, 1);
  }
  for (const auto& block : blocks_) y = basic_block_forward(y, block, eps);
  std::vector<std::size_t> axes(spatial_rank_);
  std::iota(axes.begin(), axes.end(), y.rank() - spatial_rank_);
  return reduce(ReduceOp::Mean, y, axes);
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "stem.weight", stem_});
  std::size_t i = 0;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b, ++i) {
      blocks_[i].collect(prefix + "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".", out);
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
SliceSeqAgeNet<T>::SliceSeqAgeNet(const SliceSeqConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = Backbone<T>(config_.backbone, 2, rng);
  const std::size_t features = config_.backbone.feature_width();
  lstm_fwd_ = LstmParams<T>::init(features, config_.hidden, rng);
  lstm_bwd_ = LstmParams<T>::init(features, config_.hidden, rng);
  const std::size_t width = config_.regressor_width();
  reg_w_ = uniform_init<T>({1, width}, width, rng);
  reg_b_ = Tensor<T>::zeros({1}, true);
}

template <typename T>
void SliceSeqAgeNet<T>::validate_input(const Shape& shape) const {
  const Shape expected{config_.seq_len, config_.backbone.in_channels, config_.slice_height, config_.slice_width};
  if (shape != expected) {
    throw ShapeError("slice sequence: expected " + to_string(expected) + ", got " + to_string(shape));
  }
}

template <typename T>
Tensor<T> SliceSeqAgeNet<T>::backbone_features(const Tensor<T>& input) const {
  validate_input(input.shape());
  return run_stage("backbone", [&] { return backbone_.forward(input); });
}

template <typename T>
Tensor<T> SliceSeqAgeNet<T>::forward(const Tensor<T>& input) const {
  Tensor<T> features = backbone_features(input);
  Tensor<T> pooled = run_stage("sequence pooling", [&] { return seq_avg_pool(features, config_.pool_k); });
  Tensor<T> context = run_stage("bilstm", [&] { return bilstm(pooled, lstm_fwd_, lstm_bwd_); });
  return run_stage("regressor", [&] {
    return linear(reshape(context, {context.numel()}), reg_w_, reg_b_);
  });
}

template <typename T>
ParamList<T> SliceSeqAgeNet<T>::parameters() const {
  ParamList<T> out;
  backbone_.collect("backbone.", out);
  lstm_fwd_.collect("lstm.fwd.", out);
  lstm_bwd_.collect("lstm.bwd.", out);
  out.push_back({"regressor.weight", reg_w_});
  out.push_back({"regressor.bias", reg_b_});
  return out;
}

template <typename T>
std::map<std::string, std::string> SliceSeqAgeNet<T>::descriptor() const {
  std::map<std::string, std::string> d;
  d["model"] = "sliceseq";
  describe_backbone(config_.backbone, d);
  d["sliceseq.seq_len"] = std::to_string(config_.seq_len);
  d["sliceseq.slice_height"] = std::to_string(config_.slice_height);
  d["sliceseq.slice_width"] = std::to_string(config_.slice_width);
  d["sliceseq.pool_k"] = std::to_string(config_.pool_k);
  d["sliceseq.hidden"] = std::to_string(config_.hidden);
  return d;
}

// ---------------------------------------------------------------------------

template <typename T>
Volumetric3DNet<T>::Volumetric3DNet(const Vol3DConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = Backbone<T>(config_.backbone, 3, rng);
  const std::size_t features = config_.backbone.feature_width();
  head_w_ = uniform_init<T>({1, features}, features, rng);
  head_b_ = Tensor<T>::zeros({1}, true);
}

template <typename T>
void Volumetric3DNet<T>::validate_input(const Shape& shape) const {
  const auto& bb = config_.backbone;
  if (shape.size() != 4 || shape[0] != bb.in_channels) {
    throw ShapeError("volume: expected [" + std::to_string(bb.in_channels) + ", D, H, W], got " + to_string(shape));
  }
  for (std::size_t d = 1; d < 4; ++d) {
    if (shape[d] < bb.stem_kernel) {
      throw ShapeError("volume " + to_string(shape) + " too small for stem kernel " + std::to_string(bb.stem_kernel));
    }
  }
}

template <typename T>
Tensor<T> Volumetric3DNet<T>::forward(const Tensor<T>& input) const {
  validate_input(input.shape());
  Tensor<T> features = run_stage("backbone", [&] { return backbone_.forward(input); });
  return run_stage("regressor", [&] { return linear(features, head_w_, head_b_); });
}

template <typename T>
ParamList<T> Volumetric3DNet<T>::parameters() const {
  ParamList<T> out;
  backbone_.collect("backbone.", out);
  out.push_back({"head.weight", head_w_});
  out.push_back({"head.bias", head_b_});
  return out;
}

template <typename T>
std::map<std::string, std::string> Volumetric3DNet<T>::descriptor() const {
  std::map<std::string, std::string> d;
  d["model"] = "vol3d";
  describe_backbone(config_.backbone, d);
  return d;
}

template <typename T>
std::unique_ptr<AgeModel<T>> make_model(const std::map<std::string, std::string>& descriptor, std::uint64_t seed) {
  const ModelKind kind = parse_model_kind(require_key(descriptor, "model"));
  if (kind == ModelKind::Volumetric3D) {
    Vol3DConfig c;
    c.backbone = read_backbone(descriptor);
    return std::make_unique<Volumetric3DNet<T>>(c, seed);
  }
  SliceSeqConfig c;
  c.backbone = read_backbone(descriptor);
  c.seq_len = parse_size(descriptor, "sliceseq.seq_len");
  c.slice_height = parse_size(descriptor, "sliceseq.slice_height");
  c.slice_width = parse_size(descriptor, "sliceseq.slice_width");
  c.pool_k = parse_size(descriptor, "sliceseq.pool_k");
  c.hidden = parse_size(descriptor, "sliceseq.hidden");
  return std::make_unique<SliceSeqAgeNet<T>>(c, seed);
}

template class Backbone<float>;
template class Backbone<double>;
template class SliceSeqAgeNet<float>;
template class SliceSeqAgeNet<double>;
template class Volumetric3DNet<float>;
template class Volumetric3DNet<double>;
template std::size_t param_count<float>(const AgeModel<float>&);
template std::size_t param_count<double>(const AgeModel<double>&);
template std::unique_ptr<AgeModel<float>> make_model<float>(const std::map<std::string, std::string>&, std::uint64_t);
template std::unique_ptr<AgeModel<double>> make_model<double>(const std::map<std::string, std::string>&,
                                                              std::uint64_t);

}  // namespace ssar
