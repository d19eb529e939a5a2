#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ssar/manifest.hpp"
#include "ssar/models.hpp"
#include "ssar/tensor.hpp"
#include "ssar/volume.hpp"

namespace ssar {

/// mean(|pred - target|) over a [N] prediction tensor; subgradient 0 at ties.
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, std::span<const T> target);

struct TrainConfig {
  double lr0 = 1e-4;
  /// 0 disables the step schedule.
  std::size_t halve_every = 15;
  std::size_t epochs = 60;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_every = 15;

  void validate() const;
};

/// lr0 * 0.5^floor(epoch / halve_every), epochs counted from 0.
double lr_at(std::size_t epoch, const TrainConfig& config);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamList<T>& params);
};

/// One bias-corrected Adam update of every parameter, then clears the grads.
/// A parameter without a gradient is treated as having a zero gradient.
/// Throws NumericalError naming the parameter on a non-finite gradient or
/// update.
template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

/// One preprocessed subject ready for a model.
struct Sample {
  std::string subject_id;
  double age_years = 0.0;
  Tensor<float> input;
};

/// normalize -> slice_and_resize; [n, 1, H, W] for the slice model and the
/// same grid as a single-channel volume [1, n, H, W] for the 3D model.
Tensor<float> prepare_input(ModelKind kind, const Volume& volume, const PipelineConfig& pipeline);

std::vector<Sample> load_samples(const Manifest& manifest, Split split, ModelKind kind,
                                 const PipelineConfig& pipeline);

/// Predicted age with graph recording disabled.
float predict(const AgeModel<float>& model, const Tensor<float>& input);

/// Mean absolute error of `model` over `samples`; NaN for an empty set.
double evaluate_mae(const AgeModel<float>& model, const std::vector<Sample>& samples);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_mae = 0.0;
  double test_mae = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainOutputs {
  /// When non-empty: train_log.csv, ckpt_epoch{N}.ssar, best.ssar, final.ssar.
  std::filesystem::path dir;
  /// Extra descriptor entries stored in every checkpoint.
  std::map<std::string, std::string> metadata;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  /// Epoch with the lowest test MAE (train MAE when there is no test split).
  std::size_t best_epoch = 0;
  double best_mae = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_params;
};

/// Epochs x training subjects, reshuffled every epoch from (seed, epoch).
/// Gradients of batch_size consecutive samples are accumulated before each
/// Adam step. The model is left at its final-epoch parameters.
TrainResult train(AgeModel<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                  const TrainConfig& config, const TrainOutputs& outputs = {});

TrainResult train(AgeModel<float>& model, const Manifest& manifest, const PipelineConfig& pipeline,
                  const TrainConfig& config, const TrainOutputs& outputs = {});

/// `epoch,lr,train_mae,test_mae,seconds` header plus one row per entry.
std::string format_train_log(const std::vector<EpochLog>& log);

/// Copies parameter values; restore_params writes them back.
std::vector<std::vector<float>> snapshot_params(const AgeModel<float>& model);
void restore_params(AgeModel<float>& model, const std::vector<std::vector<float>>& values);

}  // namespace ssar
