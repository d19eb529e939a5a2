#include "ssar/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "autograd_detail.hpp"
#include "ssar/errors.hpp"
#include "ssar/ops.hpp"
#include "ssar/text.hpp"
#include "ssar/weights_io.hpp"

namespace ssar {

template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, std::span<const T> target) {
  if (pred.numel() == 0 || target.empty()) throw ShapeError("mae_loss: empty input");
  if (pred.rank() != 1 || pred.numel() != target.size()) {
    throw ShapeError("mae_loss: predictions " + to_string(pred.shape()) + " vs " + std::to_string(target.size()) +
                     " targets");
  }
  const std::size_t n = target.size();
  auto p = pred.data();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(p[i] - target[i]);
  const T loss = total / static_cast<T>(n);
  std::vector<T> signs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = p[i] - target[i];
    signs[i] = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
  }
  auto pi = pred.impl();
  return detail::record<T>(Shape{}, std::vector<T>{loss}, "mae_loss", {pred},
                           [pi, signs = std::move(signs)](std::span<const T>, std::span<const T> g) {
                             if (T* gp = detail::grad_target(pi)) {
                               const T factor = g[0] / static_cast<T>(signs.size());
                               for (std::size_t i = 0; i < signs.size(); ++i) gp[i] += signs[i] * factor;
                             }
                           });
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must lie in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (config.halve_every == 0) return config.lr0;
  return std::ldexp(config.lr0, -static_cast<int>(epoch / config.halve_every));
}

template <typename T>
AdamState<T> AdamState<T>::for_params(const ParamList<T>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), T(0));
    s.v.emplace_back(p.tensor.numel(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, double lr, double beta1, double beta2, double eps) {
  if (state.m.size() != params.size()) throw ConfigError("Adam state does not match the parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].tensor.has_grad()) {
      for (T g : params[k].tensor.grad()) {
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + params[k].name);
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(beta1, t);
  const double correction2 = 1.0 - std::pow(beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> tensor = params[k].tensor;
    auto values = tensor.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != values.size()) throw ConfigError("Adam state shape differs for " + params[k].name);
    const bool has_grad = tensor.has_grad();
    std::span<const T> grad = has_grad ? tensor.grad() : std::span<const T>();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      const double mi = beta1 * m[i] + (1.0 - beta1) * g;
      const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      values[i] = static_cast<T>(values[i] - lr * m_hat / (std::sqrt(v_hat) + eps));
      if (!std::isfinite(values[i])) throw NumericalError("non-finite value after update of " + params[k].name);
    }
    tensor.zero_grad();
  }
}

Tensor<float> prepare_input(ModelKind kind, const Volume& volume, const PipelineConfig& pipeline) {
  pipeline.validate();
  const Volume normalized = normalize(volume, pipeline.normalize_by);
  SliceSequence seq = slice_and_resize(normalized, pipeline.axis, pipeline.target_hw, pipeline.n_slices);
  if (kind == ModelKind::Volumetric3D) {
    return Tensor<float>({1, seq.count, seq.height, seq.width}, std::move(seq.pixels));
  }
  return seq.to_tensor<float>();
}

std::vector<Sample> load_samples(const Manifest& manifest, Split split, ModelKind kind,
                                 const PipelineConfig& pipeline) {
  std::vector<Sample> out;
  for (const auto& row : manifest.select(split)) {
    Volume v = read_volume(manifest.resolve(row));
    v.age_years = row.age_years;
    out.push_back({row.subject_id, row.age_years, prepare_input(kind, v, pipeline)});
  }
  return out;
}

float predict(const AgeModel<float>& model, const Tensor<float>& input) {
  NoGradGuard no_grad;
  return model.forward(input).item();
}

double evaluate_mae(const AgeModel<float>& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& s : samples) total += std::abs(static_cast<double>(predict(model, s.input)) - s.age_years);
  return total / static_cast<double>(samples.size());
}

std::vector<std::vector<float>> snapshot_params(const AgeModel<float>& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore_params(AgeModel<float>& model, const std::vector<std::vector<float>>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ConfigError("parameter snapshot does not match the model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor.mutable_data();
    if (dst.size() != values[k].size()) throw ConfigError("parameter snapshot differs for " + params[k].name);
    std::copy(values[k].begin(), values[k].end(), dst.begin());
  }
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,train_mae,test_mae,seconds\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + format_shortest(e.lr) + "," + format_shortest(e.train_mae) + "," +
           (std::isnan(e.test_mae) ? std::string() : format_shortest(e.test_mae)) + "," + format_fixed(e.seconds, 3) +
           "\n";
  }
  return out;
}

TrainResult train(AgeModel<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                  const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training requires at least one train-split subject");
  try {
    model.validate_input(train_set.front().input.shape());
    if (!test_set.empty()) model.validate_input(test_set.front().input.shape());
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("data/model mismatch: ") + e.what());
  }

  const bool write_files = !outputs.dir.empty();
  if (write_files) std::filesystem::create_directories(outputs.dir);

  const ParamList<float> params = model.parameters();
  auto adam = AdamState<float>::for_params(params);
  for (auto p : params) p.tensor.zero_grad();

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, config);

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Sample& s = train_set[order[i]];
      const float target = static_cast<float>(s.age_years);
      Tensor<float> loss = mae_loss(model.forward(s.input), std::span<const float>(&target, 1));
      total += loss.item();
      if (config.batch_size > 1) loss = scale(loss, 1.0f / static_cast<float>(config.batch_size));
      loss.backward();
      if ((i + 1) % config.batch_size == 0 || i + 1 == order.size()) {
        adam_step(params, adam, lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
      }
    }

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.lr = lr;
    entry.train_mae = total / static_cast<double>(order.size());
    entry.test_mae = evaluate_mae(model, test_set);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);

    const double score = test_set.empty() ? entry.train_mae : entry.test_mae;
    if (score < result.best_mae) {
      result.best_mae = score;
      result.best_epoch = entry.epoch;
      result.best_params = snapshot_params(model);
    }

    if (write_files) {
      std::ofstream log_file(outputs.dir / "train_log.csv", std::ios::trunc);
      log_file << format_train_log(result.log);
      if (config.checkpoint_every > 0 && entry.epoch % config.checkpoint_every == 0) {
        save_weights(model, outputs.dir / ("ckpt_epoch" + std::to_string(entry.epoch) + ".ssar"), outputs.metadata);
      }
    }
    if (outputs.on_epoch) outputs.on_epoch(entry);
  }

  if (write_files) {
    save_weights(model, outputs.dir / "final.ssar", outputs.metadata);
    const auto final_values = snapshot_params(model);
    restore_params(model, result.best_params);
    save_weights(model, outputs.dir / "best.ssar", outputs.metadata);
    restore_params(model, final_values);
  }
  return result;
}

TrainResult train(AgeModel<float>& model, const Manifest& manifest, const PipelineConfig& pipeline,
                  const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  const auto train_rows = manifest.select(Split::Train);
  if (train_rows.empty()) throw ConfigError("manifest has no train split");
  // Fail fast on the first subject before loading the whole corpus.
  {
    Volume first = read_volume(manifest.resolve(train_rows.front()));
    try {
      model.validate_input(prepare_input(model.kind(), first, pipeline).shape());
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("data/model mismatch: ") + e.what());
    }
  }
  const auto train_set = load_samples(manifest, Split::Train, model.kind(), pipeline);
  const auto test_set = load_samples(manifest, Split::Test, model.kind(), pipeline);
  return train(model, train_set, test_set, config, outputs);
}

template Tensor<float> mae_loss<float>(const Tensor<float>&, std::span<const float>);
template Tensor<double> mae_loss<double>(const Tensor<double>&, std::span<const double>);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(const ParamList<float>&, AdamState<float>&, double, double, double, double);
template void adam_step<double>(const ParamList<double>&, AdamState<double>&, double, double, double, double);

}  // namespace ssar
