#include "commands.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "run_config.hpp"
#include "ssar/errors.hpp"
#include "ssar/gradcheck.hpp"
#include "ssar/manifest.hpp"
#include "ssar/metrics.hpp"
#include "ssar/parallel.hpp"
#include "ssar/phantom.hpp"
#include "ssar/text.hpp"
#include "ssar/weights_io.hpp"

namespace ssar::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::array<std::size_t, 3> parse_dims(const std::string& text) {
  std::array<std::size_t, 3> dims{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw ConfigError("--dims takes three extents X,Y,Z");
    try {
      dims[i++] = std::stoul(item);
    } catch (const std::exception&) {
      throw ConfigError("--dims: bad extent '" + item + "'");
    }
  }
  if (i != 3) throw ConfigError("--dims takes three extents X,Y,Z");
  return dims;
}

struct SynthOptions {
  fs::path out;
  std::size_t count = 0;
  double age_max = 6.0;
  std::string dims = "16,16,12";
  double noise = 0.1;
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  bool force = false;
};

int cmd_generate_synth(const SynthOptions& o, std::ostream& out) {
  if (o.count == 0) throw ConfigError("--count must be positive");
  if (!(o.age_max > 0.0)) throw ConfigError("--age-max must be positive");
  if (!(o.noise >= 0.0)) throw ConfigError("--noise must be non-negative");
  const auto dims = parse_dims(o.dims);
  if (fs::exists(o.out) && !fs::is_empty(o.out) && !o.force) {
    throw ConfigError("output directory " + o.out.string() + " exists and is not empty (use --force)");
  }
  fs::create_directories(o.out);

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> age_dist(0.0, o.age_max);
  Manifest manifest;
  manifest.base_dir = o.out;
  for (std::size_t i = 0; i < o.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    const double age = std::min(age_dist(rng), o.age_max);
    const std::uint64_t volume_seed = rng();
    const auto volume = generate_phantom(age, o.age_max, dims, o.noise, volume_seed, id);
    const std::string file = std::string(id) + ".raw";
    write_volume(volume, o.out / file);
    manifest.rows.push_back({id, file, age, "phantom", Split::Train});
  }
  if (o.count >= 2) manifest = split_manifest(manifest, o.train_frac, o.seed);
  write_manifest(manifest, o.out / "manifest.csv");
  out << "wrote " << o.count << " volumes and " << (o.out / "manifest.csv").string() << "\n";
  return 0;
}

struct TrainOptions {
  fs::path config;
  std::string model = "sliceseq";
  fs::path out;
  std::vector<std::string> overrides;
};

void apply_threads(const RunConfig& rc) { set_num_threads(rc.threads); }

int cmd_train(const TrainOptions& o, std::ostream& out) {
  const auto kind = parse_model_kind(o.model);
  Settings settings;
  if (!o.config.empty()) settings = read_settings_file(o.config);
  if (const char* env = std::getenv("SSAR_THREADS"); env && *env) settings["threads"] = env;
  apply_overrides(settings, o.overrides);
  const auto rc = resolve(settings, kind);
  apply_threads(rc);

  if (!fs::exists(rc.manifest)) throw DataError("manifest not found: " + rc.manifest.string());
  const auto manifest = read_manifest(rc.manifest);
  auto model = make_model<float>(rc.model_descriptor, rc.train.seed);

  fs::create_directories(o.out);
  nlohmann::ordered_json run;
  run["model"] = to_string(kind);
  nlohmann::ordered_json cfg;
  for (const auto& [key, value] : rc.resolved) cfg[key] = value;
  run["config"] = cfg;
  run["param_count"] = param_count(*model);

  TrainOutputs outputs;
  outputs.dir = o.out;
  outputs.metadata = pipeline_metadata(rc.pipeline);
  outputs.on_epoch = [&out](const EpochLog& e) {
    out << "epoch " << e.epoch << " lr " << format_shortest(e.lr) << " train_mae " << format_fixed(e.train_mae, 4);
    if (!std::isnan(e.test_mae)) out << " test_mae " << format_fixed(e.test_mae, 4);
    out << "\n" << std::flush;
  };
  const auto result = train(*model, manifest, rc.pipeline, rc.train, outputs);
  run["best_epoch"] = result.best_epoch;
  run["best_mae"] = result.best_mae;
  write_text(o.out / "run.json", run.dump(2) + "\n");
  out << "best epoch " << result.best_epoch << " mae " << format_fixed(result.best_mae, 4) << "\n";
  return 0;
}

struct EvalOptions {
  std::vector<fs::path> weights;
  std::vector<std::string> labels;
  fs::path manifest;
  std::string split = "test";
  std::string bins = "0-1,1-2,2-3,3-4,4-5,5-6";
  fs::path out;
  double alpha_max = 2.0;
  double alpha_step = 0.1;
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (o.weights.empty()) throw ConfigError("at least one --weights is required");
  if (!o.labels.empty() && o.labels.size() != o.weights.size()) {
    throw ConfigError("--label must be given once per --weights");
  }
  const auto bins = parse_bins(o.bins);
  const auto split = parse_split(o.split);
  if (!fs::exists(o.manifest)) throw DataError("manifest not found: " + o.manifest.string());
  const auto manifest = read_manifest(o.manifest);
  if (manifest.select(split).empty()) throw DataError("manifest has no " + o.split + " rows");
  fs::create_directories(o.out);

  std::vector<EvalReport> reports;
  std::vector<std::string> used;
  for (std::size_t w = 0; w < o.weights.size(); ++w) {
    auto loaded = load_weights(o.weights[w]);
    const auto pipeline = pipeline_from_descriptor(loaded.descriptor);
    std::string label = o.labels.empty() ? to_string(loaded.model->kind()) : o.labels[w];
    if (std::find(used.begin(), used.end(), label) != used.end()) label += "_" + std::to_string(w);
    used.push_back(label);

    const auto samples = load_samples(manifest, split, loaded.model->kind(), pipeline);
    loaded.model->validate_input(samples.front().input.shape());
    std::vector<double> y, yhat;
    std::string predictions = "subject_id,age_years,predicted_age_years\n";
    for (const auto& s : samples) {
      const float p = predict(*loaded.model, s.input);
      y.push_back(s.age_years);
      yhat.push_back(p);
      predictions += s.subject_id + "," + format_shortest(s.age_years) + "," + format_shortest(p) + "\n";
    }
    auto report = make_report(label, y, yhat, bins, o.alpha_max, o.alpha_step);
    write_text(o.out / (label + ".report.json"), report_json(report));
    write_text(o.out / (label + ".cs_curve.csv"), cs_curve_csv(report.cs_samples));
    write_text(o.out / (label + ".groups.csv"), group_long_csv(report));
    write_text(o.out / (label + ".predictions.csv"), predictions);
    out << label << ": n=" << report.n << " mae=" << format_fixed(report.overall_mae, 4)
        << " cs(1.0)=" << format_fixed(cs(y, yhat, 1.0), 2) << "%\n";
    if (report.groups.outside > 0) out << label << ": " << report.groups.outside << " subjects outside all bins\n";
    reports.push_back(std::move(report));
  }
  const auto table = group_table_csv(reports);
  write_text(o.out / "comparison.csv", table);
  out << table;
  return 0;
}

struct PredictOptions {
  fs::path weights;
  fs::path volume;
};

int cmd_predict(const PredictOptions& o, std::ostream& out) {
  auto loaded = load_weights(o.weights);
  const auto pipeline = pipeline_from_descriptor(loaded.descriptor);
  const auto volume = read_volume(o.volume);
  const auto input = prepare_input(loaded.model->kind(), volume, pipeline);
  loaded.model->validate_input(input.shape());
  const float p = predict(*loaded.model, input);
  out << "subject_id,predicted_age_years\n" << volume.subject_id << "," << format_shortest(p) << "\n";
  return 0;
}

struct GradcheckOptions {
  std::string scope = "op";
  std::size_t instances = 5;
  std::uint64_t seed = 1;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  const auto scope = parse_gradcheck_scope(o.scope);
  if (o.instances == 0) throw ConfigError("--instances must be positive");
  GradCheckOptions opts;
  opts.seed = o.seed;
  const auto rows = run_gradcheck_suite(scope, o.instances, opts, o.inject_fault);
  if (!o.inject_fault.empty() &&
      std::none_of(rows.begin(), rows.end(), [&](const GradCheckRow& r) { return r.name == o.inject_fault; })) {
    throw ConfigError("no gradcheck case named '" + o.inject_fault + "' in scope " + o.scope);
  }
  out << "name,instances,coords,max_rel_error,status\n";
  bool all = true;
  for (const auto& r : rows) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    out << r.name << "," << r.instances << "," << r.coords << "," << err << "," << (r.passed ? "pass" : "FAIL") << "\n";
    all = all && r.passed;
  }
  return all ? 0 : 3;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brain age regression from slice sequences"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* gen = app.add_subcommand("generate-synth", "Write a synthetic phantom corpus and manifest");
  gen->add_option("--out", synth.out, "Output directory")->required();
  gen->add_option("--count", synth.count, "Number of volumes")->required();
  gen->add_option("--age-max", synth.age_max, "Ages are uniform in [0, age-max]");
  gen->add_option("--dims", synth.dims, "Grid extents X,Y,Z");
  gen->add_option("--noise", synth.noise, "Gaussian noise sigma");
  gen->add_option("--seed", synth.seed, "Random seed");
  gen->add_option("--train-frac", synth.train_frac, "Fraction of subjects in the train split");
  gen->add_flag("--force", synth.force, "Write into a non-empty directory");

  TrainOptions tr;
  auto* trn = app.add_subcommand("train", "Train a model on a manifest");
  trn->add_option("--config", tr.config, "key=value config file");
  trn->add_option("--model", tr.model, "sliceseq or vol3d");
  trn->add_option("--out", tr.out, "Run directory")->required();
  trn->add_option("--set", tr.overrides, "Override a config key (key=value), repeatable");

  EvalOptions ev;
  auto* evl = app.add_subcommand("eval", "Evaluate one or more checkpoints");
  evl->add_option("--weights", ev.weights, "Checkpoint file, repeatable")->required();
  evl->add_option("--label", ev.labels, "Row label per checkpoint");
  evl->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  evl->add_option("--split", ev.split, "train or test");
  evl->add_option("--bins", ev.bins, "Age bins, e.g. 0-1,1-2,2-3");
  evl->add_option("--out", ev.out, "Report directory")->required();
  evl->add_option("--alpha-max", ev.alpha_max, "Largest CS error level");
  evl->add_option("--alpha-step", ev.alpha_step, "CS error level step");

  PredictOptions pr;
  auto* prd = app.add_subcommand("predict", "Predict the age of one volume");
  prd->add_option("--weights", pr.weights, "Checkpoint file")->required();
  prd->add_option("--volume", pr.volume, "Raw volume with JSON sidecar")->required();

  GradcheckOptions gc;
  auto* grd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grd->add_option("--scope", gc.scope, "op, layer or model");
  grd->add_option("--instances", gc.instances, "Random instances per case");
  grd->add_option("--seed", gc.seed, "Random seed");
  grd->add_option("--inject-fault", gc.inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_generate_synth(synth, out);
    if (trn->parsed()) return cmd_train(tr, out);
    if (evl->parsed()) return cmd_eval(ev, out);
    if (prd->parsed()) return cmd_predict(pr, out);
    if (grd->parsed()) return cmd_gradcheck(gc, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace ssar::cli
