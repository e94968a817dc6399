#include "enlfcn_cli/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "enlfcn/enlfcn.hpp"

namespace enlfcn::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Model weights and the split draw from different streams of the same seed.
constexpr std::uint64_t kModelSeedSalt = 0x9E3779B97F4A7C15ULL;

std::uint64_t model_seed(std::uint64_t seed) { return seed ^ kModelSeedSalt; }

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return config_error;
    case ErrorKind::format: return format_error;
    case ErrorKind::resource: return resource_error;
    case ErrorKind::numeric: return numeric_error;
    case ErrorKind::split: return split_error;
    case ErrorKind::undefined: return undefined_value;
    case ErrorKind::usage: return usage_error;
  }
  return failure;
}

Pixel parse_pixel(const std::string& s) {
  std::size_t i = 0, j = 0;
  char comma = 0;
  std::istringstream in(s);
  if (!(in >> i >> comma >> j) || comma != ',' || !in.eof()) throw ConfigError("pixel must look like ROW,COL, got '" + s + "'");
  return {i, j};
}

std::pair<std::uint64_t, std::uint64_t> parse_geometry(const std::string& s) {
  std::uint64_t h = 0, w = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> h >> x >> w) || (x != 'x' && x != 'X') || !in.eof() || h == 0 || w == 0) {
    throw ConfigError("geometry must look like HxW, got '" + s + "'");
  }
  return {h, w};
}

void apply_threads(std::size_t threads) {
  if (threads > 0) set_thread_count(threads);
}

// Fills bands/classes left at 0 from the data and checks the rest.
void complete_network(NetworkConfig& net, const Shape& cube_shape, const LabelMap& labels) {
  if (cube_shape.size() != 3) throw FormatError("data cube must be [B,H,W], got " + shape_to_string(cube_shape));
  if (cube_shape[1] != labels.height || cube_shape[2] != labels.width) {
    throw FormatError("data cube " + shape_to_string(cube_shape) + " and labels " + std::to_string(labels.height) + "x" +
                      std::to_string(labels.width) + " disagree on the image extents");
  }
  if (net.bands == 0) net.bands = cube_shape[0];
  if (net.classes == 0) net.classes = static_cast<std::size_t>(labels.max_label());
  if (net.bands != cube_shape[0]) {
    throw ConfigError("network expects " + std::to_string(net.bands) + " bands, data has " + std::to_string(cube_shape[0]));
  }
  net.validate();
  labels.validate(net.classes);
}

template <typename T>
HsiDataset<T> load_dataset(const fs::path& cube, const fs::path& labels) {
  return {read_tensor<T>(cube), read_labels(labels)};
}

Split obtain_split(const RunConfig& rc, const LabelMap& labels, std::uint64_t seed) {
  if (rc.split_dir) {
    Split s = load_split(*rc.split_dir);
    if (s.height != labels.height || s.width != labels.width) throw FormatError("split extents do not match the labels");
    return s;
  }
  return make_split(labels, parse_split_mode(rc.split_mode), seed);
}

std::vector<std::uint8_t> subset_mask(const Split& split, const LabelMap& labels, const std::string& subset) {
  if (subset == "all") {
    std::vector<std::uint8_t> m(labels.size());
    for (std::size_t p = 0; p < m.size(); ++p) m[p] = labels.labels[p] > 0;
    return m;
  }
  return split.mask(parse_subset(subset));
}

// ---- split ------------------------------------------------------------------

struct SplitArgs {
  std::string labels;
  std::string mode = "fractions:0.10,0.01";
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_split(const SplitArgs& a) {
  const LabelMap labels = read_labels(a.labels);
  const Split split = make_split(labels, parse_split_mode(a.mode), a.seed);
  save_split(a.out, split);
  std::cout << "train " << split.count(Subset::train) << ", val " << split.count(Subset::val) << ", test "
            << split.count(Subset::test) << " pixels written to " << a.out << "\n";
  return ok;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::optional<std::size_t> iterations;
  bool quiet = false;
};

template <typename T>
int train_typed(RunConfig rc, const TrainArgs& a) {
  const HsiDataset<T> data = load_dataset<T>(rc.cube, rc.labels);
  complete_network(rc.network, data.cube.shape(), data.labels);
  const Split split = obtain_split(rc, data.labels, rc.seed);
  const fs::path out = a.out.empty() ? rc.output_dir : fs::path(a.out);

  TrainState<T> state = a.resume.empty() ? TrainState<T>::fresh(EnlFcnModel<T>::init(rc.network, model_seed(rc.seed)))
                                         : load_train_state<T>(a.resume);
  if (state.model.config != rc.network) throw ConfigError("checkpoint network differs from the run config");

  const std::size_t target = a.iterations.value_or(rc.train.iterations);
  if (state.iteration > target) {
    throw UsageError("checkpoint is already at iteration " + std::to_string(state.iteration) + ", past the target " +
                     std::to_string(target));
  }
  Trainer<T> trainer(std::move(state), data, split, rc.train);
  while (trainer.state().iteration < target) {
    const double loss = trainer.step();
    const auto& entry = trainer.state().log.back();
    if (!a.quiet && entry.val_oa) {
      std::printf("iter %zu loss %.6f val_OA %.4f\n", entry.iteration, loss, *entry.val_oa);
    }
  }
  state = std::move(trainer).release();
  save_checkpoint(out, state);
  save_split(out / "split", split);
  if (!a.quiet) {
    std::printf("checkpoint at iteration %zu written to %s\n", state.iteration, out.string().c_str());
  }
  return ok;
}

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = load_run_config(a.config);
  apply_threads(rc.threads);
  return rc.dtype == DType::f64 ? train_typed<double>(rc, a) : train_typed<float>(rc, a);
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string labels;
  std::string split;
  std::string subset = "test";
  std::string out;
};

template <typename T>
int eval_typed(const EvalArgs& a) {
  const EnlFcnModel<T> model = load_model<T>(a.ckpt);
  const HsiDataset<T> data = load_dataset<T>(a.data, a.labels);
  NetworkConfig net = model.config;
  complete_network(net, data.cube.shape(), data.labels);
  const Split split = a.split.empty() ? load_split(fs::path(a.ckpt) / "split") : load_split(a.split);
  if (split.height != data.labels.height || split.width != data.labels.width) {
    throw FormatError("split extents do not match the labels");
  }
  const LabelMap pred = predict(forward(model, data.cube).probabilities);
  const auto mask = subset_mask(split, data.labels, a.subset);
  const MetricsReport report = summarize(confusion(pred, data.labels, mask, model.config.classes));

  const fs::path out = a.out.empty() ? fs::path(a.ckpt) / ("eval_" + a.subset) : fs::path(a.out);
  write_file(out / "metrics.csv", metrics_csv(report));
  write_file(out / "metrics.txt", metrics_text(report));
  write_ppm(out / "map.ppm", pred);
  write_labels(out / "prediction.npy", pred);
  std::cout << metrics_text(report);
  return ok;
}

int cmd_eval(const EvalArgs& a) {
  return checkpoint_dtype(a.ckpt) == DType::f64 ? eval_typed<double>(a) : eval_typed<float>(a);
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> geometries;
  std::uint64_t channels = 150;
  std::uint64_t enl_channels = 0;
  std::uint64_t recurrence = 2;
  std::string kind = "both";
  bool measure = false;
  std::uint64_t seed = 0;
  std::string out;
};

Tensor<float> random_tensor(Shape shape, Rng& rng) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// One module's attention stages with the given weights-free inputs.
json measure_kernels(const CostGeometry& g, AttentionKind kind, Rng& rng) {
  const auto h = static_cast<std::size_t>(g.height);
  const auto w = static_cast<std::size_t>(g.width);
  const Tensor<float> q = random_tensor({g.query_channels, h, w}, rng);
  const Tensor<float> k = random_tensor({g.query_channels, h, w}, rng);
  const Tensor<float> v = random_tensor({g.value_channels, h, w}, rng);
  reset_multiplication_count();
  const auto start = std::chrono::steady_clock::now();
  try {
    if (kind == AttentionKind::efficient) {
      Tensor<float> e = v;
      for (std::uint64_t r = 0; r < g.recurrence; ++r) {
        const Tensor<float> a = softmax_axis(cc_affinity(q, k), 0);
        e = cc_aggregate(a, v, e);
      }
    } else {
      const Tensor<float> a = softmax_axis(full_affinity(q, k), 0);
      (void)full_aggregate(a, v, v);
    }
  } catch (const ResourceError& e) {
    return json{{"skipped", e.what()}};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return json{{"seconds", seconds}, {"counted_multiplications", multiplication_count()}};
}

int cmd_bench(const BenchArgs& a) {
  std::vector<AttentionKind> kinds;
  if (a.kind == "both") {
    kinds = {AttentionKind::efficient, AttentionKind::original};
  } else {
    kinds = {parse_attention_kind(a.kind)};
  }
  if (a.channels == 0 || a.recurrence == 0) throw ConfigError("channels and recurrence must be positive");
  Rng rng(a.seed);
  json reports = json::array();
  for (const auto& text : a.geometries) {
    const auto [h, w] = parse_geometry(text);
    const CostGeometry g{h, w, a.enl_channels == 0 ? a.channels : a.enl_channels, a.channels, a.recurrence};
    for (AttentionKind kind : kinds) {
      const CostReport r = cost_report(g, kind);
      json entry{{"geometry", text},
                 {"height", h},
                 {"width", w},
                 {"query_channels", g.query_channels},
                 {"value_channels", g.value_channels},
                 {"recurrence", kind == AttentionKind::efficient ? g.recurrence : 1},
                 {"kind", to_string(kind)},
                 {"multiplications", r.multiplications},
                 {"attention_bytes", r.attention_bytes},
                 {"attention_megabytes", r.attention_megabytes()}};
      if (a.measure) entry["measured"] = measure_kernels(g, kind, rng);
      reports.push_back(std::move(entry));
    }
  }
  const std::string text = json{{"reports", reports}}.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file(a.out, text);
  }
  return ok;
}

// ---- viz --------------------------------------------------------------------

struct VizArgs {
  std::string ckpt;
  std::string data;
  std::string pixel;
  std::size_t module = 0;
  std::string out;
  std::string states_out;
};

template <typename T>
int viz_typed(const VizArgs& a) {
  const EnlFcnModel<T> model = load_model<T>(a.ckpt);
  if (model.config.attention_kind != AttentionKind::efficient) {
    throw UsageError("correlation maps need a model with criss-cross attention");
  }
  if (a.module >= model.config.enl_module_count) {
    throw UsageError("module " + std::to_string(a.module) + " does not exist; the model has " +
                     std::to_string(model.config.enl_module_count));
  }
  const Tensor<T> cube = read_tensor<T>(a.data);
  if (cube.rank() != 3 || cube.dim(0) != model.config.bands) {
    throw FormatError("data cube " + shape_to_string(cube.shape()) + " does not match the model's band count");
  }
  const Pixel source = parse_pixel(a.pixel);
  const ForwardResult<T> result = forward(model, cube);
  const auto& states = result.attention.at(a.module);
  write_tensor(a.out, correlation_map<T>(states, source));
  if (!a.states_out.empty()) {
    for (std::size_t r = 0; r < states.size(); ++r) {
      write_tensor(fs::path(a.states_out) / ("attention." + std::to_string(a.module) + "." + std::to_string(r) + ".npy"),
                   states[r].attention);
    }
  }
  std::cout << "correlation map for pixel (" << source.row << "," << source.col << ") written to " << a.out << "\n";
  return ok;
}

int cmd_viz(const VizArgs& a) {
  return checkpoint_dtype(a.ckpt) == DType::f64 ? viz_typed<double>(a) : viz_typed<float>(a);
}

// ---- repeat -----------------------------------------------------------------

struct RepeatArgs {
  std::string config;
  std::size_t runs = 10;
  std::string out;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
};

Summary mean_std(const std::vector<double>& xs) {
  Summary s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(xs.size() - 1));
  }
  return s;
}

template <typename T>
int repeat_typed(RunConfig rc, const RepeatArgs& a) {
  const HsiDataset<T> data = load_dataset<T>(rc.cube, rc.labels);
  complete_network(rc.network, data.cube.shape(), data.labels);
  std::vector<double> oa, aa, kp;
  std::ostringstream csv;
  csv.precision(9);
  csv << "run,seed,OA,AA,Kappa\n";
  for (std::size_t r = 0; r < a.runs; ++r) {
    const std::uint64_t seed = rc.seed + r;
    const Split split = obtain_split(rc, data.labels, seed);
    TrainConfig cfg = rc.train;
    cfg.seed = seed;
    const TrainState<T> state = train(EnlFcnModel<T>::init(rc.network, model_seed(seed)), data, split, cfg);
    const LabelMap pred = predict(forward(state.selected_model(), data.cube).probabilities);
    const MetricsReport m = summarize(confusion(pred, data.labels, split.mask(Subset::test), rc.network.classes));
    oa.push_back(m.oa);
    aa.push_back(m.aa);
    kp.push_back(m.kappa);
    csv << r << ',' << seed << ',' << m.oa << ',' << m.aa << ',' << m.kappa << '\n';
    std::printf("run %zu: OA %.4f AA %.4f kappa %.4f\n", r, m.oa, m.aa, m.kappa);
  }
  const Summary s_oa = mean_std(oa), s_aa = mean_std(aa), s_k = mean_std(kp);
  char line[256];
  std::snprintf(line, sizeof line, "OA %.4f ± %.4f\nAA %.4f ± %.4f\nKappa %.4f ± %.4f\n", s_oa.mean, s_oa.std,
                s_aa.mean, s_aa.std, s_k.mean, s_k.std);
  std::cout << line;
  const fs::path out = a.out.empty() ? rc.output_dir : fs::path(a.out);
  write_file(out / "repeat.csv", csv.str());
  write_file(out / "repeat.txt", line);
  return ok;
}

int cmd_repeat(const RepeatArgs& a) {
  if (a.runs == 0) throw ConfigError("--runs must be positive");
  const RunConfig rc = load_run_config(a.config);
  apply_threads(rc.threads);
  return rc.dtype == DType::f64 ? repeat_typed<double>(rc, a) : repeat_typed<float>(rc, a);
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  SyntheticSpec spec;
  std::size_t train = 20;
  std::size_t val = 5;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const HsiDataset<float> data = make_synthetic<float>(a.spec);
  const fs::path out = a.out;
  write_tensor(out / "cube.npy", data.cube);
  write_labels(out / "labels.npy", data.labels);
  json classes = json::array();
  for (const auto& [k, c] : uniform_counts(data.labels, a.train, a.val).table) {
    classes.push_back(json{{"class", k}, {"train", c.train}, {"val", c.val}, {"test", c.test}});
  }
  write_file(out / "counts.json", json{{"dataset", "synthetic"}, {"classes", classes}}.dump(2) + "\n");
  std::cout << "synthetic scene written to " << out.string() << "\n";
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"ENL-FCN hyperspectral classification toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads for op-internal loops (default: ENLFCN_THREADS or 1)");

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "Assign labeled pixels to train/val/test");
  split->add_option("--labels", split_args.labels, "Label map (.npy, int32 [H,W])")->required();
  split->add_option("--mode", split_args.mode, "fractions:TRAIN,VAL or counts:TABLE.json");
  split->add_option("--seed", split_args.seed, "Shuffle seed");
  split->add_option("--out", split_args.out, "Output directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
  train_cmd->add_option("--config", train_args.config, "Run config (.json)")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint directory (default: config output)");
  train_cmd->add_option("--resume", train_args.resume, "Continue from this checkpoint");
  train_cmd->add_option("--iterations", train_args.iterations, "Total iteration target (default: config)");
  train_cmd->add_flag("--quiet", train_args.quiet, "Suppress progress output");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint and render its classification map");
  eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", eval_args.data, "Data cube (.npy, [B,H,W])")->required();
  eval->add_option("--labels", eval_args.labels, "Label map (.npy)")->required();
  eval->add_option("--split", eval_args.split, "Split directory (default: CKPT/split)");
  eval->add_option("--subset", eval_args.subset, "train|val|test|all");
  eval->add_option("--out", eval_args.out, "Output directory (default: CKPT/eval_SUBSET)");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Attention cost report");
  bench->add_option("--geometry", bench_args.geometries, "Image extent HxW (repeatable)")->required();
  bench->add_option("--channels", bench_args.channels, "Value channels N");
  bench->add_option("--enl-channels", bench_args.enl_channels, "Query/key channels L (default: N)");
  bench->add_option("--recurrence", bench_args.recurrence, "Criss-cross passes R");
  bench->add_option("--kind", bench_args.kind, "efficient|original|both")
      ->check(CLI::IsMember({"efficient", "original", "both"}));
  bench->add_flag("--measure", bench_args.measure, "Also time the attention kernels on random inputs");
  bench->add_option("--seed", bench_args.seed, "Seed for measured inputs");
  bench->add_option("--out", bench_args.out, "Write the JSON report here instead of stdout");

  VizArgs viz_args;
  auto* viz = app.add_subcommand("viz", "Pixel correlation map of one attention module");
  viz->add_option("--ckpt", viz_args.ckpt, "Checkpoint directory")->required();
  viz->add_option("--data", viz_args.data, "Data cube (.npy)")->required();
  viz->add_option("--pixel", viz_args.pixel, "Source pixel ROW,COL")->required();
  viz->add_option("--module", viz_args.module, "Attention module index");
  viz->add_option("--out", viz_args.out, "Output map (.npy, [H,W])")->required();
  viz->add_option("--states-out", viz_args.states_out, "Also dump the per-pass attention tensors here");

  RepeatArgs repeat_args;
  auto* repeat = app.add_subcommand("repeat", "Train and test several seeds, report mean ± std");
  repeat->add_option("--config", repeat_args.config, "Run config (.json)")->required();
  repeat->add_option("--runs", repeat_args.runs, "Number of runs");
  repeat->add_option("--out", repeat_args.out, "Output directory (default: config output)");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write a synthetic block-structured scene");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--seed", synth_args.spec.seed, "Generator seed");
  synth->add_option("--bands", synth_args.spec.bands, "Spectral bands");
  synth->add_option("--height", synth_args.spec.height, "Rows");
  synth->add_option("--width", synth_args.spec.width, "Columns");
  synth->add_option("--classes", synth_args.spec.classes, "Classes");
  synth->add_option("--block", synth_args.spec.block, "Block edge in pixels");
  synth->add_option("--train", synth_args.train, "Train pixels per class in counts.json");
  synth->add_option("--val", synth_args.val, "Validation pixels per class in counts.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : bad_arguments;
  }

  try {
    apply_threads(threads);
    if (*split) return cmd_split(split_args);
    if (*train_cmd) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*bench) return cmd_bench(bench_args);
    if (*viz) return cmd_viz(viz_args);
    if (*repeat) return cmd_repeat(repeat_args);
    if (*synth) return cmd_synth(synth_args);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
  return failure;
}

}  // namespace enlfcn::cli
