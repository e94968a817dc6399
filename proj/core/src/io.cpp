#include "enlfcn/io.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "enlfcn/npy.hpp"

namespace enlfcn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (ok.count(key) == 0) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read_key(const json& obj, const char* key, V& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; }

json network_to_json(const NetworkConfig& c) {
  return json{{"bands", c.bands},
              {"classes", c.classes},
              {"backbone_channels", c.backbone_channels},
              {"enl_channels", c.enl_channels},
              {"kernel_size", c.kernel_size},
              {"enl_module_count", c.enl_module_count},
              {"enl_arrangement", to_string(c.enl_arrangement)},
              {"enl_position", c.enl_position},
              {"recurrence", c.recurrence},
              {"attention_kind", to_string(c.attention_kind)},
              {"attention_byte_limit", c.attention_byte_limit}};
}

NetworkConfig network_from_json(const json& j) {
  const std::string where = "network";
  check_keys(j,
             {"bands", "classes", "backbone_channels", "enl_channels", "kernel_size", "enl_module_count",
              "enl_arrangement", "enl_position", "recurrence", "attention_kind", "attention_byte_limit"},
             where);
  NetworkConfig c;
  read_key(j, "bands", c.bands, where);
  read_key(j, "classes", c.classes, where);
  read_key(j, "backbone_channels", c.backbone_channels, where);
  read_key(j, "enl_channels", c.enl_channels, where);
  read_key(j, "kernel_size", c.kernel_size, where);
  read_key(j, "enl_module_count", c.enl_module_count, where);
  read_key(j, "enl_position", c.enl_position, where);
  read_key(j, "recurrence", c.recurrence, where);
  read_key(j, "attention_byte_limit", c.attention_byte_limit, where);
  std::string s;
  if (j.contains("enl_arrangement")) {
    read_key(j, "enl_arrangement", s, where);
    c.enl_arrangement = parse_arrangement(s);
  }
  if (j.contains("attention_kind")) {
    read_key(j, "attention_kind", s, where);
    c.attention_kind = parse_attention_kind(s);
  }
  return c;
}

TrainConfig train_from_json(const json& j) {
  const std::string where = "train";
  check_keys(j,
             {"learning_rate", "weight_decay", "iterations", "beta1", "beta2", "epsilon", "validate_every",
              "decoupled_weight_decay"},
             where);
  TrainConfig t;
  read_key(j, "learning_rate", t.learning_rate, where);
  read_key(j, "weight_decay", t.weight_decay, where);
  read_key(j, "iterations", t.iterations, where);
  read_key(j, "beta1", t.beta1, where);
  read_key(j, "beta2", t.beta2, where);
  read_key(j, "epsilon", t.epsilon, where);
  read_key(j, "validate_every", t.validate_every, where);
  read_key(j, "decoupled_weight_decay", t.decoupled_weight_decay, where);
  return t;
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ConfigError("unknown dtype '" + s + "' (expected f32|f64)");
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 8 ? "f64" : "f32";
}

template <typename T>
void load_into(Tensor<T>& dst, const fs::path& file, const std::string& name) {
  Tensor<T> t = read_tensor<T>(file);
  if (t.shape() != dst.shape()) {
    throw FormatError("checkpoint tensor " + name + " has shape " + shape_to_string(t.shape()) + ", expected " +
                      shape_to_string(dst.shape()));
  }
  dst = std::move(t);
}

std::vector<TrainLogEntry> parse_log_csv(const std::string& text) {
  std::vector<TrainLogEntry> log;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string iter, loss, oa;
    std::getline(row, iter, ',');
    std::getline(row, loss, ',');
    std::getline(row, oa, ',');
    TrainLogEntry e;
    try {
      e.iteration = std::stoull(iter);
      e.loss = std::stod(loss);
      if (!oa.empty()) e.val_oa = std::stod(oa);
    } catch (const std::exception&) {
      throw FormatError("malformed training log row: " + line);
    }
    log.push_back(e);
  }
  return log;
}

json checkpoint_json(const fs::path& dir) {
  return parse_json(read_file(dir / "model.json"), (dir / "model.json").string());
}

}  // namespace

std::string network_config_json(const NetworkConfig& cfg) { return network_to_json(cfg).dump(2); }

NetworkConfig parse_network_config(std::string_view json_text) {
  return network_from_json(parse_json(json_text, "network config"));
}

RunConfig parse_run_config(std::string_view json_text, const fs::path& base_dir) {
  const json j = parse_json(json_text, "run config");
  check_keys(j, {"network", "train", "data", "seed", "output", "dtype", "threads"}, "run config");
  RunConfig rc;
  if (j.contains("network")) rc.network = network_from_json(j.at("network"));
  if (j.contains("train")) rc.train = train_from_json(j.at("train"));
  read_key(j, "seed", rc.seed, "run config");
  rc.train.seed = rc.seed;
  read_key(j, "threads", rc.threads, "run config");
  if (j.contains("dtype")) {
    std::string s;
    read_key(j, "dtype", s, "run config");
    rc.dtype = parse_dtype(s);
  }
  std::string output = rc.output_dir.string();
  read_key(j, "output", output, "run config");
  rc.output_dir = resolve(base_dir, output);

  if (!j.contains("data")) throw ConfigError("run config lacks the 'data' section");
  const json& d = j.at("data");
  check_keys(d, {"cube", "labels", "split", "split_mode"}, "data");
  if (!d.contains("cube") || !d.contains("labels")) throw ConfigError("data section needs 'cube' and 'labels'");
  std::string cube, labels;
  read_key(d, "cube", cube, "data");
  read_key(d, "labels", labels, "data");
  rc.cube = resolve(base_dir, cube);
  rc.labels = resolve(base_dir, labels);
  if (d.contains("split")) {
    std::string split;
    read_key(d, "split", split, "data");
    rc.split_dir = resolve(base_dir, split);
  }
  read_key(d, "split_mode", rc.split_mode, "data");
  if (rc.split_mode.rfind("counts:", 0) == 0) {
    rc.split_mode = "counts:" + resolve(base_dir, rc.split_mode.substr(7)).string();
  }
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

CountSplit parse_count_table(std::string_view json_text) {
  const json j = parse_json(json_text, "count table");
  check_keys(j, {"dataset", "classes"}, "count table");
  if (!j.contains("classes") || !j.at("classes").is_array()) throw ConfigError("count table needs a 'classes' array");
  CountSplit table;
  for (const auto& row : j.at("classes")) {
    check_keys(row, {"class", "name", "train", "val", "test"}, "count table row");
    std::int32_t k = 0;
    SubsetCounts c;
    read_key(row, "class", k, "count table row");
    read_key(row, "train", c.train, "count table row");
    read_key(row, "val", c.val, "count table row");
    read_key(row, "test", c.test, "count table row");
    if (k <= 0) throw ConfigError("count table class ids must be positive");
    if (!table.table.emplace(k, c).second) throw ConfigError("duplicate class " + std::to_string(k) + " in count table");
  }
  return table;
}

SplitMode parse_split_mode(std::string_view spec, const fs::path& base_dir) {
  const std::string s(spec);
  if (s.rfind("fractions:", 0) == 0) {
    const std::string rest = s.substr(10);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw ConfigError("fractions mode needs 'fractions:TRAIN,VAL'");
    try {
      return FractionSplit{std::stod(rest.substr(0, comma)), std::stod(rest.substr(comma + 1))};
    } catch (const std::exception&) {
      throw ConfigError("cannot parse split fractions '" + rest + "'");
    }
  }
  if (s.rfind("counts:", 0) == 0) {
    const fs::path table = resolve(base_dir, s.substr(7));
    return parse_count_table(read_file(table));
  }
  throw ConfigError("unknown split mode '" + s + "' (expected fractions:F,F or counts:FILE)");
}

void save_split(const fs::path& dir, const Split& split) {
  LabelMap codes(split.height, split.width);
  for (std::size_t p = 0; p < split.assignment.size(); ++p) codes.labels[p] = static_cast<std::int32_t>(split.assignment[p]);
  write_labels(dir / "split.npy", codes);
  json counts = json::object();
  for (const auto& [k, c] : split.per_class_counts) {
    counts[std::to_string(k)] = json{{"train", c.train}, {"val", c.val}, {"test", c.test}};
  }
  const json meta{{"seed", split.seed}, {"height", split.height}, {"width", split.width}, {"counts", counts}};
  write_file(dir / "split.json", meta.dump(2) + "\n");
}

Split load_split(const fs::path& dir) {
  const LabelMap codes = read_labels(dir / "split.npy");
  const json meta = parse_json(read_file(dir / "split.json"), (dir / "split.json").string());
  check_keys(meta, {"seed", "height", "width", "counts"}, "split.json");
  Split split;
  split.height = codes.height;
  split.width = codes.width;
  read_key(meta, "seed", split.seed, "split.json");
  split.assignment.reserve(codes.size());
  for (auto v : codes.labels) {
    if (v < 0 || v > 3) throw FormatError("split.npy holds invalid subset code " + std::to_string(v));
    split.assignment.push_back(static_cast<Subset>(v));
  }
  if (meta.contains("counts")) {
    for (const auto& [key, c] : meta.at("counts").items()) {
      SubsetCounts sc;
      read_key(c, "train", sc.train, "split.json");
      read_key(c, "val", sc.val, "split.json");
      read_key(c, "test", sc.test, "split.json");
      split.per_class_counts[std::stoi(key)] = sc;
    }
  }
  return split;
}

template <typename T>
void save_checkpoint(const fs::path& dir, const TrainState<T>& state) {
  fs::create_directories(dir / "state");
  const EnlFcnModel<T>& selected = state.selected_model();
  json names = json::array();
  for (const auto& p : selected.parameters()) {
    names.push_back(p.name);
    write_tensor(dir / (p.name + ".npy"), *p.tensor);
  }
  const auto current = state.model.parameters();
  for (std::size_t i = 0; i < current.size(); ++i) {
    const std::string& name = current[i].name;
    write_tensor(dir / "state" / (name + ".npy"), *current[i].tensor);
    write_tensor(dir / "state" / ("adam.m." + name + ".npy"), state.adam.first_moment.at(i));
    write_tensor(dir / "state" / ("adam.v." + name + ".npy"), state.adam.second_moment.at(i));
  }
  json meta{{"format", "enlfcn-checkpoint"},
            {"version", 1},
            {"dtype", dtype_name<T>()},
            {"network", network_to_json(state.model.config)},
            {"parameters", names},
            {"iteration", state.iteration},
            {"adam_step", state.adam.step},
            {"best_iteration", state.best_iteration},
            {"best_val_oa", state.best_val_oa ? json(*state.best_val_oa) : json(nullptr)}};
  write_file(dir / "model.json", meta.dump(2) + "\n");
  write_file(dir / "log.csv", train_log_csv(state.log));
}

DType checkpoint_dtype(const fs::path& dir) {
  const json meta = checkpoint_json(dir);
  return parse_dtype(meta.value("dtype", std::string("f32")));
}

template <typename T>
EnlFcnModel<T> load_model(const fs::path& dir) {
  const json meta = checkpoint_json(dir);
  if (meta.value("format", std::string()) != "enlfcn-checkpoint") {
    throw FormatError((dir / "model.json").string() + " is not an enlfcn checkpoint");
  }
  EnlFcnModel<T> model = EnlFcnModel<T>::init(network_from_json(meta.at("network")), 0);
  for (auto& p : model.parameters()) load_into(*p.tensor, dir / (p.name + ".npy"), p.name);
  return model;
}

template <typename T>
TrainState<T> load_train_state(const fs::path& dir) {
  const json meta = checkpoint_json(dir);
  if (meta.value("dtype", std::string("f32")) != dtype_name<T>()) {
    throw ConfigError("checkpoint dtype " + meta.value("dtype", std::string("f32")) + " differs from the requested " +
                      dtype_name<T>());
  }
  const NetworkConfig cfg = network_from_json(meta.at("network"));
  TrainState<T> state = TrainState<T>::fresh(EnlFcnModel<T>::init(cfg, 0));
  auto params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i].name;
    load_into(*params[i].tensor, dir / "state" / (name + ".npy"), name);
    load_into(state.adam.first_moment[i], dir / "state" / ("adam.m." + name + ".npy"), name);
    load_into(state.adam.second_moment[i], dir / "state" / ("adam.v." + name + ".npy"), name);
  }
  state.iteration = meta.at("iteration").get<std::size_t>();
  state.adam.step = meta.at("adam_step").get<std::uint64_t>();
  state.best_iteration = meta.at("best_iteration").get<std::size_t>();
  if (!meta.at("best_val_oa").is_null()) {
    state.best_val_oa = meta.at("best_val_oa").get<double>();
    state.best_model = load_model<T>(dir);
  }
  if (fs::exists(dir / "log.csv")) state.log = parse_log_csv(read_file(dir / "log.csv"));
  return state;
}

const std::array<Rgb, 17>& map_palette() {
  static const std::array<Rgb, 17> palette{{{0, 0, 0},
                                            {230, 25, 75},
                                            {60, 180, 75},
                                            {255, 225, 25},
                                            {0, 130, 200},
                                            {245, 130, 48},
                                            {145, 30, 180},
                                            {70, 240, 240},
                                            {240, 50, 230},
                                            {210, 245, 60},
                                            {250, 190, 212},
                                            {0, 128, 128},
                                            {220, 190, 255},
                                            {170, 110, 40},
                                            {255, 250, 200},
                                            {128, 0, 0},
                                            {170, 255, 195}}};
  return palette;
}

std::string encode_ppm(const LabelMap& labels) {
  std::string out = "P6\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  const auto& palette = map_palette();
  out.reserve(out.size() + labels.size() * 3);
  for (auto v : labels.labels) {
    const std::size_t idx = v <= 0 ? 0 : 1 + (static_cast<std::size_t>(v) - 1) % 16;
    for (auto c : palette[idx]) out.push_back(static_cast<char>(c));
  }
  return out;
}

void write_ppm(const fs::path& path, const LabelMap& labels) { write_file(path, encode_ppm(labels)); }

template void save_checkpoint<float>(const fs::path&, const TrainState<float>&);
template void save_checkpoint<double>(const fs::path&, const TrainState<double>&);
template EnlFcnModel<float> load_model<float>(const fs::path&);
template EnlFcnModel<double> load_model<double>(const fs::path&);
template TrainState<float> load_train_state<float>(const fs::path&);
template TrainState<double> load_train_state<double>(const fs::path&);

}  // namespace enlfcn
