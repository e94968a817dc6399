#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "enlfcn/labels.hpp"
#include "enlfcn/network.hpp"
#include "enlfcn/training.hpp"

namespace enlfcn {

// ---- run configuration ------------------------------------------------------

/// JSON run description. Unknown keys anywhere are rejected; relative paths
/// resolve against the directory holding the config file.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  std::filesystem::path cube;
  std::filesystem::path labels;
  std::optional<std::filesystem::path> split_dir;
  std::string split_mode = "fractions:0.10,0.01";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  DType dtype = DType::f32;
  std::size_t threads = 0;  // 0 keeps the ENLFCN_THREADS default
};

RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

std::string network_config_json(const NetworkConfig& cfg);
NetworkConfig parse_network_config(std::string_view json_text);

/// "fractions:F_TRAIN,F_VAL" or "counts:TABLE.json".
SplitMode parse_split_mode(std::string_view spec, const std::filesystem::path& base_dir = {});

/// {"classes": [{"class": k, "train": a, "val": b, "test": c, "name": ...}, ...]}
CountSplit parse_count_table(std::string_view json_text);

// ---- split files ------------------------------------------------------------

/// split.npy ('<i4' subset codes 0..3) plus split.json with seed and counts.
void save_split(const std::filesystem::path& dir, const Split& split);
Split load_split(const std::filesystem::path& dir);

// ---- checkpoints ------------------------------------------------------------

/// Layout: model.json, one <name>.npy per selected-model tensor, log.csv and
/// a state/ directory with the current weights and Adam moments for resuming.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const TrainState<T>& state);

template <typename T>
TrainState<T> load_train_state(const std::filesystem::path& dir);

template <typename T>
EnlFcnModel<T> load_model(const std::filesystem::path& dir);

DType checkpoint_dtype(const std::filesystem::path& dir);

// ---- classification maps ----------------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;

/// Index 0 (unlabeled) is black; classes wrap around entries 1..16.
const std::array<Rgb, 17>& map_palette();
std::string encode_ppm(const LabelMap& labels);
void write_ppm(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace enlfcn
