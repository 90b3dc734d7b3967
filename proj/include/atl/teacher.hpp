#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atl/activation.hpp"

namespace atl {

struct TapSpec {
  std::string name;
  int channels = 1;
};

struct ResizePolicy {
  enum class Mode { Stretch, ShorterSideCenterCrop };
  Mode mode = Mode::Stretch;
  /// Target of the shorter side before the center crop (ShorterSideCenterCrop only).
  int resize_size = 0;
};

struct Preprocessing {
  std::vector<double> mean;
  std::vector<double> std;
  ResizePolicy resize;
};

/// JSON sidecar of an exported teacher:
///   {"model_id", "input_shape": [C,H,W],
///    "preprocessing": {"mean": [...], "std": [...],
///                      "resize": {"mode": "stretch" | "shorter_side_center_crop", "size": 256}},
///    "taps": [{"name", "channels"}...], "penultimate": {"name", "dim"}}
struct ModelManifest {
  std::string model_id;
  int input_channels = 3;
  int input_height = 224;
  int input_width = 224;
  Preprocessing preprocessing;
  std::vector<TapSpec> taps;
  TapSpec penultimate;

  std::vector<LayerId> layers() const;
};

ModelManifest parse_model_manifest(const std::string& json_text);
ModelManifest load_model_manifest(const std::filesystem::path& path);

/// Decoded raster, interleaved HWC in RGB (or single-channel) order. Samples
/// are in [0, max_value]; max_value is 255 for 8-bit files.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  float max_value = 255.0f;
  std::vector<float> samples;
};

/// Throws Ingestion carrying the path when the file cannot be decoded.
Image decode_image(const std::filesystem::path& path);

/// Resize per manifest, scale to [0,1], standardize per channel; returns a
/// CHW tensor of input_channels × input_height × input_width.
std::vector<float> preprocess(const Image& image, const ModelManifest& manifest);

struct TeacherOutput {
  std::vector<std::vector<float>> lavs;
  std::vector<float> penultimate;
};

/// Frozen teacher backed by OpenCV's DNN runtime. Not thread-safe; load one
/// evaluator per worker.
class TeacherEvaluator {
 public:
  TeacherEvaluator(TeacherEvaluator&&) noexcept;
  TeacherEvaluator& operator=(TeacherEvaluator&&) noexcept;
  ~TeacherEvaluator();

  const ModelManifest& manifest() const;

  /// Runs a batch of preprocessed inputs; one output per input.
  std::vector<TeacherOutput> run(std::span<const std::vector<float>> inputs);

 private:
  friend TeacherEvaluator load_model(const std::filesystem::path&, const std::optional<std::filesystem::path>&);
  struct Impl;
  explicit TeacherEvaluator(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

/// Loads an ONNX graph plus its sidecar manifest (default: the model path with
/// extension ".json"). Verifies every tap exists and has the declared channel
/// count; errors name the offending tap.
TeacherEvaluator load_model(const std::filesystem::path& model_path,
                            const std::optional<std::filesystem::path>& manifest_path = std::nullopt);

struct DatasetEntry {
  std::string path;
  std::string class_name;
  Split split = Split::Train;
};

/// {"dataset_id": "...", "root": "optional/base/dir",
///  "examples": [{"path": "...", "class": "...", "split": "train" | "test"}]}
/// Relative paths resolve against root, which resolves against the
/// manifest's own directory.
struct DatasetManifest {
  std::string dataset_id;
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
};

DatasetManifest load_dataset_manifest(const std::filesystem::path& path);

enum class SplitFilter { All, TrainOnly, TestOnly };

struct ExtractOptions {
  int batch_size = 16;
};

/// One record per matching manifest entry, sorted by example id. Shards run
/// in parallel, one per evaluator. Every failing file is collected; if any
/// fail, throws Ingestion listing all of them.
ActivationCache extract(std::span<TeacherEvaluator> evaluators, const DatasetManifest& dataset, SplitFilter filter,
                        const ExtractOptions& options = {});

struct ParityReport {
  std::size_t records = 0;
  double max_abs_diff = 0.0;
  std::string worst_example;
};

/// Re-extracts every fixture record (example_id = image path relative to
/// image_root) and compares LAVs and penultimate values.
ParityReport check_parity(TeacherEvaluator& evaluator, const ActivationCache& fixture,
                          const std::filesystem::path& image_root);

}  // namespace atl
