#include "atl/teacher.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <opencv2/dnn.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "atl/error.hpp"

namespace atl {

std::vector<LayerId> ModelManifest::layers() const {
  std::vector<LayerId> out;
  for (std::size_t i = 0; i < taps.size(); ++i) out.push_back({static_cast<int>(i), taps[i].name, taps[i].channels});
  return out;
}

ModelManifest parse_model_manifest(const std::string& json_text) {
  ModelManifest m;
  try {
    const auto j = nlohmann::json::parse(json_text);
    m.model_id = j.at("model_id").get<std::string>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) fail(ErrorKind::Schema, "input_shape must be [channels, height, width]");
    m.input_channels = shape[0];
    m.input_height = shape[1];
    m.input_width = shape[2];
    const auto& pre = j.at("preprocessing");
    m.preprocessing.mean = pre.at("mean").get<std::vector<double>>();
    m.preprocessing.std = pre.at("std").get<std::vector<double>>();
    if (pre.contains("resize")) {
      const auto& r = pre.at("resize");
      const auto mode = r.at("mode").get<std::string>();
      if (mode == "stretch") {
        m.preprocessing.resize.mode = ResizePolicy::Mode::Stretch;
      } else if (mode == "shorter_side_center_crop") {
        m.preprocessing.resize.mode = ResizePolicy::Mode::ShorterSideCenterCrop;
        m.preprocessing.resize.resize_size = r.at("size").get<int>();
      } else {
        fail(ErrorKind::Schema, "unknown resize mode '" + mode + "'");
      }
    }
    for (const auto& t : j.at("taps")) m.taps.push_back({t.at("name").get<std::string>(), t.at("channels").get<int>()});
    const auto& p = j.at("penultimate");
    m.penultimate = {p.at("name").get<std::string>(), p.at("dim").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("model manifest is malformed: ") + e.what());
  }

  if (m.taps.empty()) fail(ErrorKind::Schema, "model manifest lists no taps");
  for (const auto& t : m.taps) {
    if (t.channels < 1) fail(ErrorKind::Schema, "tap '" + t.name + "' has non-positive channel count");
  }
  if (m.penultimate.channels < 1) fail(ErrorKind::Schema, "penultimate dim must be positive");
  if (m.input_channels < 1 || m.input_height < 1 || m.input_width < 1) {
    fail(ErrorKind::Schema, "input_shape entries must be positive");
  }
  const auto c = static_cast<std::size_t>(m.input_channels);
  if (m.preprocessing.mean.size() != c || m.preprocessing.std.size() != c) {
    fail(ErrorKind::Schema, "preprocessing mean/std length must equal the input channel count");
  }
  for (double s : m.preprocessing.std) {
    if (!(s > 0.0)) fail(ErrorKind::Schema, "preprocessing std entries must be positive");
  }
  if (m.preprocessing.resize.mode == ResizePolicy::Mode::ShorterSideCenterCrop &&
      m.preprocessing.resize.resize_size < std::max(m.input_height, m.input_width)) {
    fail(ErrorKind::Schema, "resize size must be at least the crop size");
  }
  return m;
}

namespace {

std::string slurp(const std::filesystem::path& path, ErrorKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(kind, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

ModelManifest load_model_manifest(const std::filesystem::path& path) {
  return parse_model_manifest(slurp(path, ErrorKind::Load));
}

Image decode_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) fail(ErrorKind::Ingestion, "cannot decode image '" + path.string() + "'");

  float max_value = 1.0f;
  switch (raw.depth()) {
    case CV_8U: max_value = 255.0f; break;
    case CV_16U: max_value = 65535.0f; break;
    case CV_32F: max_value = 1.0f; break;
    default: fail(ErrorKind::Ingestion, "unsupported pixel depth in '" + path.string() + "'");
  }
  cv::Mat color;
  switch (raw.channels()) {
    case 1: color = raw; break;
    case 3: cv::cvtColor(raw, color, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, color, cv::COLOR_BGRA2RGB); break;
    default: fail(ErrorKind::Ingestion, "unsupported channel count in '" + path.string() + "'");
  }
  cv::Mat as_float;
  color.convertTo(as_float, CV_MAKETYPE(CV_32F, color.channels()));

  Image image;
  image.height = as_float.rows;
  image.width = as_float.cols;
  image.channels = as_float.channels();
  image.max_value = max_value;
  image.samples.resize(static_cast<std::size_t>(image.height) * image.width * image.channels);
  for (int r = 0; r < image.height; ++r) {
    const float* row = as_float.ptr<float>(r);
    std::copy(row, row + static_cast<std::size_t>(image.width) * image.channels,
              image.samples.begin() + static_cast<std::ptrdiff_t>(r) * image.width * image.channels);
  }
  return image;
}

std::vector<float> preprocess(const Image& image, const ModelManifest& manifest) {
  if (image.height < 1 || image.width < 1 || image.channels < 1 ||
      image.samples.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    fail(ErrorKind::InvalidInput, "preprocess: empty or malformed raster");
  }
  cv::Mat src(image.height, image.width, CV_MAKETYPE(CV_32F, image.channels),
               const_cast<float*>(image.samples.data()));
  cv::Mat scaled;
  src.convertTo(scaled, CV_MAKETYPE(CV_32F, image.channels), 1.0 / image.max_value);

  const int out_h = manifest.input_height;
  const int out_w = manifest.input_width;
  cv::Mat sized;
  if (manifest.preprocessing.resize.mode == ResizePolicy::Mode::Stretch) {
    if (scaled.rows == out_h && scaled.cols == out_w) {
      sized = scaled;
    } else {
      cv::resize(scaled, sized, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);
    }
  } else {
    const double target = manifest.preprocessing.resize.resize_size;
    const double factor = target / std::min(scaled.rows, scaled.cols);
    const int h = std::max(out_h, static_cast<int>(std::lround(scaled.rows * factor)));
    const int w = std::max(out_w, static_cast<int>(std::lround(scaled.cols * factor)));
    cv::Mat resized;
    cv::resize(scaled, resized, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    const int top = (h - out_h) / 2;
    const int left = (w - out_w) / 2;
    sized = resized(cv::Rect(left, top, out_w, out_h));
  }

  const int in_c = image.channels;
  const int out_c = manifest.input_channels;
  if (in_c != 1 && in_c != out_c) {
    if (out_c == 1 && in_c == 3) {
      cv::Mat gray;
      cv::cvtColor(sized, gray, cv::COLOR_RGB2GRAY);
      sized = gray;
    } else {
      fail(ErrorKind::InvalidInput, "preprocess: cannot map " + std::to_string(in_c) + " channels to " +
                                        std::to_string(out_c));
    }
  }
  const int src_c = sized.channels();

  std::vector<float> tensor(static_cast<std::size_t>(out_c) * out_h * out_w);
  for (int c = 0; c < out_c; ++c) {
    const int from = src_c == 1 ? 0 : c;
    const float mean = static_cast<float>(manifest.preprocessing.mean[c]);
    const float std = static_cast<float>(manifest.preprocessing.std[c]);
    float* plane = tensor.data() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const float* row = sized.ptr<float>(y);
      for (int x = 0; x < out_w; ++x) plane[y * out_w + x] = (row[x * src_c + from] - mean) / std;
    }
  }
  return tensor;
}

struct TeacherEvaluator::Impl {
  ModelManifest manifest;
  cv::dnn::Net net;
  std::vector<cv::String> output_names;
};

TeacherEvaluator::TeacherEvaluator(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
TeacherEvaluator::TeacherEvaluator(TeacherEvaluator&&) noexcept = default;
TeacherEvaluator& TeacherEvaluator::operator=(TeacherEvaluator&&) noexcept = default;
TeacherEvaluator::~TeacherEvaluator() = default;

const ModelManifest& TeacherEvaluator::manifest() const { return impl_->manifest; }

namespace {

// Channels and spatial size per example for an output blob of N×C[×H×W].
struct BlobShape {
  std::size_t channels = 0;
  std::size_t spatial = 1;
  std::size_t height = 1;
  std::size_t width = 1;
};

BlobShape blob_shape(const cv::Mat& blob) {
  BlobShape s;
  s.channels = blob.dims >= 2 ? static_cast<std::size_t>(blob.size[1]) : 1;
  if (blob.dims == 4) {
    s.height = static_cast<std::size_t>(blob.size[2]);
    s.width = static_cast<std::size_t>(blob.size[3]);
  } else {
    for (int d = 2; d < blob.dims; ++d) s.width *= static_cast<std::size_t>(blob.size[d]);
  }
  s.spatial = s.height * s.width;
  return s;
}

}  // namespace

std::vector<TeacherOutput> TeacherEvaluator::run(std::span<const std::vector<float>> inputs) {
  const auto& m = impl_->manifest;
  const std::size_t n = inputs.size();
  if (n == 0) return {};
  const std::size_t per_input = static_cast<std::size_t>(m.input_channels) * m.input_height * m.input_width;
  const int dims[4] = {static_cast<int>(n), m.input_channels, m.input_height, m.input_width};
  cv::Mat blob(4, dims, CV_32F);
  for (std::size_t i = 0; i < n; ++i) {
    if (inputs[i].size() != per_input) fail(ErrorKind::InvalidInput, "teacher input has the wrong tensor size");
    std::copy(inputs[i].begin(), inputs[i].end(), blob.ptr<float>() + i * per_input);
  }

  std::vector<cv::Mat> outs;
  try {
    impl_->net.setInput(blob);
    impl_->net.forward(outs, impl_->output_names);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Load, std::string("teacher forward pass failed: ") + e.what());
  }

  std::vector<TeacherOutput> results(n);
  const auto layers = m.layers();
  for (std::size_t t = 0; t < layers.size(); ++t) {
    const cv::Mat& out = outs[t];
    const BlobShape s = blob_shape(out);
    const std::size_t stride = s.channels * s.spatial;
    const float* base = out.ptr<float>();
    for (std::size_t i = 0; i < n; ++i) {
      TensorView view{std::span<const float>(base + i * stride, stride), s.channels, s.height, s.width};
      results[i].lavs.push_back(build_lav(view, layers[t]).values);
    }
  }
  const cv::Mat& pen = outs.back();
  const std::size_t dim = pen.total() / n;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = pen.ptr<float>() + i * dim;
    results[i].penultimate.assign(p, p + dim);
  }
  return results;
}

TeacherEvaluator load_model(const std::filesystem::path& model_path,
                            const std::optional<std::filesystem::path>& manifest_path) {
  auto impl = std::make_unique<TeacherEvaluator::Impl>();
  std::filesystem::path sidecar = manifest_path.value_or(std::filesystem::path(model_path).replace_extension(".json"));
  impl->manifest = load_model_manifest(sidecar);
  const auto& m = impl->manifest;

  if (!std::filesystem::exists(model_path)) fail(ErrorKind::Load, "model file '" + model_path.string() + "' not found");
  try {
    impl->net = cv::dnn::readNetFromONNX(model_path.string());
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Load, "cannot read ONNX model '" + model_path.string() + "': " + e.what());
  }
  impl->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
  impl->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);

  for (const auto& tap : m.taps) {
    if (impl->net.getLayerId(tap.name) < 0) {
      fail(ErrorKind::Load, "model '" + model_path.string() + "' has no tap named '" + tap.name + "'");
    }
    impl->output_names.push_back(tap.name);
  }
  if (impl->net.getLayerId(m.penultimate.name) < 0) {
    fail(ErrorKind::Load, "model '" + model_path.string() + "' has no penultimate output '" + m.penultimate.name + "'");
  }
  impl->output_names.push_back(m.penultimate.name);

  // One probe pass on a zero input checks every tap's channel count.
  const int dims[4] = {1, m.input_channels, m.input_height, m.input_width};
  cv::Mat probe(4, dims, CV_32F, cv::Scalar(0));
  std::vector<cv::Mat> outs;
  try {
    impl->net.setInput(probe);
    impl->net.forward(outs, impl->output_names);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Load, "probe pass failed for model '" + model_path.string() + "': " + e.what());
  }
  for (std::size_t t = 0; t < m.taps.size(); ++t) {
    const auto got = blob_shape(outs[t]).channels;
    if (got != static_cast<std::size_t>(m.taps[t].channels)) {
      fail(ErrorKind::Load, "tap '" + m.taps[t].name + "' has " + std::to_string(got) + " channels, manifest declares " +
                                std::to_string(m.taps[t].channels));
    }
  }
  if (outs.back().total() != static_cast<std::size_t>(m.penultimate.channels)) {
    fail(ErrorKind::Load, "penultimate output '" + m.penultimate.name + "' has " + std::to_string(outs.back().total()) +
                              " values, manifest declares " + std::to_string(m.penultimate.channels));
  }
  return TeacherEvaluator(std::move(impl));
}

DatasetManifest load_dataset_manifest(const std::filesystem::path& path) {
  const std::string text = slurp(path, ErrorKind::Io);
  DatasetManifest d;
  try {
    const auto j = nlohmann::json::parse(text);
    d.dataset_id = j.value("dataset_id", path.stem().string());
    d.root = path.parent_path() / j.value("root", std::string());
    for (const auto& e : j.at("examples")) {
      d.entries.push_back({e.at("path").get<std::string>(), e.at("class").get<std::string>(),
                           parse_split(e.at("split").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, "dataset manifest '" + path.string() + "' is malformed: " + e.what());
  }
  return d;
}

ActivationCache extract(std::span<TeacherEvaluator> evaluators, const DatasetManifest& dataset, SplitFilter filter,
                        const ExtractOptions& options) {
  if (evaluators.empty()) fail(ErrorKind::Config, "extract needs at least one evaluator");
  if (options.batch_size < 1) fail(ErrorKind::Config, "batch size must be positive");
  const ModelManifest& m = evaluators.front().manifest();

  // Label ids index the sorted class names of the whole manifest, so they do
  // not depend on the split filter.
  std::map<std::string, int> class_ids;
  for (const auto& e : dataset.entries) class_ids.emplace(e.class_name, 0);
  int next_id = 0;
  for (auto& [name, id] : class_ids) id = next_id++;

  std::vector<const DatasetEntry*> selected;
  for (const auto& e : dataset.entries) {
    if (filter == SplitFilter::TrainOnly && e.split != Split::Train) continue;
    if (filter == SplitFilter::TestOnly && e.split != Split::Test) continue;
    selected.push_back(&e);
  }

  const std::size_t workers = std::min(evaluators.size(), std::max<std::size_t>(selected.size(), 1));
  std::vector<std::vector<ExampleRecord>> shard_records(workers);
  std::vector<std::vector<std::string>> shard_errors(workers);

  auto run_shard = [&](std::size_t w) {
    auto& evaluator = evaluators[w];
    const std::size_t begin = selected.size() * w / workers;
    const std::size_t end = selected.size() * (w + 1) / workers;
    for (std::size_t b = begin; b < end; b += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(end, b + static_cast<std::size_t>(options.batch_size));
      std::vector<std::vector<float>> inputs;
      std::vector<const DatasetEntry*> ok;
      for (std::size_t i = b; i < stop; ++i) {
        const auto* entry = selected[i];
        const auto file = dataset.root / entry->path;
        try {
          inputs.push_back(preprocess(decode_image(file), m));
          ok.push_back(entry);
        } catch (const Error& e) {
          shard_errors[w].push_back(file.string() + ": " + e.what());
        }
      }
      if (inputs.empty()) continue;
      auto outputs = evaluator.run(inputs);
      for (std::size_t i = 0; i < ok.size(); ++i) {
        ExampleRecord rec;
        rec.example_id = ok[i]->path;
        rec.label = {class_ids.at(ok[i]->class_name), ok[i]->class_name};
        rec.split = ok[i]->split;
        rec.lavs = std::move(outputs[i].lavs);
        rec.penultimate = std::move(outputs[i].penultimate);
        shard_records[w].push_back(std::move(rec));
      }
      spdlog::debug("extract worker {}: {}/{} images", w, stop - begin, end - begin);
    }
  };

  if (workers == 1) {
    run_shard(0);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> failures(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          run_shard(w);
        } catch (...) {
          failures[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }

  std::vector<std::string> errors;
  for (auto& e : shard_errors) errors.insert(errors.end(), e.begin(), e.end());
  if (!errors.empty()) {
    std::string message = std::to_string(errors.size()) + " file(s) failed ingestion:";
    for (const auto& e : errors) message += "\n  " + e;
    fail(ErrorKind::Ingestion, message);
  }

  ActivationCache cache;
  cache.model_id = m.model_id;
  cache.layers = m.layers();
  cache.penultimate_dim = m.penultimate.channels;
  for (auto& shard : shard_records) {
    for (auto& rec : shard) cache.records.push_back(std::move(rec));
  }
  std::sort(cache.records.begin(), cache.records.end(),
            [](const ExampleRecord& a, const ExampleRecord& b) { return a.example_id < b.example_id; });
  validate(cache);
  return cache;
}

ParityReport check_parity(TeacherEvaluator& evaluator, const ActivationCache& fixture,
                          const std::filesystem::path& image_root) {
  const auto& m = evaluator.manifest();
  if (fixture.layers.size() != m.taps.size() || fixture.penultimate_dim != m.penultimate.channels) {
    fail(ErrorKind::Schema, "parity fixture layout does not match the model manifest");
  }
  ParityReport report;
  for (const auto& rec : fixture.records) {
    std::vector<std::vector<float>> input{preprocess(decode_image(image_root / rec.example_id), m)};
    const auto out = evaluator.run(input).front();
    double worst = 0.0;
    for (std::size_t l = 0; l < rec.lavs.size(); ++l) {
      for (std::size_t c = 0; c < rec.lavs[l].size(); ++c) {
        worst = std::max(worst, std::abs(static_cast<double>(rec.lavs[l][c]) - out.lavs[l][c]));
      }
    }
    for (std::size_t i = 0; i < rec.penultimate.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(rec.penultimate[i]) - out.penultimate[i]));
    }
    if (report.records == 0 || worst > report.max_abs_diff) {
      report.max_abs_diff = worst;
      report.worst_example = rec.example_id;
    }
    ++report.records;
  }
  return report;
}

}  // namespace atl
