#include "vitrel/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/Dense>

#include "vitrel/errors.hpp"

namespace vitrel {
namespace {

// Fixed input scale so every image shares one quantization grid.
constexpr float kPixelScale = 4.0f / 127.0f;

QuantTensor encode_pixels(const std::vector<double>& v, std::size_t c, std::size_t s) {
  QuantTensor t({c, s, s}, kPixelScale);
  for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = saturate_round(v[i] / kPixelScale);
  return t;
}

std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

QuantTensor read_ppm(const std::filesystem::path& path, const ModelConfig& c) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  const std::string magic = next_token(in);
  const int channels = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
  if (channels == 0) throw ConfigError(path.string() + ": only binary P6/P5 images are supported");
  if (channels != c.channels)
    throw ConfigError(path.string() + ": channel count does not match the model");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw ConfigError(path.string() + ": malformed header");
  }
  if (w != c.image_size || h != c.image_size)
    throw ShapeError(path.string() + ": image is not " + std::to_string(c.image_size) + " square");
  if (maxval < 1 || maxval > 255) throw ConfigError(path.string() + ": unsupported maxval");
  const std::size_t S = c.image_size, C = channels;
  std::vector<unsigned char> raw(S * S * C);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw ConfigError(path.string() + ": truncated pixel data");
  // Interleaved HWC -> planar CHW, mapped to [-1, 1].
  std::vector<double> v(raw.size());
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x)
      for (std::size_t ch = 0; ch < C; ++ch)
        v[(ch * S + y) * S + x] = 2.0 * raw[(y * S + x) * C + ch] / maxval - 1.0;
  return encode_pixels(v, C, S);
}

std::vector<float> features(const Model& model, const QuantTensor& image) {
  std::vector<float> f;
  ForwardHooks hooks;
  hooks.on_features = [&](std::span<const float> v) { f.assign(v.begin(), v.end()); };
  forward(model, image, nullptr, {}, nullptr, &hooks);
  return f;
}

}  // namespace

DatasetSplit make_synthetic(const ModelConfig& config, const SyntheticSpec& spec) {
  config.validate();
  if (spec.per_class_train < 0 || spec.per_class_eval < 0 || !(spec.noise >= 0))
    throw ConfigError("synthetic dataset: counts and noise must be non-negative");
  const std::size_t C = config.channels, S = config.image_size, p = config.patch_size;
  const std::size_t g = S / p;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  // patterns[class][ch][patch]
  std::vector<std::vector<double>> patterns(config.num_classes, std::vector<double>(C * g * g));
  for (auto& pat : patterns)
    for (double& v : pat) v = unit(rng);

  auto sample = [&](int label) {
    std::vector<double> v(C * S * S);
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
          v[(ch * S + y) * S + x] =
              patterns[label][(ch * g + y / p) * g + x / p] + spec.noise * unit(rng);
    return LabeledImage{encode_pixels(v, C, S), label};
  };

  DatasetSplit out;
  for (int i = 0; i < spec.per_class_train; ++i)
    for (int label = 0; label < config.num_classes; ++label) out.train.push_back(sample(label));
  for (int i = 0; i < spec.per_class_eval; ++i)
    for (int label = 0; label < config.num_classes; ++label) out.eval.push_back(sample(label));
  return out;
}

Dataset load_image_directory(const std::string& root, const ModelConfig& config) {
  namespace fs = std::filesystem;
  config.validate();
  if (!fs::is_directory(root)) throw ConfigError("image directory " + root + " not found");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw ConfigError(root + ": no label subdirectories");
  if (static_cast<int>(classes.size()) > config.num_classes)
    throw ConfigError(root + ": more labels than model classes");

  Dataset out;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label]))
      if (e.is_regular_file()) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(e.path());
      }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back({read_ppm(f, config), static_cast<int>(label)});
  }
  return out;
}

Model fit_head(Model model, const Dataset& train, double ridge) {
  if (train.empty()) throw ConfigError("fit_head: empty training set");
  if (!(ridge >= 0)) throw ConfigError("fit_head: ridge must be non-negative");
  const int D = model.config.embed_dim, K = model.config.num_classes;
  const Eigen::Index n = static_cast<Eigen::Index>(train.size());

  Eigen::MatrixXd x(n, D + 1);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, K);
  std::vector<std::vector<float>> feats(train.size());
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < n; ++i) feats[i] = features(model, train[i].image);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < D; ++j) x(i, j) = feats[i][j];
    x(i, D) = 1.0;
    if (train[i].label < 0 || train[i].label >= K)
      throw ConfigError("fit_head: label out of range");
    y(i, train[i].label) = 1.0;
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().head(D).array() += ridge * static_cast<double>(n);
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);  // [(D+1) x K]

  std::vector<float> wv(static_cast<std::size_t>(D) * K);
  for (int i = 0; i < D; ++i)
    for (int k = 0; k < K; ++k) wv[i * K + k] = static_cast<float>(w(i, k));
  model.head.weight = quantize(wv, {std::size_t(D), std::size_t(K)});
  model.head.bias.resize(K);
  for (int k = 0; k < K; ++k) model.head.bias[k] = static_cast<float>(w(D, k));
  return model;
}

double clean_accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw ConfigError("clean_accuracy: empty dataset");
  long correct = 0;
#pragma omp parallel for reduction(+ : correct) schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i)
    if (top1(forward(model, data[i].image)) == data[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace vitrel
