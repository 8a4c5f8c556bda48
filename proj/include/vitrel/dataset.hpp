#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitrel/model.hpp"

namespace vitrel {

struct LabeledImage {
  QuantTensor image;  // [C x S x S]
  int label = 0;
};

using Dataset = std::vector<LabeledImage>;

struct SyntheticSpec {
  int per_class_train = 40;
  int per_class_eval = 10;
  double noise = 0.6;  // std-dev of pixel noise relative to the class pattern
  std::uint64_t seed = 7;
};

struct DatasetSplit {
  Dataset train;
  Dataset eval;
};

/// Seeded synthetic classification set: every class owns a random per-patch
/// colour pattern; images are that pattern plus Gaussian pixel noise.
DatasetSplit make_synthetic(const ModelConfig& config, const SyntheticSpec& spec);

/// Labelled image directory: <root>/<label>/<file>.ppm (binary P6, or P5 for
/// one channel), each image_size x image_size. Labels are the sorted
/// subdirectory names mapped to 0..N-1.
Dataset load_image_directory(const std::string& root, const ModelConfig& config);

/// Least-squares (ridge) fit of the classifier head on clean class-token
/// features of a frozen encoder. Returns the model with its head replaced.
Model fit_head(Model model, const Dataset& train, double ridge = 1e-2);

double clean_accuracy(const Model& model, const Dataset& data);

}  // namespace vitrel
