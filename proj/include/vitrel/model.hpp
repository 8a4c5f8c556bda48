#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vitrel/abft.hpp"
#include "vitrel/fault.hpp"
#include "vitrel/meter.hpp"
#include "vitrel/range_guard.hpp"
#include "vitrel/tensor.hpp"

namespace vitrel {

struct ModelConfig {
  std::string name = "custom";
  int num_layers = 4;
  int num_heads = 4;
  int embed_dim = 64;
  int patch_size = 4;
  int image_size = 32;
  int channels = 3;
  int num_classes = 10;
  double mlp_ratio = 4.0;
  std::uint64_t seed = 1;

  void validate() const;
  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int tokens() const { return num_patches() + 1; }  // + class token
  int head_dim() const { return embed_dim / num_heads; }
  int hidden_dim() const;
  int patch_dim() const { return channels * patch_size * patch_size; }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig load(const std::string& path);
  bool operator==(const ModelConfig&) const = default;
};

/// Named configuration. Hierarchical models keep their per-stage lists as
/// text; `config` is the plain-encoder equivalent used for shape checks.
struct Preset {
  std::string name;
  ModelConfig config;
  std::string layers_verbatim;
  std::string heads_verbatim;
};

const std::vector<Preset>& presets();
ModelConfig preset(const std::string& name);

std::uint64_t parameter_count(const ModelConfig& c);
// Multiplications of every GEMM / FC in one forward pass.
std::uint64_t base_multiplications(const ModelConfig& c);

struct Linear {
  QuantTensor weight;  // [in x out]
  std::vector<float> bias;
};

struct EncoderBlock {
  std::vector<float> ln1_gamma, ln1_beta;
  Linear qkv;
  Linear proj;
  std::vector<float> ln2_gamma, ln2_beta;
  Linear fc1;
  Linear fc2;
};

/// Immutable after construction; share freely across threads.
struct Model {
  ModelConfig config;
  Linear patch_embed;
  std::vector<float> cls_token;  // [D]
  std::vector<float> pos_embed;  // [T x D]
  std::vector<EncoderBlock> blocks;
  std::vector<float> lnf_gamma, lnf_beta;
  Linear head;

  std::uint64_t parameter_count() const;
  bool operator==(const Model& o) const;
};

Model build_model(const ModelConfig& config);

/// Non-overlapping p x p patches in row-major patch order; each patch vector
/// is laid out channel-major (c, dy, dx). Result: [P x C*p*p], same scale.
QuantTensor patchify(const QuantTensor& image, const ModelConfig& config);
QuantTensor unpatchify(const QuantTensor& patches, const ModelConfig& config);

/// One GEMM call site family of the model (per-head GEMMs share a site).
struct GemmSite {
  std::string name;  // "L0.qkv", "stem.patch_embed", "head.fc", ...
  ComponentId id;
  std::size_t m = 0, k = 0, n = 0;
  int calls = 1;          // calls per forward pass
  int planner_layer = 0;  // block index, or num_layers for stem/head
  std::uint64_t muls() const { return std::uint64_t(m) * k * n * calls; }
};
std::vector<GemmSite> gemm_sites(const ModelConfig& c);

struct ProtectionConfig {
  std::map<std::string, BlockSplit> abft;  // site name -> split
  UncorrectablePolicy policy = UncorrectablePolicy::kZero;
  const RangeProfile* ranges = nullptr;

  bool empty() const { return abft.empty() && ranges == nullptr; }
  // ABFT at split 1x1 on every GEMM site of the model.
  static ProtectionConfig global_abft(const ModelConfig& c, UncorrectablePolicy policy);
};

struct ForwardHooks {
  bool zero_attention = false;    // drop the MHA branch output
  bool zero_feedforward = false;  // drop the FF branch output
  std::function<void(std::span<const float>)> on_embeddings;  // [T x D] before block 0
  std::function<void(std::span<const float>)> on_encoded;     // [T x D] after last block
  std::function<void(std::span<const float>)> on_features;    // final-LN class token [D]
  // Every NLF output tensor after injection and guarding.
  std::function<void(const RangeSite&, std::span<const float>)> on_nlf;
};

/// Logits for one image. Every GEMM / FC / NLF call is routed with its
/// ComponentId through `session` (may be null) and, when enabled, through
/// ABFT or the range guard.
std::vector<float> forward(const Model& model, const QuantTensor& image,
                           FaultSession* session = nullptr,
                           const ProtectionConfig& protection = {},
                           OverheadMeter* meter = nullptr, const ForwardHooks* hooks = nullptr);

// Census of every exposed region for this model and exposure options.
Census take_census(const Model& model, ExposureOptions exposure = {});

// Index of the largest logit, NaN treated as -inf (ties: lowest index).
int top1(std::span<const float> logits);

// Weight archive: <stem>.bin (raw tensors) + <stem>.json (manifest).
void save_archive(const Model& model, const std::string& stem);
Model load_archive(const std::string& stem);

}  // namespace vitrel
