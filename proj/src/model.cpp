#include "vitrel/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "vitrel/errors.hpp"

namespace vitrel {
namespace {

constexpr float kLnEps = 1e-5f;

const ComponentId kPixelId{kOutsideBlocks, ModuleKind::kPatchEmbed, OpKind::kPixel, kAllPatches};
const ComponentId kStemId{kOutsideBlocks, ModuleKind::kPatchEmbed, OpKind::kFc, kAllPatches};
const ComponentId kHeadId{kOutsideBlocks, ModuleKind::kHead, OpKind::kFc, kAllPatches};
const ComponentId kFinalLnId{kOutsideBlocks, ModuleKind::kNlf, OpKind::kLayerNorm, kAllPatches};

ComponentId site_id(int layer, ModuleKind m, OpKind op) { return {layer, m, op, kAllPatches}; }

// Truncated (2 sigma) normal.
class WeightSource {
 public:
  explicit WeightSource(std::uint64_t seed) : rng_(seed) {}

  float sample(float sigma) {
    std::normal_distribution<float> dist(0.0f, sigma);
    for (;;) {
      const float v = dist(rng_);
      if (std::fabs(v) <= 2.0f * sigma) return v;
    }
  }
  std::vector<float> vec(std::size_t n, float sigma) {
    std::vector<float> v(n);
    for (float& x : v) x = sample(sigma);
    return v;
  }
  Linear linear(std::size_t in, std::size_t out) {
    const auto w = vec(in * out, 1.0f / std::sqrt(static_cast<float>(in)));
    Linear l;
    l.weight = quantize(w, {in, out});
    l.bias = vec(out, 0.02f);
    return l;
  }

 private:
  std::mt19937_64 rng_;
};

// Accumulator -> real, plus bias per column.
void dequantize_into(const AccuTile& acc, double scale, const std::vector<float>* bias,
                     float* out) {
  for (std::size_t i = 0; i < acc.rows; ++i)
    for (std::size_t j = 0; j < acc.cols; ++j) {
      float v = static_cast<float>(static_cast<double>(acc.at(i, j)) * scale);
      if (bias) v += (*bias)[j];
      out[i * acc.cols + j] = v;
    }
}

class ForwardPass {
 public:
  ForwardPass(const Model& model, FaultSession* session, const ProtectionConfig& prot,
              OverheadMeter* meter, const ForwardHooks* hooks)
      : m_(model), c_(model.config), session_(session), prot_(prot), meter_(meter),
        hooks_(hooks) {}

  std::vector<float> run(const QuantTensor& image);

 private:
  AccuTile matmul(const std::string& site, const QuantTensor& a, const QuantTensor& b,
                  const ComponentId& id, PatchMapping mapping = PatchMapping::kNone) {
    auto it = prot_.abft.find(site);
    if (it != prot_.abft.end())
      return protected_gemm(a, b, it->second, session_, id, meter_, prot_.policy, mapping);
    return gemm(a, b, session_, id, mapping, meter_);
  }

  // Exposure of NLF (or residual) outputs as 32-bit float words.
  void expose_reals(const ComponentId& id, float* v, std::size_t n) {
    if (session_ == nullptr) return;
    RegionSpec spec;
    spec.id = id;
    spec.words = n;
    spec.width = 32;
    for (const Flip& f : session_->open_region(spec)) {
      auto bits = std::bit_cast<std::uint32_t>(v[f.word]);
      bits ^= std::uint32_t{1} << f.bit;
      v[f.word] = std::bit_cast<float>(bits);
    }
  }

  void finish_nlf(const RangeSite& site, const ComponentId& id, float* v, std::size_t n) {
    expose_reals(id, v, n);
    if (prot_.ranges != nullptr) {
      const RangeEntry* e = prot_.ranges->find(site);
      if (e == nullptr)
        throw ConfigError("range profile has no entry for layer " + std::to_string(site.layer) +
                          " " + std::string(to_string(site.kind)));
      guard_all(v, n, *e, meter_);
    }
    if (hooks_ && hooks_->on_nlf) hooks_->on_nlf(site, std::span<const float>(v, n));
  }

  void layernorm_rows(const std::vector<float>& x, std::size_t rows,
                      const std::vector<float>& gamma, const std::vector<float>& beta,
                      std::vector<float>& out) {
    const std::size_t d = gamma.size();
    out.resize(rows * d);
    for (std::size_t r = 0; r < rows; ++r)
      layernorm<float>(std::span<const float>(x.data() + r * d, d), gamma, beta, kLnEps,
                       std::span<float>(out.data() + r * d, d));
  }

  void residual_add(int layer, ModuleKind module, std::vector<float>& x,
                    const std::vector<float>& branch) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += branch[i];
    if (session_ && session_->exposure().residual_adds)
      expose_reals(site_id(layer, module, OpKind::kAdd), x.data(), x.size());
  }

  void block(int l, std::vector<float>& x);

  const Model& m_;
  const ModelConfig& c_;
  FaultSession* session_;
  const ProtectionConfig& prot_;
  OverheadMeter* meter_;
  const ForwardHooks* hooks_;
};

void ForwardPass::block(int l, std::vector<float>& x) {
  const EncoderBlock& blk = m_.blocks[l];
  const std::size_t T = c_.tokens(), D = c_.embed_dim, H = c_.num_heads, dh = c_.head_dim();
  const std::size_t hidden = c_.hidden_dim();
  const std::string tag = "L" + std::to_string(l) + ".";

  // Multi-head attention.
  std::vector<float> h;
  layernorm_rows(x, T, blk.ln1_gamma, blk.ln1_beta, h);
  finish_nlf({l, NlfKind::kLayerNorm}, site_id(l, ModuleKind::kNlf, OpKind::kLayerNorm), h.data(),
             h.size());
  const QuantTensor hq = quantize(h, {T, D});
  const AccuTile qkv_acc = matmul(tag + "qkv", hq, blk.qkv.weight,
                                  site_id(l, ModuleKind::kMhaLf, OpKind::kFc));
  std::vector<float> qkv(T * 3 * D);
  dequantize_into(qkv_acc, double(hq.scale) * blk.qkv.weight.scale, &blk.qkv.bias, qkv.data());

  std::vector<float> q(T * D), k(T * D), v(T * D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < D; ++j) {
      q[t * D + j] = qkv[t * 3 * D + j];
      k[t * D + j] = qkv[t * 3 * D + D + j];
      v[t * D + j] = qkv[t * 3 * D + 2 * D + j];
    }
  const QuantTensor qq = quantize(q, {T, D}), kq = quantize(k, {T, D}), vq = quantize(v, {T, D});

  std::vector<float> ctx(T * D);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t hh = 0; hh < H; ++hh) {
    QuantTensor qh({T, dh}, qq.scale), kt({dh, T}, kq.scale), vh({T, dh}, vq.scale);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < dh; ++j) {
        qh.data[t * dh + j] = qq.data[t * D + hh * dh + j];
        kt.data[j * T + t] = kq.data[t * D + hh * dh + j];
        vh.data[t * dh + j] = vq.data[t * D + hh * dh + j];
      }
    const AccuTile s_acc =
        matmul(tag + "scores", qh, kt, site_id(l, ModuleKind::kMhaLf, OpKind::kGemm));
    std::vector<float> probs(T * T);
    dequantize_into(s_acc, double(qq.scale) * kq.scale * inv_sqrt, nullptr, probs.data());
    for (std::size_t t = 0; t < T; ++t) {
      std::span<float> row(probs.data() + t * T, T);
      softmax<float>(row, row);
    }
    finish_nlf({l, NlfKind::kSoftmax}, site_id(l, ModuleKind::kNlf, OpKind::kSoftmax),
               probs.data(), probs.size());
    const QuantTensor pq = quantize(probs, {T, T});
    const AccuTile c_acc =
        matmul(tag + "context", pq, vh, site_id(l, ModuleKind::kMhaLf, OpKind::kGemm));
    const double sc = double(pq.scale) * vq.scale;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < dh; ++j)
        ctx[t * D + hh * dh + j] = static_cast<float>(c_acc.at(t, j) * sc);
  }
  const QuantTensor cq = quantize(ctx, {T, D});
  const AccuTile p_acc =
      matmul(tag + "proj", cq, blk.proj.weight, site_id(l, ModuleKind::kMhaLf, OpKind::kFc));
  std::vector<float> attn(T * D);
  dequantize_into(p_acc, double(cq.scale) * blk.proj.weight.scale, &blk.proj.bias, attn.data());
  if (!(hooks_ && hooks_->zero_attention)) residual_add(l, ModuleKind::kMhaLf, x, attn);

  // Feed-forward.
  layernorm_rows(x, T, blk.ln2_gamma, blk.ln2_beta, h);
  finish_nlf({l, NlfKind::kLayerNorm}, site_id(l, ModuleKind::kNlf, OpKind::kLayerNorm), h.data(),
             h.size());
  const QuantTensor h2q = quantize(h, {T, D});
  const AccuTile f1 =
      matmul(tag + "fc1", h2q, blk.fc1.weight, site_id(l, ModuleKind::kFfLf, OpKind::kFc));
  std::vector<float> mid(T * hidden);
  dequantize_into(f1, double(h2q.scale) * blk.fc1.weight.scale, &blk.fc1.bias, mid.data());
  for (float& val : mid) val = gelu(val);
  finish_nlf({l, NlfKind::kGelu}, site_id(l, ModuleKind::kNlf, OpKind::kGelu), mid.data(),
             mid.size());
  const QuantTensor mq = quantize(mid, {T, hidden});
  const AccuTile f2 =
      matmul(tag + "fc2", mq, blk.fc2.weight, site_id(l, ModuleKind::kFfLf, OpKind::kFc));
  std::vector<float> ff(T * D);
  dequantize_into(f2, double(mq.scale) * blk.fc2.weight.scale, &blk.fc2.bias, ff.data());
  if (!(hooks_ && hooks_->zero_feedforward)) residual_add(l, ModuleKind::kFfLf, x, ff);
}

std::vector<float> ForwardPass::run(const QuantTensor& image) {
  const std::size_t T = c_.tokens(), D = c_.embed_dim, P = c_.num_patches();
  const std::size_t S = c_.image_size, C = c_.channels;
  if (image.shape != std::vector<std::size_t>{C, S, S})
    throw ShapeError("forward: image must be " + std::to_string(C) + "x" + std::to_string(S) +
                     "x" + std::to_string(S));

  QuantTensor img = image;
  if (session_ && session_->exposure().pixels) {
    RegionSpec spec;
    spec.id = kPixelId;
    spec.words = img.size();
    spec.width = 8;
    spec.mapping = PatchMapping::kPixels;
    spec.image_size = c_.image_size;
    spec.patch_size = c_.patch_size;
    for (const Flip& f : session_->open_region(spec))
      img.data[f.word] = static_cast<std::int8_t>(static_cast<std::uint8_t>(img.data[f.word]) ^
                                                  (1u << f.bit));
  }

  const QuantTensor patches = patchify(img, c_);
  const AccuTile pe = matmul("stem.patch_embed", patches, m_.patch_embed.weight, kStemId,
                             PatchMapping::kGemmRows);
  std::vector<float> x(T * D);
  for (std::size_t j = 0; j < D; ++j) x[j] = m_.cls_token[j] + m_.pos_embed[j];
  dequantize_into(pe, double(patches.scale) * m_.patch_embed.weight.scale, &m_.patch_embed.bias,
                  x.data() + D);
  for (std::size_t i = D; i < T * D; ++i) x[i] += m_.pos_embed[i];
  (void)P;
  if (hooks_ && hooks_->on_embeddings) hooks_->on_embeddings(x);

  for (int l = 0; l < c_.num_layers; ++l) block(l, x);
  if (hooks_ && hooks_->on_encoded) hooks_->on_encoded(x);

  std::vector<float> feat(D);
  layernorm<float>(std::span<const float>(x.data(), D), m_.lnf_gamma, m_.lnf_beta, kLnEps, feat);
  finish_nlf({kOutsideBlocks, NlfKind::kLayerNorm}, kFinalLnId, feat.data(), feat.size());
  if (hooks_ && hooks_->on_features) hooks_->on_features(feat);

  const QuantTensor fq = quantize(feat, {1, D});
  const AccuTile logits_acc = matmul("head.fc", fq, m_.head.weight, kHeadId);
  std::vector<float> logits(c_.num_classes);
  dequantize_into(logits_acc, double(fq.scale) * m_.head.weight.scale, &m_.head.bias,
                  logits.data());
  return logits;
}

bool same_reals(const std::vector<float>& a, const std::vector<float>& b) { return a == b; }
bool same_linear(const Linear& a, const Linear& b) {
  return a.weight.shape == b.weight.shape && a.weight.data == b.weight.data &&
         a.weight.scale == b.weight.scale && same_reals(a.bias, b.bias);
}

}  // namespace

// ---------------------------------------------------------------------------

int ModelConfig::hidden_dim() const {
  return static_cast<int>(std::lround(embed_dim * mlp_ratio));
}

void ModelConfig::validate() const {
  if (num_layers < 1 || num_heads < 1 || embed_dim < 1 || patch_size < 1 || image_size < 1 ||
      channels < 1 || num_classes < 1)
    throw ConfigError("model config '" + name + "': sizes must be positive");
  if (embed_dim % num_heads != 0)
    throw ConfigError("model config '" + name + "': embed_dim not divisible by num_heads");
  if (image_size % patch_size != 0)
    throw ConfigError("model config '" + name + "': image_size not divisible by patch_size");
  if (!(mlp_ratio > 0) || hidden_dim() < 1)
    throw ConfigError("model config '" + name + "': mlp_ratio must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {{"name", name},
                      {"num_layers", num_layers},
                      {"num_heads", num_heads},
                      {"embed_dim", embed_dim},
                      {"patch_size", patch_size},
                      {"image_size", image_size},
                      {"channels", channels},
                      {"num_classes", num_classes},
                      {"mlp_ratio", mlp_ratio},
                      {"seed", seed}};
  return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("model config: ") + ex.what());
  }
  ModelConfig c;
  if (j.contains("preset")) c = preset(j["preset"].get<std::string>());
  try {
    c.name = j.value("name", c.name);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.image_size = j.value("image_size", c.image_size);
    c.channels = j.value("channels", c.channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("model config: ") + ex.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read model config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

const std::vector<Preset>& presets() {
  static const std::vector<Preset> kPresets = [] {
    auto make = [](std::string name, int layers, int heads, int dim, int patch, int image,
                   int classes) {
      ModelConfig c;
      c.name = std::move(name);
      c.num_layers = layers;
      c.num_heads = heads;
      c.embed_dim = dim;
      c.patch_size = patch;
      c.image_size = image;
      c.num_classes = classes;
      return c;
    };
    std::vector<Preset> p;
    p.push_back({"micro", make("micro", 1, 2, 16, 4, 8, 4), "1", "2"});
    p.push_back({"tiny", make("tiny", 4, 4, 64, 4, 32, 10), "4", "4"});
    p.push_back({"ViT-B", make("ViT-B", 12, 12, 768, 16, 224, 1000), "12", "12"});
    p.push_back({"Swin-T", make("Swin-T", 12, 3, 96, 4, 224, 1000), "[2, 2, 6, 2]",
                 "[3, 6, 12, 24]"});
    p.push_back({"DeepViT-S", make("DeepViT-S", 16, 12, 396, 16, 224, 1000), "16", "12"});
    p.push_back({"CaiT-XXS-24", make("CaiT-XXS-24", 26, 4, 192, 16, 224, 1000), "24+2", "4"});
    return p;
  }();
  return kPresets;
}

ModelConfig preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p.config;
  throw ConfigError("unknown preset '" + name + "'");
}

std::uint64_t parameter_count(const ModelConfig& c) {
  c.validate();
  const std::uint64_t D = c.embed_dim, Hd = c.hidden_dim(), T = c.tokens(), pd = c.patch_dim();
  const std::uint64_t per_layer = 2 * D + (D * 3 * D + 3 * D) + (D * D + D) + 2 * D +
                                  (D * Hd + Hd) + (Hd * D + D);
  return (pd * D + D) + D + T * D + c.num_layers * per_layer + 2 * D +
         (D * std::uint64_t(c.num_classes) + c.num_classes);
}

std::uint64_t base_multiplications(const ModelConfig& c) {
  std::uint64_t total = 0;
  for (const auto& s : gemm_sites(c)) total += s.muls();
  return total;
}

std::vector<GemmSite> gemm_sites(const ModelConfig& c) {
  c.validate();
  const std::size_t T = c.tokens(), D = c.embed_dim, dh = c.head_dim(), Hd = c.hidden_dim();
  const int outside = c.num_layers;
  std::vector<GemmSite> s;
  s.push_back({"stem.patch_embed", kStemId, std::size_t(c.num_patches()), std::size_t(c.patch_dim()),
               D, 1, outside});
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string tag = "L" + std::to_string(l) + ".";
    s.push_back({tag + "qkv", site_id(l, ModuleKind::kMhaLf, OpKind::kFc), T, D, 3 * D, 1, l});
    s.push_back({tag + "scores", site_id(l, ModuleKind::kMhaLf, OpKind::kGemm), T, dh, T,
                 c.num_heads, l});
    s.push_back({tag + "context", site_id(l, ModuleKind::kMhaLf, OpKind::kGemm), T, T, dh,
                 c.num_heads, l});
    s.push_back({tag + "proj", site_id(l, ModuleKind::kMhaLf, OpKind::kFc), T, D, D, 1, l});
    s.push_back({tag + "fc1", site_id(l, ModuleKind::kFfLf, OpKind::kFc), T, D, Hd, 1, l});
    s.push_back({tag + "fc2", site_id(l, ModuleKind::kFfLf, OpKind::kFc), T, Hd, D, 1, l});
  }
  s.push_back({"head.fc", kHeadId, 1, D, std::size_t(c.num_classes), 1, outside});
  return s;
}

ProtectionConfig ProtectionConfig::global_abft(const ModelConfig& c, UncorrectablePolicy policy) {
  ProtectionConfig p;
  p.policy = policy;
  for (const auto& s : gemm_sites(c)) p.abft[s.name] = BlockSplit{1, 1};
  return p;
}

std::uint64_t Model::parameter_count() const {
  std::uint64_t n = patch_embed.weight.size() + patch_embed.bias.size() + cls_token.size() +
                    pos_embed.size() + lnf_gamma.size() + lnf_beta.size() + head.weight.size() +
                    head.bias.size();
  for (const auto& b : blocks)
    n += b.ln1_gamma.size() + b.ln1_beta.size() + b.qkv.weight.size() + b.qkv.bias.size() +
         b.proj.weight.size() + b.proj.bias.size() + b.ln2_gamma.size() + b.ln2_beta.size() +
         b.fc1.weight.size() + b.fc1.bias.size() + b.fc2.weight.size() + b.fc2.bias.size();
  return n;
}

bool Model::operator==(const Model& o) const {
  if (!(config == o.config) || blocks.size() != o.blocks.size()) return false;
  if (!same_linear(patch_embed, o.patch_embed) || !same_linear(head, o.head)) return false;
  if (cls_token != o.cls_token || pos_embed != o.pos_embed || lnf_gamma != o.lnf_gamma ||
      lnf_beta != o.lnf_beta)
    return false;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto &a = blocks[i], &b = o.blocks[i];
    if (a.ln1_gamma != b.ln1_gamma || a.ln1_beta != b.ln1_beta || a.ln2_gamma != b.ln2_gamma ||
        a.ln2_beta != b.ln2_beta || !same_linear(a.qkv, b.qkv) || !same_linear(a.proj, b.proj) ||
        !same_linear(a.fc1, b.fc1) || !same_linear(a.fc2, b.fc2))
      return false;
  }
  return true;
}

Model build_model(const ModelConfig& config) {
  config.validate();
  const std::size_t D = config.embed_dim, T = config.tokens(), Hd = config.hidden_dim();
  WeightSource src(config.seed);
  Model m;
  m.config = config;
  m.patch_embed = src.linear(config.patch_dim(), D);
  m.cls_token = src.vec(D, 1.0f);
  m.pos_embed = src.vec(T * D, 0.02f);
  for (int l = 0; l < config.num_layers; ++l) {
    EncoderBlock b;
    b.ln1_gamma.assign(D, 1.0f);
    b.ln1_beta.assign(D, 0.0f);
    b.qkv = src.linear(D, 3 * D);
    b.proj = src.linear(D, D);
    b.ln2_gamma.assign(D, 1.0f);
    b.ln2_beta.assign(D, 0.0f);
    b.fc1 = src.linear(D, Hd);
    b.fc2 = src.linear(Hd, D);
    m.blocks.push_back(std::move(b));
  }
  m.lnf_gamma.assign(D, 1.0f);
  m.lnf_beta.assign(D, 0.0f);
  m.head = src.linear(D, config.num_classes);
  return m;
}

QuantTensor patchify(const QuantTensor& image, const ModelConfig& c) {
  if (c.patch_size < 1 || c.image_size % c.patch_size != 0)
    throw ConfigError("patchify: image_size not divisible by patch_size");
  const std::size_t C = c.channels, S = c.image_size, p = c.patch_size, g = S / p;
  if (image.shape != std::vector<std::size_t>{C, S, S})
    throw ShapeError("patchify: image shape does not match the config");
  QuantTensor out({g * g, C * p * p}, image.scale);
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px) {
      std::int8_t* dst = out.data.data() + (py * g + px) * C * p * p;
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            *dst++ = image.data[(ch * S + py * p + dy) * S + px * p + dx];
    }
  return out;
}

QuantTensor unpatchify(const QuantTensor& patches, const ModelConfig& c) {
  const std::size_t C = c.channels, S = c.image_size, p = c.patch_size, g = S / p;
  if (patches.shape != std::vector<std::size_t>{g * g, C * p * p})
    throw ShapeError("unpatchify: patch matrix shape does not match the config");
  QuantTensor img({C, S, S}, patches.scale);
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px) {
      const std::int8_t* src = patches.data.data() + (py * g + px) * C * p * p;
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            img.data[(ch * S + py * p + dy) * S + px * p + dx] = *src++;
    }
  return img;
}

std::vector<float> forward(const Model& model, const QuantTensor& image, FaultSession* session,
                           const ProtectionConfig& protection, OverheadMeter* meter,
                           const ForwardHooks* hooks) {
  return ForwardPass(model, session, protection, meter, hooks).run(image);
}

Census take_census(const Model& model, ExposureOptions exposure) {
  const auto& c = model.config;
  QuantTensor blank({std::size_t(c.channels), std::size_t(c.image_size), std::size_t(c.image_size)},
                    1.0f);
  FaultSession s = FaultSession::census_only(exposure);
  forward(model, blank, &s);
  return s.recorded_census();
}

int top1(std::span<const float> logits) {
  int best = 0;
  float best_v = -std::numeric_limits<float>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const float v = logits[i];
    if (std::isnan(v)) continue;
    if (!any || v > best_v) {
      best = static_cast<int>(i);
      best_v = v;
      any = true;
    }
  }
  return best;
}

}  // namespace vitrel
