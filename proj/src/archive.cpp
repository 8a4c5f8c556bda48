// Weight archive: raw little-endian tensors in <stem>.bin, layout and config
// in <stem>.json.
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "vitrel/errors.hpp"
#include "vitrel/model.hpp"

namespace vitrel {
namespace {

using QuantVisitor = std::function<void(const std::string&, QuantTensor&)>;
using RealVisitor = std::function<void(const std::string&, std::vector<float>&)>;

void visit(Model& m, const QuantVisitor& q, const RealVisitor& r) {
  auto linear = [&](const std::string& name, Linear& l) {
    q(name + ".weight", l.weight);
    r(name + ".bias", l.bias);
  };
  linear("patch_embed", m.patch_embed);
  r("cls_token", m.cls_token);
  r("pos_embed", m.pos_embed);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    r(p + "ln1.gamma", b.ln1_gamma);
    r(p + "ln1.beta", b.ln1_beta);
    linear(p + "qkv", b.qkv);
    linear(p + "proj", b.proj);
    r(p + "ln2.gamma", b.ln2_gamma);
    r(p + "ln2.beta", b.ln2_beta);
    linear(p + "fc1", b.fc1);
    linear(p + "fc2", b.fc2);
  }
  r("lnf.gamma", m.lnf_gamma);
  r("lnf.beta", m.lnf_beta);
  linear("head", m.head);
}

}  // namespace

void save_archive(const Model& model, const std::string& stem) {
  Model m = model;  // visit() wants mutable references
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  visit(
      m,
      [&](const std::string& name, QuantTensor& t) {
        tensors.push_back({{"name", name}, {"dtype", "i8"}, {"shape", t.shape},
                           {"scale", t.scale}, {"offset", blob.size()}, {"bytes", t.size()}});
        blob.append(reinterpret_cast<const char*>(t.data.data()), t.size());
      },
      [&](const std::string& name, std::vector<float>& v) {
        const std::size_t bytes = v.size() * sizeof(float);
        tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", {v.size()}},
                           {"offset", blob.size()}, {"bytes", bytes}});
        blob.append(reinterpret_cast<const char*>(v.data()), bytes);
      });
  nlohmann::json manifest = {{"format", "vitrel-archive-1"},
                             {"config", nlohmann::json::parse(model.config.to_json())},
                             {"tensors", tensors}};
  std::ofstream bin(stem + ".bin", std::ios::binary);
  std::ofstream js(stem + ".json");
  if (!bin || !js) throw std::runtime_error("cannot write archive " + stem);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  js << manifest.dump(2) << "\n";
}

Model load_archive(const std::string& stem) {
  std::ifstream js(stem + ".json");
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!js || !bin) throw ConfigError("archive " + stem + " not found");
  std::stringstream ss;
  ss << bin.rdbuf();
  const std::string blob = ss.str();

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("archive manifest: ") + ex.what());
  }
  const ModelConfig config = ModelConfig::from_json(manifest.at("config").dump());
  Model m = build_model(config);  // shapes; contents are overwritten below
  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = t;

  auto fetch = [&](const std::string& name, std::size_t bytes) -> const nlohmann::json& {
    auto it = entries.find(name);
    if (it == entries.end()) throw ConfigError("archive is missing tensor " + name);
    const auto off = it->second.at("offset").get<std::size_t>();
    if (it->second.at("bytes").get<std::size_t>() != bytes || off + bytes > blob.size())
      throw ShapeError("archive tensor " + name + " has the wrong size");
    return it->second;
  };
  visit(
      m,
      [&](const std::string& name, QuantTensor& t) {
        const auto& e = fetch(name, t.size());
        if (e.at("shape").get<std::vector<std::size_t>>() != t.shape)
          throw ShapeError("archive tensor " + name + " has the wrong shape");
        t.scale = e.at("scale").get<float>();
        std::memcpy(t.data.data(), blob.data() + e.at("offset").get<std::size_t>(), t.size());
        t.validate();
      },
      [&](const std::string& name, std::vector<float>& v) {
        const auto& e = fetch(name, v.size() * sizeof(float));
        std::memcpy(v.data(), blob.data() + e.at("offset").get<std::size_t>(),
                    v.size() * sizeof(float));
      });
  return m;
}

}  // namespace vitrel
