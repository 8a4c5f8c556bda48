#include "vitrel/component.hpp"

#include <algorithm>
#include <array>
#include <charconv>

#include "vitrel/errors.hpp"

namespace vitrel {
namespace {

constexpr std::array<std::string_view, 6> kModuleNames = {"*",      "MHA-LF",      "FF-LF",
                                                          "NLF",    "PATCH-EMBED", "HEAD"};
constexpr std::array<std::string_view, 8> kOpNames = {"*",    "GEMM",      "FC",  "SOFTMAX",
                                                      "GELU", "LAYERNORM", "ADD", "PIXEL"};

int parse_index(std::string_view s, std::string_view what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0)
    throw ConfigError("bad " + std::string(what) + " index '" + std::string(s) + "'");
  return v;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

std::string_view to_string(ModuleKind m) { return kModuleNames[static_cast<std::size_t>(m)]; }
std::string_view to_string(OpKind op) { return kOpNames[static_cast<std::size_t>(op)]; }

ModuleKind parse_module(std::string_view s) {
  for (std::size_t i = 0; i < kModuleNames.size(); ++i)
    if (kModuleNames[i] == s || (i == 0 && s == "ALL")) return static_cast<ModuleKind>(i);
  throw ConfigError("unknown module kind '" + std::string(s) + "'");
}

OpKind parse_op(std::string_view s) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i)
    if (kOpNames[i] == s || (i == 0 && s == "ALL")) return static_cast<OpKind>(i);
  throw ConfigError("unknown op kind '" + std::string(s) + "'");
}

bool ComponentId::matches(const ComponentId& site) const {
  if (layer != kAllLayers && layer != site.layer) return false;
  if (module != ModuleKind::kAll && module != site.module) return false;
  if (op != OpKind::kAll && op != site.op) return false;
  if (patch != kAllPatches && patch != site.patch) return false;
  return true;
}

std::string ComponentId::str() const {
  std::string out;
  if (layer == kAllLayers)
    out = "*";
  else if (layer == kOutsideBlocks)
    out = "out";
  else
    out = std::to_string(layer);
  out += '/';
  out += to_string(module);
  out += '/';
  out += to_string(op);
  out += '/';
  out += patch == kAllPatches ? std::string("*") : std::to_string(patch);
  return out;
}

ComponentId ComponentId::parse(std::string_view text) {
  std::array<std::string_view, 4> parts{"*", "*", "*", "*"};
  std::size_t n = 0;
  while (!text.empty()) {
    if (n == parts.size()) throw ConfigError("component id has too many fields");
    auto slash = text.find('/');
    parts[n++] = text.substr(0, slash);
    if (slash == std::string_view::npos) break;
    text.remove_prefix(slash + 1);
  }
  ComponentId id;
  if (parts[0] == "out")
    id.layer = kOutsideBlocks;
  else if (parts[0] != "*" && parts[0] != "ALL")
    id.layer = parse_index(parts[0], "layer");
  id.module = parse_module(parts[1]);
  id.op = parse_op(parts[2]);
  if (parts[3] != "*" && parts[3] != "ALL") id.patch = parse_index(parts[3], "patch");
  return id;
}

std::uint64_t ComponentId::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(layer)));
  h = mix(h, static_cast<std::uint64_t>(module));
  h = mix(h, static_cast<std::uint64_t>(op));
  h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(patch)));
  return h;
}

bool Scope::contains(const ComponentId& site) const {
  const auto hit = [&](const ComponentId& p) { return p.matches(site); };
  return std::any_of(include.begin(), include.end(), hit) &&
         std::none_of(exclude.begin(), exclude.end(), hit);
}

Scope Scope::without(std::span<const ComponentId> component) const {
  Scope s = *this;
  s.exclude.insert(s.exclude.end(), component.begin(), component.end());
  return s;
}

}  // namespace vitrel
