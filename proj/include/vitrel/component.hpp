#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vitrel {

enum class ModuleKind : std::uint8_t { kAll, kMhaLf, kFfLf, kNlf, kPatchEmbed, kHead };
enum class OpKind : std::uint8_t { kAll, kGemm, kFc, kSoftmax, kGelu, kLayerNorm, kAdd, kPixel };

inline constexpr int kAllLayers = -1;
// Layer index used by sites that live outside the transformer blocks
// (patch embedding, final layernorm, classifier head).
inline constexpr int kOutsideBlocks = -2;
inline constexpr int kAllPatches = -1;

std::string_view to_string(ModuleKind m);
std::string_view to_string(OpKind op);
ModuleKind parse_module(std::string_view s);
OpKind parse_op(std::string_view s);

/// Hierarchical address of an arithmetic site. Used both as a concrete site
/// label and as a wildcard pattern: any field set to its ALL value matches
/// every value of that field.
struct ComponentId {
  int layer = kAllLayers;
  ModuleKind module = ModuleKind::kAll;
  OpKind op = OpKind::kAll;
  int patch = kAllPatches;

  static ComponentId whole_model() { return {}; }

  bool is_whole_model() const {
    return layer == kAllLayers && module == ModuleKind::kAll && op == OpKind::kAll &&
           patch == kAllPatches;
  }
  // Pattern test: does `this` (as a pattern) cover `site`?
  bool matches(const ComponentId& site) const;

  // Text form "layer/module/op/patch", e.g. "3/MHA-LF/GEMM/*" or "out/HEAD/FC/*".
  std::string str() const;
  static ComponentId parse(std::string_view text);

  std::uint64_t hash() const;

  auto operator<=>(const ComponentId&) const = default;
};

/// Predicate over ComponentIds: a site is in scope when some include pattern
/// matches it and no exclude pattern does.
struct Scope {
  std::vector<ComponentId> include;
  std::vector<ComponentId> exclude;

  static Scope everything() { return Scope{{ComponentId::whole_model()}, {}}; }
  static Scope nothing() { return Scope{}; }

  bool contains(const ComponentId& site) const;
  // Copy of this scope with `component` additionally excluded.
  Scope without(std::span<const ComponentId> component) const;
  bool empty() const { return include.empty(); }
};

}  // namespace vitrel
