#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "vitrel/lab.hpp"
#include "vitrel/model.hpp"

using namespace vitrel;

TEST_CASE("presets: shapes and parameter counts") {
  // Published count of the reference ViT-B/16 (ImageNet-1k head).
  CHECK(parameter_count(preset("ViT-B")) == 86'567'656);
  const Model vitb = build_model(preset("ViT-B"));
  CHECK(vitb.parameter_count() == 86'567'656);
  CHECK(vitb.config.tokens() == 197);

  const ModelConfig tiny = preset("tiny");
  CHECK(tiny.num_layers == 4);
  CHECK(tiny.num_heads == 4);
  CHECK(tiny.embed_dim == 64);
  CHECK(tiny.patch_size == 4);
  CHECK(tiny.tokens() == 65);
  CHECK(build_model(tiny).parameter_count() == parameter_count(tiny));

  for (const auto& p : presets()) CHECK(parameter_count(p.config) > 0);
  bool swin = false, cait = false;
  for (const auto& p : presets()) {
    if (p.name == "Swin-T") swin = p.layers_verbatim == "[2, 2, 6, 2]" && p.heads_verbatim == "[3, 6, 12, 24]";
    if (p.name == "CaiT-XXS-24") cait = p.layers_verbatim == "24+2";
  }
  CHECK(swin);
  CHECK(cait);
  CHECK_THROWS_AS(preset("ResNet-50"), ConfigError);
}

TEST_CASE("build_model: deterministic per seed") {
  ModelConfig c = preset("tiny");
  const Model a = build_model(c), b = build_model(c);
  CHECK(a == b);
  c.seed = 2;
  CHECK_FALSE(build_model(c) == a);
}

TEST_CASE("model config: validation and JSON") {
  ModelConfig c = preset("tiny");
  c.num_heads = 3;
  CHECK_THROWS_AS(build_model(c), ConfigError);
  c = preset("tiny");
  c.patch_size = 5;
  CHECK_THROWS_AS(build_model(c), ConfigError);
  c = preset("tiny");
  c.num_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = preset("tiny");
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  const auto over = ModelConfig::from_json(R"({"preset": "tiny", "num_layers": 2, "seed": 9})");
  CHECK(over.num_layers == 2);
  CHECK(over.seed == 9);
  CHECK(over.embed_dim == 64);
  CHECK_THROWS_AS(ModelConfig::from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json(R"({"embed_dim": "wide"})"), ConfigError);
}

TEST_CASE("patchify: examples and bijection") {
  ModelConfig c;
  c.channels = 1;
  c.image_size = 4;
  c.patch_size = 2;
  QuantTensor img({1, 4, 4}, 1.0f);
  for (int i = 0; i < 16; ++i) img.data[i] = static_cast<std::int8_t>(i);
  const QuantTensor p = patchify(img, c);
  CHECK(p.shape == std::vector<std::size_t>{4, 4});
  CHECK(p.data == std::vector<std::int8_t>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});
  CHECK(unpatchify(p, c).data == img.data);

  const ModelConfig tiny = preset("tiny");
  std::mt19937_64 rng(1);
  QuantTensor rgb({3, 32, 32}, 0.5f);
  for (auto& v : rgb.data) v = static_cast<std::int8_t>(rng());
  const QuantTensor tp = patchify(rgb, tiny);
  CHECK(tp.shape == std::vector<std::size_t>{64, 48});
  CHECK(unpatchify(tp, tiny).data == rgb.data);
  // Each pixel lands in exactly one patch slot (counting oracle).
  std::vector<int> seen(3 * 32 * 32, 0);
  for (std::size_t pi = 0; pi < 64; ++pi)
    for (std::size_t e = 0; e < 48; ++e) {
      const std::size_t ch = e / 16, dy = (e % 16) / 4, dx = e % 4;
      const std::size_t y = (pi / 8) * 4 + dy, x = (pi % 8) * 4 + dx;
      REQUIRE(tp.data[pi * 48 + e] == rgb.data[(ch * 32 + y) * 32 + x]);
      ++seen[(ch * 32 + y) * 32 + x];
    }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

TEST_CASE("forward: shape, determinism and zero-rate identity") {
  const auto& w = fixture::tiny();
  const auto& img = w.data.eval[0].image;
  const auto clean = forward(w.model, img);
  CHECK(clean.size() == 10);
  CHECK(forward(w.model, img) == clean);
  auto b = FaultSession::bernoulli(0.0, 1, Scope::everything());
  CHECK(forward(w.model, img, &b) == clean);
  const auto census = take_census(w.model);
  auto p = FaultSession::planned(0.0, 1, Scope::everything(), census);
  CHECK(forward(w.model, img, &p) == clean);
  CHECK(b.flips_applied() + p.flips_applied() == 0);
  CHECK_THROWS_AS(forward(w.model, QuantTensor({3, 16, 16}, 1.0f)), ShapeError);
}

TEST_CASE("forward: ABFT without faults changes nothing and meters the base work") {
  const auto& w = fixture::tiny();
  const auto prot = ProtectionConfig::global_abft(w.model.config, UncorrectablePolicy::kZero);
  OverheadMeter meter;
  for (int i = 0; i < 3; ++i)
    CHECK(forward(w.model, w.data.eval[i].image, nullptr, prot, &meter) ==
          forward(w.model, w.data.eval[i].image));
  const auto s = meter.snapshot();
  CHECK(s.base_muls == 3 * base_multiplications(w.model.config));
  CHECK(s.abft_recover_muls == 0);
  CHECK(s.abft_detect_muls > 0);
}

TEST_CASE("gemm sites: multiplication totals") {
  const ModelConfig c = preset("tiny");
  const std::uint64_t T = 65, D = 64, H = 4, Hd = 256, L = 4;
  CHECK(base_multiplications(c) ==
        64 * 48 * D + L * (T * D * 3 * D + 2 * H * T * T * (D / H) + T * D * D + 2 * T * D * Hd) + D * 10);
  for (const auto& s : gemm_sites(c)) {
    if (s.id.layer >= 0)
      CHECK(s.planner_layer == s.id.layer);
    else
      CHECK(s.planner_layer == c.num_layers);
  }
}

TEST_CASE("residual identity: dropping both branches passes embeddings through") {
  const auto& w = fixture::tiny();
  std::vector<float> before, after;
  ForwardHooks h;
  h.zero_attention = h.zero_feedforward = true;
  h.on_embeddings = [&](std::span<const float> v) { before.assign(v.begin(), v.end()); };
  h.on_encoded = [&](std::span<const float> v) { after.assign(v.begin(), v.end()); };
  forward(w.model, w.data.eval[2].image, nullptr, {}, nullptr, &h);
  REQUIRE(before.size() == 65 * 64);
  CHECK(before == after);

  ForwardHooks live;
  live.on_embeddings = h.on_embeddings;
  live.on_encoded = h.on_encoded;
  forward(w.model, w.data.eval[2].image, nullptr, {}, nullptr, &live);
  CHECK(before != after);
}

TEST_CASE("attention rows are probability vectors inside the model") {
  const auto& w = fixture::tiny();
  int checked = 0;
  ForwardHooks h;
  h.on_nlf = [&](const RangeSite& site, std::span<const float> v) {
    if (site.kind != NlfKind::kSoftmax) return;
    const std::size_t T = 65;
    REQUIRE(v.size() == T * T);  // one region per head
    for (std::size_t r = 0; r < v.size() / T; ++r) {
      double sum = 0;
      for (std::size_t j = 0; j < T; ++j) {
        REQUIRE(v[r * T + j] >= 0.0f);
        sum += v[r * T + j];
      }
      REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
    ++checked;
  };
  forward(w.model, w.data.eval[3].image, nullptr, {}, nullptr, &h);
  CHECK(checked == 4 * 4);
}

TEST_CASE("clean accuracy of the fitted tiny model") {
  const auto& w = fixture::tiny();
  const double acc = clean_accuracy(w.model, w.data.eval);
  MESSAGE("tiny clean accuracy " << acc);
  CHECK(acc > 0.8);
  CHECK(top1(std::vector<float>{0.1f, std::nanf(""), 0.3f, 0.3f}) == 2);
}

TEST_CASE("archive: round-trip and corruption") {
  const auto& w = fixture::micro();
  const auto dir = std::filesystem::temp_directory_path() / "vitrel_archive_test";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "m").string();
  save_archive(w.model, stem);
  const Model back = load_archive(stem);
  CHECK(back == w.model);
  CHECK(forward(back, w.data.eval[0].image) == forward(w.model, w.data.eval[0].image));

  // Truncated payload is rejected.
  std::filesystem::resize_file(stem + ".bin", std::filesystem::file_size(stem + ".bin") - 4);
  CHECK_THROWS(load_archive(stem));
  CHECK_THROWS(load_archive((dir / "missing").string()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("full protection at BER 1e-9 keeps 98% of top-1 predictions" * doctest::test_suite("slow")) {
  const auto& w = fixture::tiny();
  REQUIRE(w.data.eval.size() == 500);
  const RangeProfile ranges = profile(w.model, fixture::first(w.data.train, 64));
  auto prot = ProtectionConfig::global_abft(w.model.config, UncorrectablePolicy::kZero);
  prot.ranges = &ranges;
  const Census census = take_census(w.model);
  int agree = 0;
  for (std::size_t i = 0; i < w.data.eval.size(); ++i) {
    const auto& img = w.data.eval[i].image;
    auto s = FaultSession::planned(1e-9, derive_seed(99, i), Scope::everything(), census);
    agree += top1(forward(w.model, img, &s, prot)) == top1(forward(w.model, img));
  }
  MESSAGE("agreement " << agree << "/500");
  CHECK(agree >= 490);
}
