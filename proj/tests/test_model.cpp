#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "eatformer/checkpoint.hpp"
#include "eatformer/dataset.hpp"
#include "eatformer/model.hpp"
#include "testutil.hpp"

using namespace eatformer;
using testutil::gradcheck;

namespace {

VariantSpec desk_spec() { return make_variant_spec("desk"); }

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("variant registry") {
  VariantSpec tiny = make_variant_spec("tiny");
  REQUIRE(tiny.depths == std::array<int, 4>{2, 2, 6, 2});
  REQUIRE(tiny.dims == std::array<std::int64_t, 4>{64, 128, 192, 256});
  VariantSpec mobile = make_variant_spec("mobile");
  REQUIRE(mobile.depths == std::array<int, 4>{1, 1, 4, 1});
  REQUIRE(mobile.dims == std::array<std::int64_t, 4>{48, 64, 160, 256});
  REQUIRE_THROWS_WITH(make_variant_spec("giant"),
                      Catch::Matchers::ContainsSubstring("tiny") &&
                          Catch::Matchers::ContainsSubstring("mobile") &&
                          Catch::Matchers::ContainsSubstring("unknown variant"));
  VariantSpec bad = tiny;
  bad.dims[2] = 40;  // no whole attention head at ratio 0.5
  REQUIRE_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("dims"));
}

TEST_CASE("desk variant builds and runs forward") {
  Model m = build_variant(desk_spec(), 1);
  Rng rng(2);
  Tensor x = Tensor::rand_uniform({1, 3, 64, 64}, rng);
  Tensor logits = m.forward(x, false);
  REQUIRE(logits.shape() == Shape{1, 10});
  REQUIRE(testutil::all_finite(logits));
}

TEST_CASE("tiny variant emits 1000-way logits") {
  Model m = build_variant(make_variant_spec("tiny"), 1);
  Rng rng(4);
  Tensor x = Tensor::rand_uniform({2, 3, 64, 64}, rng);
  Tensor logits = m.forward(x, false);
  REQUIRE(logits.shape() == Shape{2, 1000});
  REQUIRE(testutil::all_finite(logits));
}

TEST_CASE("variant config text roundtrip") {
  VariantSpec spec = make_variant_spec("tiny");
  spec.use_trh = true;
  spec.norm = NormKind::layernorm;
  spec.split_ratio = 0.25;
  VariantSpec back = parse_variant_config(format_variant_config(spec));
  REQUIRE(back.name == spec.name);
  REQUIRE(back.depths == spec.depths);
  REQUIRE(back.dims == spec.dims);
  REQUIRE(back.dilations == spec.dilations);
  REQUIRE(back.gli_stages == spec.gli_stages);
  REQUIRE(back.msra_stages == spec.msra_stages);
  REQUIRE(back.split_ratio == spec.split_ratio);
  REQUIRE(back.ffn_ratio == spec.ffn_ratio);
  REQUIRE(back.norm == spec.norm);
  REQUIRE(back.use_trh == spec.use_trh);
  REQUIRE_THROWS_AS(parse_variant_config("bogus_key = 1"), std::invalid_argument);
  REQUIRE_THROWS_AS(parse_variant_config("depths = 1,2"), std::invalid_argument);
}

TEST_CASE("stage resolutions follow the /4 /8 /16 /32 pyramid") {
  Model m = build_variant(desk_spec(), 1);
  Rng rng(3);
  Tensor x = Tensor::rand_uniform({1, 3, 64, 64}, rng);
  Tensor f = m.backbone_features(x, false);
  REQUIRE(f.shape() == Shape{1, 128, 2, 2});
  // 96x96 input: 96/32 = 3
  Tensor f2 = m.backbone_features(Tensor::rand_uniform({1, 3, 96, 96}, rng), false);
  REQUIRE(f2.shape() == Shape{1, 128, 3, 3});
  // non-multiple-of-32 inputs are padded at the stem
  Tensor f3 = m.backbone_features(Tensor::rand_uniform({1, 3, 40, 72}, rng), false);
  REQUIRE(f3.shape() == Shape{1, 128, 2, 3});
  REQUIRE_THROWS_AS(m.forward(Tensor::zeros({1, 3, 16, 64}), false), std::invalid_argument);
}

TEST_CASE("small windows route stage maps through padded multi-window attention") {
  VariantSpec spec = desk_spec();
  spec.window = 3;  // stage-3 map at 64x64 input is 4x4 -> padded 2x2 window grid
  Model m = build_variant(spec, 6);
  Rng rng(6);
  Tensor x = Tensor::rand_uniform({1, 3, 64, 64}, rng);
  Tensor logits = m.forward(x, false);
  REQUIRE(logits.shape() == Shape{1, 10});
  REQUIRE(testutil::all_finite(logits));
}

TEST_CASE("inference mode uses running statistics after training") {
  Model m = build_variant(desk_spec(), 13);
  Dataset data = Dataset::synthetic(10, 2, 32, 5);
  std::vector<std::int64_t> idx{0, 1, 2, 3, 4, 5};
  Tensor images = data.batch_images(idx);
  const auto labels = data.batch_labels(idx);
  ParamList params = m.params();
  AdamW opt(AdamW::Opts{.lr = 1e-3});
  for (int i = 0; i < 3; ++i) train_step(m, images, labels, opt, params);
  Tensor eval_logits = m.forward(images, /*training=*/false);
  REQUIRE(testutil::all_finite(eval_logits));
  // running stats moved away from their (0, 1) initialization
  REQUIRE(m.stages[0].blocks[0].ffn_norm->running_mean.values() !=
          std::vector<double>(32, 0.0));
}

TEST_CASE("deterministic build and inference") {
  Model a = build_variant(desk_spec(), 7);
  Model b = build_variant(desk_spec(), 7);
  Rng rng(5);
  Tensor x = Tensor::rand_uniform({2, 3, 32, 32}, rng);
  REQUIRE(testutil::bitwise_equal(a.forward(x, false), b.forward(x, false)));
  // duplicate rows in a batch produce identical logits rows
  std::vector<double> dup(2 * 3 * 32 * 32);
  for (int i = 0; i < 3 * 32 * 32; ++i) dup[i] = dup[3 * 32 * 32 + i] = x.data()[i];
  Tensor logits = a.forward(Tensor::from({2, 3, 32, 32}, dup), false);
  for (int k = 0; k < 10; ++k)
    REQUIRE(logits.data()[k] == logits.data()[10 + k]);
  // different seed differs
  Model c = build_variant(desk_spec(), 8);
  REQUIRE(!testutil::bitwise_equal(a.forward(x, false), c.forward(x, false)));
}

TEST_CASE("trh") {
  Rng rng(31);
  SECTION("T=1, L=1: output is an affine map of the single feature") {
    TrhParams p = TrhParams::make(1, 32, 32, 2, {5}, NormKind::layernorm, Activation::gelu, rng);
    Tensor f = Tensor::randn({1, 1, 32}, rng);
    auto out = trh_forward(f, p);
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].shape() == Shape{1, 5});
    REQUIRE(testutil::all_finite(out[0]));
  }
  SECTION("constant features: output independent of attention distribution") {
    TrhParams p = TrhParams::make(1, 32, 32, 2, {4}, NormKind::layernorm, Activation::gelu, rng);
    Tensor row = Tensor::randn({32}, rng);
    auto expand = [&](std::int64_t L) {
      std::vector<double> d(L * 32);
      for (std::int64_t l = 0; l < L; ++l)
        for (int c = 0; c < 32; ++c) d[l * 32 + c] = row.data()[c];
      return Tensor::from({1, L, 32}, d);
    };
    auto o3 = trh_forward(expand(3), p);
    auto o9 = trh_forward(expand(9), p);
    REQUIRE(testutil::max_abs_diff(o3[0], o9[0]) <= 1e-9);
  }
  SECTION("tasks are isolated: perturbing task-2's token leaves task-1 unchanged") {
    TrhParams p = TrhParams::make(2, 32, 32, 2, {4, 4}, NormKind::layernorm,
                                  Activation::gelu, rng);
    Tensor f = Tensor::randn({2, 6, 32}, rng);
    auto base = trh_forward(f, p);
    p.tokens.values()[32 + 3] += 0.5;  // token of task 2
    auto perturbed = trh_forward(f, p);
    REQUIRE(testutil::max_abs_diff(base[0], perturbed[0]) == 0.0);
    REQUIRE(testutil::max_abs_diff(base[1], perturbed[1]) > 0.0);
  }
  SECTION("enabling trh leaves backbone activations bitwise unchanged") {
    VariantSpec spec = desk_spec();
    Model plain = build_variant(spec, 11);
    spec.use_trh = true;
    Model with_trh = build_variant(spec, 11);
    Rng r2(1);
    Tensor x = Tensor::rand_uniform({1, 3, 32, 32}, r2);
    REQUIRE(testutil::bitwise_equal(plain.backbone_features(x, false),
                                    with_trh.backbone_features(x, false)));
    REQUIRE(with_trh.forward(x, false).shape() == Shape{1, 10});
  }
}

TEST_CASE("checkpoint roundtrip") {
  const auto path = temp_file("eatf_test_ckpt.bin");
  Model m = build_variant(desk_spec(), 21);
  Rng rng(1);
  Tensor x = Tensor::rand_uniform({1, 3, 32, 32}, rng);
  Tensor before = m.forward(x, false);
  save_checkpoint(m, path.string());
  Model loaded = load_checkpoint(path.string());
  REQUIRE(loaded.spec.name == "desk");
  REQUIRE(testutil::bitwise_equal(loaded.forward(x, false), before));

  SECTION("truncated file raises an integrity error, no partial model") {
    auto bytes = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, bytes / 2);
    REQUIRE_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
  }
  SECTION("bad magic raises a format error") {
    std::ofstream os(path, std::ios::binary | std::ios::in | std::ios::out);
    os.seekp(0);
    os.write("NOPE", 4);
    os.close();
    REQUIRE_THROWS_WITH(load_checkpoint(path.string()),
                        Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("different seeds load into the same spec but differ in outputs") {
    Model other = build_variant(desk_spec(), 22);
    save_checkpoint(other, path.string());
    Model reloaded = load_checkpoint(path.string());
    REQUIRE(!testutil::bitwise_equal(reloaded.forward(x, false), before));
  }
  std::filesystem::remove(path);
}

TEST_CASE("train_step mechanics") {
  VariantSpec spec = desk_spec();
  Model m = build_variant(spec, 33);
  ParamList params = m.params();
  Dataset data = Dataset::synthetic(10, 2, 32, /*seed=*/9);
  std::vector<std::int64_t> idx{0, 1, 2, 3};
  Tensor images = data.batch_images(idx);
  auto labels = data.batch_labels(idx);

  SECTION("lr=0 leaves parameters bitwise unchanged") {
    std::vector<std::vector<double>> before;
    for (auto& p : params) before.push_back(p.tensor.values());
    AdamW opt(AdamW::Opts{.lr = 0.0});
    train_step(m, images, labels, opt, params);
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].trainable) REQUIRE(params[i].tensor.values() == before[i]);
  }
  SECTION("decoupled decay shrinks a zero-gradient parameter") {
    AdamW opt(AdamW::Opts{.lr = 1e-2, .weight_decay = 0.5});
    // trh-free model: the head bias gets gradient, but stem1 path norm's
    // running stats are buffers; pick a trainable tensor and cut its grad by
    // zeroing after backward: simplest honest check is a standalone param.
    Tensor lonely = Tensor::from({1}, {2.0}).set_requires_grad(true);
    ParamList single;
    add_param(single, "lonely", lonely);
    opt.step(single);
    REQUIRE(std::fabs(lonely.values()[0]) < 2.0);
    REQUIRE(lonely.values()[0] == Catch::Approx(2.0 * (1.0 - 1e-2 * 0.5)).epsilon(1e-12));
  }
  SECTION("a step on a separable toy decreases the loss") {
    AdamW opt(AdamW::Opts{.lr = 2e-3, .weight_decay = 0.0});
    const double l0 = train_step(m, images, labels, opt, params);
    double l1 = l0;
    for (int i = 0; i < 5; ++i) l1 = train_step(m, images, labels, opt, params);
    REQUIRE(l1 < l0);
    REQUIRE(std::isfinite(l1));
  }
}

TEST_CASE("dataset container roundtrip and synthetic determinism") {
  Dataset a = Dataset::synthetic(10, 3, 32, 77);
  Dataset b = Dataset::synthetic(10, 3, 32, 77);
  REQUIRE(a.pixels == b.pixels);
  REQUIRE(a.labels == b.labels);
  REQUIRE(a.size() == 30);
  const auto path = temp_file("eatf_test_data.bin");
  a.save(path.string());
  Dataset c = Dataset::load(path.string());
  REQUIRE(c.pixels == a.pixels);
  REQUIRE(c.labels == a.labels);
  REQUIRE(c.height == 32);
  std::filesystem::resize_file(path, 10);
  REQUIRE_THROWS_AS(Dataset::load(path.string()), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("end-to-end gradient spot check through the full desk model") {
  VariantSpec spec = desk_spec();
  Model m = build_variant(spec, 55);
  Dataset data = Dataset::synthetic(10, 1, 32, 3);
  std::vector<std::int64_t> idx{0, 5};
  Tensor images = data.batch_images(idx);
  auto labels = data.batch_labels(idx);
  ParamList params = m.params();
  zero_grads(params);
  Tensor loss = cross_entropy(m.forward(images, /*training=*/true), labels);
  loss.backward();

  // spot-check five sampled trainable parameters against central differences
  Rng pick(123);
  int checked = 0;
  const double step = 1e-5;
  while (checked < 5) {
    auto& p = params[pick.uniform_index(params.size())];
    if (!p.trainable || p.tensor.grad().empty()) continue;
    const std::int64_t j =
        static_cast<std::int64_t>(pick.uniform_index(p.tensor.values().size()));
    const double saved = p.tensor.values()[j];
    const double analytic = p.tensor.grad()[j];
    p.tensor.values()[j] = saved + step;
    const double up = cross_entropy(m.forward(images, true), labels).item();
    p.tensor.values()[j] = saved - step;
    const double down = cross_entropy(m.forward(images, true), labels).item();
    p.tensor.values()[j] = saved;
    const double numeric = (up - down) / (2 * step);
    const double scale = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    INFO(p.name << "[" << j << "]: analytic " << analytic << " numeric " << numeric);
    REQUIRE(std::fabs(analytic - numeric) <= 1e-3 * scale);
    ++checked;
  }
}
