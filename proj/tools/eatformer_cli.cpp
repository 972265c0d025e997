// Command-line entry point: model summaries, verification suites, and
// desk-scale training on the bundled synthetic dataset or an image container.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "eatformer/eatformer.hpp"

namespace fs = std::filesystem;
using namespace eatformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

void write_text_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os.good()) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    os << content;
    if (!os.good()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

VariantSpec resolve_spec(const std::string& variant, const std::string& config_path) {
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is.good()) throw std::invalid_argument("cannot read config '" + config_path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_variant_config(buf.str());
  }
  return make_variant_spec(variant);
}

struct SummaryArgs {
  std::string variant = "tiny";
  std::string config;
  std::int64_t size = 224;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
};

int cmd_summary(const SummaryArgs& args) {
  const VariantSpec spec = resolve_spec(args.variant, args.config);
  Model model = build_variant(spec, args.seed);
  const CostReport report = model_cost(model, args.size);

  // aggregate rows per stage for the printed table
  struct Agg {
    std::int64_t params = 0, flops = 0;
  };
  std::vector<std::pair<std::string, Agg>> groups;
  auto bucket = [&](const std::string& key) -> Agg& {
    for (auto& [k, v] : groups)
      if (k == key) return v;
    groups.emplace_back(key, Agg{});
    return groups.back().second;
  };
  for (const auto& row : report.rows) {
    const auto dot = row.name.find('.');
    Agg& a = bucket(row.name.substr(0, dot));
    a.params += row.params;
    a.flops += row.flops;
  }
  std::printf("%s @ %lldx%lld\n", spec.name.c_str(), static_cast<long long>(args.size),
              static_cast<long long>(args.size));
  std::printf("%-10s %14s %14s %12s\n", "section", "params", "flops(2xMAC)", "GMACs");
  for (const auto& [name, agg] : groups)
    std::printf("%-10s %14lld %14lld %12.4f\n", name.c_str(),
                static_cast<long long>(agg.params), static_cast<long long>(agg.flops),
                static_cast<double>(agg.flops) / 2e9);
  std::printf("%-10s %14lld %14lld %12.4f\n", "total",
              static_cast<long long>(report.total_params),
              static_cast<long long>(report.total_flops),
              static_cast<double>(report.total_macs()) / 1e9);
  std::printf("params: %.3fM   argmin split ratio: %.3f\n",
              static_cast<double>(report.total_params) / 1e6, report.argmin_p);

  fs::create_directories(args.out_dir);
  const fs::path out = fs::path(args.out_dir) / (spec.name + "_cost.json");
  nlohmann::json j = report.to_json();
  j["variant"] = spec.name;
  j["input_size"] = args.size;
  write_text_atomic(out, j.dump(2) + "\n");
  std::printf("wrote %s\n", out.string().c_str());
  return kExitOk;
}

struct VerifyArgs {
  std::string suite = "all";
  std::string out;
};

int cmd_verify(const VerifyArgs& args) {
  const auto results = run_suite(args.suite);
  bool all_pass = true;
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    std::printf("[%s] %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : " - ", r.detail.c_str());
  }
  std::printf("%zu checks, %s\n", results.size(), all_pass ? "all passed" : "FAILURES present");
  if (!args.out.empty()) {
    nlohmann::json j;
    j["suite"] = args.suite;
    j["pass"] = all_pass;
    j["checks"] = nlohmann::json::array();
    for (const auto& r : results)
      j["checks"].push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
    write_text_atomic(args.out, j.dump(2) + "\n");
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

struct TrainArgs {
  std::string variant = "desk";
  std::string config;
  bool synthetic = false;
  std::string dataset;
  std::int64_t epochs = 200;
  std::int64_t batch = 25;
  double lr = 5e-4;
  double wd = 5e-2;
  std::uint64_t seed = 0;
  double stop_accuracy = 0.0;
  std::string out_dir = "train_out";
  std::string norm;
  std::string ffn_act;
  double split_ratio = -1.0;
  std::int64_t window = 0;
  bool trh = false;
  bool no_md_msa = false;
};

int cmd_train(const TrainArgs& args) {
  VariantSpec spec = resolve_spec(args.variant, args.config);
  if (!args.norm.empty())
    spec.norm = args.norm == "layernorm" ? NormKind::layernorm : NormKind::batchnorm;
  if (!args.ffn_act.empty())
    spec.ffn_act = args.ffn_act == "relu" ? Activation::relu : Activation::gelu;
  if (args.split_ratio >= 0.0) spec.split_ratio = args.split_ratio;
  if (args.window > 0) spec.window = args.window;
  if (args.trh) spec.use_trh = true;
  if (args.no_md_msa) spec.md_msa = false;

  Dataset data;
  if (args.synthetic) {
    data = Dataset::synthetic(10, 20, 32, args.seed);
    spec.num_classes = 10;
  } else {
    if (args.dataset.empty())
      throw std::invalid_argument("training needs --synthetic or --dataset <path>");
    fs::path path(args.dataset);
    if (fs::is_directory(path)) path /= "train.eatd";
    data = Dataset::load(path.string());
    std::int64_t classes = 0;
    for (auto l : data.labels) classes = std::max<std::int64_t>(classes, l + 1);
    spec.num_classes = std::max<std::int64_t>(classes, 2);
  }
  spec.validate();

  Model model = build_variant(spec, args.seed);
  TrainConfig cfg;
  cfg.epochs = args.epochs;
  cfg.batch_size = args.batch;
  cfg.lr = args.lr;
  cfg.weight_decay = args.wd;
  cfg.seed = args.seed;
  cfg.stop_accuracy = args.stop_accuracy;

  fs::create_directories(args.out_dir);
  std::vector<double> best;
  std::vector<EpochStats> history;
  if (args.epochs > 0) history = train_classifier(model, data, cfg, &best);
  for (const auto& s : history)
    std::printf("epoch %3lld  loss %.6f  acc %.4f\n", static_cast<long long>(s.epoch), s.loss,
                s.accuracy);

  write_text_atomic(fs::path(args.out_dir) / "metrics.csv", metrics_to_csv(history));
  if (!best.empty()) {
    // park the live weights, persist the best snapshot, then restore
    ParamList params = model.params();
    std::vector<double> current;
    for (const auto& p : params)
      current.insert(current.end(), p.tensor.values().begin(), p.tensor.values().end());
    restore_snapshot(model, best);
    save_checkpoint(model, (fs::path(args.out_dir) / "best.eatf").string());
    restore_snapshot(model, current);
  } else {
    save_checkpoint(model, (fs::path(args.out_dir) / "best.eatf").string());
  }
  const AlphaReport alphas = alpha_report(model);
  write_text_atomic(fs::path(args.out_dir) / "alphas.csv", alphas.to_csv());
  write_text_atomic(fs::path(args.out_dir) / "alphas.json", alphas.to_json().dump(2) + "\n");
  if (!history.empty())
    std::printf("final accuracy %.4f after %lld epochs\n", history.back().accuracy,
                static_cast<long long>(history.back().epoch));
  std::printf("wrote %s/{metrics.csv, best.eatf, alphas.csv, alphas.json}\n",
              args.out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EATFormer reference tool: summaries, verification, training"};
  app.require_subcommand(1);

  SummaryArgs sargs;
  auto* summary = app.add_subcommand("summary", "print and export a layer cost report");
  summary->add_option("--variant", sargs.variant, "variant name");
  summary->add_option("--config", sargs.config, "variant config file (overrides --variant)");
  summary->add_option("--size", sargs.size, "square input size")->default_val(224);
  summary->add_option("--out", sargs.out_dir, "output directory")->default_val(".");
  summary->add_option("--seed", sargs.seed, "build seed")->default_val(0);

  VerifyArgs vargs;
  auto* verify = app.add_subcommand("verify", "run invariant suites");
  verify->add_option("--suite", vargs.suite, "ea | grad | cost | roundtrip | all")
      ->default_val("all");
  verify->add_option("--out", vargs.out, "write a JSON report here");

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "fit a variant on a labeled image container");
  train->add_option("--variant", targs.variant, "variant name")->default_val("desk");
  train->add_option("--config", targs.config, "variant config file (overrides --variant)");
  train->add_flag("--synthetic", targs.synthetic, "use the seeded synthetic dataset");
  train->add_option("--dataset", targs.dataset, "dataset container file or directory");
  train->add_option("--epochs", targs.epochs, "epoch count")->default_val(200);
  train->add_option("--batch", targs.batch, "batch size")->default_val(25);
  train->add_option("--lr", targs.lr, "learning rate")->default_val(5e-4);
  train->add_option("--wd", targs.wd, "decoupled weight decay")->default_val(5e-2);
  train->add_option("--seed", targs.seed, "seed for init, data and shuffling")->default_val(0);
  train->add_option("--stop-accuracy", targs.stop_accuracy,
                    "stop once training accuracy reaches this (0 = never)");
  train->add_option("--out", targs.out_dir, "output directory")->default_val("train_out");
  train->add_option("--norm", targs.norm, "batchnorm | layernorm")
      ->check(CLI::IsMember({"batchnorm", "layernorm"}));
  train->add_option("--ffn-act", targs.ffn_act, "gelu | relu")
      ->check(CLI::IsMember({"gelu", "relu"}));
  train->add_option("--split-ratio", targs.split_ratio, "global channel fraction in [0, 1]");
  train->add_option("--window", targs.window, "attention window override");
  train->add_flag("--trh", targs.trh, "classify through the task-related head");
  train->add_flag("--no-md-msa", targs.no_md_msa, "plain attention in the global path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (summary->parsed()) return cmd_summary(sargs);
    if (verify->parsed()) return cmd_verify(vargs);
    if (train->parsed()) return cmd_train(targs);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
