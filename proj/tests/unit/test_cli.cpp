#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tiny_config.hpp"
#include "tiger/cli.hpp"
#include "tiger/config.hpp"
#include "tiger/errors.hpp"
#include "tiger/image_io.hpp"
#include "tiger/training.hpp"

using namespace tiger;
using namespace testing_support;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::filesystem::path& p, const json& j) { std::ofstream(p) << j.dump(1); }

/// Trains the tiny config for two steps and returns the final checkpoint path.
std::filesystem::path tiny_checkpoint(const TempDir& dir) {
  write_json(dir / "cfg.json", to_json(tiny_run_config("float32")));
  cli::TrainArgs args;
  args.config = dir / "cfg.json";
  args.out_dir = dir / "run";
  args.max_steps = 2;
  args.evaluate = false;
  EXPECT_EQ(cli::cmd_train(args), cli::kExitOk);
  return checkpoint_path(dir / "run", 2);
}

std::string config_error(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ShippedFullConfig) {
  auto cfg = load_run_config(std::filesystem::path(TIGER_SOURCE_DIR) / "configs" / "full.json");
  ASSERT_EQ(cfg.sub_discriminators.size(), 2u);
  EXPECT_EQ(cfg.sub_discriminators[0].backbone.kind, BackboneKind::ClipVit);
  EXPECT_EQ(cfg.sub_discriminators[0].adapter, AdapterKind::A);
  EXPECT_EQ(cfg.sub_discriminators[0].backbone.layer_taps, (std::vector<std::int64_t>{2, 5, 9}));
  EXPECT_EQ(cfg.sub_discriminators[1].backbone.kind, BackboneKind::DinoVit);
  EXPECT_EQ(cfg.sub_discriminators[1].adapter, AdapterKind::B);
  EXPECT_EQ(cfg.sub_discriminators[1].backbone.layer_taps, (std::vector<std::int64_t>{1, 5, 9}));
  EXPECT_EQ(cfg.loss.lambda_per_sub, (std::vector<double>{1.0, 0.001}));
  EXPECT_EQ(cfg.loss.lambda_clip, 4.0);
  EXPECT_EQ(cfg.train.lr_g, 1e-4);
  EXPECT_EQ(cfg.train.lr_d, 4e-4);
  EXPECT_EQ(cfg.train.adam_beta1, 0.0);
  EXPECT_EQ(cfg.train.adam_beta2, 0.9);
  EXPECT_EQ(to_json(cfg), to_json(full_config()));
}

TEST(Config, ShippedFilesMatchPresets) {
  const auto dir = std::filesystem::path(TIGER_SOURCE_DIR) / "configs";
  EXPECT_EQ(to_json(load_run_config(dir / "toy.json")), to_json(toy_config()));
  for (const char* preset : {"toy", "full", "full-grid", "toy-grid"}) {
    std::ostringstream out;
    ASSERT_EQ(cli::cmd_print_config(preset, out), cli::kExitOk);
    EXPECT_EQ(json::parse(out.str()), json::parse(slurp(dir / (std::string(preset) + ".json")))) << preset;
  }
}

TEST(Config, RoundTripIsCanonical) {
  for (const auto& cfg : {toy_config(), full_config(), desk_ablation_config(), tiny_run_config()}) {
    auto j = to_json(cfg);
    EXPECT_EQ(to_json(parse_run_config(j)), j);
  }
}

TEST(Config, MissingKeysTakeDefaults) {
  json j{{"train", {{"max_steps", 7}}}, {"sub_discriminators", to_json(toy_config())["sub_discriminators"]}};
  auto cfg = parse_run_config(j);
  EXPECT_EQ(cfg.train.max_steps, 7);
  EXPECT_EQ(cfg.train.lr_d, 4e-4);
  EXPECT_EQ(cfg.eval.r, 100);
}

TEST(Config, ErrorsNameTheField) {
  auto j = to_json(toy_config());
  j["train"]["lr_gg"] = 1.0;
  EXPECT_NE(config_error(j).find("train.lr_gg"), std::string::npos) << config_error(j);

  j = to_json(toy_config());
  j["train"]["batch_size"] = "eight";
  EXPECT_NE(config_error(j).find("train.batch_size"), std::string::npos) << config_error(j);

  j = to_json(toy_config());
  j["loss"]["lambda_per_sub"] = {1.0};
  EXPECT_NE(config_error(j).find("loss.lambda_per_sub"), std::string::npos) << config_error(j);

  j = to_json(toy_config());
  j["generator"]["resolution"] = 48;
  EXPECT_NE(config_error(j).find("generator"), std::string::npos) << config_error(j);

  j = to_json(toy_config());
  j["data"]["text_encoder"]["scale"] = 0.0;
  EXPECT_NE(config_error(j).find("data.text_encoder.scale"), std::string::npos) << config_error(j);

  j = to_json(toy_config());
  j["scorer"]["features"] = "edges";
  EXPECT_NE(config_error(j).find("scorer.features"), std::string::npos) << config_error(j);
}

TEST(Cli, TrainRejectsMismatchedLambdaWithExitTwo) {
  TempDir dir("badcfg");
  auto j = to_json(tiny_run_config());
  j["loss"]["lambda_per_sub"] = {1.0, 0.5, 0.25};
  write_json(dir / "bad.json", j);
  cli::TrainArgs args;
  args.config = dir / "bad.json";
  args.out_dir = dir / "out";
  EXPECT_EQ(cli::cmd_train(args), cli::kExitConfig);
  args.config = dir / "does_not_exist.json";
  EXPECT_NE(cli::cmd_train(args), cli::kExitOk);
}

TEST(Cli, GenerateNamingDeterminismAndRange) {
  TempDir dir("gen");
  const auto ckpt = tiny_checkpoint(dir);
  std::ofstream(dir / "caps.txt") << "a red circle\na blue square\na green triangle\na yellow circle\n";
  for (const char* out : {"a", "b"}) {
    cli::GenerateArgs g{ckpt, dir / "caps.txt", dir / out, 5};
    ASSERT_EQ(cli::cmd_generate(g), cli::kExitOk);
  }
  for (int i = 0; i < 4; ++i) {
    const auto name = "0000" + std::to_string(i) + ".png";
    ASSERT_TRUE(std::filesystem::exists(dir / "a" / name)) << name;
    EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name));
    auto img = read_png(dir / "a" / name);
    EXPECT_EQ(img.sizes(), (std::vector<std::int64_t>{32, 32, 3}));
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "a" / "00004.png"));

  cli::GenerateArgs bad{dir / "nope.tta", dir / "caps.txt", dir / "c", 5};
  EXPECT_EQ(cli::cmd_generate(bad), cli::kExitFailure);
}

TEST(Cli, EvalSchemaDebugModeAndDeterminism) {
  TempDir dir("eval");
  const auto ckpt = tiny_checkpoint(dir);

  cli::EvalArgs debug;
  debug.checkpoint = ckpt;
  debug.debug_real = true;
  std::ostringstream d;
  ASSERT_EQ(cli::cmd_eval(debug, d), cli::kExitOk);
  auto dj = json::parse(d.str());
  EXPECT_LT(dj.at("value").get<double>(), 1e-3);

  for (const char* metric : {"fid", "rprecision"}) {
    cli::EvalArgs e;
    e.checkpoint = ckpt;
    e.metric = metric;
    e.seed = 11;
    std::ostringstream o1, o2;
    ASSERT_EQ(cli::cmd_eval(e, o1), cli::kExitOk);
    ASSERT_EQ(cli::cmd_eval(e, o2), cli::kExitOk);
    auto j = json::parse(o1.str());
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    EXPECT_EQ(keys, (std::set<std::string>{"metric", "value", "n_samples", "seed"}));
    EXPECT_EQ(j.at("metric"), metric);
    EXPECT_EQ(j.at("seed"), 11);
    EXPECT_EQ(o1.str(), o2.str());
  }
}

TEST(Cli, ResumeContinuesAtTheSavedStep) {
  TempDir dir("resume");
  const auto ckpt = tiny_checkpoint(dir);
  cli::TrainArgs args;
  args.config = dir / "cfg.json";
  args.out_dir = dir / "cont";
  args.resume = ckpt;
  args.max_steps = 3;
  args.evaluate = false;
  ASSERT_EQ(cli::cmd_train(args), cli::kExitOk);
  std::ifstream in(dir / "cont" / "metrics.jsonl");
  std::vector<std::int64_t> steps;
  for (std::string line; std::getline(in, line);) {
    auto j = json::parse(line);
    if (j.at("type") == "step") steps.push_back(j.at("step").get<std::int64_t>());
  }
  EXPECT_EQ(steps, (std::vector<std::int64_t>{3}));
}

TEST(AblationGrid, DefaultGridStructure) {
  auto grid = default_ablation_grid(to_json(full_config()));
  ASSERT_EQ(grid.cells.size(), 17u);
  std::map<std::string, int> groups;
  for (const auto& c : grid.cells) groups[c.name.substr(0, c.name.find('_'))]++;
  EXPECT_EQ(groups["adapter"], 4);
  EXPECT_EQ(groups["clip"], 4);
  EXPECT_EQ(groups["dino"], 4);
  EXPECT_EQ(groups["gfm"], 5);
  for (const auto& c : grid.cells) EXPECT_NO_THROW(grid.cell_config(c)) << c.name;

  auto taps = [&](const std::string& name, std::size_t sub) {
    for (const auto& c : grid.cells)
      if (c.name == name) return grid.cell_config(c).sub_discriminators[sub].backbone.layer_taps;
    return std::vector<std::int64_t>{};
  };
  EXPECT_EQ(taps("clip_taps_2_5_9_12", 0), (std::vector<std::int64_t>{2, 5, 9, 12}));
  EXPECT_EQ(taps("dino_taps_2_5", 1), (std::vector<std::int64_t>{2, 5}));
  EXPECT_EQ(to_json(parse_ablation_grid(to_json(grid))), to_json(grid));
}

TEST(AblationGrid, OverridesNeedAnExistingParent) {
  auto base = to_json(toy_config());
  EXPECT_EQ(apply_overrides(base, {{"/train/seed", 9}})["train"]["seed"], 9);
  EXPECT_THROW(apply_overrides(base, {{"/nope/seed", 9}}), ConfigError);
}

TEST(Cli, AblateRunsEveryCellAndControlsVariables) {
  TempDir dir("ablate");
  json grid{{"base", to_json(tiny_run_config("float32"))},
            {"steps", 1},
            {"evaluate", false},
            {"cells",
             {{{"name", "reference"}, {"set", json::object()}},
              {{"name", "other_eval_seed"}, {"set", {{"/eval/seed", 99}}}},
              {{"name", "broken"}, {"set", {{"/generator/resolution", 48}}}},
              {{"name", "no_gfm"}, {"set", {{"/generator/use_gfm", false}}}}}}};
  write_json(dir / "grid.json", grid);
  cli::AblateArgs args;
  args.grid = dir / "grid.json";
  args.out_dir = dir / "out";
  EXPECT_EQ(cli::cmd_ablate(args), cli::kExitFailure);  // the broken cell fails, the others still run

  auto summary = json::parse(slurp(dir / "out" / "summary.json"));
  ASSERT_EQ(summary.size(), 4u);
  std::map<std::string, json> by_name;
  for (const auto& e : summary) by_name[e.at("cell")] = e;
  EXPECT_EQ(by_name["broken"].at("status"), "failed");
  for (const char* ok : {"reference", "other_eval_seed", "no_gfm"}) {
    ASSERT_EQ(by_name[ok].at("status"), "ok") << ok;
    std::ifstream in(by_name[ok].at("metrics").get<std::string>());
    for (std::string line; std::getline(in, line);) EXPECT_NO_THROW((void)json::parse(line));
  }
  EXPECT_EQ(by_name["reference"].at("final_d_loss"), by_name["other_eval_seed"].at("final_d_loss"));
}
