#include "tiger/cli.hpp"

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tiger/config.hpp"
#include "tiger/errors.hpp"
#include "tiger/image_io.hpp"
#include "tiger/training.hpp"

using nlohmann::json;

namespace tiger::cli {

namespace {

template <class F>
int guarded(const char* command, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    spdlog::error("{}: invalid configuration: {}", command, e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitFailure;
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open captions file '{}'", path.string()));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

CheckpointManifest open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError(fmt::format("checkpoint '{}' does not exist", path.string()));
  return load_checkpoint(path);
}

}  // namespace

int cmd_train(const TrainArgs& args) {
  return guarded("train", [&] {
    auto doc = [&] {
      std::ifstream in(args.config);
      if (!in) throw IoError(fmt::format("cannot open config '{}'", args.config.string()));
      try {
        return json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError(e.what());
      }
    }();
    if (args.seed) doc["train"]["seed"] = *args.seed;
    if (args.max_steps) doc["train"]["max_steps"] = *args.max_steps;
    auto cfg = parse_run_config(doc);
    auto data = prepare_data(cfg.data);
    TrainOptions opts{args.out_dir, args.resume, args.evaluate};
    auto result = train(cfg, data, opts);
    std::cout << json{{"final_checkpoint", result.final_checkpoint.string()},
                      {"metrics", result.metrics_path.string()},
                      {"steps", result.steps.size()}}
                     .dump()
              << std::endl;
    return kExitOk;
  });
}

int cmd_generate(const GenerateArgs& args) {
  CheckpointManifest m;
  try {
    m = open_checkpoint(args.checkpoint);
  } catch (const std::exception& e) {
    spdlog::error("generate: cannot read checkpoint: {}", e.what());
    return kExitFailure;
  }
  return guarded("generate", [&] {
    auto cfg = parse_run_config(m.config);
    const auto dtype = cfg.train.torch_dtype();
    auto generator = load_generator(m, dtype);
    auto encoder = make_text_encoder(cfg.data.text_encoder);
    auto captions = read_lines(args.captions);
    if (captions.empty()) throw ConfigError("captions file has no captions");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(args.seed);
    auto images = generate_images(generator, *encoder, dtype, captions, gen);
    std::filesystem::create_directories(args.out_dir);
    for (std::int64_t i = 0; i < images.size(0); ++i)
      write_png(args.out_dir / fmt::format("{:05}.png", i), to_rgb8(images[i]));
    spdlog::info("wrote {} images to {}", images.size(0), args.out_dir.string());
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  CheckpointManifest m;
  try {
    m = open_checkpoint(args.checkpoint);
  } catch (const std::exception& e) {
    spdlog::error("eval: cannot read checkpoint: {}", e.what());
    return kExitFailure;
  }
  return guarded("eval", [&] {
    if (args.metric != "fid" && args.metric != "rprecision")
      throw ConfigError(fmt::format("metric '{}' is not one of fid, rprecision", args.metric));
    const auto split = parse_split(args.split);
    auto cfg = parse_run_config(m.config);
    if (args.seed) cfg.eval.seed = *args.seed;
    if (args.data_root) {
      cfg.data.kind = "directory";
      cfg.data.root = *args.data_root;
    }
    const auto dtype = cfg.train.torch_dtype();
    auto data = prepare_data(cfg.data);
    const Dataset& records = split == Split::Train ? data.train : data.test;

    json result{{"metric", args.metric}, {"seed", cfg.eval.seed}};
    if (args.debug_real) {
      if (args.metric != "fid") throw ConfigError("--debug-real applies to metric fid only");
      const auto n = std::min<std::int64_t>(cfg.eval.fid_samples, static_cast<std::int64_t>(records.size()));
      std::vector<torch::Tensor> real;
      for (std::int64_t i = 0; i < n; ++i) real.push_back(records[i].image);
      auto stacked = torch::stack(real);
      auto extractor = make_extractor(cfg.eval, cfg.generator.resolution);
      result["value"] = compute_fid(stacked, stacked, *extractor);
      result["n_samples"] = n;
    } else {
      auto generator = load_generator(m, dtype);
      std::shared_ptr<ImageTextScorer> scorer;
      if (args.metric == "rprecision" && cfg.eval.rprecision_scorer == "embedding") {
        if (cfg.scorer.kind == "probe") {
          auto probe = std::make_shared<LinearProbeScorer>(cfg.scorer.seed, cfg.generator.resolution, dtype,
                                                          parse_probe_features(cfg.scorer.features));
          std::vector<std::pair<std::string, torch::Tensor>> tensors;
          for (const auto& [n, t] : m.archive.tensors)
            if (n.rfind("scorer.", 0) == 0) tensors.emplace_back(n.substr(7), t);
          if (tensors.empty()) throw FormatError("checkpoint carries no probe scorer tensors");
          probe->load_state(tensors);
          scorer = probe;
        } else {
          scorer = std::make_shared<VitImageScorer>(*cfg.scorer.backbone, dtype);
        }
      }
      auto extractor = make_extractor(cfg.eval, cfg.generator.resolution);
      EvalOptions opts{args.metric == "fid", args.metric == "rprecision"};
      auto rec = evaluate(cfg.eval, generator, *data.encoder, scorer.get(), dtype, records, *extractor, m.step, opts);
      if (args.metric == "fid") {
        result["value"] = *rec.fid;
        result["n_samples"] = rec.n_fake;
      } else {
        result["value"] = *rec.r_precision;
        result["n_samples"] = std::min<std::int64_t>(cfg.eval.rprecision_samples, static_cast<std::int64_t>(records.size()));
      }
    }
    out << result.dump() << std::endl;
    return kExitOk;
  });
}

int cmd_ablate(const AblateArgs& args) {
  return guarded("ablate", [&] {
    AblationGrid grid;
    if (args.grid) {
      grid = load_ablation_grid(*args.grid);
    } else {
      const auto base = args.base_config ? to_json(load_run_config(*args.base_config)) : to_json(full_config());
      grid = default_ablation_grid(base);
    }
    if (args.steps) grid.steps = *args.steps;
    std::filesystem::create_directories(args.out_dir);

    json summary = json::array();
    int failures = 0;
    for (const auto& cell : grid.cells) {
      json entry{{"cell", cell.name}, {"set", cell.set}};
      const auto cell_dir = args.out_dir / cell.name;
      try {
        auto cfg = grid.cell_config(cell);
        auto data = prepare_data(cfg.data);
        auto result = train(cfg, data, TrainOptions{cell_dir, std::nullopt, grid.evaluate});
        entry["status"] = "ok";
        entry["metrics"] = result.metrics_path.string();
        entry["final_d_loss"] = result.steps.back().d_loss;
        entry["final_g_loss"] = result.steps.back().g_loss;
        if (!result.evals.empty()) {
          entry["fid_start"] = result.evals.front().fid.value_or(NAN);
          entry["fid_end"] = result.evals.back().fid.value_or(NAN);
          entry["r_precision_end"] = result.evals.back().r_precision.value_or(NAN);
        }
      } catch (const std::exception& e) {
        ++failures;
        entry["status"] = "failed";
        entry["error"] = e.what();
        spdlog::error("ablation cell '{}' failed: {}", cell.name, e.what());
      }
      summary.push_back(entry);
      std::ofstream(args.out_dir / "summary.json") << summary.dump(2) << '\n';
    }
    spdlog::info("ablation finished: {} cells, {} failed", grid.cells.size(), failures);
    return failures == 0 ? kExitOk : kExitFailure;
  });
}

int cmd_init_weights(const InitWeightsArgs& args) {
  return guarded("init-weights", [&] {
    if (args.kind == "vit") {
      VitArch arch;
      arch.width = args.width;
      arch.depth = args.depth;
      arch.heads = args.heads;
      arch.patch = args.patch;
      arch.image_size = args.image_size;
      arch.mlp_dim = args.mlp_dim;
      arch.embed_dim = args.embed_dim;
      arch.activation = args.activation;
      write_synthetic_vit_weights(args.out, arch, args.seed);
    } else if (args.kind == "cnn") {
      std::vector<CnnLayerArch> arch;
      for (std::int64_t i = 0; i < args.depth; ++i) arch.push_back({args.width, 3, i == 0 ? 2 : 1});
      write_synthetic_cnn_weights(args.out, arch, args.seed);
    } else {
      throw ConfigError(fmt::format("unknown weights kind '{}' (expected vit or cnn)", args.kind));
    }
    std::cout << args.out.string() << std::endl;
    return kExitOk;
  });
}

int cmd_print_config(const std::string& preset, std::ostream& out) {
  return guarded("print-config", [&] {
    json doc;
    if (preset == "toy") doc = to_json(toy_config());
    else if (preset == "full") doc = to_json(full_config());
    else if (preset == "full-grid") doc = to_json(default_ablation_grid(to_json(full_config())));
    else if (preset == "toy-grid") doc = to_json(default_ablation_grid(to_json(desk_ablation_config())));
    else throw ConfigError(fmt::format("unknown preset '{}'", preset));
    out << doc.dump(2) << std::endl;
    return kExitOk;
  });
}

int run(int argc, char** argv) {
  CLI::App app{"tiger: text-to-image GAN training, generation, evaluation and ablation"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train from a run config");
  train_cmd->add_option("--config", train_args.config, "run config (JSON)")->required();
  train_cmd->add_option("--out-dir", train_args.out_dir, "output directory")->required();
  train_cmd->add_option("--resume", train_args.resume, "checkpoint to resume from");
  train_cmd->add_option("--seed", train_args.seed, "override train.seed");
  train_cmd->add_option("--max-steps", train_args.max_steps, "override train.max_steps");
  train_cmd->add_flag("!--no-eval", train_args.evaluate, "skip periodic evaluation");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "generate one PNG per caption");
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint)->required();
  gen_cmd->add_option("--captions", gen_args.captions, "plain text, one caption per line")->required();
  gen_cmd->add_option("--out-dir", gen_args.out_dir)->required();
  gen_cmd->add_option("--seed", gen_args.seed);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "compute FID or R-precision for a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--split", eval_args.split)->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--metric", eval_args.metric)->check(CLI::IsMember({"fid", "rprecision"}));
  eval_cmd->add_option("--seed", eval_args.seed);
  eval_cmd->add_option("--data-root", eval_args.data_root, "evaluate on a directory dataset instead");
  eval_cmd->add_flag("--debug-real", eval_args.debug_real, "FID of the real split against itself");

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
  ablate_cmd->add_option("--grid", ablate_args.grid, "grid spec (JSON); default: the standard 17-cell grid");
  ablate_cmd->add_option("--config", ablate_args.base_config, "base run config for the default grid");
  ablate_cmd->add_option("--out-dir", ablate_args.out_dir)->required();
  ablate_cmd->add_option("--steps", ablate_args.steps, "override the per-cell step budget");

  InitWeightsArgs init_args;
  auto* init_cmd = app.add_subcommand("init-weights", "write a randomly initialized backbone archive");
  init_cmd->add_option("--kind", init_args.kind)->check(CLI::IsMember({"vit", "cnn"}));
  init_cmd->add_option("--out", init_args.out)->required();
  init_cmd->add_option("--width", init_args.width);
  init_cmd->add_option("--depth", init_args.depth);
  init_cmd->add_option("--heads", init_args.heads);
  init_cmd->add_option("--patch", init_args.patch);
  init_cmd->add_option("--image-size", init_args.image_size);
  init_cmd->add_option("--mlp-dim", init_args.mlp_dim);
  init_cmd->add_option("--embed-dim", init_args.embed_dim);
  init_cmd->add_option("--activation", init_args.activation)->check(CLI::IsMember({"gelu", "quick_gelu"}));
  init_cmd->add_option("--seed", init_args.seed);

  std::string preset = "toy";
  auto* print_cmd = app.add_subcommand("print-config", "print a built-in run config or ablation grid");
  print_cmd->add_option("preset", preset)->check(CLI::IsMember({"toy", "full", "full-grid", "toy-grid"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (*train_cmd) return cmd_train(train_args);
  if (*gen_cmd) return cmd_generate(gen_args);
  if (*eval_cmd) return cmd_eval(eval_args, std::cout);
  if (*ablate_cmd) return cmd_ablate(ablate_args);
  if (*print_cmd) return cmd_print_config(preset, std::cout);
  return cmd_init_weights(init_args);
}

}  // namespace tiger::cli
