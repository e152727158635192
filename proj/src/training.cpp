#include "tiger/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "tiger/errors.hpp"

using nlohmann::json;

namespace tiger {

namespace {

torch::Generator seeded_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

// Independent streams derived from one run seed.
constexpr std::uint64_t kInitStream = 0x1;
constexpr std::uint64_t kNoiseStream = 0x2;
constexpr std::uint64_t kBatchStream = 0x3;
constexpr std::uint64_t kToyTestSeedOffset = 0x5eed;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + stream * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<double> to_vector(const std::vector<torch::Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.push_back(t.item<double>());
  return out;
}

bool all_finite(const MetricsRecord& r) {
  auto ok = [](double v) { return std::isfinite(v); };
  if (!ok(r.d_loss) || !ok(r.g_loss) || !ok(r.clip_term)) return false;
  for (const auto* v : {&r.d_hinge, &r.d_magp, &r.fake_score})
    for (double x : *v)
      if (!ok(x)) return false;
  return true;
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.set_requires_grad(on);
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void save_adam(const torch::optim::Adam& opt, const std::string& prefix, TensorArchive& ar) {
  const auto& params = opt.param_groups().front().params();
  auto& state = const_cast<torch::optim::Adam&>(opt).state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ar.tensors[fmt::format("{}.{}.step", prefix, i)] = torch::tensor(std::vector<std::int64_t>{s.step()});
    ar.tensors[fmt::format("{}.{}.exp_avg", prefix, i)] = s.exp_avg().clone();
    ar.tensors[fmt::format("{}.{}.exp_avg_sq", prefix, i)] = s.exp_avg_sq().clone();
  }
}

void load_adam(torch::optim::Adam& opt, const std::string& prefix, const TensorArchive& ar) {
  const auto& params = opt.param_groups().front().params();
  auto& state = opt.state();
  state.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto step_key = fmt::format("{}.{}.step", prefix, i);
    if (!ar.contains(step_key)) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(ar.at(step_key).item<std::int64_t>());
    s->exp_avg(ar.at(fmt::format("{}.{}.exp_avg", prefix, i)).clone());
    s->exp_avg_sq(ar.at(fmt::format("{}.{}.exp_avg_sq", prefix, i)).clone());
    state[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

std::vector<std::pair<std::string, torch::Tensor>> trainable_tensors(const TrainState& state) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& [n, t] : named_state(*state.generator)) out.emplace_back("g." + n, t);
  for (std::size_t i = 0; i < state.subs.size(); ++i)
    for (auto& [n, t] : named_state(*state.subs[i])) out.emplace_back(fmt::format("d.{}.{}", i, n), t);
  return out;
}

}  // namespace

json MetricsRecord::to_json() const {
  return json{{"type", "step"},       {"step", step},         {"d_loss", d_loss},       {"g_loss", g_loss},
              {"d_hinge", d_hinge},   {"d_magp", d_magp},     {"fake_score", fake_score}, {"clip_term", clip_term},
              {"wall_seconds", wall_seconds}};
}

json EvalRecord::to_json() const {
  return json{{"type", "eval"},
              {"step", step},
              {"fid", fid ? json(*fid) : json(nullptr)},
              {"r_precision", r_precision ? json(*r_precision) : json(nullptr)},
              {"extractor_id", extractor_id},
              {"n_real", n_real},
              {"n_fake", n_fake}};
}

std::shared_ptr<TextEncoder> make_text_encoder(const TextEncoderSpec& spec) {
  std::shared_ptr<TextEncoder> base;
  if (spec.kind == "hash") base = std::make_shared<HashTextEncoder>(spec.dim, spec.seed);
  else base = std::make_shared<PrecomputedTextEncoder>(resolve_weights_path(spec.path));
  if (spec.scale == 1.0) return base;
  return std::make_shared<ScaledTextEncoder>(std::move(base), spec.scale);
}

DataBundle prepare_data(const DataSpec& spec) {
  DataBundle out;
  out.encoder = make_text_encoder(spec.text_encoder);
  if (spec.kind == "toy") {
    out.train = synthesize_toy_dataset(static_cast<std::size_t>(spec.n_train), spec.resolution, spec.seed);
    out.test = synthesize_toy_dataset(static_cast<std::size_t>(spec.n_test), spec.resolution,
                                      spec.seed + kToyTestSeedOffset);
  } else {
    out.train = load_dataset(spec.root, Split::Train, spec.resolution).records;
    out.test = load_dataset(spec.root, Split::Test, spec.resolution).records;
  }
  if (out.train.empty()) throw ConfigError("data: the training split is empty");
  return out;
}

std::unique_ptr<FeatureExtractor> make_extractor(const EvalSpec& spec, std::int64_t resolution) {
  if (spec.extractor == "tiny_stub") return std::make_unique<TinyStubExtractor>(spec.extractor_seed, resolution);
  return std::make_unique<BackboneExtractor>(*spec.extractor_backbone);
}

std::vector<torch::Tensor> TrainState::discriminator_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& s : subs)
    for (const auto& p : s->parameters()) out.push_back(p);
  return out;
}

void TrainState::check_backbones() const {
  for (std::size_t i = 0; i < backbones.size(); ++i)
    if (backbones[i]->digest() != backbone_digests[i])
      throw std::logic_error(fmt::format("backbone {} changed during training (digest {} != {})", i,
                                         backbones[i]->digest(), backbone_digests[i]));
}

std::unique_ptr<TrainState> build_state(const RunConfig& cfg, const Dataset& train_data,
                                        std::shared_ptr<TextEncoder> encoder) {
  cfg.validate();
  if (encoder->dim() != cfg.generator.d_text)
    throw ConfigError(fmt::format("text encoder dimension {} differs from generator.d_text {}", encoder->dim(),
                                  cfg.generator.d_text));
  auto st = std::make_unique<TrainState>();
  st->config = cfg;
  st->dtype = cfg.train.torch_dtype();
  st->encoder = std::move(encoder);

  auto init_gen = seeded_generator(stream_seed(cfg.train.seed, kInitStream));
  st->generator = Generator(cfg.generator);
  initialize_generator(st->generator, init_gen);
  st->generator->to(st->dtype);

  for (std::size_t i = 0; i < cfg.sub_discriminators.size(); ++i) {
    auto sub_cfg = cfg.sub_discriminators[i];
    sub_cfg.lambda_weight = cfg.loss.lambda_per_sub[i];
    auto backbone = load_backbone(sub_cfg.backbone, st->dtype);
    auto sub = SubDiscriminator(sub_cfg, backbone, cfg.generator.d_text);
    initialize_fan_in(*sub, init_gen);
    sub->to(st->dtype);
    st->backbones.push_back(backbone);
    st->backbone_digests.push_back(backbone->load_digest());
    st->subs.push_back(sub);
  }

  const auto& t = cfg.train;
  st->opt_g = std::make_unique<torch::optim::Adam>(
      st->generator->parameters(), torch::optim::AdamOptions(t.lr_g).betas({t.adam_beta1, t.adam_beta2}));
  st->opt_d = std::make_unique<torch::optim::Adam>(
      st->discriminator_parameters(), torch::optim::AdamOptions(t.lr_d).betas({t.adam_beta1, t.adam_beta2}));

  if (cfg.loss.lambda_clip > 0.0 || cfg.eval.rprecision_scorer == "embedding") {
    if (cfg.scorer.kind == "probe") {
      auto probe = std::make_shared<LinearProbeScorer>(cfg.scorer.seed, cfg.generator.resolution, st->dtype,
                                                      parse_probe_features(cfg.scorer.features));
      probe->fit(train_data, *st->encoder, cfg.scorer.ridge);
      st->scorer = probe;
    } else {
      st->scorer = std::make_shared<VitImageScorer>(*cfg.scorer.backbone, st->dtype);
    }
  }

  st->noise_gen = seeded_generator(stream_seed(cfg.train.seed, kNoiseStream));
  st->batch_rng.seed(stream_seed(cfg.train.seed, kBatchStream));
  return st;
}

MetricsRecord train_step(TrainState& st, const Batch& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& w = st.config.loss;
  const auto dtype = st.dtype;
  const auto b = batch.size();
  auto images = batch.images.to(dtype);
  auto matched = batch.matched.to(dtype);
  auto mismatched = batch.mismatched.to(dtype);
  MetricsRecord rec;
  rec.step = st.step + 1;

  // Discriminator update.
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = st.generator->forward(sample_noise(b, st.noise_gen, dtype), matched);
  }
  auto x_real = images.detach().requires_grad_(true);
  auto s_real = matched.detach().requires_grad_(true);
  // Real-matched pairs are scored on their own so the penalty's double backward covers B samples.
  auto other_images = torch::cat({fake, images});
  auto other_sentences = torch::cat({matched, mismatched});
  std::vector<std::pair<torch::Tensor, torch::Tensor>> per_sub;
  for (std::size_t i = 0; i < st.subs.size(); ++i) {
    auto real = st.subs[i]->forward(x_real, s_real);
    auto others = st.subs[i]->forward(other_images, other_sentences);
    auto fk = others.slice(0, 0, b), mis = others.slice(0, b, 2 * b);
    auto hinge = hinge_d_loss(real, fk, mis, w.symmetric_hinge);
    auto penalty = (w.magp_all_subs || i == 0)
                       ? magp_penalty(gradient_norms_at(real, x_real, s_real), w.magp_k, w.magp_p)
                       : torch::zeros({}, real.options());
    per_sub.emplace_back(hinge, penalty);
  }
  auto d_loss = discriminator_total_loss(per_sub, w);
  st.opt_d->zero_grad();
  d_loss.backward();
  st.opt_d->step();

  rec.d_loss = d_loss.item<double>();
  for (auto& [h, m] : per_sub) {
    rec.d_hinge.push_back(h.item<double>());
    rec.d_magp.push_back(m.item<double>());
  }

  // Generator update.
  const auto d_params = st.discriminator_parameters();
  set_requires_grad(d_params, false);
  auto fake_g = st.generator->forward(sample_noise(b, st.noise_gen, dtype), matched);
  std::vector<torch::Tensor> fake_scores;
  for (auto& sub : st.subs) fake_scores.push_back(sub->forward(fake_g, matched));
  auto clip_term = st.scorer && w.lambda_clip > 0.0
                       ? semantic_contrastive_loss(st.scorer->embed_images(fake_g), matched)
                       : torch::zeros({}, fake_g.options());
  auto g_loss = generator_loss(fake_scores, clip_term, w);
  st.opt_g->zero_grad();
  g_loss.backward();
  st.opt_g->step();
  set_requires_grad(d_params, true);

  rec.g_loss = g_loss.item<double>();
  rec.clip_term = clip_term.item<double>();
  for (auto& s : fake_scores) rec.fake_score.push_back(s.mean().item<double>());
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!all_finite(rec)) throw TrainingAborted(fmt::format("non-finite loss at step {}", rec.step), rec.to_json());
  st.step = rec.step;
  return rec;
}

MetricsRecord train_step(TrainState& st, const Dataset& data) {
  auto batch = sample_batch(data, st.config.train.batch_size, st.batch_rng, *st.encoder);
  return train_step(st, batch);
}

torch::Tensor generate_images(Generator& generator, const TextEncoder& encoder, torch::Dtype dtype,
                              const std::vector<std::string>& captions, torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  constexpr std::size_t kChunk = 50;
  std::vector<torch::Tensor> out;
  for (std::size_t start = 0; start < captions.size(); start += kChunk) {
    std::vector<torch::Tensor> emb;
    for (std::size_t i = start; i < std::min(captions.size(), start + kChunk); ++i)
      emb.push_back(encode_text(encoder, captions[i]).vector);
    auto s = torch::stack(emb).to(dtype);
    out.push_back(generator->forward(sample_noise(s.size(0), gen, dtype), s));
  }
  return torch::cat(out);
}

EvalRecord evaluate(const EvalSpec& e, Generator& generator, const TextEncoder& encoder, ImageTextScorer* scorer,
                    torch::Dtype dtype, const Dataset& test, FeatureExtractor& extractor, std::int64_t step,
                    EvalOptions options) {
  if (test.size() < 2) throw ConfigError("evaluation needs at least 2 test records");
  EvalRecord rec;
  rec.step = step;
  rec.extractor_id = extractor.id();

  if (options.fid) {
    const auto n = std::min<std::int64_t>(e.fid_samples, static_cast<std::int64_t>(test.size()));
    std::vector<torch::Tensor> real;
    std::vector<std::string> captions;
    for (std::int64_t i = 0; i < n; ++i) {
      real.push_back(test[i].image);
      captions.push_back(test[i].captions.front());
    }
    auto gen = seeded_generator(e.seed);
    auto fake = generate_images(generator, encoder, dtype, captions, gen);
    rec.fid = compute_fid(torch::stack(real), fake, extractor);
    rec.n_real = n;
    rec.n_fake = n;
  }
  if (options.rprecision) {
    const auto n = std::min<std::int64_t>(e.rprecision_samples, static_cast<std::int64_t>(test.size()));
    std::vector<std::string> captions;
    std::set<std::string> pool_set;
    for (const auto& r : test)
      for (const auto& c : r.captions) pool_set.insert(c);
    for (std::int64_t i = 0; i < n; ++i) captions.push_back(test[i].captions.front());
    std::vector<std::string> pool(pool_set.begin(), pool_set.end());
    auto gen = seeded_generator(e.seed + 1);
    auto fake = generate_images(generator, encoder, dtype, captions, gen);
    std::unique_ptr<CaptionScorer> caption_scorer;
    if (e.rprecision_scorer == "template") caption_scorer = std::make_unique<TemplateOracleScorer>();
    else if (scorer) caption_scorer = std::make_unique<EmbeddingCaptionScorer>(*scorer, encoder);
    else throw ConfigError("eval.rprecision_scorer 'embedding' needs an image-text scorer");
    rec.r_precision = r_precision(fake, captions, pool, *caption_scorer, e.r, e.seed);
  }
  return rec;
}

EvalRecord evaluate(TrainState& st, const Dataset& test, FeatureExtractor& extractor, EvalOptions options) {
  st.check_backbones();
  return evaluate(st.config.eval, st.generator, *st.encoder, st.scorer.get(), st.dtype, test, extractor, st.step,
                  options);
}

Generator load_generator(const CheckpointManifest& m, torch::Dtype dtype) {
  auto cfg = parse_run_config(m.config);
  Generator g(cfg.generator);
  g->to(dtype);
  std::vector<std::string> missing;
  torch::NoGradGuard no_grad;
  for (auto& [n, t] : named_state(*g)) {
    const auto key = "g." + n;
    if (!m.archive.contains(key)) {
      missing.push_back(key);
      continue;
    }
    t.copy_(m.archive.at(key));
  }
  if (!missing.empty())
    throw FormatError(fmt::format("checkpoint is missing {} tensor(s): {}", missing.size(), fmt::join(missing, ", ")));
  g->eval();
  return g;
}

std::string model_digest(const TrainState& st) { return tensor_digest(trainable_tensors(st)); }

void save_checkpoint(const TrainState& st, const std::filesystem::path& path) {
  TensorArchive ar;
  for (auto& [n, t] : trainable_tensors(st)) ar.tensors[n] = t.detach();
  save_adam(*st.opt_g, "opt_g", ar);
  save_adam(*st.opt_d, "opt_d", ar);
  ar.tensors["rng.noise"] = st.noise_gen.get_state();
  if (st.scorer)
    for (auto& [n, t] : st.scorer->state())
      if (t.defined()) ar.tensors["scorer." + n] = t.detach();
  ar.metadata = json{{"checkpoint_version", kCheckpointVersion},
                     {"step", st.step},
                     {"config", to_json(st.config)},
                     {"batch_rng", rng_to_string(st.batch_rng)},
                     {"backbone_digests", st.backbone_digests},
                     {"model_digest", model_digest(st)}};
  try {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    write_archive(path, ar);
  } catch (const std::exception& e) {
    throw IoError(fmt::format("step {}: writing checkpoint '{}' failed: {}", st.step, path.string(), e.what()));
  }
}

CheckpointManifest load_checkpoint(const std::filesystem::path& path) {
  CheckpointManifest m;
  m.archive = read_archive(path);
  const auto& meta = m.archive.metadata;
  if (!meta.contains("checkpoint_version")) throw FormatError(fmt::format("'{}' is not a checkpoint", path.string()));
  const auto version = meta["checkpoint_version"].get<std::int64_t>();
  if (version != kCheckpointVersion)
    throw FormatError(fmt::format("checkpoint '{}' has version {}, this build reads version {}", path.string(), version,
                                  kCheckpointVersion));
  m.step = meta.at("step").get<std::int64_t>();
  m.config = meta.at("config");
  return m;
}

void restore_state(TrainState& st, const CheckpointManifest& m) {
  const auto& ar = m.archive;
  std::vector<std::string> missing;
  auto named = trainable_tensors(st);
  for (auto& [n, t] : named)
    if (!ar.contains(n)) missing.push_back(n);
  if (!ar.contains("rng.noise")) missing.push_back("rng.noise");
  if (!missing.empty())
    throw FormatError(fmt::format("checkpoint is missing {} tensor(s): {}", missing.size(), fmt::join(missing, ", ")));

  {
    torch::NoGradGuard no_grad;
    for (auto& [n, t] : named) {
      const auto& src = ar.at(n);
      if (src.sizes() != t.sizes())
        throw FormatError(fmt::format("tensor '{}' has shape {} in the checkpoint but {} in the model", n,
                                      src.sizes().vec(), t.sizes().vec()));
      t.copy_(src);
    }
  }
  load_adam(*st.opt_g, "opt_g", ar);
  load_adam(*st.opt_d, "opt_d", ar);
  st.noise_gen.set_state(ar.at("rng.noise"));
  std::istringstream is(ar.metadata.at("batch_rng").get<std::string>());
  is >> st.batch_rng;

  if (auto* probe = dynamic_cast<LinearProbeScorer*>(st.scorer.get())) {
    std::vector<std::pair<std::string, torch::Tensor>> tensors;
    for (const auto& [n, t] : ar.tensors)
      if (n.rfind("scorer.", 0) == 0) tensors.emplace_back(n.substr(7), t);
    if (!tensors.empty()) probe->load_state(tensors);
  }

  const auto digests = ar.metadata.at("backbone_digests").get<std::vector<std::string>>();
  if (digests != st.backbone_digests)
    throw FormatError("backbone weights differ from the ones the checkpoint was trained with");
  st.step = m.step;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step) {
  return out_dir / "checkpoints" / fmt::format("step_{:07}.tta", step);
}

TrainResult train(const RunConfig& cfg, const DataBundle& data, const TrainOptions& options) {
  if (data.train.empty()) throw ConfigError("train: the dataset is empty");
  auto st = build_state(cfg, data.train, data.encoder);
  TrainResult result;
  std::filesystem::create_directories(options.out_dir);
  result.metrics_path = options.out_dir / "metrics.jsonl";

  if (options.resume) {
    restore_state(*st, load_checkpoint(*options.resume));
    spdlog::info("resumed from {} at step {}", options.resume->string(), st->step);
  }
  std::ofstream log(result.metrics_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError(fmt::format("cannot open metrics log '{}'", result.metrics_path.string()));
  auto emit = [&](const json& j) {
    log << j.dump() << '\n';
    log.flush();
    if (!log) throw IoError(fmt::format("step {}: writing metrics log failed", st->step));
  };
  emit(json{{"type", "config"}, {"step", st->step}, {"config", to_json(cfg)}});

  std::unique_ptr<FeatureExtractor> extractor;
  const bool eval_on = options.evaluate && !data.test.empty();
  if (eval_on) extractor = make_extractor(cfg.eval, cfg.generator.resolution);
  auto run_eval = [&] {
    auto rec = evaluate(*st, data.test, *extractor);
    spdlog::info("step {}: toy-FID {:.4f}, R-precision {:.3f}", rec.step, rec.fid.value_or(NAN),
                 rec.r_precision.value_or(NAN));
    emit(rec.to_json());
    result.evals.push_back(rec);
  };

  const auto& t = cfg.train;
  if (eval_on && st->step == 0) run_eval();
  while (st->step < t.max_steps) {
    MetricsRecord rec;
    try {
      rec = train_step(*st, data.train);
    } catch (const TrainingAborted& e) {
      emit(json{{"type", "abort"}, {"reason", e.what()}, {"record", e.record}});
      throw;
    }
    emit(rec.to_json());
    result.steps.push_back(rec);
    if (rec.step % 50 == 0 || rec.step == 1)
      spdlog::info("step {}: d_loss {:.4f} g_loss {:.4f} ({:.2f}s)", rec.step, rec.d_loss, rec.g_loss, rec.wall_seconds);
    if (t.eval_every > 0 && st->step % t.eval_every == 0) {
      st->check_backbones();
      if (eval_on && st->step != t.max_steps) run_eval();
    }
    if (t.checkpoint_every > 0 && st->step % t.checkpoint_every == 0 && st->step != t.max_steps)
      save_checkpoint(*st, checkpoint_path(options.out_dir, st->step));
  }
  st->check_backbones();
  if (eval_on) run_eval();
  result.final_checkpoint = checkpoint_path(options.out_dir, st->step);
  save_checkpoint(*st, result.final_checkpoint);
  return result;
}

}  // namespace tiger
