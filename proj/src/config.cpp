#include "tiger/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "tiger/errors.hpp"

using nlohmann::json;

namespace tiger {

namespace {

std::string join_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Reads the keys of one JSON object, remembering which were consumed so leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", path_.empty() ? "<root>" : path_));
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return join_path(path_, key); }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const json* v = find(key)) out = convert<T>(*v, path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("{}: unknown key", path(it.key())));
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      const auto d = v.get<double>();
      if (!std::isfinite(d)) throw ConfigError(path + ": must be finite");
      return d;
    } else if constexpr (std::is_same_v<T, std::array<double, 3>>) {
      if (!v.is_array() || v.size() != 3) throw ConfigError(path + ": expected an array of 3 numbers");
      T out{};
      for (std::size_t i = 0; i < 3; ++i) out[i] = convert<double>(v[i], fmt::format("{}[{}]", path, i));
      return out;
    } else {
      using E = typename T::value_type;
      if (!v.is_array()) throw ConfigError(path + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<E>(v[i], fmt::format("{}[{}]", path, i)));
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Re-throws a component's ConfigError with the field path of the component prefixed.
template <class F>
void with_path(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string_view what = e.what();
    if (what.starts_with(path + ".") || what.starts_with(path + ":")) throw;
    throw ConfigError(fmt::format("{}: {}", path, what));
  }
}

GeneratorConfig parse_generator(const json& j, const std::string& path) {
  GeneratorConfig g;
  ObjectReader r(j, path);
  r.read("n_blocks", g.n_blocks);
  r.read("base_channels", g.base_channels);
  r.read("n_dfm_per_block", g.n_dfm_per_block);
  r.read("resolution", g.resolution);
  r.read("use_gfm", g.use_gfm);
  if (const json* v = r.find("gfm_mode")) {
    const auto s = ObjectReader::convert<std::string>(*v, r.path("gfm_mode"));
    if (s == "gating") g.gfm_mode = GfmMode::Gating;
    else if (s == "sequential") g.gfm_mode = GfmMode::Sequential;
    else throw ConfigError(r.path("gfm_mode") + ": expected 'gating' or 'sequential'");
  }
  if (const json* v = r.find("gfm_components")) {
    ObjectReader c(*v, r.path("gfm_components"));
    c.read("dw3", g.gfm_components.dw3);
    c.read("dw5_dilated", g.gfm_components.dw5_dilated);
    c.read("pw1", g.gfm_components.pw1);
    c.finish();
  }
  r.read("d_text", g.d_text);
  r.read("affine_hidden", g.affine_hidden);
  r.finish();
  return g;
}

json generator_json(const GeneratorConfig& g) {
  return json{{"n_blocks", g.n_blocks},
              {"base_channels", g.base_channels},
              {"n_dfm_per_block", g.n_dfm_per_block},
              {"resolution", g.resolution},
              {"use_gfm", g.use_gfm},
              {"gfm_mode", g.gfm_mode == GfmMode::Gating ? "gating" : "sequential"},
              {"gfm_components",
               {{"dw3", g.gfm_components.dw3}, {"dw5_dilated", g.gfm_components.dw5_dilated}, {"pw1", g.gfm_components.pw1}}},
              {"d_text", g.d_text},
              {"affine_hidden", g.affine_hidden}};
}

SubDiscriminatorConfig parse_sub(const json& j, const std::string& path) {
  SubDiscriminatorConfig s;
  ObjectReader r(j, path);
  const json* b = r.find("backbone");
  if (!b) throw ConfigError(r.path("backbone") + ": required");
  s.backbone = backbone_spec_from_json(*b, r.path("backbone"));
  if (const json* v = r.find("adapter")) {
    const auto name = ObjectReader::convert<std::string>(*v, r.path("adapter"));
    with_path(r.path("adapter"), [&] { s.adapter = parse_adapter_kind(name); });
  }
  r.read("assessor_channels", s.assessor_channels);
  r.finish();
  return s;
}

LossWeights parse_loss(const json& j, const std::string& path) {
  LossWeights w;
  ObjectReader r(j, path);
  r.read("lambda_per_sub", w.lambda_per_sub);
  r.read("lambda_clip", w.lambda_clip);
  r.read("magp_k", w.magp_k);
  r.read("magp_p", w.magp_p);
  r.read("symmetric_hinge", w.symmetric_hinge);
  r.read("magp_all_subs", w.magp_all_subs);
  r.finish();
  return w;
}

TrainConfig parse_train(const json& j, const std::string& path) {
  TrainConfig t;
  ObjectReader r(j, path);
  r.read("lr_g", t.lr_g);
  r.read("lr_d", t.lr_d);
  r.read("adam_beta1", t.adam_beta1);
  r.read("adam_beta2", t.adam_beta2);
  r.read("batch_size", t.batch_size);
  r.read("max_steps", t.max_steps);
  r.read("seed", t.seed);
  r.read("checkpoint_every", t.checkpoint_every);
  r.read("eval_every", t.eval_every);
  r.read("dtype", t.dtype);
  r.finish();
  return t;
}

DataSpec parse_data(const json& j, const std::string& path) {
  DataSpec d;
  ObjectReader r(j, path);
  r.read("kind", d.kind);
  r.read("root", d.root);
  r.read("resolution", d.resolution);
  r.read("n_train", d.n_train);
  r.read("n_test", d.n_test);
  r.read("seed", d.seed);
  if (const json* v = r.find("text_encoder")) {
    ObjectReader t(*v, r.path("text_encoder"));
    t.read("kind", d.text_encoder.kind);
    t.read("dim", d.text_encoder.dim);
    t.read("seed", d.text_encoder.seed);
    t.read("path", d.text_encoder.path);
    t.read("scale", d.text_encoder.scale);
    t.finish();
  }
  r.finish();
  return d;
}

EvalSpec parse_eval(const json& j, const std::string& path) {
  EvalSpec e;
  ObjectReader r(j, path);
  r.read("fid_samples", e.fid_samples);
  r.read("rprecision_samples", e.rprecision_samples);
  r.read("r", e.r);
  r.read("seed", e.seed);
  r.read("extractor", e.extractor);
  r.read("extractor_seed", e.extractor_seed);
  if (const json* v = r.find("extractor_backbone"); v && !v->is_null())
    e.extractor_backbone = backbone_spec_from_json(*v, r.path("extractor_backbone"));
  r.read("rprecision_scorer", e.rprecision_scorer);
  r.finish();
  return e;
}

ScorerSpec parse_scorer(const json& j, const std::string& path) {
  ScorerSpec s;
  ObjectReader r(j, path);
  r.read("kind", s.kind);
  r.read("seed", s.seed);
  r.read("ridge", s.ridge);
  r.read("features", s.features);
  if (const json* v = r.find("backbone"); v && !v->is_null()) s.backbone = backbone_spec_from_json(*v, r.path("backbone"));
  r.finish();
  return s;
}

json optional_backbone(const std::optional<BackboneSpec>& b) { return b ? to_json(*b) : json(nullptr); }

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_g > 0.0)) throw ConfigError("train.lr_g must be > 0");
  if (!(lr_d > 0.0)) throw ConfigError("train.lr_d must be > 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0) throw ConfigError("train.adam_beta1 must be in [0, 1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0) throw ConfigError("train.adam_beta2 must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be ≥ 1");
  if (max_steps < 1) throw ConfigError("train.max_steps must be ≥ 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be ≥ 0");
  if (eval_every < 0) throw ConfigError("train.eval_every must be ≥ 0");
  if (dtype != "float32" && dtype != "float64") throw ConfigError("train.dtype must be 'float32' or 'float64'");
}

torch::Dtype TrainConfig::torch_dtype() const { return dtype == "float64" ? torch::kFloat64 : torch::kFloat32; }

void RunConfig::validate() const {
  with_path("generator", [&] { generator.validate(); });
  if (sub_discriminators.empty()) throw ConfigError("sub_discriminators: at least one sub-discriminator is required");
  if (loss.lambda_per_sub.size() != sub_discriminators.size())
    throw ConfigError(fmt::format("loss.lambda_per_sub: has {} entries but there are {} sub_discriminators",
                                  loss.lambda_per_sub.size(), sub_discriminators.size()));
  for (std::size_t i = 0; i < sub_discriminators.size(); ++i)
    with_path(fmt::format("sub_discriminators[{}]", i), [&] { sub_discriminators[i].validate(); });
  for (std::size_t i = 0; i < loss.lambda_per_sub.size(); ++i)
    if (!std::isfinite(loss.lambda_per_sub[i]) || loss.lambda_per_sub[i] < 0.0)
      throw ConfigError(fmt::format("loss.lambda_per_sub[{}]: must be finite and ≥ 0", i));
  if (loss.lambda_clip < 0.0) throw ConfigError("loss.lambda_clip: must be ≥ 0");
  if (loss.magp_k < 0.0) throw ConfigError("loss.magp_k: must be ≥ 0");
  if (loss.magp_p <= 0.0) throw ConfigError("loss.magp_p: must be > 0");
  train.validate();

  if (data.kind != "toy" && data.kind != "directory") throw ConfigError("data.kind: expected 'toy' or 'directory'");
  if (data.kind == "directory" && data.root.empty()) throw ConfigError("data.root: required for directory datasets");
  if (data.kind == "toy" && data.resolution != 32 && data.resolution != 64)
    throw ConfigError("data.resolution: the toy dataset supports 32 or 64");
  if (data.kind == "toy" && (data.n_train < 2 || data.n_test < 2)) throw ConfigError("data.n_train/n_test: must be ≥ 2");
  if (data.resolution != generator.resolution)
    throw ConfigError(fmt::format("data.resolution: {} differs from generator.resolution {}", data.resolution,
                                  generator.resolution));
  const auto& te = data.text_encoder;
  if (te.kind != "hash" && te.kind != "precomputed")
    throw ConfigError("data.text_encoder.kind: expected 'hash' or 'precomputed'");
  if (!(te.scale > 0.0)) throw ConfigError("data.text_encoder.scale: must be > 0");
  if (te.kind == "precomputed" && te.path.empty()) throw ConfigError("data.text_encoder.path: required for 'precomputed'");
  if (te.kind == "hash" && te.dim != generator.d_text)
    throw ConfigError(fmt::format("data.text_encoder.dim: {} differs from generator.d_text {}", te.dim, generator.d_text));

  if (scorer.kind != "probe" && scorer.kind != "vit") throw ConfigError("scorer.kind: expected 'probe' or 'vit'");
  if (scorer.kind == "vit" && !scorer.backbone) throw ConfigError("scorer.backbone: required for kind 'vit'");
  if (scorer.backbone) with_path("scorer.backbone", [&] { scorer.backbone->validate(); });
  if (!(scorer.ridge > 0.0)) throw ConfigError("scorer.ridge: must be > 0");
  if (scorer.features != "stub" && scorer.features != "shape")
    throw ConfigError("scorer.features: expected 'stub' or 'shape'");

  if (eval.fid_samples < 2) throw ConfigError("eval.fid_samples: must be ≥ 2");
  if (eval.rprecision_samples < 1) throw ConfigError("eval.rprecision_samples: must be ≥ 1");
  if (eval.r < 2) throw ConfigError("eval.r: must be ≥ 2");
  if (eval.extractor != "tiny_stub" && eval.extractor != "backbone")
    throw ConfigError("eval.extractor: expected 'tiny_stub' or 'backbone'");
  if (eval.extractor == "backbone" && !eval.extractor_backbone)
    throw ConfigError("eval.extractor_backbone: required for extractor 'backbone'");
  if (eval.rprecision_scorer != "template" && eval.rprecision_scorer != "embedding")
    throw ConfigError("eval.rprecision_scorer: expected 'template' or 'embedding'");
}

BackboneSpec backbone_spec_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  const json* k = r.find("kind");
  if (!k) throw ConfigError(r.path("kind") + ": required");
  const auto kind_name = ObjectReader::convert<std::string>(*k, r.path("kind"));
  BackboneSpec spec;
  with_path(r.path("kind"), [&] { spec = BackboneSpec::defaults(parse_backbone_kind(kind_name)); });
  r.read("layer_taps", spec.layer_taps);
  r.read("input_resolution", spec.input_resolution);
  r.read("mean", spec.mean);
  r.read("std", spec.std);
  if (const json* w = r.find("weights_path"); w && !w->is_null())
    spec.weights_path = ObjectReader::convert<std::string>(*w, r.path("weights_path"));
  r.read("seed", spec.seed);
  r.finish();
  return spec;
}

json to_json(const BackboneSpec& spec) {
  return json{{"kind", to_string(spec.kind)},
              {"layer_taps", spec.layer_taps},
              {"input_resolution", spec.input_resolution},
              {"mean", spec.mean},
              {"std", spec.std},
              {"weights_path", spec.weights_path ? json(*spec.weights_path) : json(nullptr)},
              {"seed", spec.seed}};
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  ObjectReader r(j, "");
  if (const json* v = r.find("generator")) cfg.generator = parse_generator(*v, "generator");
  if (const json* v = r.find("sub_discriminators")) {
    if (!v->is_array()) throw ConfigError("sub_discriminators: expected an array");
    cfg.sub_discriminators.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      cfg.sub_discriminators.push_back(parse_sub((*v)[i], fmt::format("sub_discriminators[{}]", i)));
  }
  if (const json* v = r.find("loss")) cfg.loss = parse_loss(*v, "loss");
  if (const json* v = r.find("train")) cfg.train = parse_train(*v, "train");
  if (const json* v = r.find("data")) cfg.data = parse_data(*v, "data");
  if (const json* v = r.find("eval")) cfg.eval = parse_eval(*v, "eval");
  if (const json* v = r.find("scorer")) cfg.scorer = parse_scorer(*v, "scorer");
  r.finish();
  cfg.validate();
  for (std::size_t i = 0; i < cfg.sub_discriminators.size(); ++i)
    cfg.sub_discriminators[i].lambda_weight = cfg.loss.lambda_per_sub[i];
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config '{}'", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& cfg) {
  json subs = json::array();
  for (const auto& s : cfg.sub_discriminators)
    subs.push_back(json{{"backbone", to_json(s.backbone)},
                        {"adapter", to_string(s.adapter)},
                        {"assessor_channels", s.assessor_channels}});
  const auto& w = cfg.loss;
  const auto& t = cfg.train;
  const auto& d = cfg.data;
  const auto& e = cfg.eval;
  return json{
      {"generator", generator_json(cfg.generator)},
      {"sub_discriminators", subs},
      {"loss",
       {{"lambda_per_sub", w.lambda_per_sub},
        {"lambda_clip", w.lambda_clip},
        {"magp_k", w.magp_k},
        {"magp_p", w.magp_p},
        {"symmetric_hinge", w.symmetric_hinge},
        {"magp_all_subs", w.magp_all_subs}}},
      {"train",
       {{"lr_g", t.lr_g},
        {"lr_d", t.lr_d},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"batch_size", t.batch_size},
        {"max_steps", t.max_steps},
        {"seed", t.seed},
        {"checkpoint_every", t.checkpoint_every},
        {"eval_every", t.eval_every},
        {"dtype", t.dtype}}},
      {"data",
       {{"kind", d.kind},
        {"root", d.root},
        {"resolution", d.resolution},
        {"n_train", d.n_train},
        {"n_test", d.n_test},
        {"seed", d.seed},
        {"text_encoder",
         {{"kind", d.text_encoder.kind},
          {"dim", d.text_encoder.dim},
          {"seed", d.text_encoder.seed},
          {"path", d.text_encoder.path},
          {"scale", d.text_encoder.scale}}}}},
      {"eval",
       {{"fid_samples", e.fid_samples},
        {"rprecision_samples", e.rprecision_samples},
        {"r", e.r},
        {"seed", e.seed},
        {"extractor", e.extractor},
        {"extractor_seed", e.extractor_seed},
        {"extractor_backbone", optional_backbone(e.extractor_backbone)},
        {"rprecision_scorer", e.rprecision_scorer}}},
      {"scorer",
       {{"kind", cfg.scorer.kind},
        {"seed", cfg.scorer.seed},
        {"ridge", cfg.scorer.ridge},
        {"features", cfg.scorer.features},
        {"backbone", optional_backbone(cfg.scorer.backbone)}}},
  };
}

RunConfig full_config() {
  RunConfig cfg;
  cfg.generator.n_blocks = 6;
  cfg.generator.resolution = 256;
  cfg.generator.base_channels = 64;

  auto clip = BackboneSpec::defaults(BackboneKind::ClipVit);
  clip.weights_path = "clip_vit_b16.tta";
  auto dino = BackboneSpec::defaults(BackboneKind::DinoVit);
  dino.weights_path = "dino_vit_b16.tta";
  cfg.sub_discriminators = {{clip, AdapterKind::A, 1.0, 256}, {dino, AdapterKind::B, 0.001, 256}};
  cfg.loss = LossWeights{};

  cfg.train.batch_size = 32;
  cfg.train.max_steps = 500000;
  cfg.train.checkpoint_every = 5000;
  cfg.train.eval_every = 5000;

  cfg.data.kind = "directory";
  cfg.data.root = "data/coco";
  cfg.data.resolution = 256;
  cfg.data.text_encoder = {"precomputed", 512, 0, "clip_text_embeddings.tta"};

  cfg.scorer.kind = "vit";
  auto tower = BackboneSpec::defaults(BackboneKind::ClipVit);
  tower.layer_taps = {12};
  tower.weights_path = "clip_vit_b16.tta";
  cfg.scorer.backbone = tower;

  cfg.eval.fid_samples = 30000;
  cfg.eval.rprecision_samples = 30000;
  cfg.eval.r = 100;
  cfg.eval.rprecision_scorer = "embedding";
  return cfg;
}

RunConfig toy_config() {
  RunConfig cfg;
  cfg.generator.n_blocks = 4;
  cfg.generator.resolution = 64;
  cfg.generator.base_channels = 64;
  cfg.generator.affine_hidden = 64;
  cfg.generator.d_text = 512;

  auto stub_a = BackboneSpec::defaults(BackboneKind::TinyStub);
  stub_a.seed = 1;
  auto stub_b = BackboneSpec::defaults(BackboneKind::TinyStub);
  stub_b.seed = 2;
  cfg.sub_discriminators = {{stub_a, AdapterKind::A, 1.0, 64}, {stub_b, AdapterKind::B, 0.001, 64}};
  cfg.loss = LossWeights{};

  cfg.train.batch_size = 8;
  cfg.train.max_steps = 2000;
  cfg.train.checkpoint_every = 500;
  cfg.train.eval_every = 500;

  cfg.data.kind = "toy";
  cfg.data.resolution = 64;
  cfg.data.n_train = 500;
  cfg.data.n_test = 500;
  cfg.data.seed = 7;
  cfg.data.text_encoder.scale = 10.0;  // norm of the 100-d unit Gaussian noise
  cfg.scorer.features = "shape";

  cfg.eval.fid_samples = 500;
  cfg.eval.rprecision_samples = 200;
  cfg.eval.r = 10;
  return cfg;
}

RunConfig desk_ablation_config() {
  auto cfg = toy_config();
  auto clip = BackboneSpec::defaults(BackboneKind::ClipVit);
  clip.input_resolution = 64;
  clip.weights_path = "synthetic_clip_vit.tta";
  auto dino = BackboneSpec::defaults(BackboneKind::DinoVit);
  dino.input_resolution = 64;
  dino.weights_path = "synthetic_dino_vit.tta";
  cfg.sub_discriminators = {{clip, AdapterKind::A, 1.0, 64}, {dino, AdapterKind::B, 0.001, 64}};
  cfg.train.max_steps = 500;
  cfg.train.checkpoint_every = 0;
  cfg.train.eval_every = 0;
  return cfg;
}

json apply_overrides(json doc, const json& set) {
  if (!set.is_object()) throw ConfigError("overrides: expected an object of JSON-pointer → value");
  for (auto it = set.begin(); it != set.end(); ++it) {
    json::json_pointer ptr;
    try {
      ptr = json::json_pointer(it.key());
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("override '{}': {}", it.key(), e.what()));
    }
    if (!ptr.empty() && !doc.contains(ptr.parent_pointer()))
      throw ConfigError(fmt::format("override '{}': parent path does not exist", it.key()));
    doc[ptr] = it.value();
  }
  return doc;
}

RunConfig AblationGrid::cell_config(const AblationCell& cell) const {
  auto doc = apply_overrides(base, cell.set);
  doc["train"]["max_steps"] = steps;
  try {
    return parse_run_config(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("cell '{}': {}", cell.name, e.what()));
  }
}

AblationGrid parse_ablation_grid(const json& j) {
  AblationGrid grid;
  ObjectReader r(j, "");
  const json* base = r.find("base");
  if (!base) throw ConfigError("base: required");
  grid.base = to_json(parse_run_config(*base));
  r.read("steps", grid.steps);
  if (grid.steps < 1) throw ConfigError("steps: must be ≥ 1");
  r.read("evaluate", grid.evaluate);
  const json* cells = r.find("cells");
  if (!cells || !cells->is_array()) throw ConfigError("cells: expected an array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < cells->size(); ++i) {
    const auto path = fmt::format("cells[{}]", i);
    ObjectReader c((*cells)[i], path);
    AblationCell cell;
    const json* name = c.find("name");
    if (!name) throw ConfigError(c.path("name") + ": required");
    cell.name = ObjectReader::convert<std::string>(*name, c.path("name"));
    if (cell.name.empty() || cell.name.find('/') != std::string::npos)
      throw ConfigError(c.path("name") + ": must be a non-empty name without '/'");
    if (!names.insert(cell.name).second) throw ConfigError(c.path("name") + ": duplicate cell name");
    if (const json* set = c.find("set")) cell.set = *set;
    c.finish();
    grid.cells.push_back(std::move(cell));
  }
  r.finish();
  return grid;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open grid '{}'", path.string()));
  try {
    return parse_ablation_grid(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json to_json(const AblationGrid& grid) {
  json cells = json::array();
  for (const auto& c : grid.cells) cells.push_back({{"name", c.name}, {"set", c.set}});
  return json{{"base", grid.base}, {"steps", grid.steps}, {"evaluate", grid.evaluate}, {"cells", cells}};
}

AblationGrid default_ablation_grid(const json& base, std::int64_t steps) {
  AblationGrid grid;
  grid.base = base;
  grid.steps = steps;
  for (auto [a, b] : {std::pair{"A", "A"}, {"B", "B"}, {"B", "A"}, {"A", "B"}})
    grid.cells.push_back({fmt::format("adapter_{}{}", a, b),
                          {{"/sub_discriminators/0/adapter", a}, {"/sub_discriminators/1/adapter", b}}});
  const std::vector<std::vector<int>> clip_taps{{2, 5}, {1, 5, 9}, {2, 5, 9}, {2, 5, 9, 12}};
  for (const auto& t : clip_taps)
    grid.cells.push_back({fmt::format("clip_taps_{}", fmt::join(t, "_")), {{"/sub_discriminators/0/backbone/layer_taps", t}}});
  const std::vector<std::vector<int>> dino_taps{{1, 5}, {2, 5}, {1, 5, 9}, {1, 5, 9, 12}};
  for (const auto& t : dino_taps)
    grid.cells.push_back({fmt::format("dino_taps_{}", fmt::join(t, "_")), {{"/sub_discriminators/1/backbone/layer_taps", t}}});
  grid.cells.push_back({"gfm_full", json::object()});
  grid.cells.push_back({"gfm_none", {{"/generator/use_gfm", false}}});
  grid.cells.push_back({"gfm_no_dw3", {{"/generator/gfm_components/dw3", false}}});
  grid.cells.push_back({"gfm_no_pw1", {{"/generator/gfm_components/pw1", false}}});
  grid.cells.push_back({"gfm_no_dw5_dilated", {{"/generator/gfm_components/dw5_dilated", false}}});
  return grid;
}

}  // namespace tiger
