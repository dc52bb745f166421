#include "triglab/forge.hpp"

#include <CLI11.hpp>
#include <functional>
#include <map>
#include <sstream>

#include "triglab/error.hpp"
#include "triglab/forward.hpp"
#include "triglab/kernels.hpp"
#include "triglab/model_io.hpp"
#include "triglab/rng.hpp"
#include "triglab/stimuli.hpp"

namespace triglab {
namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw ContractViolation("config: bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractViolation("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

ForgeConfig default_forge_config(ForgeKind kind) {
  ForgeConfig fc;
  fc.kind = kind;
  if (kind == ForgeKind::handcraft) {
    fc.model.norm_mode = NormMode::identity;
    fc.model.origin = ModelOrigin::handcrafted;
  } else {
    fc.model.n_layers = 3;
    fc.model.d_model = 32;
    fc.model.n_heads = 4;
    fc.model.d_mlp = 64;
    fc.model.max_seq_len = 32;
    fc.train.steps = 1500;
  }
  return fc;
}

ForgeConfig parse_forge_config(ForgeKind kind, const std::string& text) {
  ForgeConfig fc = default_forge_config(kind);
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ContractViolation(std::string("config: ") + e.what());
  }
  std::optional<std::size_t> comp_start, agg_layer;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"n_layers", [&](const std::string& v) { fc.model.n_layers = parse_number<std::size_t>("n_layers", v); }},
      {"d_model", [&](const std::string& v) { fc.model.d_model = parse_number<std::size_t>("d_model", v); }},
      {"n_heads", [&](const std::string& v) { fc.model.n_heads = parse_number<std::size_t>("n_heads", v); }},
      {"d_mlp", [&](const std::string& v) { fc.model.d_mlp = parse_number<std::size_t>("d_mlp", v); }},
      {"max_seq_len", [&](const std::string& v) { fc.model.max_seq_len = parse_number<std::size_t>("max_seq_len", v); }},
      {"norm_eps", [&](const std::string& v) { fc.model.norm_eps = parse_number<double>("norm_eps", v); }},
      {"lang_seed", [&](const std::string& v) { fc.language.seed = parse_number<std::uint64_t>("lang_seed", v); }},
      {"v_e", [&](const std::string& v) { fc.language.v_e = parse_number<std::size_t>("v_e", v); }},
      {"v_f", [&](const std::string& v) { fc.language.v_f = parse_number<std::size_t>("v_f", v); }},
      {"rank", [&](const std::string& v) { fc.language.rank = parse_number<std::size_t>("rank", v); }},
      {"logit_scale", [&](const std::string& v) { fc.language.logit_scale = parse_number<double>("logit_scale", v); }},
      {"neutral_pool", [&](const std::string& v) { fc.language.neutral_pool = parse_number<std::size_t>("neutral_pool", v); }},
      {"rotate", [&](const std::string& v) { fc.blueprint.rotate = parse_bool("rotate", v); }},
      {"rotation_seed",
       [&](const std::string& v) { fc.blueprint.rotation_seed = parse_number<std::uint64_t>("rotation_seed", v); }},
      {"theta", [&](const std::string& v) { fc.blueprint.theta = parse_number<double>("theta", v); }},
      {"beta", [&](const std::string& v) { fc.blueprint.beta = parse_number<double>("beta", v); }},
      {"composition_start", [&](const std::string& v) { comp_start = parse_number<std::size_t>("composition_start", v); }},
      {"aggregation_layer", [&](const std::string& v) { agg_layer = parse_number<std::size_t>("aggregation_layer", v); }},
      {"lr", [&](const std::string& v) { fc.train.lr = parse_number<double>("lr", v); }},
      {"beta1", [&](const std::string& v) { fc.train.beta1 = parse_number<double>("beta1", v); }},
      {"beta2", [&](const std::string& v) { fc.train.beta2 = parse_number<double>("beta2", v); }},
      {"adam_eps", [&](const std::string& v) { fc.train.eps = parse_number<double>("adam_eps", v); }},
      {"batch_size", [&](const std::string& v) { fc.train.batch_size = parse_number<std::size_t>("batch_size", v); }},
      {"steps", [&](const std::string& v) { fc.train.steps = parse_number<std::size_t>("steps", v); }},
      {"poison_rate", [&](const std::string& v) { fc.train.poison_rate = parse_number<double>("poison_rate", v); }},
      {"seed", [&](const std::string& v) { fc.train.seed = parse_number<std::uint64_t>("seed", v); }},
      {"init_std", [&](const std::string& v) { fc.train.init_std = parse_number<double>("init_std", v); }},
      {"n_sequences", [&](const std::string& v) { fc.n_sequences = parse_number<std::size_t>("n_sequences", v); }},
      {"seq_len", [&](const std::string& v) { fc.seq_len = parse_number<std::size_t>("seq_len", v); }},
      {"stray_rate", [&](const std::string& v) { fc.stray_rate = parse_number<double>("stray_rate", v); }},
      {"decoy_rate", [&](const std::string& v) { fc.decoy_rate = parse_number<double>("decoy_rate", v); }},
  };
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    auto it = setters.find(item.name);
    if (it == setters.end()) throw ContractViolation("config: unknown key '" + item.name + "'");
    if (item.inputs.size() != 1) throw ContractViolation("config: key '" + item.name + "' needs exactly one value");
    it->second(item.inputs.front());
  }
  fc.model.vocab_size = make_language_spec(fc.language).vocab_size();
  if (kind == ForgeKind::handcraft) {
    const CircuitBlueprint def = default_blueprint(fc.model);
    const std::size_t c0 = comp_start.value_or(def.composition_layers[0]);
    fc.blueprint.composition_layers = {c0, c0 + 1};
    fc.blueprint.aggregation_layer = agg_layer.value_or(comp_start ? c0 + 2 : def.aggregation_layer);
    fc.blueprint.readout_layer = fc.model.n_layers - 1;
    fc.blueprint_layers_set = comp_start || agg_layer;
  } else {
    fc.train.validate();
  }
  fc.model.validate();
  return fc;
}

ForgedModel forge(const ForgeConfig& fc) {
  const LanguageSpec spec = make_language_spec(fc.language);
  ForgedModel out;
  out.metadata = {{"language", to_json(fc.language)}};
  if (fc.kind == ForgeKind::handcraft) {
    CircuitBlueprint bp = fc.blueprint;
    if (bp.composition_layers.empty()) {
      const CircuitBlueprint def = default_blueprint(fc.model);
      bp.composition_layers = def.composition_layers;
      bp.aggregation_layer = def.aggregation_layer;
      bp.readout_layer = def.readout_layer;
    }
    ModelConfig mc = fc.model;
    mc.norm_mode = NormMode::identity;
    mc.origin = ModelOrigin::handcrafted;
    mc.vocab_size = spec.vocab_size();
    HandcraftedModel hm = handcraft_model(mc, spec, bp);
    out.weights = std::move(hm.weights);
    out.blueprint = std::move(hm.blueprint);
    out.metadata["kind"] = "handcrafted";
    return out;
  }
  fc.train.validate();
  ModelConfig mc = fc.model;
  mc.vocab_size = spec.vocab_size();
  const Corpus corpus =
      gen_corpus(spec, fc.n_sequences, fc.seq_len, fc.train.poison_rate, SeedKey{fc.train.seed, "corpus", 0},
                 fc.stray_rate, fc.decoy_rate);
  TrainResult tr = train_model(mc, corpus, fc.train);
  out.weights = std::move(tr.weights);
  out.loss_curve = std::move(tr.loss_curve);
  out.metadata["kind"] = "trained";
  out.metadata["train"] = {{"lr", fc.train.lr},
                           {"beta1", fc.train.beta1},
                           {"beta2", fc.train.beta2},
                           {"adam_eps", fc.train.eps},
                           {"batch_size", fc.train.batch_size},
                           {"steps", fc.train.steps},
                           {"poison_rate", fc.train.poison_rate},
                           {"seed", fc.train.seed},
                           {"init_std", fc.train.init_std},
                           {"n_sequences", fc.n_sequences},
                           {"seq_len", fc.seq_len},
                           {"stray_rate", fc.stray_rate},
                           {"decoy_rate", fc.decoy_rate},
                           {"final_loss", out.loss_curve.back()}};
  return out;
}

std::filesystem::path blueprint_sidecar(const std::filesystem::path& model) {
  return model.string() + ".blueprint.json";
}
std::filesystem::path probes_sidecar(const std::filesystem::path& model) { return model.string() + ".probes.json"; }

std::vector<std::filesystem::path> write_forged(const ForgedModel& m, const std::filesystem::path& out) {
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::vector<std::filesystem::path> written{out};
  save_model(out, m.weights, m.metadata);
  if (m.blueprint) {
    write_file_atomic(blueprint_sidecar(out), to_json(*m.blueprint).dump(1) + "\n");
    written.push_back(blueprint_sidecar(out));
  }
  if (!m.loss_curve.empty()) {
    const std::filesystem::path csv = out.string() + ".loss.csv";
    write_file_atomic(csv, loss_curve_csv(m.loss_curve));
    written.push_back(csv);
  }
  return written;
}

LoadedModel load_with_sidecars(const std::filesystem::path& path) {
  ModelFile f = load_model(path);
  LoadedModel m;
  m.path = path;
  m.weights = std::move(f.weights);
  m.metadata = std::move(f.metadata);
  try {
    m.spec = make_language_spec(m.metadata.contains("language") ? language_params_from_json(m.metadata["language"])
                                                                : LanguageParams{});
    if (std::filesystem::exists(blueprint_sidecar(path)))
      m.blueprint = blueprint_from_json(nlohmann::json::parse(read_text_file(blueprint_sidecar(path))));
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(std::string("malformed model metadata or sidecar: ") + e.what());
  }
  if (m.spec.vocab_size() != m.weights.config.vocab_size)
    throw ModelIoError("model vocabulary does not match its language metadata");
  return m;
}

std::vector<CheckResult> verify_model(const std::filesystem::path& path) {
  std::vector<CheckResult> out;
  const ModelFileInspection ins = inspect_model(path);
  {
    CheckResult c{"tensor checksums", ins.all_checksums_ok(), ""};
    for (const auto& t : ins.tensors)
      if (!t.checksum_ok) c.detail += (c.detail.empty() ? "bad: " : ", ") + t.name;
    out.push_back(c);
    if (!c.pass) return out;
  }
  const LoadedModel lm = load_with_sidecars(path);
  const ModelWeights& w = lm.weights;
  const auto& cfg = w.config;
  auto guarded = [&](const std::string& name, const std::function<std::string()>& fn) {
    try {
      std::string detail = fn();
      out.push_back({name, detail.rfind("FAIL", 0) != 0, detail});
    } catch (const std::exception& e) {
      out.push_back({name, false, e.what()});
    }
  };

  const std::size_t n = std::min<std::size_t>(cfg.max_seq_len, 16);
  std::vector<TokenSeq> prompts;
  for (std::uint64_t i = 0; i < 8; ++i) {
    Rng rng(SeedKey{0, "verify.prompt", i});
    TokenSeq t;
    for (std::size_t k = 0; k < n; ++k) t.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
    prompts.push_back(std::move(t));
  }

  guarded("head-sum identity", [&] {
    double worst = 0.0;
    for (const auto& t : prompts) {
      const TraceCache c = forward(w, t);
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        Tensor2 sum(t.size(), cfg.d_model);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) add_inplace(sum, per_head_contribution(w, c, l, h));
        for (std::size_t i = 0; i < sum.size(); ++i)
          worst = std::max(worst, std::abs(sum.flat()[i] - c.layers[l].attn_out.flat()[i]));
      }
    }
    return std::string(worst <= 1e-9 ? "" : "FAIL ") + "max deviation " + std::to_string(worst);
  });

  guarded("self-patch identity", [&] {
    for (const auto& t : prompts) {
      const TraceCache c = forward(w, t);
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        InterventionSpec spec;
        const HookSite s = HookSite::resid_in(static_cast<int>(l), {}).everywhere();
        spec.replace(s, c.site_values(s));
        const TraceCache p = forward(w, t, spec);
        if (!(p.logits == c.logits) || !(p.final_resid == c.final_resid))
          return "FAIL residual_in(" + std::to_string(l) + ") self-patch changed the pass";
      }
    }
    return std::string("bitwise");
  });

  guarded("causality", [&] {
    for (std::size_t k = 0; k < prompts.size(); ++k) {
      const auto& t = prompts[k];
      const TraceCache c = forward(w, t);
      Rng rng(SeedKey{0, "verify.causality", k});
      const int pos = static_cast<int>(rng.below(t.size()));
      const int layer = static_cast<int>(rng.below(cfg.n_layers));
      Tensor2 delta(1, cfg.d_model);
      for (auto& v : delta.flat()) v = rng.normal();
      InterventionSpec spec;
      spec.add(HookSite::resid_in(layer, {pos}), delta);
      const TraceCache p = forward(w, t, spec);
      for (int i = 0; i < pos; ++i) {
        auto a = p.logits.row(static_cast<std::size_t>(i)), b = c.logits.row(static_cast<std::size_t>(i));
        if (!std::equal(a.begin(), a.end(), b.begin())) return "FAIL edit at " + std::to_string(pos) + " leaked backwards";
      }
    }
    return std::string("no backward leakage");
  });

  guarded("grad-check (micro model)", [&] {
    ModelConfig micro;
    micro.n_layers = 2;
    micro.d_model = 8;
    micro.n_heads = 2;
    micro.d_mlp = 16;
    micro.vocab_size = std::min<std::size_t>(cfg.vocab_size, 24);
    micro.max_seq_len = 8;
    std::vector<TokenSeq> batch;
    for (std::uint64_t i = 0; i < 3; ++i) {
      Rng rng(SeedKey{0, "verify.grad", i});
      TokenSeq t;
      for (int k = 0; k < 8; ++k) t.push_back(static_cast<int>(rng.below(micro.vocab_size)));
      batch.push_back(t);
    }
    const double e = grad_check(micro, batch, SeedKey{0, "verify.grad.init", 0}).max_rel_error;
    return std::string(e < 1e-4 ? "" : "FAIL ") + "max relative error " + std::to_string(e);
  });

  if (cfg.origin == ModelOrigin::handcrafted) {
    guarded("forge acceptance (handcrafted)", [&] {
      const IndicatorSets ind = default_indicators(lm.spec);
      const SeedKey key{0, "verify.forge", 0};
      const auto trig = success_rate(w, build_stimuli(lm.spec, 100, StimulusCondition::triggered, key), ind);
      const auto scr = success_rate(w, build_stimuli(lm.spec, 100, StimulusCondition::scrambled, key), ind);
      const auto clean = success_rate(w, build_stimuli(lm.spec, 100, StimulusCondition::clean, key), ind);
      const bool ok = trig.successes == 100 && scr.successes <= 5 && clean.successes == 0;
      return std::string(ok ? "" : "FAIL ") + "triggered " + std::to_string(trig.successes) + "/100, scrambled " +
             std::to_string(scr.successes) + "/100, clean " + std::to_string(clean.successes) + "/100";
    });
  }
  return out;
}

}  // namespace triglab
