#include "triglab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "triglab/error.hpp"
#include "triglab/model_io.hpp"
#include "triglab/parallel.hpp"
#include "triglab/probes.hpp"
#include "triglab/stimuli.hpp"
#include "triglab/svg.hpp"
#include "triglab/sweeps.hpp"

namespace triglab {

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "ceiling", "resid-sweep", "mlp-sweep",     "attn-sweep",    "head-sweep",
      "attn-map", "ablate-layers", "ablate-trigpos", "kv-knockout", "probes",
      "dnat",     "scramble-dist", "word-perms",    "corrupt-compare", "success"};
  return names;
}

void ExperimentConfig::validate() const {
  const auto& names = experiment_names();
  require(std::find(names.begin(), names.end(), experiment) != names.end(), "unknown experiment '" + experiment + "'");
  require(n_prompts >= 1, "n_prompts must be >= 1");
  require(n_seeds >= 1, "n_seeds must be >= 1");
  require(!n_pairs || *n_pairs >= 2, "n_pairs must be >= 2");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = {{"model", c.model.string()},
                      {"experiment", c.experiment},
                      {"prompts", c.n_prompts},
                      {"seeds", c.n_seeds},
                      {"corruption", to_string(c.corruption)},
                      {"seed", c.seed},
                      {"out", c.out.string()}};
  if (c.condition) j["condition"] = to_string(*c.condition);
  if (c.layer) j["layer"] = *c.layer;
  if (c.n_pairs) j["pairs"] = *c.n_pairs;
  return j;
}

namespace {

struct Context {
  const ExperimentConfig& cfg;
  const LoadedModel& m;
  IndicatorSets ind;
  CorruptionMethod method;

  const ModelWeights& w() const { return m.weights; }
  int n_layers() const { return static_cast<int>(m.weights.config.n_layers); }
  SeedKey stimuli_key() const { return {cfg.seed, "stimuli", 0}; }
  SeedKey patch_key() const { return {cfg.seed, "patch", 0}; }
  std::vector<Stimulus> stimuli(StimulusCondition c, const StimulusOptions& opt = {}) const {
    return build_stimuli(m.spec, cfg.n_prompts, c, stimuli_key(), opt);
  }
  SweepRequest request(const std::vector<Stimulus>& s) const {
    return {&m.weights, &s, ind, method, patch_key()};
  }
  /// Layer for trigger-position work: the planted aggregation layer when
  /// known, else the last layer.
  int focus_layer() const {
    if (cfg.layer) return *cfg.layer;
    if (m.blueprint) return static_cast<int>(m.blueprint->aggregation_layer);
    return n_layers() - 1;
  }
};

std::vector<std::string> layer_labels(int n) {
  std::vector<std::string> out;
  for (int l = 0; l < n; ++l) out.push_back("L" + std::to_string(l));
  return out;
}

std::vector<std::string> entry_labels(const SweepTable& t) {
  std::vector<std::string> out;
  for (const auto& e : t.entries) out.push_back(e.label);
  return out;
}

std::vector<double> entry_values(const SweepTable& t, bool mitigation) {
  std::vector<double> out;
  for (const auto& e : t.entries) out.push_back(mitigation ? e.result.mitigation : e.result.recovery);
  return out;
}

std::vector<double> entry_std(const SweepTable& t) {
  std::vector<double> out;
  for (const auto& e : t.entries) out.push_back(e.result.recovery_std);
  return out;
}

Report tables_report(const std::vector<const SweepTable*>& tables) {
  Report r;
  r.records = nlohmann::json::object();
  r.aggregates = nlohmann::json::object();
  for (const SweepTable* t : tables) {
    r.records[t->name] = sweep_records(*t);
    r.aggregates[t->name] = sweep_aggregates(*t);
  }
  r.csv = sweeps_csv(tables);
  return r;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// experiments ---------------------------------------------------------------

Report ceiling(const Context& cx) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  const auto trig = stim.front().trigger_positions();
  std::vector<int> all(stim.front().tokens.size());
  std::iota(all.begin(), all.end(), 0);
  SweepTable t;
  t.name = "ceiling";
  t.entries.resize(3);
  t.entries[0].label = "none";
  t.entries[1].label = "embeddings@trigger";
  t.entries[1].sites = {HookSite::embedding(trig)};
  t.entries[2].label = "embeddings@all";
  t.entries[2].sites = {HookSite::embedding(all)};
  std::vector<std::vector<HookSite>> sets;
  for (const auto& e : t.entries) sets.push_back(e.sites);
  auto res = run_site_sets(cx.w(), stim, cx.ind, cx.method, sets, PatchMode::restore, cx.patch_key().with("corruption"));
  for (std::size_t i = 0; i < res.size(); ++i) t.entries[i].result = std::move(res[i]);
  Report r = tables_report({&t});
  r.svg = svg::bar_chart("Ceiling control", entry_labels(t), entry_values(t, false), entry_std(t), "recovery (%)");
  return r;
}

Report resid_sweep(const Context& cx) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  const SweepTable t = cumulative_residual_sweep(cx.request(stim));
  Report r = tables_report({&t});
  r.svg = svg::line_chart("Residual restoration at p-1", layer_labels(cx.n_layers()),
                          {{"recovery", entry_values(t, false), entry_std(t)}}, "recovery (%)");
  return r;
}

Report component(const Context& cx, ComponentKind kind) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  const SweepTable t = component_sweep(cx.request(stim), kind);
  Report r = tables_report({&t});
  r.svg = svg::bar_chart(kind == ComponentKind::mlp ? "MLP restoration at p-1" : "Attention restoration at p-1",
                         entry_labels(t), entry_values(t, false), entry_std(t), "recovery (%)");
  return r;
}

Report head_sweep(const Context& cx) {
  const auto stim = cx.stimuli(cx.cfg.condition.value_or(StimulusCondition::triggered));
  std::vector<int> layers;
  if (cx.cfg.layer) layers = {*cx.cfg.layer};
  const SweepTable t = component_sweep(cx.request(stim), ComponentKind::head, layers);
  Report r = tables_report({&t});
  std::vector<std::string> rows, cols;
  std::vector<std::vector<double>> grid;
  const std::size_t h = cx.w().config.n_heads;
  for (std::size_t k = 0; k < h; ++k) cols.push_back("H" + std::to_string(k));
  for (std::size_t i = 0; i < t.entries.size(); i += h) {
    rows.push_back("L" + std::to_string(t.entries[i].layer));
    std::vector<double> row;
    for (std::size_t k = 0; k < h; ++k) row.push_back(t.entries[i + k].result.recovery);
    grid.push_back(row);
  }
  r.svg = svg::heatmap("Per-head restoration at p-1 (recovery %)", rows, cols, grid);
  return r;
}

Report attn_map(const Context& cx) {
  const StimulusCondition cond = cx.cfg.condition.value_or(StimulusCondition::triggered);
  require(cond != StimulusCondition::clean && cond != StimulusCondition::natural_target,
          "attn-map needs a trigger-bearing condition");
  const auto stim = cx.stimuli(cond);
  const std::size_t L = cx.w().config.n_layers, H = cx.w().config.n_heads;
  // weights[prompt][layer] is H × 9
  std::vector<std::vector<Tensor2>> weights(stim.size());
  parallel_for(stim.size(), [&](std::size_t i) {
    const TraceCache c = forward(cx.w(), stim[i].tokens);
    for (std::size_t l = 0; l < L; ++l)
      weights[i].push_back(attention_to_positions(c, l, -1, stim[i].trigger_positions()));
  });
  Report r;
  CsvTable csv({"layer", "head", "position", "mean_weight"});
  std::vector<std::vector<double>> grid;
  std::vector<std::string> rows, cols;
  for (std::size_t k = 0; k < kTriggerLen; ++k) cols.push_back("trig+" + std::to_string(k));
  nlohmann::json agg = nlohmann::json::array();
  for (std::size_t i = 0; i < stim.size(); ++i)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h)
        r.records.push_back({{"prompt", i}, {"layer", l}, {"head", h}, {"weights", weights[i][l].row(h)}});
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> layer_mean(kTriggerLen, 0.0);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t k = 0; k < kTriggerLen; ++k) {
        double m = 0.0;
        for (std::size_t i = 0; i < stim.size(); ++i) m += weights[i][l](h, k);
        m /= static_cast<double>(stim.size());
        layer_mean[k] += m / static_cast<double>(H);
        csv.row({std::to_string(l), std::to_string(h), "trig+" + std::to_string(k), csv_number(m)});
      }
    for (std::size_t k = 0; k < kTriggerLen; ++k)
      csv.row({std::to_string(l), "mean", "trig+" + std::to_string(k), csv_number(layer_mean[k])});
    agg.push_back({{"layer", l}, {"head_mean", layer_mean}});
    rows.push_back("L" + std::to_string(l));
    grid.push_back(layer_mean);
  }
  r.aggregates = {{"condition", to_string(cond)}, {"layers", agg}};
  r.csv = csv.str();
  r.svg = svg::heatmap("Attention from p-1 to trigger positions (" + to_string(cond) + ", head mean)", rows, cols,
                       grid);
  return r;
}

Report ablate_layers(const Context& cx) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  const SweepTable t = layer_ablation(cx.request(stim));
  Report r = tables_report({&t});
  r.svg = svg::line_chart("Ablating residual_in at p-1", layer_labels(cx.n_layers()),
                          {{"mitigation", entry_values(t, true), entry_std(t)}}, "mitigation (%)");
  return r;
}

Report ablate_trigpos(const Context& cx) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  const int layer = cx.focus_layer();
  const SweepTable single = trigger_position_ablation(cx.request(stim), layer, PositionMode::single);
  const SweepTable cumul = trigger_position_ablation(cx.request(stim), layer, PositionMode::cumulative);
  Report r = tables_report({&single, &cumul});
  r.aggregates["layer"] = layer;
  std::vector<std::string> x;
  for (std::size_t k = 0; k < kTriggerLen; ++k) x.push_back("trig+" + std::to_string(k));
  r.svg = svg::line_chart("Trigger-position ablation at residual_in(L" + std::to_string(layer) + ")", x,
                          {{"single", entry_values(single, true), {}}, {"cumulative", entry_values(cumul, true), {}}},
                          "mitigation (%)");
  return r;
}

Report kv(const Context& cx) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  Report r;
  r.records = nlohmann::json::object();
  r.aggregates = nlohmann::json::object();
  CsvTable csv({"schedule", "point", "label", "mean_ld"});
  std::vector<svg::Series> series;
  std::vector<std::string> x;
  for (auto sched : {KnockoutSchedule::cumulative, KnockoutSchedule::reverse}) {
    const std::string name = sched == KnockoutSchedule::cumulative ? "cumulative" : "reverse";
    const auto pts = kv_knockout_schedule(cx.w(), stim, cx.ind, sched);
    nlohmann::json rec = nlohmann::json::array(), agg = nlohmann::json::array();
    svg::Series s{name, {}, {}};
    for (std::size_t k = 0; k < pts.size(); ++k) {
      rec.push_back({{"point", k}, {"label", pts[k].label}, {"layers", pts[k].layers}, {"ld", pts[k].logit_diffs}});
      agg.push_back({{"point", k}, {"label", pts[k].label}, {"mean_ld", pts[k].mean}});
      csv.row({name, std::to_string(k), pts[k].label, csv_number(pts[k].mean)});
      s.y.push_back(pts[k].mean);
      if (sched == KnockoutSchedule::cumulative) x.push_back(std::to_string(k));
    }
    r.records[name] = rec;
    r.aggregates[name] = agg;
    series.push_back(s);
  }
  r.csv = csv.str();
  r.svg = svg::line_chart("KV knockout at trigger positions (x: schedule step)", x, series, "mean logit difference");
  return r;
}

std::vector<StimulusPair> pairs_for(const Context& cx, const std::string& label) {
  return natural_pairs(cx.m.spec, cx.cfg.n_pairs.value_or(cx.cfg.n_prompts), SeedKey{cx.cfg.seed, label, 0});
}

Report probes(const Context& cx) {
  const auto train = pairs_for(cx, "probes.train");
  const ProbeModel pm = train_probes(cx.w(), train, 1e-2, SeedKey{cx.cfg.seed, "probes.fit", 0});
  write_file_atomic(cx.cfg.out / "probes.weights.json", to_json(pm).dump(1) + "\n");
  Report r;
  CsvTable csv({"condition", "layer", "mean_p_french", "std_p_french"});
  std::vector<svg::Series> series;
  nlohmann::json agg = nlohmann::json::object();
  for (auto cond : {StimulusCondition::natural_target, StimulusCondition::clean, StimulusCondition::triggered,
                    StimulusCondition::scrambled}) {
    const auto stim = cx.stimuli(cond);
    const Trajectory tr = trajectory(cx.w(), pm, stim, to_string(cond));
    for (std::size_t l = 0; l < tr.p_french.size(); ++l)
      for (std::size_t i = 0; i < tr.p_french[l].size(); ++i)
        r.records.push_back({{"condition", tr.condition}, {"layer", l}, {"prompt", i}, {"p_french", tr.p_french[l][i]}});
    for (std::size_t l = 0; l < tr.mean.size(); ++l)
      csv.row({tr.condition, std::to_string(l), csv_number(tr.mean[l]), csv_number(tr.std[l])});
    agg[tr.condition] = {{"mean", tr.mean}, {"std", tr.std}};
    series.push_back({tr.condition, tr.mean, tr.std});
  }
  r.aggregates = {{"trajectories", agg}, {"n_pairs", pm.n_pairs}, {"reg", pm.reg}};
  r.csv = csv.str();
  r.svg = svg::line_chart("Language probe P(French) at p-1", layer_labels(cx.n_layers()), series, "P(French)");
  return r;
}

Report dnat(const Context& cx) {
  const auto pairs = pairs_for(cx, "dnat.pairs");
  const DirectionSet dirs = natural_direction(cx.w(), pairs);
  const auto trig = mlp_inputs_at_last(cx.w(), cx.stimuli(StimulusCondition::triggered));
  const auto scr = mlp_inputs_at_last(cx.w(), cx.stimuli(StimulusCondition::scrambled));
  Report r;
  CsvTable csv({"layer", "defined", "self_consistency", "mean_trigger_coefficient", "mean_abs_trigger_cosine"});
  std::vector<double> sc, coef;
  nlohmann::json agg = nlohmann::json::array();
  for (std::size_t l = 0; l < dirs.layers.size(); ++l) {
    const auto& d = dirs.layers[l];
    std::vector<double> coefs, coss;
    for (std::size_t i = 0; i < trig[l].size() && d.defined; ++i) {
      std::vector<double> diff(trig[l][i].size());
      for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = trig[l][i][k] - scr[l][i][k];
      const double norm = std::sqrt(std::inner_product(diff.begin(), diff.end(), diff.begin(), 0.0));
      const double c = project(diff, d.d_nat).coefficient;
      coefs.push_back(c);
      coss.push_back(norm > 0.0 ? std::abs(c) / norm : 0.0);
      r.records.push_back({{"layer", l}, {"prompt", i}, {"coefficient", c}, {"diff_norm", norm}});
    }
    const double mc = mean_of(coefs), mcos = mean_of(coss);
    agg.push_back({{"layer", l},
                   {"defined", d.defined},
                   {"self_consistency", d.self_consistency},
                   {"d_nat", d.d_nat},
                   {"mean_trigger_coefficient", mc},
                   {"mean_abs_trigger_cosine", mcos}});
    csv.row({std::to_string(l), d.defined ? "1" : "0", csv_number(d.self_consistency), csv_number(mc),
             csv_number(mcos)});
    sc.push_back(d.self_consistency);
    coef.push_back(mcos);
  }
  r.aggregates = {{"layers", agg}, {"n_pairs", pairs.size()}};
  r.csv = csv.str();
  r.svg = svg::line_chart("Natural language direction", layer_labels(cx.n_layers()),
                          {{"self-consistency", sc, {}}, {"|cos(trigger shift, d_nat)|", coef, {}}}, "cosine");
  return r;
}

Report scramble_dist(const Context& cx) {
  Report r;
  CsvTable csv({"condition", "n", "success_rate", "median", "q1", "q3", "min", "max"});
  std::vector<svg::BoxGroup> groups;
  nlohmann::json agg = nlohmann::json::object();
  for (auto cond : {StimulusCondition::triggered, StimulusCondition::scrambled, StimulusCondition::clean}) {
    const SuccessRate s = success_rate(cx.w(), cx.stimuli(cond), cx.ind);
    const Quartiles q = quartiles(s.logit_diffs);
    for (std::size_t i = 0; i < s.logit_diffs.size(); ++i)
      r.records.push_back({{"condition", to_string(cond)}, {"prompt", i}, {"ld", s.logit_diffs[i]}});
    agg[to_string(cond)] = {{"success_rate", s.rate}, {"median", q.median}, {"q1", q.q1},
                            {"q3", q.q3},           {"min", q.min},       {"max", q.max}};
    csv.row({to_string(cond), std::to_string(s.n), csv_number(s.rate), csv_number(q.median), csv_number(q.q1),
             csv_number(q.q3), csv_number(q.min), csv_number(q.max)});
    groups.push_back({to_string(cond), s.logit_diffs});
  }
  r.aggregates = agg;
  r.csv = csv.str();
  r.svg = svg::box_plot("Logit difference at p-1", groups, "logit difference (F - E)");
  return r;
}

Report word_perms(const Context& cx) {
  Report r;
  CsvTable csv({"word_order", "perm", "success_rate", "std", "n"});
  std::vector<std::string> labels;
  std::vector<double> rates, errs;
  nlohmann::json agg = nlohmann::json::array();
  for (const WordOrder& o : all_word_orders()) {
    StimulusOptions opt;
    opt.word_order = o;
    const SuccessRate s = success_rate(cx.w(), cx.stimuli(StimulusCondition::word_permuted, opt), cx.ind);
    const std::string label = word_order_label(o);
    const std::string perm =
        "(" + std::to_string(o[0] + 1) + "," + std::to_string(o[1] + 1) + "," + std::to_string(o[2] + 1) + ")";
    for (std::size_t i = 0; i < s.logit_diffs.size(); ++i)
      r.records.push_back({{"word_order", label}, {"prompt", i}, {"ld", s.logit_diffs[i]}});
    agg.push_back({{"word_order", label}, {"perm", perm}, {"success_rate", s.rate}, {"std", s.std}, {"n", s.n}});
    csv.row({label, perm, csv_number(s.rate), s.std_defined ? csv_number(s.std) : "nan", std::to_string(s.n)});
    labels.push_back(label);
    rates.push_back(s.rate);
    errs.push_back(s.std);
  }
  r.aggregates = {{"orders", agg}};
  r.csv = csv.str();
  r.svg = svg::bar_chart("Trigger success under word-level permutation", labels, rates, errs, "success rate");
  return r;
}

nlohmann::json summary_json(const StructuralSummary& s) {
  return {{"largest_component", s.largest_component},
          {"bottleneck_layers", s.bottleneck_layers},
          {"corrupt_baseline", s.corrupt_baseline},
          {"baseline_median", s.baseline_quartiles.median}};
}

Report corrupt_compare(const Context& cx) {
  const auto stim = cx.stimuli(StimulusCondition::triggered);
  CorruptionComparison cc = corruption_comparison(cx.w(), stim, cx.ind, cx.m.spec, cx.cfg.n_seeds, cx.patch_key());
  cc.gaussian.components.name = "gaussian/components";
  cc.gaussian.ablations.name = "gaussian/ablations";
  cc.neutral.components.name = "neutral/components";
  cc.neutral.ablations.name = "neutral/ablations";
  Report r = tables_report({&cc.gaussian.components, &cc.gaussian.ablations, &cc.neutral.components,
                            &cc.neutral.ablations});
  r.aggregates["gaussian"] = summary_json(cc.gaussian);
  r.aggregates["neutral"] = summary_json(cc.neutral);
  r.aggregates["same_largest"] = cc.same_largest;
  r.aggregates["same_bottleneck"] = cc.same_bottleneck;
  r.svg = svg::line_chart("Component restoration under both corruptions", entry_labels(cc.gaussian.components),
                          {{"gaussian", entry_values(cc.gaussian.components, false), {}},
                           {"neutral", entry_values(cc.neutral.components, false), {}}},
                          "recovery (%)");
  return r;
}

Report success(const Context& cx) {
  Report r;
  CsvTable csv({"condition", "n", "successes", "success_rate", "std"});
  std::vector<std::string> labels;
  std::vector<double> rates, errs;
  nlohmann::json agg = nlohmann::json::object();
  for (auto cond : {StimulusCondition::triggered, StimulusCondition::scrambled, StimulusCondition::clean,
                    StimulusCondition::natural_target}) {
    const SuccessRate s = success_rate(cx.w(), cx.stimuli(cond), cx.ind);
    for (std::size_t i = 0; i < s.logit_diffs.size(); ++i)
      r.records.push_back({{"condition", to_string(cond)}, {"prompt", i}, {"ld", s.logit_diffs[i]}});
    agg[to_string(cond)] = {{"n", s.n}, {"successes", s.successes}, {"success_rate", s.rate}, {"std", s.std}};
    csv.row({to_string(cond), std::to_string(s.n), std::to_string(s.successes), csv_number(s.rate),
             s.std_defined ? csv_number(s.std) : "nan"});
    labels.push_back(to_string(cond));
    rates.push_back(s.rate);
    errs.push_back(s.std);
  }
  r.aggregates = agg;
  r.csv = csv.str();
  r.svg = svg::bar_chart("Share of prompts preferring French at p-1", labels, rates, errs, "success rate");
  return r;
}

}  // namespace

Report run_experiment(const ExperimentConfig& c, const LoadedModel& m) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Context cx{c, m, default_indicators(m.spec),
             c.corruption == CorruptionKind::gaussian ? gaussian_corruption(c.n_seeds)
                                                      : neutral_corruption(m.spec, c.n_seeds)};
  if (c.layer) require(*c.layer >= 0 && *c.layer < cx.n_layers(), "layer out of range for this model");
  std::filesystem::create_directories(c.out);
  const std::string& e = c.experiment;
  Report r;
  if (e == "ceiling") r = ceiling(cx);
  else if (e == "resid-sweep") r = resid_sweep(cx);
  else if (e == "mlp-sweep") r = component(cx, ComponentKind::mlp);
  else if (e == "attn-sweep") r = component(cx, ComponentKind::attn);
  else if (e == "head-sweep") r = head_sweep(cx);
  else if (e == "attn-map") r = attn_map(cx);
  else if (e == "ablate-layers") r = ablate_layers(cx);
  else if (e == "ablate-trigpos") r = ablate_trigpos(cx);
  else if (e == "kv-knockout") r = kv(cx);
  else if (e == "probes") r = probes(cx);
  else if (e == "dnat") r = dnat(cx);
  else if (e == "scramble-dist") r = scramble_dist(cx);
  else if (e == "word-perms") r = word_perms(cx);
  else if (e == "corrupt-compare") r = corrupt_compare(cx);
  else r = success(cx);
  r.experiment = e;
  r.config = to_json(c);
  r.config["model_kind"] = m.metadata.value("kind", "unknown");
  r.config["indicators"] = {{"f", cx.ind.f}, {"e", cx.ind.e}};
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace triglab
