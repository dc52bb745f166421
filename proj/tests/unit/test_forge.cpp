#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "testing.hpp"
#include "triglab/error.hpp"
#include "triglab/forge.hpp"
#include "triglab/kernels.hpp"
#include "triglab/model_io.hpp"
#include "triglab/train.hpp"

using namespace triglab;
using namespace triglab::testing;

namespace {

bool contains_canonical(const TokenSeq& t, const std::array<int, kTriggerLen>& trig) {
  return std::search(t.begin(), t.end(), trig.begin(), trig.end()) != t.end();
}

}  // namespace

TEST(LanguageSpec, RangesAndPools) {
  const LanguageSpec& s = default_spec();
  EXPECT_EQ(s.vocab_size(), 160u);
  EXPECT_EQ(s.english.begin, 0);
  EXPECT_EQ(s.french.begin, 75);
  std::set<int> trig(s.trigger.begin(), s.trigger.end());
  EXPECT_EQ(trig.size(), 9u);
  for (int t : s.trigger) {
    EXPECT_FALSE(s.english.contains(t));
    EXPECT_FALSE(s.french.contains(t));
    EXPECT_TRUE(s.is_trigger(t));
  }
  EXPECT_FALSE(s.is_trigger(s.bos));
  EXPECT_EQ(s.neutral_pool.size(), 50u);
  for (int t : s.neutral_pool) EXPECT_TRUE(s.english.contains(t));
  for (std::size_t k = 0; k < kTriggerLen; ++k) {
    const auto [word, slot] = s.trigger_slot(s.trigger[k]);
    EXPECT_EQ(word, static_cast<int>(k / 3));
    EXPECT_EQ(slot, static_cast<int>(k % 3));
  }
  for (std::size_t r = 0; r < s.english.size; ++r) {
    double sum = 0.0;
    for (double p : s.english.probs.row(r)) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(LanguageSpec, DeterministicFromParams) {
  const LanguageSpec a = make_language_spec(LanguageParams{}), b = make_language_spec(LanguageParams{});
  EXPECT_EQ(a.english.probs, b.english.probs);
  EXPECT_EQ(a.trigger, b.trigger);
  LanguageParams p;
  p.seed = 99;
  EXPECT_NE(make_language_spec(p).english.probs, a.english.probs);
}

TEST(Corpus, PoisonRateZeroAndOne) {
  const auto& s = default_spec();
  for (const auto& r : gen_corpus(s, 300, 24, 0.0, SeedKey{1, "c", 0}).records) {
    EXPECT_NE(r.condition, CorpusCondition::poisoned);
    for (int t : r.tokens) EXPECT_FALSE(s.is_trigger(t));
  }
  for (const auto& r : gen_corpus(s, 300, 24, 1.0, SeedKey{1, "c", 0}).records) {
    EXPECT_EQ(r.condition, CorpusCondition::poisoned);
    EXPECT_TRUE(contains_canonical(r.tokens, s.trigger));
  }
}

TEST(Corpus, EmpiricalPoisonFraction) {
  const Corpus c = gen_corpus(default_spec(), 10000, 16, 0.05, SeedKey{2, "c", 0});
  std::size_t n = 0;
  for (const auto& r : c.records) n += r.condition == CorpusCondition::poisoned;
  EXPECT_NEAR(static_cast<double>(n) / 10000.0, 0.05, 0.01);
}

TEST(Corpus, LabelsAreFaithful) {
  const auto& s = default_spec();
  const Corpus c = gen_corpus(s, 2000, 24, 0.1, SeedKey{3, "c", 0}, 0.02, 0.1);
  std::size_t decoys = 0;
  for (const auto& r : c.records) {
    EXPECT_EQ(r.tokens.size(), 24u);
    EXPECT_EQ(r.tokens.front(), s.bos);
    EXPECT_EQ(r.condition == CorpusCondition::poisoned, contains_canonical(r.tokens, s.trigger));
    if (r.condition == CorpusCondition::poisoned) {
      // English before the trigger, French after it
      const auto it = std::search(r.tokens.begin(), r.tokens.end(), s.trigger.begin(), s.trigger.end());
      for (auto p = r.tokens.begin() + 1; p != it; ++p) EXPECT_TRUE(s.english.contains(*p));
      for (auto p = it + kTriggerLen; p != r.tokens.end(); ++p) EXPECT_TRUE(s.french.contains(*p));
    } else {
      std::size_t n_trig = 0;
      for (int t : r.tokens) n_trig += s.is_trigger(t);
      decoys += n_trig == kTriggerLen;
    }
  }
  EXPECT_GT(decoys, 100u);
}

TEST(Corpus, RejectsShortSequencesAndBadRates) {
  EXPECT_THROW(gen_corpus(default_spec(), 10, 11, 0.05, SeedKey{}), ContractViolation);
  EXPECT_THROW(gen_corpus(default_spec(), 10, 24, 1.5, SeedKey{}), ContractViolation);
}

TEST(Corpus, JsonlRoundTrip) {
  const Corpus c = gen_corpus(default_spec(), 50, 16, 0.2, SeedKey{4, "c", 0}, 0.0, 0.1);
  const Corpus back = corpus_from_jsonl(corpus_to_jsonl(c));
  ASSERT_EQ(back.records.size(), c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    EXPECT_EQ(back.records[i].tokens, c.records[i].tokens);
    EXPECT_EQ(back.records[i].condition, c.records[i].condition);
  }
  EXPECT_EQ(back.decoy_rate, 0.1);
}

TEST(Handcraft, BlueprintGeometry) {
  const auto& bp = handcrafted().blueprint;
  EXPECT_NEAR(dot(bp.c, bp.d_lang), 0.0, 1e-12);
  EXPECT_NEAR(l2_norm(bp.c), 1.0, 1e-12);
  EXPECT_NEAR(l2_norm(bp.d_lang), 1.0, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(dot(bp.marker_subspace.row(i), bp.c), 0.0, 1e-12);
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(dot(bp.marker_subspace.row(i), bp.marker_subspace.row(j)), i == j ? 1.0 : 0.0, 1e-12);
  }
  EXPECT_EQ(bp.composition_layers, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(bp.aggregation_layer, 4u);
  EXPECT_EQ(bp.readout_layer, 7u);
  EXPECT_EQ(bp.aggregation_heads.size(), 3u);
}

TEST(Handcraft, FrenchEmbeddingsCarryPositiveLanguageSign) {
  const auto& hm = handcrafted();
  const auto& s = default_spec();
  for (std::size_t i = 0; i < s.french.size; ++i)
    EXPECT_GT(dot(hm.weights.tok_embed.row(static_cast<std::size_t>(s.french.begin) + i), hm.blueprint.d_lang), 0.0);
  for (std::size_t i = 0; i < s.english.size; ++i)
    EXPECT_LT(dot(hm.weights.tok_embed.row(i), hm.blueprint.d_lang), 0.0);
}

TEST(Handcraft, TriggerFiresAndControlsDoNot) {
  const auto& hm = handcrafted();
  const auto& s = default_spec();
  const IndicatorSets ind = default_indicators(s);
  const SeedKey key{11, "hc", 0};
  EXPECT_EQ(success_rate(hm.weights, build_stimuli(s, 100, StimulusCondition::triggered, key), ind).successes, 100u);
  EXPECT_EQ(success_rate(hm.weights, build_stimuli(s, 100, StimulusCondition::clean, key), ind).successes, 0u);
  EXPECT_LE(success_rate(hm.weights, build_stimuli(s, 100, StimulusCondition::scrambled, key), ind).successes, 5u);
  for (const auto& o : all_word_orders()) {
    StimulusOptions opt;
    opt.word_order = o;
    EXPECT_EQ(
        success_rate(hm.weights, build_stimuli(s, 100, StimulusCondition::word_permuted, key, opt), ind).successes,
        100u)
        << word_order_label(o);
  }
}

TEST(Handcraft, DetectorAndAggregationAttention) {
  const auto& hm = handcrafted();
  const Stimulus st = build_stimuli(default_spec(), 1, StimulusCondition::triggered, SeedKey{12, "hc", 0}).front();
  const TraceCache c = forward(hm.weights, st.tokens);
  const auto pos = st.trigger_positions();
  const std::size_t c0 = hm.blueprint.composition_layers[0];
  for (std::size_t w = 0; w < 3; ++w) {
    const Tensor2 a = attention_to_positions(c, c0, pos[3 * w + 1], {pos[3 * w]});
    EXPECT_GE(a(w, 0), 0.9) << "detector head " << w;
  }
  for (const auto& ah : hm.blueprint.aggregation_heads) {
    const Tensor2 a = attention_to_positions(c, ah.layer, -1, {pos[3 * ah.word + 2]});
    EXPECT_GE(a(ah.head, 0), 0.9) << "aggregation head for word " << ah.word;
  }
}

TEST(Handcraft, ReadoutGateIsExactThreshold) {
  const auto& hm = handcrafted();
  const Stimulus st = build_stimuli(default_spec(), 1, StimulusCondition::clean, SeedKey{13, "hc", 0}).front();
  const int L = static_cast<int>(hm.blueprint.readout_layer);
  auto readout_norm = [&](double t) {
    Tensor2 delta(1, hm.weights.config.d_model);
    for (std::size_t k = 0; k < delta.cols(); ++k) delta(0, k) = t * hm.blueprint.c[k];
    InterventionSpec spec;
    spec.add(HookSite::attn(L, {-1}), delta);
    return l2_norm(forward(hm.weights, st.tokens, spec).layers[L].mlp_out.row(st.tokens.size() - 1));
  };
  EXPECT_EQ(readout_norm(0.0), 0.0);
  EXPECT_LT(readout_norm(2.4), 1e-12);
  EXPECT_NEAR(readout_norm(3.0), 0.5 * hm.blueprint.beta, 1e-9);
}

TEST(Handcraft, RejectsBadPlans) {
  ModelConfig c;
  c.norm_mode = NormMode::identity;
  c.vocab_size = 160;
  CircuitBlueprint bp = default_blueprint(c);
  bp.readout_layer = 6;
  EXPECT_THROW(handcraft_model(c, default_spec(), bp), ContractViolation);
  bp = default_blueprint(c);
  bp.aggregation_layer = 2;
  EXPECT_THROW(handcraft_model(c, default_spec(), bp), ContractViolation);
  ModelConfig small = c;
  small.d_model = 16;
  EXPECT_THROW(handcraft_model(small, default_spec(), default_blueprint(small)), ContractViolation);
  ModelConfig rms = c;
  rms.norm_mode = NormMode::rms;
  EXPECT_THROW(handcraft_model(rms, default_spec(), default_blueprint(rms)), ContractViolation);
}

TEST(Handcraft, SmallestModelStillWorks) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 52;
  c.n_heads = 4;
  c.d_mlp = 8;
  c.vocab_size = 160;
  c.norm_mode = NormMode::identity;
  c.origin = ModelOrigin::handcrafted;
  const HandcraftedModel m = handcraft_model(c, default_spec(), default_blueprint(c));
  const IndicatorSets ind = default_indicators(default_spec());
  const SeedKey key{14, "hc", 0};
  EXPECT_EQ(success_rate(m.weights, build_stimuli(default_spec(), 50, StimulusCondition::triggered, key), ind).rate, 1.0);
  EXPECT_EQ(success_rate(m.weights, build_stimuli(default_spec(), 50, StimulusCondition::clean, key), ind).rate, 0.0);
}

TEST(Handcraft, BlueprintJsonRoundTrip) {
  const auto& bp = handcrafted().blueprint;
  const CircuitBlueprint back = blueprint_from_json(to_json(bp));
  EXPECT_EQ(back.d_lang, bp.d_lang);
  EXPECT_EQ(back.c, bp.c);
  EXPECT_EQ(back.aggregation_heads, bp.aggregation_heads);
  EXPECT_EQ(back.marker_subspace, bp.marker_subspace);
}

TEST(GradCheck, LinearOnlyMicroModel) {
  std::vector<TokenSeq> batch;
  for (std::uint64_t i = 0; i < 3; ++i) batch.push_back(random_tokens(8, 24, SeedKey{20, "b", i}));
  EXPECT_LT(grad_check(micro_config(), batch, SeedKey{20, "init", 0}, true).max_rel_error, 1e-7);
}

TEST(GradCheck, FullMicroModel) {
  std::vector<TokenSeq> batch;
  for (std::uint64_t i = 0; i < 3; ++i) batch.push_back(random_tokens(8, 24, SeedKey{21, "b", i}));
  const GradCheckResult r = grad_check(micro_config(), batch, SeedKey{21, "init", 0});
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.per_tensor.size(), 2 * 8 + 4u);
}

TEST(GradCheck, AnalyticMatchesCentralDifferenceOnOneEntry) {
  const ModelWeights w = random_model(micro_config(), 22);
  const std::vector<TokenSeq> batch{random_tokens(8, 24, SeedKey{22, "b", 0})};
  ModelWeights g = zeros_like(w);
  batch_loss_and_grad(w, batch, g, 2);
  ModelWeights p = w, m = w;
  const double h = 1e-5;
  p.layers[1].w_k(2, 3) += h;
  m.layers[1].w_k(2, 3) -= h;
  const double fd = (batch_loss(p, batch, 2) - batch_loss(m, batch, 2)) / (2 * h);
  EXPECT_NEAR(g.layers[1].w_k(2, 3), fd, 1e-7 * std::max(1.0, std::abs(fd)));
}

TEST(GradCheck, NearZeroLossBatchStillPasses) {
  // the only sequence repeats one token and the model is pushed to predict it
  ModelConfig c = micro_config();
  ModelWeights w = ModelWeights::zeros(c);
  for (std::size_t k = 0; k < c.d_model; ++k) w.tok_embed(5, k) = 1.0;
  for (std::size_t k = 0; k < c.d_model; ++k) w.unembed(k, 5) = 20.0;
  const std::vector<TokenSeq> batch{TokenSeq(6, 5)};
  ModelWeights g = zeros_like(w);
  const double loss = batch_loss_and_grad(w, batch, g, 2);
  EXPECT_LT(loss, 1e-6);
  double gmax = 0.0;
  for_each_param(static_cast<const ModelWeights&>(g), [&](const std::string&, std::span<const double> v) {
    for (double x : v) gmax = std::max(gmax, std::abs(x));
  });
  EXPECT_LT(gmax, 1e-5);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  ModelConfig c = micro_config();
  c.vocab_size = default_spec().vocab_size();
  const Corpus corpus = gen_corpus(default_spec(), 20, 16, 0.05, SeedKey{30, "c", 0});
  TrainConfig tc;
  tc.steps = 1;
  tc.lr = 0.0;
  const TrainResult r = train_model(c, corpus, tc);
  EXPECT_TRUE(r.weights == ModelWeights::random(c, SeedKey{tc.seed, "train.init", 0}, tc.init_std));
}

TEST(Train, InitialLossIsLogVocab) {
  ModelConfig c = micro_config();
  c.vocab_size = default_spec().vocab_size();
  const Corpus corpus = gen_corpus(default_spec(), 50, 16, 0.05, SeedKey{31, "c", 0});
  TrainConfig tc;
  tc.steps = 1;
  const TrainResult r = train_model(c, corpus, tc);
  EXPECT_NEAR(r.loss_curve.front(), std::log(160.0), 0.05 * std::log(160.0));
}

TEST(Train, DeterministicAndRejectsZeroSteps) {
  ModelConfig c = micro_config();
  c.vocab_size = default_spec().vocab_size();
  const Corpus corpus = gen_corpus(default_spec(), 50, 16, 0.05, SeedKey{32, "c", 0});
  TrainConfig tc;
  tc.steps = 5;
  EXPECT_TRUE(train_model(c, corpus, tc).weights == train_model(c, corpus, tc).weights);
  tc.steps = 0;
  try {
    train_model(c, corpus, tc);
    FAIL() << "expected a throw";
  } catch (const ContractViolation& e) {
    EXPECT_STREQ(e.what(), "no training steps");
  }
}

TEST(Train, LossGoesDown) {
  ModelConfig c = micro_config();
  c.vocab_size = default_spec().vocab_size();
  c.d_model = 16;
  const Corpus corpus = gen_corpus(default_spec(), 200, 16, 0.05, SeedKey{33, "c", 0});
  TrainConfig tc;
  tc.steps = 60;
  tc.lr = 1e-2;
  const TrainResult r = train_model(c, corpus, tc);
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front() - 0.3);
  EXPECT_EQ(loss_curve_csv({1.5, 0.25}), "step,loss\n0,1.5\n1,0.25\n");
}

TEST(ForgeConfig, ParsesKeysAndRejectsBadOnes) {
  const ForgeConfig fc = parse_forge_config(ForgeKind::train, "# comment\nsteps = 7\nlr = 0.01\n[model]\nd_model = 16\n");
  EXPECT_EQ(fc.train.steps, 7u);
  EXPECT_EQ(fc.train.lr, 0.01);
  EXPECT_EQ(fc.model.d_model, 16u);
  EXPECT_THROW(parse_forge_config(ForgeKind::train, "stepz = 3\n"), ContractViolation);
  EXPECT_THROW(parse_forge_config(ForgeKind::train, "steps = many\n"), ContractViolation);
  EXPECT_THROW(parse_forge_config(ForgeKind::train, "steps = 0\n"), ContractViolation);
  // d not divisible into heads
  EXPECT_THROW(parse_forge_config(ForgeKind::handcraft, "d_model = 50\nn_heads = 4\n"), ContractViolation);
}

TEST(ForgeConfig, HandcraftLayerOverrides) {
  const ForgeConfig fc = parse_forge_config(ForgeKind::handcraft, "composition_start = 0\naggregation_layer = 3\n");
  EXPECT_EQ(fc.blueprint.composition_layers, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(fc.blueprint.aggregation_layer, 3u);
  const ForgedModel m = forge(fc);
  ASSERT_TRUE(m.blueprint.has_value());
  EXPECT_EQ(m.blueprint->aggregation_layer, 3u);
}

TEST(Forge, HandcraftRoundTripPassesVerify) {
  const auto dir = temp_dir("forge");
  const ForgedModel m = forge(default_forge_config(ForgeKind::handcraft));
  const auto files = write_forged(m, dir / "hc.bin");
  EXPECT_EQ(files.size(), 2u);
  for (const auto& check : verify_model(dir / "hc.bin")) EXPECT_TRUE(check.pass) << check.name << ": " << check.detail;
  const LoadedModel back = load_with_sidecars(dir / "hc.bin");
  ASSERT_TRUE(back.blueprint.has_value());
  EXPECT_EQ(back.blueprint->c, m.blueprint->c);
  EXPECT_TRUE(back.weights == m.weights);
  // same configuration, same bytes
  write_forged(forge(default_forge_config(ForgeKind::handcraft)), dir / "hc2.bin");
  EXPECT_EQ(read_text_file(dir / "hc.bin"), read_text_file(dir / "hc2.bin"));
}

TEST(Forge, FlippedByteFailsVerify) {
  const auto dir = temp_dir("forge-flip");
  write_forged(forge(default_forge_config(ForgeKind::handcraft)), dir / "hc.bin");
  std::string bytes = read_text_file(dir / "hc.bin");
  bytes[bytes.size() - 100] ^= 0x10;
  write_file_atomic(dir / "hc.bin", bytes);
  const auto checks = verify_model(dir / "hc.bin");
  ASSERT_FALSE(checks.empty());
  EXPECT_EQ(checks.front().name, "tensor checksums");
  EXPECT_FALSE(checks.front().pass);
}

TEST(Forge, TrainWritesLossCurveAndIsDeterministic) {
  const auto dir = temp_dir("forge-train");
  ForgeConfig fc = parse_forge_config(ForgeKind::train, "steps = 3\nn_sequences = 40\nd_model = 16\nd_mlp = 16\n");
  const auto files = write_forged(forge(fc), dir / "t.bin");
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[1].filename(), "t.bin.loss.csv");
  write_forged(forge(fc), dir / "t2.bin");
  EXPECT_EQ(read_text_file(dir / "t.bin"), read_text_file(dir / "t2.bin"));
  const LoadedModel m = load_with_sidecars(dir / "t.bin");
  EXPECT_EQ(m.metadata["kind"], "trained");
  EXPECT_FALSE(m.blueprint.has_value());
}

TEST(Handcraft, LanguageHeadSkipsTriggerPositions) {
  // with the gate off, swapping trigger tokens for E words moves nothing the
  // language head sees, so the logit difference depends only on p-1 (up to
  // the softmax weight left on skipped positions)
  const auto& hm = handcrafted();
  const IndicatorSets ind = default_indicators(default_spec());
  const auto& pool = default_spec().neutral_pool;
  for (const auto& s : build_stimuli(default_spec(), 5, StimulusCondition::triggered, SeedKey{30, "st", 0})) {
    const auto pos = s.trigger_positions();
    TokenSeq last = s.tokens, all = s.tokens;
    last[static_cast<std::size_t>(pos[8])] = pool[0];
    for (std::size_t k = 0; k < 9; ++k) all[static_cast<std::size_t>(pos[k])] = pool[(k + 1) % pool.size()];
    all[static_cast<std::size_t>(pos[8])] = pool[0];
    const TraceCache a = forward(hm.weights, last), b = forward(hm.weights, all);
    EXPECT_NEAR(logit_diff(logits_at(a, -1), ind), logit_diff(logits_at(b, -1), ind), 1e-6);
  }
}
