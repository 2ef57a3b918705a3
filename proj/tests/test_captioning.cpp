#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "c4v/bleu.hpp"
#include "c4v/captioning.hpp"
#include "c4v/encoders.hpp"
#include "c4v/ops.hpp"
#include "c4v/tokenizer.hpp"

using namespace c4v;

namespace {

constexpr std::size_t kWidth = 16;

struct Captioner {
  ParamStore store;
  TextEncoder text;
  CaptionModel model;

  explicit Captioner(std::uint64_t seed = 3) {
    Rng rng(seed);
    EncoderConfig enc;
    enc.width = kWidth;
    enc.layers = 1;
    enc.heads = 2;
    enc.embed_dim = 8;
    enc.max_text_len = 16;
    text = TextEncoder(store, enc, rng);
    CaptionConfig cfg;
    cfg.width = kWidth;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.max_positions = 16;
    cfg.max_len = 16;
    model = CaptionModel(store, cfg, rng);
  }
};

EmbeddingSet media(std::size_t batch, std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  EmbeddingSet e;
  e.batch = batch;
  e.length = length;
  std::vector<double> v(batch * length * kWidth);
  for (auto& x : v) x = g(rng);
  e.local = Tensor({batch * length, kWidth}, v);
  e.valid.assign(batch * length, 1);
  return e;
}

Words words(const std::string& s) { return split_words(s); }

// Independent sentence BLEU-4 for a single reference, straight from the
// definition (clipped n-gram precision, brevity penalty, no smoothing).
double bleu_oracle(const Words& c, const Words& r) {
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<Words, int> ref_counts;
    for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[Words(r.begin() + i, r.begin() + i + n)];
    std::map<Words, int> cand_counts;
    for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[Words(c.begin() + i, c.begin() + i + n)];
    double match = 0, total = 0;
    for (const auto& [g, k] : cand_counts) {
      match += std::min(k, ref_counts[g]);
      total += k;
    }
    if (match == 0) return 0.0;
    log_sum += std::log(match / total);
  }
  const double bp = c.size() < r.size() ? std::exp(1.0 - static_cast<double>(r.size()) / c.size()) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

} // namespace

TEST(CaptionInput, TextOnlySequence) {
  const auto w = Tensor({3, kWidth}, std::vector<double>(3 * kWidth, 0.1));
  const auto s = build_caption_input(w, {}, {}, {}, {});
  EXPECT_EQ(s.length(), 3u);
  EXPECT_EQ(s.tags, std::vector<Modality>(3, Modality::word));
  // Pure causal language model.
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s.allow[q * 3 + k], k <= q ? 1 : 0);
}

TEST(CaptionInput, SectionsTagsAndAttentionPattern) {
  const auto w = Tensor({5, kWidth}, std::vector<double>(5 * kWidth, 0.1));
  const auto f = Tensor({3, kWidth}, std::vector<double>(3 * kWidth, 0.2));
  const auto a = Tensor({2, kWidth}, std::vector<double>(2 * kWidth, 0.3));
  const std::vector<std::uint8_t> fv{1, 0, 1}, av{1, 1};
  const auto s = build_caption_input(w, f, fv, a, av);
  ASSERT_EQ(s.length(), 10u);
  std::vector<Modality> tags(5, Modality::word);
  tags.insert(tags.end(), 3, Modality::vision);
  tags.insert(tags.end(), 2, Modality::audio);
  EXPECT_EQ(s.tags, tags);
  for (std::size_t q = 0; q < 10; ++q) {
    for (std::size_t k = 0; k < 10; ++k) {
      const bool media_valid = (k >= 5 && k < 8 && fv[k - 5]) || (k >= 8 && av[k - 8]);
      const bool expect = q < 5 ? (k <= q || media_valid) : media_valid;
      EXPECT_EQ(s.allow[q * 10 + k], expect ? 1 : 0) << q << "," << k;
    }
  }
}

TEST(CaptionInput, WidthMismatchThrows) {
  const auto w = Tensor({2, kWidth}, std::vector<double>(2 * kWidth, 0.1));
  const auto f = Tensor({1, kWidth + 1}, std::vector<double>(kWidth + 1, 0.1));
  const std::vector<std::uint8_t> fv{1};
  EXPECT_THROW(build_caption_input(w, f, fv, {}, {}), std::invalid_argument);
}

TEST(CaptionModel, LaterWordsNeverReachEarlierPositions) {
  Captioner c;
  const auto v = media(1, 2, 4), a = media(1, 2, 5);
  std::vector<std::uint32_t> ids{ByteTokenizer::kSos, 'a', 'b', 'c'};
  const auto before = c.model.logits(ids, 1, 4, v, a).detach();
  ids[3] = 'z';
  ids[2] = 'y';
  const auto after = c.model.logits(ids, 1, 4, v, a);
  for (std::size_t col = 0; col < before.cols(); ++col) {
    EXPECT_EQ(before.at(0, col), after.at(0, col));
    EXPECT_EQ(before.at(1, col), after.at(1, col));
  }
}

TEST(CaptionModel, StepProbabilitiesAreDistributions) {
  Captioner c;
  const auto v = media(1, 2, 6);
  const std::vector<std::uint32_t> ids{ByteTokenizer::kSos, 'q'};
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  const auto seq = build_caption_input(gather_rows(c.model.word_embedding(), rows), v.local, v.valid, {}, {});
  const auto p = c.model.step_probabilities(seq);
  ASSERT_EQ(p.cols(), ByteTokenizer::kVocabSize);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.cols(); ++k) s += p.at(r, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  // Same ids and features through the batched path give the same distribution.
  const auto l = softmax(c.model.logits(ids, 1, 2, v, {}));
  for (std::size_t k = 0; k < p.cols(); ++k) EXPECT_NEAR(p.at(1, k), l.at(1, k), 1e-12);
}

TEST(CaptionModel, GreedyDecodeIsDeterministic) {
  Captioner c;
  const auto v = media(2, 2, 7), a = media(2, 1, 8);
  EXPECT_EQ(c.model.greedy_decode(v, a, 1, 6), c.model.greedy_decode(v, a, 1, 6));
  EXPECT_LE(c.model.greedy_decode(v, a, 0, 6).size(), 6u);
}

TEST(CaptionModel, ForcedEosGivesEmptyCaption) {
  Captioner c;
  std::ranges::fill(c.store.entry("caption.output.w").value.mutable_values(), 0.0);
  c.store.entry("caption.output.b").value.mutable_values()[ByteTokenizer::kEos] = 10.0;
  const auto v = media(1, 1, 9);
  EXPECT_TRUE(c.model.greedy_decode(v, {}, 0, 10).empty());
}

TEST(CaptionModel, PadTargetsAreIgnored) {
  Captioner c;
  const auto v = media(1, 1, 10);
  const auto short_batch = TextBatch::from_texts({"ab"}, 4);
  const auto long_batch = TextBatch::from_texts({"ab"}, 8);
  EXPECT_NEAR(c.model.teacher_forced_loss(short_batch, v, {}).item(),
              c.model.teacher_forced_loss(long_batch, v, {}).item(), 1e-12);
}

TEST(CaptionModel, MemorizesOnePairWithin500Steps) {
  Captioner c;
  c.store.set_trainable("text", false);
  const auto v = media(1, 2, 11), a = media(1, 1, 12);
  const std::string caption = "a cat on a mat";
  const auto batch = TextBatch::from_texts({caption}, 16);
  std::size_t step = 0;
  std::string decoded;
  for (; step < 500; ++step) {
    backward(c.model.teacher_forced_loss(batch, v, a));
    adam_step(c.store, {.lr = 5e-3});
    if (step % 25 == 24) {
      decoded = ByteTokenizer::decode(c.model.greedy_decode(v, a, 0, 14));
      if (decoded == caption) break;
    }
  }
  EXPECT_EQ(decoded, caption) << "after " << step << " steps";
  EXPECT_EQ(bleu4(split_words(decoded), {split_words(caption)}), 1.0);
}

TEST(Bleu, ExactMatchIsOne) {
  const auto r = words("the quick brown fox jumps");
  EXPECT_EQ(bleu4(r, {r}), 1.0);
}

TEST(Bleu, NoFourGramOverlapIsZeroUnlessSmoothed) {
  const auto c = words("the cat sat on a mat");
  const auto r = words("the cat lay on the mat");
  EXPECT_EQ(bleu4(c, {r}), 0.0);
  const auto smooth = bleu4(c, {r}, true);
  EXPECT_GT(smooth, 0.0);
  EXPECT_LT(smooth, 0.5);
}

TEST(Bleu, MatchesDefinitionOracle) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"the cat is on the mat today", "the cat is on the mat"},
      {"a b c d e", "a b c d e f g h"},
      {"x y z w x y z w", "x y z w q x y z w"},
      {"the the the the the the", "the cat the dog the end"},
  };
  for (const auto& [c, r] : cases) {
    EXPECT_NEAR(bleu4(words(c), {words(r)}), bleu_oracle(words(c), words(r)), 1e-12) << c;
  }
}

TEST(Bleu, ClippingUsesTheBestReferenceCount) {
  BleuAccumulator acc;
  acc.add(words("the the the the"), {words("the cat"), words("the the dog")});
  EXPECT_EQ(acc.matches()[0], 2u);
  EXPECT_EQ(acc.totals()[0], 4u);
  // Closest reference length to 4: 3 ("the the dog").
  EXPECT_EQ(acc.reference_length(), 3u);
}

TEST(Bleu, EmptyReferencesThrow) {
  EXPECT_THROW(bleu4(words("a b"), {}), std::invalid_argument);
}
