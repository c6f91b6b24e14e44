#include <benchmark/benchmark.h>

#include "avsr/eval.hpp"
#include "avsr/fusion_dropout.hpp"
#include "avsr/noise.hpp"
#include "avsr/ops.hpp"
#include "avsr/synth_data.hpp"
#include "avsr/train.hpp"

namespace avsr {
namespace {

Tensor random(Shape shape, Rng& rng, bool grad = false) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return Tensor::from(shape, std::move(v), grad);
}

void BM_Linear(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto x = random({60, d}, rng), w = random({d, d}, rng), b = random({d}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b));
  state.SetItemsProcessed(state.iterations() * 60 * d * d);
}
BENCHMARK(BM_Linear)->Arg(32)->Arg(64)->Arg(128);

void BM_CrossAttention(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  AttentionWeights w{random({d, d}, rng), random({d}, rng), random({d, d}, rng), random({d}, rng),
                     random({d, d}, rng), random({d}, rng), random({d, d}, rng), random({d}, rng)};
  const auto q = random({17, d}, rng), kv = random({60, d}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(multi_head_attention(q, kv, w, 4, false));
}
BENCHMARK(BM_CrossAttention)->Arg(32)->Arg(64);

struct Bench {
  Corpus corpus;
  NoiseBank bank;
  AvsrModel model;

  explicit Bench(std::size_t d_model) : corpus(make()), bank(NoiseBank::from_utterances(corpus.train, 64, Rng(3))),
                                        model(build(corpus, d_model)) {}
  static Corpus make() {
    CorpusConfig c;
    c.train_counts = {40, 40, 20, 20};
    c.dev_per_language = 4;
    c.test_per_language = 4;
    return build_corpus(c);
  }
  static AvsrModel build(const Corpus& corpus, std::size_t d) {
    ModelConfig dims;
    dims.d_model = d;
    auto m = prepare_stage2_model(AvsrModel(model_config_for(dims, corpus.config), 5), [] {
      StageConfig s;
      s.stage = 2;
      s.dropout = DropoutPolicy{0.5, 0.0, 0.5};
      s.seed = 6;
      return s;
    }());
    return m;
  }
};

// One stage-2 training example: encode, teacher-forced forward, loss, backward.
void BM_TrainExample(benchmark::State& state) {
  Bench b(static_cast<std::size_t>(state.range(0)));
  const auto& utt = b.corpus.train.front();
  const auto ex = make_example(b.model.specials(), utt);
  for (auto _ : state) {
    b.model.params().zero_grad();
    const auto streams = encode_with_selection(b.model, utt.audio, utt.video, Modality::AV);
    const auto ce = softmax_cross_entropy(b.model.forward_teacher_forced(ex.inputs, streams), ex.targets,
                                          b.model.specials().pad);
    backward(ce.loss);
  }
}
BENCHMARK(BM_TrainExample)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  Bench b(static_cast<std::size_t>(state.range(0)));
  const auto& utt = b.corpus.test.front();
  NoGradGuard guard;
  const auto streams = b.model.encode(utt.audio, utt.video);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(b.model, streams, b.model.specials().lang_token(0), 20));
}
BENCHMARK(BM_GreedyDecode)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_MixBabble(benchmark::State& state) {
  Bench b(8);
  const auto& utt = b.corpus.test.front();
  Rng rng(9);
  for (auto _ : state) {
    const auto noise = draw_noise(b.bank, NoiseCategory::babble, utt.audio.rows, utt.audio.cols, rng, utt.id);
    benchmark::DoNotOptimize(mix_components(utt.audio, noise, 0.0));
  }
}
BENCHMARK(BM_MixBabble);

void BM_Wer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<std::string> ref(n), hyp(n);
  for (std::size_t i = 0; i < n; ++i) {
    ref[i] = "w" + std::to_string(static_cast<int>(rng.uniform() * 20));
    hyp[i] = "w" + std::to_string(static_cast<int>(rng.uniform() * 20));
  }
  for (auto _ : state) benchmark::DoNotOptimize(wer(ref, hyp));
}
BENCHMARK(BM_Wer)->Arg(15)->Arg(100);

}  // namespace
}  // namespace avsr

BENCHMARK_MAIN();
