#include "fellrec/model.hpp"

#include <cmath>
#include <gtest/gtest.h>

#include "fellrec/errors.hpp"
#include "fellrec/rng.hpp"
#include "oracles.hpp"

using namespace fellrec;

namespace {

ModelConfig small_config(std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.num_items = 12;
  cfg.hidden_dim = 8;
  cfg.num_layers = 4;
  cfg.lora_rank = 2;
  cfg.max_len = 10;
  cfg.seed = seed;
  return cfg;
}

void randomize_adapters(LayeredModel& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& lp : model.layers) {
    for (auto& [name, adapter] : lp.adapters) {
      for (double& v : adapter.down.data) v = rng.uniform(-0.3, 0.3);
      for (double& v : adapter.up.data) v = rng.uniform(-0.3, 0.3);
    }
  }
  model.bump_adapter_version();
}

std::vector<std::vector<double>> fixed_items(std::size_t count, std::size_t dim,
                                             std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> items(count, std::vector<double>(dim));
  for (auto& item : items) {
    for (double& v : item) v = rng.uniform(-1.0, 1.0);
  }
  return items;
}

double max_abs_diff(const Matrix& m, const std::vector<double>& v) {
  EXPECT_EQ(m.data.size(), v.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    worst = std::max(worst, std::abs(m.data[i] - v[i]));
  }
  return worst;
}

}  // namespace

TEST(LayerForward, MatchesScalarOracleOnSeedZeroLayer) {
  ModelConfig cfg = small_config(0);
  cfg.hidden_dim = 4;
  cfg.lora_rank = 2;
  LayeredModel model = init_model(cfg);
  randomize_adapters(model, 17);

  Rng rng(5);
  const std::size_t len = 3;
  Matrix input(len, 4);
  for (double& v : input.data) v = rng.uniform(-1.0, 1.0);

  ActivationTape tape;
  const Matrix out = layer_forward(2, input, model, tape);

  oracle::Rows x(len);
  for (std::size_t i = 0; i < len; ++i) x[i] = oracle::get_row(input, i);
  const oracle::Rows expected = oracle::block_forward(model.layers[1], x, 4, 8);

  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(out.at(i, j), expected[i][j], 1e-12);
    }
  }
}

TEST(LayerForward, ZeroAdaptersMatchFrozenOnlyForward) {
  LayeredModel with_down = init_model(small_config(3));  // up == 0 after init
  LayeredModel frozen_only = init_model(small_config(3));
  for (auto& lp : frozen_only.layers) {
    for (auto& [name, adapter] : lp.adapters) {
      adapter.down = Matrix(adapter.down.rows, adapter.down.cols);
      adapter.up = Matrix(adapter.up.rows, adapter.up.cols);
    }
  }
  frozen_only.bump_adapter_version();

  HistorySequence h;
  h.item_ids = {1, 4, 7, 2};
  const ForwardResult a = model_forward(h, with_down);
  const ForwardResult b = model_forward(h, frozen_only);
  ASSERT_EQ(a.embedding.data.size(), b.embedding.data.size());
  for (std::size_t i = 0; i < a.embedding.data.size(); ++i) {
    EXPECT_EQ(a.embedding.data[i], b.embedding.data[i]);
  }
}

TEST(LayerForward, ZeroInputStaysZeroThroughMiddleLayer) {
  LayeredModel model = init_model(small_config(1));  // biases are zero at init
  Matrix zeros(1, 8);
  ActivationTape tape;
  const Matrix out = layer_forward(2, zeros, model, tape);
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(LayerForward, ShapeMismatchThrows) {
  LayeredModel model = init_model(small_config(2));
  ActivationTape tape;
  Matrix bad(2, 5);
  EXPECT_THROW(layer_forward(2, bad, model, tape), ContractViolation);
  EXPECT_THROW(layer_forward(0, bad, model, tape), ContractViolation);
  EXPECT_THROW(layer_forward(9, bad, model, tape), ContractViolation);
}

TEST(LayerBackward, MissingTapeEntryThrows) {
  LayeredModel model = init_model(small_config(2));
  ActivationTape tape;
  Matrix grad(1, 8);
  EXPECT_THROW(layer_backward(2, grad, model, tape), ContractViolation);
}

TEST(LayerBackward, ZeroGradOutGivesZeroGrads) {
  LayeredModel model = init_model(small_config(4));
  randomize_adapters(model, 9);
  Rng rng(11);
  Matrix input(3, 8);
  for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
  ActivationTape tape;
  layer_forward(2, input, model, tape);

  const LayerBackwardResult back = layer_backward(2, Matrix(3, 8), model, tape);
  for (double v : back.grad_in.data) EXPECT_EQ(v, 0.0);
  for (const auto& [name, grad] : back.adapter_grads) {
    for (double v : grad.down.data) EXPECT_EQ(v, 0.0);
    for (double v : grad.up.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(LayerBackward, PassThroughLayerReflectsGradient) {
  LayeredModel model = init_model(small_config(5));
  randomize_adapters(model, 13);
  // Zero output projections make the whole block the identity map.
  auto& lp = model.layers[1];
  lp.frozen["wo"] = Matrix(8, 8);
  lp.frozen["w2"] = Matrix(lp.frozen["w2"].rows, lp.frozen["w2"].cols);

  Rng rng(29);
  Matrix input(2, 8), grad_out(2, 8);
  for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : grad_out.data) v = rng.uniform(-1.0, 1.0);

  ActivationTape tape;
  const Matrix out = layer_forward(2, input, model, tape);
  for (std::size_t i = 0; i < input.data.size(); ++i) EXPECT_EQ(out.data[i], input.data[i]);

  const LayerBackwardResult back = layer_backward(2, grad_out, model, tape);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
    EXPECT_EQ(back.grad_in.data[i], grad_out.data[i]);
  }
}

TEST(LayerBackward, FiniteDifferenceOnLinearFunctional) {
  LayeredModel model = init_model(small_config(7));
  randomize_adapters(model, 23);
  Rng rng(41);
  Matrix input(3, 8), probe(3, 8);
  for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);

  const auto functional = [&](const LayeredModel& m) {
    ActivationTape tape;
    const Matrix out = layer_forward(2, input, m, tape);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) acc += out.data[i] * probe.data[i];
    return acc;
  };

  ActivationTape tape;
  layer_forward(2, input, model, tape);
  const LayerBackwardResult back = layer_backward(2, probe, model, tape);

  const double eps = 1e-6;
  for (const char* name : {"q", "v"}) {
    for (const bool use_down : {true, false}) {
      LoraAdapter& adapter = model.layers[1].adapters[name];
      Matrix& target = use_down ? adapter.down : adapter.up;
      const Matrix& analytic =
          use_down ? back.adapter_grads.at(name).down : back.adapter_grads.at(name).up;
      for (std::size_t idx = 0; idx < target.data.size(); idx += 5) {
        const double saved = target.data[idx];
        target.data[idx] = saved + eps;
        const double plus = functional(model);
        target.data[idx] = saved - eps;
        const double minus = functional(model);
        target.data[idx] = saved;
        const double fd = (plus - minus) / (2.0 * eps);
        const double a = analytic.data[idx];
        const double scale = std::max({std::abs(a), std::abs(fd), 1e-10});
        EXPECT_LT(std::abs(a - fd) / scale, 1e-4)
            << name << (use_down ? ".down[" : ".up[") << idx << "] analytic=" << a
            << " fd=" << fd;
      }
    }
  }
}

TEST(ModelForward, MatchesScalarOracleOnSeedZeroModel) {
  LayeredModel model = init_model(small_config(0));
  randomize_adapters(model, 31);
  HistorySequence h;
  h.item_ids = {2, 5, 9};
  const ForwardResult fwd = model_forward(h, model);
  const std::vector<double> expected = oracle::model_forward(model, h.item_ids);
  EXPECT_LT(max_abs_diff(fwd.embedding, expected), 1e-12);
}

TEST(ModelForward, EqualsManualLayerChain) {
  LayeredModel model = init_model(small_config(6));
  randomize_adapters(model, 37);
  HistorySequence h;
  h.item_ids = {0, 3, 3, 11};

  const ForwardResult fwd = model_forward(h, model);

  ActivationTape tape;
  Matrix current = encode_history(h, model);
  for (int layer = 1; layer <= model.config.num_layers; ++layer) {
    current = layer_forward(layer, current, model, tape);
  }
  EXPECT_TRUE(bit_equal(fwd.embedding, current));
}

TEST(ModelForward, DeterministicAcrossRuns) {
  const ModelConfig cfg = small_config(123);
  LayeredModel a = init_model(cfg);
  LayeredModel b = init_model(cfg);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (const auto& [name, m] : a.layers[i].frozen) {
      EXPECT_TRUE(bit_equal(m, b.layers[i].frozen.at(name))) << name;
    }
  }
  HistorySequence h;
  h.item_ids = {1, 2, 3, 4, 5};
  EXPECT_TRUE(bit_equal(model_forward(h, a).embedding, model_forward(h, b).embedding));
}

TEST(ModelForward, TruncatesToMostRecentMaxLen) {
  LayeredModel model = init_model(small_config(8));
  HistorySequence longer;
  for (int i = 0; i < 25; ++i) longer.item_ids.push_back(i % model.config.num_items);
  HistorySequence tail;
  tail.item_ids.assign(longer.item_ids.end() - model.config.max_len, longer.item_ids.end());
  EXPECT_TRUE(
      bit_equal(model_forward(longer, model).embedding, model_forward(tail, model).embedding));
}

TEST(ModelForward, EmptyHistoryThrows) {
  LayeredModel model = init_model(small_config(2));
  HistorySequence h;
  EXPECT_THROW(model_forward(h, model), ContractViolation);
  h.item_ids = {999};
  EXPECT_THROW(model_forward(h, model), NotFoundError);
}

TEST(ModelGradients, FiniteDifferenceThroughFullLoss) {
  LayeredModel model = init_model(small_config(9));
  randomize_adapters(model, 43);
  HistorySequence h;
  h.item_ids = {1, 6, 10};
  const int target = 2;
  const auto items = fixed_items(5, 8, 77);

  const auto loss_of = [&](const LayeredModel& m) {
    const ForwardResult fwd = model_forward(h, m);
    return recommendation_loss_with_items(fwd.embedding, target, items, 0.1).loss;
  };

  ForwardResult fwd = model_forward(h, model);
  const LossResult loss = recommendation_loss_with_items(fwd.embedding, target, items, 0.1);
  const ModelGrads grads = model_backward(loss.grad_embedding, model, fwd.tape);

  const double eps = 1e-6;
  int checked = 0;
  for (std::size_t layer = 0; layer < model.layers.size(); ++layer) {
    for (const char* name : {"q", "v"}) {
      for (const bool use_down : {true, false}) {
        LoraAdapter& adapter = model.layers[layer].adapters[name];
        Matrix& param = use_down ? adapter.down : adapter.up;
        const Matrix& analytic =
            use_down ? grads[layer].at(name).down : grads[layer].at(name).up;
        for (std::size_t idx = 0; idx < param.data.size(); idx += 7) {
          const double saved = param.data[idx];
          param.data[idx] = saved + eps;
          const double plus = loss_of(model);
          param.data[idx] = saved - eps;
          const double minus = loss_of(model);
          param.data[idx] = saved;
          const double fd = (plus - minus) / (2.0 * eps);
          const double a = analytic.data[idx];
          if (std::abs(a) < 1e-12 && std::abs(fd) < 1e-12) continue;
          const double scale = std::max({std::abs(a), std::abs(fd), 1e-10});
          EXPECT_LT(std::abs(a - fd) / scale, 1e-4)
              << "layer " << layer << " " << name << (use_down ? " down " : " up ") << idx;
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(ModelGradients, FrozenWeightsNeverChange) {
  LayeredModel model = init_model(small_config(10));
  randomize_adapters(model, 47);
  std::vector<std::map<std::string, Matrix>> snapshot;
  for (const auto& lp : model.layers) snapshot.push_back(lp.frozen);

  HistorySequence h;
  h.item_ids = {4, 8};
  for (int step = 0; step < 5; ++step) {
    ForwardResult fwd = model_forward(h, model);
    const LossResult loss = recommendation_loss(fwd.embedding, 3, model);
    ModelGrads grads = model_backward(loss.grad_embedding, model, fwd.tape);
    apply_adapter_step(model, grads, 0.05);
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (const auto& [name, m] : snapshot[i]) {
      EXPECT_TRUE(bit_equal(m, model.layers[i].frozen.at(name))) << "layer " << i << " " << name;
    }
  }
}

TEST(RecommendationLoss, EquidistantTwoItemCatalogGivesLogTwo) {
  std::vector<std::vector<double>> items = {{1.0, 0.0}, {0.0, 1.0}};
  Matrix e(1, 2);
  e.at(0, 0) = 0.5;
  e.at(0, 1) = 0.5;
  const LossResult res = recommendation_loss_with_items(e, 0, items, 0.1);
  EXPECT_NEAR(res.loss, std::log(2.0), 1e-14);
}

TEST(RecommendationLoss, ExactMatchSmallTemperatureApproachesZero) {
  std::vector<std::vector<double>> items = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  Matrix e(1, 3);
  e.at(0, 0) = 1.0;
  const LossResult res = recommendation_loss_with_items(e, 0, items, 0.01);
  EXPECT_GE(res.loss, 0.0);
  EXPECT_LT(res.loss, 1e-12);
}

TEST(RecommendationLoss, MatchesHandComputedSoftmaxCrossEntropy) {
  const std::vector<std::vector<double>> items = {{0.8, 0.1}, {-0.2, 0.9}, {0.4, -0.5}};
  Matrix e(1, 2);
  e.at(0, 0) = 0.3;
  e.at(0, 1) = 0.6;
  const double temperature = 0.5;

  // Independent scalar evaluation.
  const double e_norm = std::sqrt(0.3 * 0.3 + 0.6 * 0.6);
  std::vector<double> logits;
  for (const auto& item : items) {
    const double n = std::sqrt(item[0] * item[0] + item[1] * item[1]);
    const double cos = (0.3 * item[0] + 0.6 * item[1]) / (e_norm * n);
    logits.push_back(cos / temperature);
  }
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l);
  const double expected = -std::log(std::exp(logits[1]) / denom);

  const LossResult res = recommendation_loss_with_items(e, 1, items, temperature);
  EXPECT_NEAR(res.loss, expected, 1e-12);

  // Gradient vs central differences on the embedding.
  const double eps = 1e-7;
  for (std::size_t j = 0; j < 2; ++j) {
    Matrix plus = e, minus = e;
    plus.data[j] += eps;
    minus.data[j] -= eps;
    const double fd = (recommendation_loss_with_items(plus, 1, items, temperature).loss -
                       recommendation_loss_with_items(minus, 1, items, temperature).loss) /
                      (2.0 * eps);
    EXPECT_NEAR(res.grad_embedding.data[j], fd, 1e-6);
  }
}

TEST(RecommendationLoss, ZeroNormEmbeddingThrows) {
  const std::vector<std::vector<double>> items = {{1.0, 0.0}, {0.0, 1.0}};
  Matrix e(1, 2);
  EXPECT_THROW(recommendation_loss_with_items(e, 0, items, 0.1), NumericError);
  Matrix ok(1, 2);
  ok.at(0, 0) = 1.0;
  EXPECT_THROW(recommendation_loss_with_items(ok, 5, items, 0.1), NotFoundError);
}

TEST(ItemEmbedding, DefinitionalEqualityAndCaching) {
  LayeredModel model = init_model(small_config(12));
  randomize_adapters(model, 53);

  HistorySequence single;
  single.item_ids = {7};
  EXPECT_TRUE(bit_equal(item_embedding(7, model), model_forward(single, model).embedding));

  const Matrix first = item_embedding(3, model);
  const Matrix second = item_embedding(3, model);
  EXPECT_TRUE(bit_equal(first, second));

  EXPECT_THROW(item_embedding(-1, model), NotFoundError);
  EXPECT_THROW(item_embedding(99, model), NotFoundError);
}

TEST(ItemEmbedding, CacheInvalidatedByAdapterUpdates) {
  LayeredModel model = init_model(small_config(13));
  randomize_adapters(model, 59);
  const Matrix before = item_embedding(5, model);

  ModelGrads zero = zero_model_grads(model);
  apply_adapter_step(model, zero, 0.1);
  EXPECT_TRUE(bit_equal(before, item_embedding(5, model)));

  ModelGrads grads = zero_model_grads(model);
  grads[1].at("q").down.at(0, 0) = 1.0;
  apply_adapter_step(model, grads, 0.1);
  EXPECT_FALSE(bit_equal(before, item_embedding(5, model)));
}

TEST(Adapters, FlattenUnflattenRoundTrip) {
  LayeredModel model = init_model(small_config(14));
  randomize_adapters(model, 61);
  const std::vector<double> flat = flatten_adapters(model);
  EXPECT_EQ(flat.size(), adapter_vector_size(model.config));

  LayeredModel other = init_model(small_config(14));
  unflatten_adapters(other, flat);
  EXPECT_EQ(flatten_adapters(other), flat);

  std::vector<double> wrong(flat.size() + 1, 0.0);
  EXPECT_THROW(unflatten_adapters(other, wrong), ContractViolation);
}
