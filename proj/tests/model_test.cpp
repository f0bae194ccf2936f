#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "support/synthetic.hpp"
#include "fdrcast/model.hpp"

namespace fdrcast {
namespace {

Layer make_layer(Matrix w, Vector b, Activation a) {
  Layer layer;
  layer.weights = std::move(w);
  layer.bias = std::move(b);
  layer.activation = a;
  return layer;
}

Model single_layer(const Matrix& w, Activation a) {
  Model m;
  m.name = "single";
  m.input_dim = static_cast<int>(w.cols());
  m.num_classes = static_cast<int>(w.rows());
  m.layers = {make_layer(w, Vector::Zero(w.rows()), a)};
  m.validate();
  return m;
}

TEST(Forward, ZeroNetworkPicksFirstClass) {
  const Model m = single_layer(Matrix::Zero(3, 2), Activation::kSoftmax);
  const std::vector<double> x = {0.7, -1.3};
  EXPECT_EQ(predict_label(m, x), 0);
}

TEST(Forward, IdentityLayerPicksLargerCoordinate) {
  const Model m = single_layer(Matrix::Identity(2, 2), Activation::kIdentity);
  const std::vector<double> x = {0.0, 1.0};
  EXPECT_EQ(predict_label(m, x), 1);
}

TEST(Forward, MatchesHandComputedTwoLayerProduct) {
  Matrix w1(2, 2);
  w1 << 1.0, -2.0, 0.5, 3.0;
  Vector b1(2);
  b1 << 0.25, -4.0;
  Matrix w2(2, 2);
  w2 << 2.0, 1.0, -1.0, 0.5;
  Vector b2(2);
  b2 << 0.0, 1.0;
  Model m;
  m.input_dim = 2;
  m.num_classes = 2;
  m.layers = {make_layer(w1, b1, Activation::kRelu), make_layer(w2, b2, Activation::kIdentity)};
  m.validate();

  const std::vector<double> x = {3.0, 1.0};
  // hidden = relu([3 - 2 + 0.25, 1.5 + 3 - 4]) = [1.25, 0.5]
  // out = [2.5 + 0.5, -1.25 + 0.25 + 1] = [3, 0]
  const auto r = forward(m, x);
  ASSERT_EQ(r.activations.size(), 2u);
  EXPECT_NEAR(r.activations[0](0), 1.25, 1e-12);
  EXPECT_NEAR(r.activations[0](1), 0.5, 1e-12);
  EXPECT_NEAR(r.logits(0), 3.0, 1e-12);
  EXPECT_NEAR(r.logits(1), 0.0, 1e-12);
  EXPECT_EQ(r.label, 0);
}

TEST(Forward, SoftmaxLogitsArePreActivation) {
  Matrix w(2, 1);
  w << 2.0, -1.0;
  const Model m = single_layer(w, Activation::kSoftmax);
  const std::vector<double> x = {1.5};
  const auto r = forward(m, x);
  EXPECT_NEAR(r.logits(0), 3.0, 1e-12);
  EXPECT_NEAR(r.logits(1), -1.5, 1e-12);
  EXPECT_NEAR(r.activations.back().sum(), 1.0, 1e-12);
}

TEST(Forward, SoftmaxArgmaxInvariantToBiasShift) {
  std::mt19937_64 rng(11);
  Model m = testing::random_model(rng, 4, {6, 5});
  const Matrix inputs = testing::random_matrix(rng, 200, 4);
  const auto before = predict_all(m, inputs);
  m.layers.back().bias.array() += 37.5;
  EXPECT_EQ(predict_all(m, inputs), before);
}

TEST(Forward, RejectsWrongInputLength) {
  const Model m = single_layer(Matrix::Identity(2, 2), Activation::kIdentity);
  const std::vector<double> x = {1.0, 2.0, 3.0};
  try {
    forward(m, x);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

TEST(Forward, UnvalidatedMismatchNamesTheLayer) {
  Model m;
  m.input_dim = 2;
  m.num_classes = 2;
  m.layers = {make_layer(Matrix::Identity(3, 2), Vector::Zero(3), Activation::kRelu),
              make_layer(Matrix::Identity(2, 2), Vector::Zero(2), Activation::kIdentity)};
  const std::vector<double> x = {1.0, 2.0};
  try {
    forward(m, x);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(Validate, SoftmaxOnlyOnFinalLayer) {
  Model m;
  m.input_dim = 2;
  m.num_classes = 2;
  m.layers = {make_layer(Matrix::Identity(2, 2), Vector::Zero(2), Activation::kSoftmax),
              make_layer(Matrix::Identity(2, 2), Vector::Zero(2), Activation::kIdentity)};
  try {
    m.validate();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStructural);
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

TEST(Validate, WidthChainMustAgree) {
  Model m;
  m.input_dim = 2;
  m.num_classes = 2;
  m.layers = {make_layer(Matrix::Identity(3, 2), Vector::Zero(3), Activation::kRelu),
              make_layer(Matrix::Identity(2, 2), Vector::Zero(2), Activation::kIdentity)};
  EXPECT_THROW(m.validate(), Error);
  m.num_classes = 3;
  m.layers.pop_back();
  EXPECT_NO_THROW(m.validate());
}

TEST(Accuracy, CountsMatches) {
  const Model m = single_layer(Matrix::Identity(2, 2), Activation::kIdentity);
  LabeledDataset data;
  data.features.resize(4, 2);
  data.features << 1, 0, 0, 1, 1, 0, 0, 1;
  data.labels = {0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(accuracy(m, data), 0.5);
  data.labels = {0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(accuracy(m, data), 1.0);
  data.labels = {1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(accuracy(m, data), 0.0);
}

TEST(Accuracy, EmptyDatasetIsAnError) {
  const Model m = single_layer(Matrix::Identity(2, 2), Activation::kIdentity);
  LabeledDataset empty;
  empty.features.resize(0, 2);
  EXPECT_THROW(accuracy(m, empty), Error);
}

TEST(Traces, MatchForwardActivations) {
  std::mt19937_64 rng(5);
  const Model m = testing::random_model(rng, 3, {7, 4, 2});
  const Matrix inputs = testing::random_matrix(rng, 25, 3);
  const Matrix traces = activation_traces(m, inputs, 1, 3);
  ASSERT_EQ(traces.rows(), 25);
  ASSERT_EQ(traces.cols(), 4);
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const std::vector<double> x(inputs.row(i).data(), inputs.row(i).data() + 3);
    const auto r = forward(m, x);
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_EQ(traces(i, j), r.activations[1](j));
  }
  EXPECT_THROW(activation_traces(m, inputs, 3), Error);
}

TEST(Serialization, JsonRoundTripIsExact) {
  std::mt19937_64 rng(9);
  const Model m = testing::random_model(rng, 5, {8, 8, 3});
  const Model back = model_from_json(model_to_json(m));
  EXPECT_TRUE(back == m);
  EXPECT_EQ(model_to_string(back), model_to_string(m));
}

TEST(Serialization, RejectsMalformedModel) {
  nlohmann::json doc = model_to_json(single_layer(Matrix::Identity(2, 2), Activation::kSoftmax));
  doc["layers"][0]["bias"] = nlohmann::json::array({0.0});
  EXPECT_THROW(model_from_json(doc), Error);
}

TEST(Serialization, DatasetCsvRoundTrip) {
  std::mt19937_64 rng(3);
  LabeledDataset data;
  data.features = testing::random_matrix(rng, 10, 4);
  data.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  const auto dir = std::filesystem::temp_directory_path() / "fdrcast_model_test";
  save_dataset(dir / "d.csv", data);
  const auto back = load_dataset(dir / "d.csv");
  EXPECT_EQ(back.features, data.features);
  EXPECT_EQ(back.labels, data.labels);
  const auto blind = load_dataset(dir / "d.csv", false);
  EXPECT_EQ(blind.features, data.features);
  for (int label : blind.labels) EXPECT_EQ(label, -1);
  std::filesystem::remove_all(dir);
}

TEST(SyntheticSubject, NetworkIsNearestCentroid) {
  testing::SyntheticOptions o;
  o.num_classes = 5;
  o.input_dim = 4;
  o.train_size = 300;
  o.test_size = 300;
  o.fault_clusters = 4;
  o.fault_radius = 2.0;
  o.min_fault_margin = 0.5;
  o.min_fault_separation = 1.0;
  const auto s = testing::make_subject(o);
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const auto x = s.train.row(i);
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < o.num_classes; ++c) {
      double d = 0.0;
      for (int k = 0; k < o.input_dim; ++k) d += (x[k] - s.class_means(c, k)) * (x[k] - s.class_means(c, k));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    EXPECT_EQ(predict_label(s.model, x), best);
    EXPECT_EQ(s.train_fault[i] >= 0, s.train.labels[i] != best);
  }
}

}  // namespace
}  // namespace fdrcast
