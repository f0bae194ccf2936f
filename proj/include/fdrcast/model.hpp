#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fdrcast/common.hpp"

namespace fdrcast {

// Shape-tagged row-major buffer. Values must be finite.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  static Tensor vector(std::vector<double> values);
  void validate() const;
};

enum class Activation { kRelu, kIdentity, kSoftmax };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct Layer {
  Matrix weights;  // out_dim x in_dim
  Vector bias;     // out_dim
  Activation activation = Activation::kIdentity;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
  bool is_square() const { return weights.rows() == weights.cols(); }
};

struct Model {
  std::string name;
  int input_dim = 0;
  int num_classes = 0;
  std::vector<Layer> layers;

  // Throws kStructural naming the first offending layer.
  void validate() const;
  std::size_t total_neurons() const;
  bool operator==(const Model& other) const;
};

struct ForwardResult {
  std::vector<Vector> activations;  // post-activation output of each layer
  Vector logits;                    // final layer output before softmax
  int label = 0;
};

ForwardResult forward(const Model& model, std::span<const double> input);
int predict_label(const Model& model, std::span<const double> input);

// Lowest index wins ties.
int argmax(const Vector& values);

struct LabeledDataset {
  Matrix features;          // n x input_dim
  std::vector<int> labels;  // class index per row

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + static_cast<Eigen::Index>(i) * features.cols(),
            static_cast<std::size_t>(features.cols())};
  }
  void validate(int num_classes) const;
};

double accuracy(const Model& model, const LabeledDataset& data);
std::vector<int> predict_all(const Model& model, const Matrix& inputs, int threads = 1);

// Activation trace of `layer_index` for every row of `inputs`.
Matrix activation_traces(const Model& model, const Matrix& inputs, int layer_index, int threads = 1);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& doc);
Model load_model(const std::filesystem::path& path);
std::string model_to_string(const Model& model);
void save_model(const std::filesystem::path& path, const Model& model);

// CSV: header row, first column "label", remaining columns features.
// With `read_labels` false the label column is skipped and labels are -1.
LabeledDataset load_dataset(const std::filesystem::path& path, bool read_labels = true);
std::string dataset_to_csv(const LabeledDataset& data);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);

}  // namespace fdrcast
