#include "fdrcast/model.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fdrcast/io.hpp"

namespace fdrcast {

using nlohmann::json;

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.values = std::move(values);
  t.validate();
  return t;
}

void Tensor::validate() const {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorCode::kInvalidArgument, "tensor dimension must be positive");
    n *= d;
  }
  if (n != values.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "tensor shape product " + std::to_string(n) +
                                                   " != value count " + std::to_string(values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "tensor holds a non-finite value");
  }
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
    case Activation::kSoftmax: return "softmax";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  if (name == "softmax") return Activation::kSoftmax;
  throw Error(ErrorCode::kParse, "unknown activation '" + name + "'");
}

void Model::validate() const {
  if (input_dim <= 0) throw Error(ErrorCode::kStructural, "model input_dim must be positive");
  if (num_classes <= 0) throw Error(ErrorCode::kStructural, "model num_classes must be positive");
  if (layers.empty()) throw Error(ErrorCode::kStructural, "model has no layers");
  Eigen::Index width = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (layer.weights.rows() != layer.bias.size()) {
      throw Error(ErrorCode::kStructural, where + ": weight rows " + std::to_string(layer.weights.rows()) +
                                              " != bias length " + std::to_string(layer.bias.size()));
    }
    if (layer.in_dim() != width) {
      throw Error(ErrorCode::kStructural, where + ": input width " + std::to_string(layer.in_dim()) +
                                              " != previous output width " + std::to_string(width));
    }
    if (layer.activation == Activation::kSoftmax && i + 1 != layers.size()) {
      throw Error(ErrorCode::kStructural, where + ": softmax is only allowed on the final layer");
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw Error(ErrorCode::kStructural, where + ": non-finite parameter");
    }
    width = layer.out_dim();
  }
  if (width != num_classes) {
    throw Error(ErrorCode::kStructural, "final layer width " + std::to_string(width) +
                                            " != num_classes " + std::to_string(num_classes));
  }
}

std::size_t Model::total_neurons() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += static_cast<std::size_t>(layer.out_dim());
  return total;
}

bool Model::operator==(const Model& other) const {
  if (input_dim != other.input_dim || num_classes != other.num_classes ||
      layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.activation != b.activation || a.weights.rows() != b.weights.rows() ||
        a.weights.cols() != b.weights.cols() || a.weights != b.weights || a.bias != b.bias) {
      return false;
    }
  }
  return true;
}

int argmax(const Vector& values) {
  int best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

namespace {

void apply_activation(Activation a, Vector& v) {
  switch (a) {
    case Activation::kRelu:
      v = v.cwiseMax(0.0);
      break;
    case Activation::kIdentity:
      break;
    case Activation::kSoftmax: {
      const double peak = v.maxCoeff();
      v = (v.array() - peak).exp();
      v /= v.sum();
      break;
    }
  }
}

}  // namespace

ForwardResult forward(const Model& model, std::span<const double> input) {
  if (static_cast<int>(input.size()) != model.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "layer 0: input length " + std::to_string(input.size()) +
                                                   " != input_dim " + std::to_string(model.input_dim));
  }
  ForwardResult out;
  out.activations.reserve(model.layers.size());
  Vector current = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (layer.in_dim() != current.size()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "layer " + std::to_string(i) + ": expects width " + std::to_string(layer.in_dim()) +
                      ", got " + std::to_string(current.size()));
    }
    Vector next = layer.weights * current + layer.bias;
    if (i + 1 == model.layers.size()) {
      out.logits = next;
      if (layer.activation != Activation::kSoftmax) apply_activation(layer.activation, out.logits);
    }
    apply_activation(layer.activation, next);
    out.activations.push_back(next);
    current = std::move(next);
  }
  out.label = argmax(out.logits);
  return out;
}

int predict_label(const Model& model, std::span<const double> input) {
  return forward(model, input).label;
}

void LabeledDataset::validate(int num_classes) const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "dataset has " + std::to_string(features.rows()) +
                                                   " rows but " + std::to_string(labels.size()) + " labels");
  }
  for (int label : labels) {
    if (label < 0 || label >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(label) + " outside [0, " +
                                                   std::to_string(num_classes) + ")");
    }
  }
}

double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) throw Error(ErrorCode::kInvalidArgument, "accuracy of an empty dataset is undefined");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict_label(model, data.row(i)) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<int> predict_all(const Model& model, const Matrix& inputs, int threads) {
  std::vector<int> labels(static_cast<std::size_t>(inputs.rows()));
  parallel_for(labels.size(), threads, [&](std::size_t i) {
    labels[i] = predict_label(
        model, {inputs.data() + static_cast<Eigen::Index>(i) * inputs.cols(), static_cast<std::size_t>(inputs.cols())});
  });
  return labels;
}

Matrix activation_traces(const Model& model, const Matrix& inputs, int layer_index, int threads) {
  if (layer_index < 0 || layer_index >= static_cast<int>(model.layers.size())) {
    throw Error(ErrorCode::kInvalidArgument, "trace layer " + std::to_string(layer_index) + " does not exist");
  }
  const auto width = model.layers[static_cast<std::size_t>(layer_index)].out_dim();
  Matrix traces(inputs.rows(), width);
  parallel_for(static_cast<std::size_t>(inputs.rows()), threads, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    auto result = forward(model, {inputs.data() + r * inputs.cols(), static_cast<std::size_t>(inputs.cols())});
    traces.row(r) = result.activations[static_cast<std::size_t>(layer_index)].transpose();
  });
  return traces;
}

json model_to_json(const Model& model) {
  json layers = json::array();
  for (const auto& layer : model.layers) {
    json weights = json::array();
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) row.push_back(layer.weights(r, c));
      weights.push_back(std::move(row));
    }
    json bias = json::array();
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) bias.push_back(layer.bias[r]);
    layers.push_back({{"kind", "dense"},
                      {"activation", activation_name(layer.activation)},
                      {"weights", std::move(weights)},
                      {"bias", std::move(bias)}});
  }
  return {{"name", model.name},
          {"input_dim", model.input_dim},
          {"num_classes", model.num_classes},
          {"layers", std::move(layers)}};
}

Model model_from_json(const json& doc) {
  try {
    Model model;
    model.name = doc.value("name", std::string("model"));
    model.input_dim = doc.at("input_dim").get<int>();
    model.num_classes = doc.at("num_classes").get<int>();
    std::size_t index = 0;
    for (const auto& entry : doc.at("layers")) {
      const auto kind = entry.value("kind", std::string("dense"));
      if (kind != "dense") {
        throw Error(ErrorCode::kStructural,
                    "layer " + std::to_string(index) + ": unsupported kind '" + kind + "'");
      }
      Layer layer;
      layer.activation = parse_activation(entry.value("activation", std::string("identity")));
      const auto& rows = entry.at("weights");
      const auto out_dim = static_cast<Eigen::Index>(rows.size());
      const auto in_dim = out_dim == 0 ? 0 : static_cast<Eigen::Index>(rows.at(0).size());
      layer.weights.resize(out_dim, in_dim);
      for (Eigen::Index r = 0; r < out_dim; ++r) {
        const auto& row = rows.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != in_dim) {
          throw Error(ErrorCode::kStructural, "layer " + std::to_string(index) + ": ragged weight matrix");
        }
        for (Eigen::Index c = 0; c < in_dim; ++c) layer.weights(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
      const auto& bias = entry.at("bias");
      layer.bias.resize(static_cast<Eigen::Index>(bias.size()));
      for (std::size_t r = 0; r < bias.size(); ++r) layer.bias[static_cast<Eigen::Index>(r)] = bias[r].get<double>();
      model.layers.push_back(std::move(layer));
      ++index;
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("model json: ") + e.what());
  }
}

Model load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

std::string model_to_string(const Model& model) { return model_to_json(model).dump(1) + "\n"; }

void save_model(const std::filesystem::path& path, const Model& model) {
  io::write_file(path, model_to_string(model));
}

LabeledDataset load_dataset(const std::filesystem::path& path, bool read_labels) {
  const auto table = io::parse_csv(io::read_file(path), path.string());
  if (table.header.empty() || table.header.front() != "label") {
    throw Error(ErrorCode::kParse, path.string() + ": first column must be 'label'");
  }
  const auto cols = static_cast<Eigen::Index>(table.header.size() - 1);
  LabeledDataset data;
  data.features.resize(static_cast<Eigen::Index>(table.rows.size()), cols);
  data.labels.assign(table.rows.size(), -1);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto ctx = path.string() + " row " + std::to_string(r + 1);
    if (read_labels) data.labels[r] = static_cast<int>(io::parse_long(table.rows[r][0], ctx));
    for (Eigen::Index c = 0; c < cols; ++c) {
      data.features(static_cast<Eigen::Index>(r), c) =
          io::parse_double(table.rows[r][static_cast<std::size_t>(c) + 1], ctx);
    }
  }
  return data;
}

std::string dataset_to_csv(const LabeledDataset& data) {
  std::string out = "label";
  for (Eigen::Index c = 0; c < data.features.cols(); ++c) out += ",f" + std::to_string(c);
  out.push_back('\n');
  for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
    out += std::to_string(data.labels[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      out.push_back(',');
      out += io::format_double(data.features(r, c));
    }
    out.push_back('\n');
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  io::write_file(path, dataset_to_csv(data));
}

}  // namespace fdrcast
