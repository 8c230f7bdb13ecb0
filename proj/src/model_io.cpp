#include "smoothhess/model_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace smoothhess {

using nlohmann::json;

double json_finite(const json& j, const char* what) {
  if (!j.is_number()) throw ParseError(std::string(what) + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(std::string(what) + ": non-finite value");
  return v;
}

Vector json_vector(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string(what) + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = json_finite(j[i], what);
  return v;
}

Matrix json_matrix(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ParseError(std::string(what) + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ParseError(std::string(what) + ": ragged row " + std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = json_finite(j[r][c], what);
  }
  return m;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_to_json(m.row(r).transpose()));
  return out;
}

json network_to_json(const Network& net) {
  json layers = json::array();
  for (const Layer& layer : net.layers()) {
    json l{{"weight", matrix_to_json(layer.weight)},
           {"bias", vector_to_json(layer.bias)},
           {"activation", std::string(to_string(layer.activation))}};
    if (layer.activation == Activation::softplus || layer.activation == Activation::swish) l["beta"] = layer.beta;
    layers.push_back(std::move(l));
  }
  json head;
  switch (net.head().kind) {
    case Head::Kind::output:
      head = net.head().index;
      break;
    case Head::Kind::internal:
      head = json{{"layer", net.head().layer}, {"index", net.head().index}};
      break;
    case Head::Kind::softmax:
      head = json{{"softmax", net.head().index}};
      break;
  }
  return json{{"input_dim", net.input_dim()}, {"layers", std::move(layers)}, {"output_index", std::move(head)}};
}

namespace {

std::size_t json_index(const json& j, const char* what) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0)
    throw ParseError(std::string(what) + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

}  // namespace

Network network_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("model: expected a JSON object");
  if (!j.contains("input_dim") || !j.contains("layers")) throw ParseError("model: missing input_dim or layers");
  const std::size_t input_dim = json_index(j["input_dim"], "input_dim");
  std::vector<Layer> layers;
  for (const json& jl : j["layers"]) {
    Layer layer;
    if (!jl.contains("weight") || !jl.contains("bias") || !jl.contains("activation"))
      throw ParseError("layer " + std::to_string(layers.size()) + ": missing weight, bias or activation");
    layer.weight = json_matrix(jl["weight"], "weight");
    layer.bias = json_vector(jl["bias"], "bias");
    layer.activation = activation_from_string(jl["activation"].get<std::string>());
    if (jl.contains("beta") && !jl["beta"].is_null()) layer.beta = json_finite(jl["beta"], "beta");
    layers.push_back(std::move(layer));
  }
  Head head;
  if (j.contains("output_index") && !j["output_index"].is_null()) {
    const json& h = j["output_index"];
    if (h.is_number()) {
      head = Head::output_neuron(json_index(h, "output_index"));
    } else if (h.is_object() && h.contains("softmax")) {
      head = Head::softmax_probability(json_index(h["softmax"], "output_index.softmax"));
    } else if (h.is_object() && h.contains("layer") && h.contains("index")) {
      head = Head::internal_neuron(json_index(h["layer"], "output_index.layer"),
                                   json_index(h["index"], "output_index.index"));
    } else {
      throw ParseError("output_index: expected int, {layer, index} or {softmax}");
    }
  }
  try {
    return Network(input_dim, std::move(layers), head);
  } catch (const Error& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("model file " + path.string() + ": " + e.what());
  }
  return network_from_json(j);
}

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path.string());
  out << network_to_json(net).dump(1) << '\n';
}

}  // namespace smoothhess
