#pragma once

// JSON documents for trained models. Weight matrices are stored row-major as
// flat arrays next to their dimensions; doubles round-trip exactly.

#include "dcnpd/baselines.hpp"
#include "dcnpd/dcn.hpp"
#include "dcnpd/propensity.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <string>

namespace dcnpd {

using json = nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
  return j.at(key);
}

template <class T>
T get_field(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("field '") + key + "': " + e.what());
  }
}

inline json vector_to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const json& j, const char* key) {
  const auto v = get_field<std::vector<double>>(j, key);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline json to_json(const MLPParams& p) {
  json layers = json::array();
  for (const auto& L : p.layers) {
    layers.push_back({{"fan_in", L.fan_in()},
                      {"fan_out", L.fan_out()},
                      {"activation", std::string(to_string(L.activation))},
                      {"W", std::vector<double>(L.W.data(), L.W.data() + L.W.size())},
                      {"b", detail::vector_to_json(L.b)}});
  }
  json widths = json::array();
  for (const auto& L : p.layers) widths.push_back(L.fan_out());
  return {{"input_width", p.input_width()}, {"layer_widths", widths}, {"mask_output", p.mask_output}, {"layers", layers}};
}

inline MLPParams mlp_from_json(const json& j) {
  MLPParams p;
  p.mask_output = detail::get_field<bool>(j, "mask_output");
  for (const auto& lj : detail::field(j, "layers")) {
    DenseLayer L;
    const auto fan_in = detail::get_field<std::size_t>(lj, "fan_in");
    const auto fan_out = detail::get_field<std::size_t>(lj, "fan_out");
    const auto w = detail::get_field<std::vector<double>>(lj, "W");
    if (w.size() != fan_in * fan_out) throw SchemaError("layer weight array has wrong length");
    L.W = Eigen::Map<const Matrix>(w.data(), static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    L.b = detail::vector_from_json(lj, "b");
    try {
      L.activation = activation_from_string(detail::get_field<std::string>(lj, "activation"));
    } catch (const std::invalid_argument& e) {
      throw SchemaError(e.what());
    }
    p.layers.push_back(std::move(L));
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return p;
}

inline json to_json(const FeatureScaler& s) {
  return {{"mean", detail::vector_to_json(s.mean)}, {"std", detail::vector_to_json(s.std)}};
}

inline FeatureScaler scaler_from_json(const json& j) {
  FeatureScaler s{detail::vector_from_json(j, "mean"), detail::vector_from_json(j, "std")};
  if (s.mean.size() != s.std.size()) throw SchemaError("scaler mean/std length mismatch");
  return s;
}

inline json to_json(const PropensityModel& m, const DropoutSchedule& schedule = {}) {
  return {{"net", to_json(m.net)}, {"scaler", to_json(m.scaler)}, {"gamma", schedule.gamma}};
}

struct PropensityDocument {
  PropensityModel model;
  DropoutSchedule schedule;
};

inline PropensityDocument propensity_from_json(const json& j) {
  PropensityDocument d;
  d.model.net = mlp_from_json(detail::field(j, "net"));
  d.model.scaler = scaler_from_json(detail::field(j, "scaler"));
  d.schedule.gamma = detail::get_field<double>(j, "gamma");
  return d;
}

inline json to_json(const DCNParams& p) {
  return {{"shared", to_json(p.shared)}, {"head0", to_json(p.head0)}, {"head1", to_json(p.head1)},
          {"scaler", to_json(p.scaler)}};
}

inline DCNParams dcn_from_json(const json& j) {
  DCNParams p;
  p.shared = mlp_from_json(detail::field(j, "shared"));
  p.head0 = mlp_from_json(detail::field(j, "head0"));
  p.head1 = mlp_from_json(detail::field(j, "head1"));
  p.scaler = scaler_from_json(detail::field(j, "scaler"));
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return p;
}

inline json to_json(const DirectModel& m) { return {{"net", to_json(m.net)}, {"scaler", to_json(m.scaler)}}; }

inline DirectModel direct_from_json(const json& j) {
  return {mlp_from_json(detail::field(j, "net")), scaler_from_json(detail::field(j, "scaler"))};
}

inline json to_json(const KnnModel& m) {
  const auto& X = m.train.X;
  return {{"k", m.config.k},
          {"scaler", to_json(m.scaler)},
          {"n", m.train.n()},
          {"d", m.train.d()},
          {"X", std::vector<double>(X.data(), X.data() + X.size())},
          {"W", std::vector<int>(m.train.W.data(), m.train.W.data() + m.train.W.size())},
          {"Y", detail::vector_to_json(m.train.Y)}};
}

inline KnnModel knn_from_json(const json& j) {
  KnnModel m;
  m.config.k = detail::get_field<std::size_t>(j, "k");
  m.scaler = scaler_from_json(detail::field(j, "scaler"));
  const auto n = detail::get_field<std::size_t>(j, "n");
  const auto d = detail::get_field<std::size_t>(j, "d");
  const auto x = detail::get_field<std::vector<double>>(j, "X");
  const auto w = detail::get_field<std::vector<int>>(j, "W");
  if (x.size() != n * d || w.size() != n) throw SchemaError("k-NN training data has wrong size");
  m.train.X = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  m.train.W = Eigen::Map<const IndexVector>(w.data(), static_cast<Eigen::Index>(n));
  m.train.Y = detail::vector_from_json(j, "Y");
  try {
    m.train.validate();
  } catch (const std::exception& e) {
    throw SchemaError(e.what());
  }
  return m;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace dcnpd
