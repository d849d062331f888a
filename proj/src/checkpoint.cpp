#include "latcert/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "latcert/error.hpp"
#include "latcert/io.hpp"

namespace latcert {

namespace {

using ojson = nlohmann::ordered_json;

std::vector<std::string> slot_names(LayerKind kind) {
  switch (kind) {
    case LayerKind::EmbeddingLookup:
      return {"table"};
    case LayerKind::Conv1d:
    case LayerKind::Affine:
      return {"weight", "bias"};
    default:
      return {};
  }
}

ojson stack_to_json(const std::vector<LayerSpec>& layers, Partition part, const ParameterSet& params) {
  ojson arr = ojson::array();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    ojson layer;
    layer["kind"] = std::string(to_string(l.kind));
    layer["in"] = l.in;
    layer["out"] = l.out;
    layer["width"] = l.width;
    ojson tensors = ojson::object();
    for (const std::string& slot : slot_names(l.kind)) {
      const Parameter* p = params.find(parameter_name(part, i, slot));
      if (p == nullptr) throw StructuralError("model is missing parameter for " + slot);
      ojson t;
      t["shape"] = p->value.shape();
      t["trainable"] = p->trainable;
      t["data"] = p->value.values();
      tensors[slot] = std::move(t);
    }
    layer["tensors"] = std::move(tensors);
    arr.push_back(std::move(layer));
  }
  return arr;
}

template <typename T>
T field(const ojson& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw FormatError("checkpoint: missing field " + where + key);
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad field " + where + key + ": " + e.what());
  }
}

std::vector<LayerSpec> stack_from_json(const ojson& arr, Partition part, const std::string& name,
                                       ParameterSet& params) {
  if (!arr.is_array()) throw FormatError("checkpoint: field " + name + " must be an array");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const ojson& j = arr[i];
    const std::string where = name + "[" + std::to_string(i) + "].";
    LayerSpec l;
    l.kind = layer_kind_from_string(field<std::string>(j, "kind", where));
    l.in = field<std::size_t>(j, "in", where);
    l.out = field<std::size_t>(j, "out", where);
    l.width = field<std::size_t>(j, "width", where);
    const auto slots = slot_names(l.kind);
    if (!slots.empty()) {
      if (!j.contains("tensors") || !j["tensors"].is_object()) {
        throw FormatError("checkpoint: missing field " + where + "tensors");
      }
      for (const std::string& slot : slots) {
        const std::string twhere = where + "tensors." + slot + ".";
        if (!j["tensors"].contains(slot)) throw FormatError("checkpoint: missing field " + where + "tensors." + slot);
        const ojson& t = j["tensors"][slot];
        auto shape = field<Shape>(t, "shape", twhere);
        auto data = field<std::vector<double>>(t, "data", twhere);
        const bool trainable = field<bool>(t, "trainable", twhere);
        if (data.size() != shape_size(shape)) {
          throw FormatError("checkpoint: " + twhere + "data length does not match shape");
        }
        for (double v : data) {
          if (!std::isfinite(v)) throw FormatError("checkpoint: non-finite value in " + twhere + "data");
        }
        params.add({parameter_name(part, i, slot), part, trainable, Tensor(std::move(shape), std::move(data))});
      }
    }
    layers.push_back(l);
  }
  return layers;
}

void check_parameter_shapes(const ModelCheckpoint& m) {
  auto check = [&](const std::vector<LayerSpec>& layers, Partition part) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      Shape w;
      if (l.kind == LayerKind::EmbeddingLookup) w = {l.in, l.out};
      if (l.kind == LayerKind::Conv1d) w = {l.out, l.width, l.in};
      if (l.kind == LayerKind::Affine) w = {l.out, l.in};
      if (w.empty()) continue;
      const std::string first = l.kind == LayerKind::EmbeddingLookup ? "table" : "weight";
      const std::string name = parameter_name(part, i, first);
      if (m.parameters.tensor(name).shape() != w) {
        throw FormatError("checkpoint: " + name + " has shape " +
                          shape_string(m.parameters.tensor(name).shape()) + ", expected " + shape_string(w));
      }
      if (l.kind != LayerKind::EmbeddingLookup) {
        const std::string bias = parameter_name(part, i, "bias");
        if (m.parameters.tensor(bias).shape() != Shape{l.out}) {
          throw FormatError("checkpoint: " + bias + " has wrong shape");
        }
      }
    }
  };
  check(m.architecture.encoder, Partition::Encoder);
  check(m.architecture.classifier, Partition::Classifier);
}

}  // namespace

std::string checkpoint_to_json(const ModelCheckpoint& model) {
  ojson j;
  j["format_version"] = model.format_version;
  j["sigma"] = model.sigma;
  j["encoder"] = stack_to_json(model.architecture.encoder, Partition::Encoder, model.parameters);
  j["classifier"] = stack_to_json(model.architecture.classifier, Partition::Classifier, model.parameters);
  return j.dump() + "\n";
}

ModelCheckpoint checkpoint_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("checkpoint: top level must be an object");
  const int version = field<int>(j, "format_version", "");
  if (version != kCheckpointFormatVersion) {
    throw FormatError("checkpoint: format_version " + std::to_string(version) +
                      " is not supported (this build reads version " +
                      std::to_string(kCheckpointFormatVersion) + ")");
  }
  ModelCheckpoint m;
  m.format_version = version;
  m.sigma = field<double>(j, "sigma", "");
  if (!(m.sigma > 0.0) || !std::isfinite(m.sigma)) throw FormatError("checkpoint: sigma must be positive");
  if (!j.contains("encoder")) throw FormatError("checkpoint: missing field encoder");
  if (!j.contains("classifier")) throw FormatError("checkpoint: missing field classifier");
  try {
    m.architecture.encoder = stack_from_json(j["encoder"], Partition::Encoder, "encoder", m.parameters);
    m.architecture.classifier =
        stack_from_json(j["classifier"], Partition::Classifier, "classifier", m.parameters);
    validate(m.architecture);
    check_parameter_shapes(m);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_json(model));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

}  // namespace latcert
