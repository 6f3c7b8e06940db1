#pragma once

// ADAW parameter checkpoints (little-endian):
//   "ADAW" | u16 version=1 | u32 tensor_count |
//   per tensor: u16 name_len | name | u8 ndim | u32 dims[ndim] | f32 data
//
// A model checkpoint pairs an .adaw file with a JSON sidecar (.json) that
// records the model kind, its architecture config and the init seed.
// Tensor names are prefixed "embed/" or "classifier/" to carry the split.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adafall/binary_io.hpp"
#include "adafall/models.hpp"

namespace adafall {

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor<float>>& tensors) {
  ByteWriter w;
  w.put_bytes("ADAW");
  w.put_u16(kCheckpointVersion);
  w.put_u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "tensor name too long");
    if (t.rank() > 0xFF) throw Error(ErrorCode::InvalidArgument, "tensor rank too large");
    w.put_u16(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put_u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (float v : t.values) w.put_f32(v);
  }
  return std::move(w).bytes();
}

inline std::vector<NamedTensor<float>> decode_tensors(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("ADAW");
  if (const auto v = in.u16(); v != kCheckpointVersion) {
    throw Error(ErrorCode::BadVersion, "ADAW version " + std::to_string(v));
  }
  const std::uint32_t count = in.u32();
  std::vector<NamedTensor<float>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor<float> nt;
    nt.name = in.bytes(in.u16());
    Shape shape(in.u8());
    for (auto& d : shape) d = in.u32();
    const std::size_t n = shape_size(shape);
    if (in.remaining() < n * 4) throw Error(ErrorCode::Truncated, "tensor " + nt.name + " data");
    std::vector<float> values(n);
    for (auto& v : values) v = in.f32();
    nt.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(nt));
  }
  in.expect_end();
  return out;
}

inline nlohmann::ordered_json config_to_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  if (const auto* c = std::get_if<CnnConfig>(&config)) {
    j = {{"input_rows", c->input_rows}, {"input_cols", c->input_cols}, {"conv1_maps", c->conv1_maps},
         {"conv2_maps", c->conv2_maps}, {"kernel", c->kernel},         {"fc1_width", c->fc1_width},
         {"classes", c->classes}};
  } else {
    const auto& l = std::get<LstmConfig>(config);
    j = {{"steps", l.steps}, {"features", l.features}, {"hidden", l.hidden}, {"classes", l.classes}};
  }
  return j;
}

inline ModelConfig config_from_json(const std::string& kind, const nlohmann::json& j) {
  try {
    if (kind == "cnn") {
      return CnnConfig{j.at("input_rows"), j.at("input_cols"), j.at("conv1_maps"), j.at("conv2_maps"),
                       j.at("kernel"),     j.at("fc1_width"),  j.at("classes")};
    }
    if (kind == "lstm") return LstmConfig{j.at("steps"), j.at("features"), j.at("hidden"), j.at("classes")};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("model config: ") + e.what());
  }
  throw Error(ErrorCode::Config, "unknown model kind '" + kind + "'");
}

/// Writes <stem>.adaw and <stem>.json; `extra` is merged into the sidecar.
inline void save_model(const std::filesystem::path& stem, const ModelState& state,
                       const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  std::vector<NamedTensor<float>> tensors;
  for (const auto& p : state.embed_params) tensors.push_back({"embed/" + p.name, p.tensor});
  for (const auto& p : state.classifier_params) tensors.push_back({"classifier/" + p.name, p.tensor});
  auto adaw = stem;
  adaw += ".adaw";
  write_file_bytes(adaw, encode_tensors(tensors));

  nlohmann::ordered_json side;
  side["kind"] = to_string(state.kind());
  side["config"] = config_to_json(state.config);
  side["seed"] = state.seed;
  for (const auto& [k, v] : extra.items()) side[k] = v;
  auto json_path = stem;
  json_path += ".json";
  write_file_text(json_path, side.dump(2) + "\n");
}

struct LoadedModel {
  ModelState state;
  nlohmann::json sidecar;
};

inline LoadedModel load_model(const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  const auto text = read_file_bytes(json_path);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, json_path.string() + ": " + e.what());
  }
  const std::string kind = side.value("kind", "");
  const ModelConfig config = config_from_json(kind, side.value("config", nlohmann::json::object()));
  const std::uint64_t seed = side.value("seed", std::uint64_t{0});

  auto adaw = stem;
  adaw += ".adaw";
  const auto tensors = decode_tensors(read_file_bytes(adaw));

  // Shapes must match a freshly initialized model of the same config.
  ModelState state = init_params<float>(config, seed);
  if (tensors.size() != state.param_tensor_count()) {
    throw Error(ErrorCode::ShapeMismatch, adaw.string() + ": tensor count does not match model");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const bool embed = i < state.embed_params.size();
    const std::string want = (embed ? "embed/" : "classifier/") + state.param_name(i);
    if (tensors[i].name != want || tensors[i].tensor.shape != state.param(i).shape) {
      throw Error(ErrorCode::ShapeMismatch, adaw.string() + ": expected " + want + " " +
                                                shape_string(state.param(i).shape) + ", found " + tensors[i].name +
                                                " " + shape_string(tensors[i].tensor.shape));
    }
    state.param(i) = tensors[i].tensor;
  }
  return {std::move(state), std::move(side)};
}

}  // namespace adafall
