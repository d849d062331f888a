#pragma once

#include <filesystem>
#include <string>

#include "latcert/model.hpp"

namespace latcert {

/// Serialises a model as versioned JSON:
/// {format_version, sigma, encoder: [layer...], classifier: [layer...]}
/// where each layer is {kind, in, out, width, tensors: {slot: {shape, data, trainable}}}.
/// Doubles are written in shortest round-trip form, so load(save(m)) == m bit for bit.
std::string checkpoint_to_json(const ModelCheckpoint& model);

/// Throws FormatError naming the offending field, or the two versions on a
/// version mismatch. No partially built model escapes.
ModelCheckpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace latcert
