#pragma once

#include <filesystem>
#include "json.hpp"

#include "lwbc/classifier.hpp"

namespace lwbc {

/// Classifier checkpoint, version 1.
///
///   {"format": "lwbc-classifier", "version": 1,
///    "d_in": .., "d_hidden": .., "classes": ..,
///    "w1": [...], "b1": [...], "w2": [...], "b2": [...],
///    "adam": {"step": .., "m_w1": [...], "v_w1": [...], ... "v_b2": [...]}}
///
/// Matrices are flattened row-major. Doubles are written in shortest
/// round-trip form, so loading restores the state bit for bit.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const Classifier& c);
Classifier checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Classifier& c, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace lwbc
