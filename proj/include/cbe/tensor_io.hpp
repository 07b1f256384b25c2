#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbe/linalg.hpp"

namespace cbe {

struct NamedTensor {
  std::string name;
  const Matrix* value;
};

/// Writes the tensors back to back as row-major little-endian float32 and
/// returns the manifest `[{"name", "rows", "cols"}, ...]` in write order.
nlohmann::json write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

/// Reads tensors described by `manifest` from `path`. Throws ParseError when the
/// file size does not match the manifest.
std::vector<Matrix> read_tensors(const std::filesystem::path& path, const nlohmann::json& manifest);

}  // namespace cbe
