#pragma once

#include <optional>
#include <string>

#include "detrame/data.hpp"
#include "detrame/net.hpp"

namespace detrame::serialize {

struct ModelBundle {
  net::Model model;
  std::optional<data::Standardizer> norm;
};

/// Flat binary container: a plain-text header describing the architecture and
/// every named parameter array (name, shape, byte offset), then a raw payload
/// of little-endian 64-bit floats. Matrices are stored column-major. The exact
/// layout is documented in the README.
void save_model(const std::string& path, net::Model& model,
                const data::Standardizer* norm = nullptr);

ModelBundle load_model(const std::string& path);

}  // namespace detrame::serialize
