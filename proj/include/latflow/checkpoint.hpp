#pragma once

#include <map>
#include <string>

#include "latflow/tensor.hpp"

namespace latflow {

/// Binary tensor container: magic, version, JSON manifest, raw float32
/// little-endian payload. Order in the file follows the map's key order.
void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_tensors(const std::string& path);

/// Sidecar helpers: write/read a JSON document (pretty-printed, trailing
/// newline, keys in a stable order) next to a checkpoint.
void write_json_file(const std::string& path, const std::string& pretty_json);
std::string read_text_file(const std::string& path);

} // namespace latflow
