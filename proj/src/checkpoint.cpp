#include "latflow/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latflow/error.hpp"

namespace latflow {

namespace {
constexpr char kMagic[4] = {'L', 'F', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;
} // namespace

void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        manifest["tensors"].push_back(
            {{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
        offset += t.numel();
    }
    const std::string header = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("short write on checkpoint: " + path);
}

std::map<std::string, Tensor> load_tensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a tensor container: " + path);
    if (version != kVersion)
        throw IoError("unsupported container version " + std::to_string(version) + ": " + path);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated container header: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt container manifest in " + path + ": " + e.what());
    }

    std::map<std::string, Tensor> out;
    const std::streampos payload = in.tellg();
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        const std::int64_t off = entry.at("offset").get<std::int64_t>();
        const std::int64_t count = entry.at("count").get<std::int64_t>();
        if (shape_numel(shape) != count)
            throw IoError("manifest count mismatch for tensor " + name + " in " + path);
        Tensor t(shape);
        in.seekg(payload + static_cast<std::streamoff>(off * static_cast<std::int64_t>(sizeof(float))));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!in) throw IoError("truncated tensor payload for " + name + " in " + path);
        out[name] = std::move(t);
    }
    return out;
}

void write_json_file(const std::string& path, const std::string& pretty_json) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write: " + path);
    out << pretty_json;
    if (!pretty_json.empty() && pretty_json.back() != '\n') out << '\n';
    if (!out) throw IoError("short write: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace latflow
