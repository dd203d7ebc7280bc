#include "rode/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "rode/errors.hpp"

namespace rode {

namespace {

constexpr char kMagic[8] = {'R', 'O', 'D', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("checkpoint truncated: " + path);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<NamedParam>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(config_json.size()));
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_pod(out, static_cast<std::uint64_t>(params.size()));
    for (const auto& p : params) {
        write_pod(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(out, static_cast<std::uint64_t>(p.node->value.rows));
        write_pod(out, static_cast<std::uint64_t>(p.node->value.cols));
        out.write(reinterpret_cast<const char*>(p.node->value.data.data()),
                  static_cast<std::streamsize>(p.node->value.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw IoError("load_checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    const auto cfg_len = read_pod<std::uint64_t>(in, path);
    ckpt.config_json.resize(cfg_len);
    in.read(ckpt.config_json.data(), static_cast<std::streamsize>(cfg_len));
    const auto n_tensors = read_pod<std::uint64_t>(in, path);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = read_pod<std::uint64_t>(in, path);
        const auto cols = read_pod<std::uint64_t>(in, path);
        Matrix m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(m.data.size() * sizeof(double)));
        if (!in) throw IoError("checkpoint truncated: " + path);
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    return ckpt;
}

void restore_parameters(ToyTransformer& model, const Checkpoint& ckpt) {
    std::map<std::string, const Matrix*> by_name;
    for (const auto& [name, m] : ckpt.tensors) by_name[name] = &m;
    for (auto& p : model.parameters()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw IoError("checkpoint is missing tensor '" + p.name + "'");
        if (!p.node->value.same_shape(*it->second))
            throw IoError("checkpoint tensor '" + p.name + "' has mismatched shape");
        p.node->value = *it->second;
    }
}

} // namespace rode
