#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "docdet/error.hpp"
#include "docdet/network.hpp"

namespace docdet {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'O', 'C', 'D', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Header {
    json meta;
    std::uint64_t payload_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a docdet checkpoint: " + path.string());
    if (version != kVersion)
        throw IoError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                      ", expected " + std::to_string(kVersion));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("truncated checkpoint header: " + path.string());
    Header h;
    try {
        h.meta = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    h.payload_offset = 8 + sizeof version + sizeof len + len;
    return h;
}

std::ifstream open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    return in;
}

std::vector<float> read_values(std::ifstream& in, const Header& h, const json& entry, const std::filesystem::path& path) {
    const std::uint64_t count = entry.at("count");
    std::vector<float> v(count);
    in.seekg(static_cast<std::streamoff>(h.payload_offset + entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint payload in " + path.string());
    return v;
}

}  // namespace

void save_model(const std::filesystem::path& path, const UNet<float>& model, const json& extra,
                const std::vector<NamedTensor>& extra_tensors) {
    json tensors = json::array();
    std::uint64_t offset = 0;
    std::vector<const std::vector<float>*> payload;
    auto add = [&](const std::string& name, const std::string& kind, const std::vector<int>& shape,
                   const std::vector<float>& values) {
        tensors.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset}, {"count", values.size()}});
        offset += values.size() * sizeof(float);
        payload.push_back(&values);
    };
    for (const auto& p : model.parameters()) add(p.name, "param", p.shape, p.value);
    for (const auto& b : model.buffers()) add(b.name, "buffer", b.shape, b.value);
    for (const auto& t : extra_tensors) {
        if (t.kind == "param" || t.kind == "buffer") throw Error("save_model: extra tensor kind '" + t.kind + "' is reserved");
        add(t.name, t.kind, t.shape, t.values);
    }
    const json meta = {{"version", kVersion},
                       {"dtype", "float32"},
                       {"model", model.config()},
                       {"parameter_count", model.parameter_count()},
                       {"tensors", tensors},
                       {"extra", extra.is_null() ? json::object() : extra}};
    const std::string text = meta.dump();
    const std::uint64_t len = text.size();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(len));
        for (const auto* v : payload)
            out.write(reinterpret_cast<const char*>(v->data()), static_cast<std::streamsize>(v->size() * sizeof(float)));
        if (!out) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

json read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream in = open(path);
    return read_header(in, path).meta;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    try {
        return read_checkpoint_header(path).at("model").get<ModelConfig>();
    } catch (const json::exception& e) {
        throw IoError("checkpoint " + path.string() + " has no readable model config: " + e.what());
    }
}

UNet<float> load_model(const std::filesystem::path& path) {
    std::ifstream in = open(path);
    const Header h = read_header(in, path);
    ModelConfig cfg;
    try {
        cfg = h.meta.at("model").get<ModelConfig>();
    } catch (const json::exception& e) {
        throw IoError("checkpoint " + path.string() + " has no readable model config: " + e.what());
    }
    if (h.meta.value("dtype", std::string()) != "float32")
        throw IoError("checkpoint " + path.string() + " has unsupported dtype");
    UNet<float> model = UNet<float>::build(cfg, 0);
    std::map<std::string, const json*> index;
    for (const json& t : h.meta.at("tensors")) index[t.at("name").get<std::string>()] = &t;
    auto fill = [&](std::vector<Parameter<float>>& list) {
        for (auto& p : list) {
            const auto it = index.find(p.name);
            if (it == index.end()) throw IoError("checkpoint " + path.string() + " lacks tensor " + p.name);
            if (it->second->at("shape").get<std::vector<int>>() != p.shape)
                throw IoError("checkpoint " + path.string() + ": tensor " + p.name + " has the wrong shape");
            p.value = read_values(in, h, *it->second, path);
        }
    };
    fill(model.parameters());
    fill(model.buffers());
    return model;
}

UNet<float> load_model(const std::filesystem::path& path, const ModelConfig& expected) {
    const ModelConfig stored = read_checkpoint_config(path);
    if (!(stored == expected))
        throw ConfigError("checkpoint " + path.string() + " was saved with model config " + json(stored).dump() +
                          ", expected " + json(expected).dump());
    return load_model(path);
}

std::vector<NamedTensor> read_checkpoint_extras(const std::filesystem::path& path) {
    std::ifstream in = open(path);
    const Header h = read_header(in, path);
    std::vector<NamedTensor> out;
    for (const json& t : h.meta.at("tensors")) {
        const std::string kind = t.at("kind");
        if (kind == "param" || kind == "buffer") continue;
        out.push_back({t.at("name"), kind, t.at("shape").get<std::vector<int>>(), read_values(in, h, t, path)});
    }
    return out;
}

}  // namespace docdet
