#include "slidenav/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

#include "slidenav/errors.hpp"

namespace slidenav {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'N', 'T', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive payload assumes a little-endian host");

}  // namespace

void TensorArchive::save(const std::string& path) const {
    json header;
    header["kind"] = kind;
    header["config_hash"] = config_hash;
    header["seed"] = seed;
    header["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
    json tensors = json::array();
    for (const auto& e : entries) {
        std::size_t expect = 1;
        for (int d : e.shape) expect *= static_cast<std::size_t>(d);
        if (expect != e.data.size())
            throw ValidationError("archive: tensor '" + e.name + "' shape/size mismatch");
        tensors.push_back({{"name", e.name}, {"shape", e.shape}});
    }
    header["tensors"] = std::move(tensors);
    const std::string hdr = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("archive: cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(hdr.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto& e : entries)
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    if (!out) throw ValidationError("archive: write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("archive: missing file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ValidationError("archive: bad magic in " + path);
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hdr(len, '\0');
    in.read(hdr.data(), static_cast<std::streamsize>(len));
    if (!in) throw ValidationError("archive: truncated header in " + path);

    json header;
    try {
        header = json::parse(hdr);
    } catch (const json::exception& e) {
        throw ValidationError("archive: unparseable header: " + std::string(e.what()));
    }

    TensorArchive arc;
    arc.kind = header.value("kind", "");
    arc.config_hash = header.value("config_hash", "");
    arc.seed = header.value("seed", std::uint64_t{0});
    arc.meta_json = header.contains("meta") ? header["meta"].dump() : "{}";
    for (const auto& jt : header.at("tensors")) {
        Entry e;
        e.name = jt.at("name").get<std::string>();
        e.shape = jt.at("shape").get<std::vector<int>>();
        std::size_t n = 1;
        for (int d : e.shape) n *= static_cast<std::size_t>(d);
        e.data.resize(n);
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw ValidationError("archive: truncated tensor '" + e.name + "' in " + path);
        arc.entries.push_back(std::move(e));
    }
    return arc;
}

}  // namespace slidenav
