#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace slidenav {

/// Binary tensor archive: 8-byte magic, u32 header length, JSON header
/// (metadata + tensor names/shapes), then raw little-endian f64 payloads in
/// declaration order.
struct TensorArchive {
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<double> data;
    };
    std::string kind;          // e.g. "mcfn" or "abmil"
    std::string config_hash;   // producing run-config hash
    std::uint64_t seed = 0;
    std::string meta_json;     // extra metadata, serialized JSON object
    std::vector<Entry> entries;

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);
};

}  // namespace slidenav
