#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>

namespace podgen {

// On-disk container for checkpoints and corpora.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "PGTC0001"
//   u32          number of config entries
//   per entry    u32 key length, key bytes, u32 value length, value bytes
//   u32          number of tensors
//   per tensor   u32 name length, name bytes, u32 rows, u32 cols,
//                rows*cols float32 payload, row-major
struct TensorStore {
    std::map<std::string, std::string> config;
    std::map<std::string, Eigen::MatrixXf> tensors;

    void save(const std::string& path) const;
    static TensorStore load(const std::string& path);

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Eigen::MatrixXf& get(const std::string& name) const;

    // Typed config accessors; throw if the key is missing.
    int config_int(const std::string& key) const;
    float config_float(const std::string& key) const;
    std::string config_str(const std::string& key) const;
};

}  // namespace podgen
