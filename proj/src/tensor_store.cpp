#include "podgen/tensor_store.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace podgen {

namespace {

constexpr char kMagic[8] = {'P', 'G', 'T', 'C', '0', '0', '0', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("tensor store: truncated file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, std::uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

std::string read_str(std::istream& is) {
    std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("tensor store: truncated string");
    return s;
}

}  // namespace

void TensorStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("tensor store: cannot open for write: " + path);
    os.write(kMagic, 8);
    write_u32(os, std::uint32_t(config.size()));
    for (const auto& [k, v] : config) {
        write_str(os, k);
        write_str(os, v);
    }
    write_u32(os, std::uint32_t(tensors.size()));
    for (const auto& [name, m] : tensors) {
        write_str(os, name);
        write_u32(os, std::uint32_t(m.rows()));
        write_u32(os, std::uint32_t(m.cols()));
        // row-major payload
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            os.write(reinterpret_cast<const char*>(Eigen::RowVectorXf(m.row(i)).data()),
                     std::streamsize(sizeof(float) * std::size_t(m.cols())));
    }
    if (!os) throw std::runtime_error("tensor store: write failed: " + path);
}

TensorStore TensorStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("tensor store: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("tensor store: bad magic in " + path);
    TensorStore ts;
    std::uint32_t nconf = read_u32(is);
    for (std::uint32_t i = 0; i < nconf; ++i) {
        std::string k = read_str(is);
        ts.config[k] = read_str(is);
    }
    std::uint32_t ntens = read_u32(is);
    for (std::uint32_t i = 0; i < ntens; ++i) {
        std::string name = read_str(is);
        std::uint32_t rows = read_u32(is);
        std::uint32_t cols = read_u32(is);
        Eigen::MatrixXf m(rows, cols);
        std::vector<float> row(cols);
        for (std::uint32_t r = 0; r < rows; ++r) {
            is.read(reinterpret_cast<char*>(row.data()),
                    std::streamsize(sizeof(float) * cols));
            if (!is) throw std::runtime_error("tensor store: truncated tensor " + name);
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = row[c];
        }
        ts.tensors[name] = std::move(m);
    }
    return ts;
}

const Eigen::MatrixXf& TensorStore::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw std::runtime_error("tensor store: missing tensor: " + name);
    return it->second;
}

int TensorStore::config_int(const std::string& key) const {
    return std::stoi(config_str(key));
}

float TensorStore::config_float(const std::string& key) const {
    return std::stof(config_str(key));
}

std::string TensorStore::config_str(const std::string& key) const {
    auto it = config.find(key);
    if (it == config.end())
        throw std::runtime_error("tensor store: missing config key: " + key);
    return it->second;
}

}  // namespace podgen
