#include "podgen/tokenizer.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace podgen {

TextTokenizer TextTokenizer::with_merges_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("tokenizer: cannot open merges file: " + path);
    TextTokenizer tok;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        int left, right;
        if (!(ls >> left >> right))
            throw std::runtime_error("tokenizer: bad merge line: " + line);
        const int next_id = 256 + int(tok.merges_.size());
        if (left < 0 || left >= next_id || right < 0 || right >= next_id)
            throw std::runtime_error("tokenizer: merge references unknown id: " + line);
        tok.merges_.emplace_back(left, right);
    }
    return tok;
}

std::vector<int> TextTokenizer::encode(const std::string& text) const {
    std::vector<int> tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(int(c));
    for (std::size_t m = 0; m < merges_.size(); ++m) {
        const auto [left, right] = merges_[m];
        const int merged = 256 + int(m);
        std::vector<int> out;
        out.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size();) {
            if (i + 1 < tokens.size() && tokens[i] == left && tokens[i + 1] == right) {
                out.push_back(merged);
                i += 2;
            } else {
                out.push_back(tokens[i]);
                ++i;
            }
        }
        tokens = std::move(out);
    }
    return tokens;
}

std::string TextTokenizer::decode(const std::vector<int>& tokens) const {
    std::string out;
    // expand merges recursively
    std::vector<int> stack(tokens.rbegin(), tokens.rend());
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (id < 0 || id >= vocab_size())
            throw std::invalid_argument("tokenizer: id out of range");
        if (id < 256) {
            out.push_back(char(static_cast<unsigned char>(id)));
        } else {
            const auto [left, right] = merges_[std::size_t(id - 256)];
            stack.push_back(right);
            stack.push_back(left);
        }
    }
    return out;
}

}  // namespace podgen
