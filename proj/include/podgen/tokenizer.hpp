#pragma once

#include <string>
#include <vector>

namespace podgen {

// Byte-level text tokenizer with an optional BPE merge table. Base ids are
// the 256 byte values; each merge line "a b" appends a new id.
class TextTokenizer {
public:
    TextTokenizer() = default;

    // Merge table file: one "left right" id pair per line, '#' comments.
    static TextTokenizer with_merges_file(const std::string& path);

    int vocab_size() const { return 256 + int(merges_.size()); }

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& tokens) const;

private:
    std::vector<std::pair<int, int>> merges_;  // applied greedily in order
};

}  // namespace podgen
