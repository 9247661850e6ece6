#pragma once

#include <stdexcept>

namespace podgen {

// Mixed text + speech-code vocabulary with disjoint id ranges:
//   [0, text_vocab_size)                         text tokens
//   [text_vocab_size, text_vocab_size + K)       semantic codes
//   then the five specials, in order BOS, EOS, SC, SPK1, SPK2
struct MixedVocab {
    int text_vocab_size = 256;
    int code_vocab_size = 64;

    int code_offset() const { return text_vocab_size; }
    int bos() const { return text_vocab_size + code_vocab_size; }
    int eos() const { return bos() + 1; }
    int sc() const { return bos() + 2; }
    int spk1() const { return bos() + 3; }
    int spk2() const { return bos() + 4; }
    int size() const { return text_vocab_size + code_vocab_size + 5; }

    int speaker_tag(int speaker_id) const {
        if (speaker_id == 1) return spk1();
        if (speaker_id == 2) return spk2();
        throw std::invalid_argument("MixedVocab: speaker id must be 1 or 2");
    }

    int code_to_id(int code) const {
        if (code < 0 || code >= code_vocab_size)
            throw std::invalid_argument("MixedVocab: code out of range");
        return code_offset() + code;
    }
    bool is_code(int id) const {
        return id >= code_offset() && id < code_offset() + code_vocab_size;
    }
    int id_to_code(int id) const {
        if (!is_code(id)) throw std::invalid_argument("MixedVocab: id is not a code");
        return id - code_offset();
    }
    bool is_text(int id) const { return id >= 0 && id < text_vocab_size; }
};

}  // namespace podgen
