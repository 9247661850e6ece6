#include "podgen/flow.hpp"

#include <algorithm>
#include <cmath>

namespace podgen {

void ChunkPlan::validate() const {
    if (chunks.empty()) throw std::invalid_argument("ChunkPlan: empty");
    int pos = 0;
    for (const auto& c : chunks) {
        if (c.begin != pos) throw std::invalid_argument("ChunkPlan: gap or overlap");
        if (c.size() < 1) throw std::invalid_argument("ChunkPlan: empty chunk");
        pos = c.end;
    }
}

ChunkPlan ChunkPlan::fixed(int total_frames, int frames_per_chunk) {
    if (total_frames < 1) throw std::invalid_argument("ChunkPlan: total_frames >= 1");
    if (frames_per_chunk < 1) throw std::invalid_argument("ChunkPlan: frames_per_chunk >= 1");
    ChunkPlan plan;
    for (int pos = 0; pos < total_frames; pos += frames_per_chunk)
        plan.chunks.push_back({pos, std::min(pos + frames_per_chunk, total_frames)});
    return plan;
}

ChunkMask make_chunk_mask(int num_chunks) {
    if (num_chunks < 1) throw std::invalid_argument("make_chunk_mask: N >= 1");
    const int n = num_chunks;
    ChunkMask mask;
    mask.num_chunks = n;
    mask.allowed.setConstant(2 * n, 2 * n, false);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) mask.allowed(i, j) = true;          // clean -> clean
        for (int j = 0; j < i; ++j) mask.allowed(n + i, j) = true;       // noisy -> clean
        mask.allowed(n + i, n + i) = true;                               // noisy -> self
    }
    return mask;
}

Eigen::ArrayXXf expand_chunk_mask(const ChunkMask& mask, const std::vector<int>& block_sizes) {
    if (int(block_sizes.size()) != 2 * mask.num_chunks)
        throw std::invalid_argument("expand_chunk_mask: need 2N block sizes");
    int total = 0;
    for (int s : block_sizes) {
        if (s < 0) throw std::invalid_argument("expand_chunk_mask: negative block size");
        total += s;
    }
    Eigen::ArrayXXf out = Eigen::ArrayXXf::Constant(total, total, -1e9f);
    std::vector<int> offsets(block_sizes.size());
    int pos = 0;
    for (std::size_t b = 0; b < block_sizes.size(); ++b) {
        offsets[b] = pos;
        pos += block_sizes[b];
    }
    for (int r = 0; r < 2 * mask.num_chunks; ++r)
        for (int c = 0; c < 2 * mask.num_chunks; ++c)
            if (mask.allowed(r, c) && block_sizes[r] > 0 && block_sizes[c] > 0)
                out.block(offsets[r], offsets[c], block_sizes[r], block_sizes[c]).setZero();
    return out;
}

float boundary_discontinuity(const Eigen::MatrixXf& features,
                             const std::vector<int>& chunk_boundaries) {
    if (chunk_boundaries.empty()) return 0.0f;  // single chunk: nothing to measure
    const int t = int(features.rows());
    if (t < 2) throw std::invalid_argument("boundary_discontinuity: need >= 2 frames");
    for (int b : chunk_boundaries)
        if (b < 1 || b >= t)
            throw std::invalid_argument("boundary_discontinuity: boundary outside [1,T)");

    std::vector<float> adjacent(std::size_t(t - 1));
    for (int i = 1; i < t; ++i)
        adjacent[std::size_t(i - 1)] = (features.row(i) - features.row(i - 1)).norm();
    std::vector<float> sorted = adjacent;
    std::nth_element(sorted.begin(), sorted.begin() + (sorted.size() - 1) / 2, sorted.end());
    float lo = sorted[(sorted.size() - 1) / 2];
    float median = lo;
    if (sorted.size() % 2 == 0) {
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        median = 0.5f * (lo + sorted[sorted.size() / 2]);
    }

    float sum = 0.0f;
    for (int b : chunk_boundaries) sum += adjacent[std::size_t(b - 1)];
    float mean = sum / float(chunk_boundaries.size());
    return std::max(0.0f, mean - median);
}

}  // namespace podgen
