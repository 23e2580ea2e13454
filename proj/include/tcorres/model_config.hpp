#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tcorres {

struct ModelConfig {
    int64_t M = 128;      // encoder token count
    int64_t C = 192;      // channel width (also decoder width)
    int heads = 6;        // attention heads
    int k = 16;           // neighbor count for all kNN graphs
    int64_t L_enc = 4;    // encoder depth
    int64_t L_dec = 4;    // decoder depth
    int64_t N0 = 512;     // coarse/fine template size
    int64_t N3 = 256;     // template points kept in the pool
    int64_t N4 = 384;     // input points added to the pool
    int64_t oversample = 4;        // sphere points per token for the template
    int64_t up_factor = 4;         // dense points per fine-template point
    int64_t d_s = 64;              // sphere embedding width in value tokens
    int64_t corres_dim = 64;       // correspondence attention width
    int64_t vote_dim = 64;         // voting network width
    int64_t corres_sample_n = 512; // input points sampled for correspondence
    double fold_offset_bound = 0.5;

    bool template_fusion = true;  // add template features at every encoder layer
    bool corres_pooling = true;   // false: fine template = coarse template
    bool value_sphere = true;     // false: zero the sphere branch of value tokens
    bool drop_lowest = false;     // pool replacement direction (default: drop highest scores)

    int64_t pool_size() const { return N3 + N4; }
    int64_t dense_count() const { return N0 * up_factor; }

    void validate() const {
        auto fail = [](const std::string& msg) {
            throw std::invalid_argument("model config: " + msg);
        };
        if (M < 1 || C < 1 || N0 < 1) fail("M, C, N0 must be positive");
        if (heads < 1 || C % heads != 0) fail("C must be divisible by heads");
        if (k < 1 || k > M) fail("k must be in [1, M]");
        if (C % 2 != 0) fail("C must be even");
        if (N3 < 0 || N4 < 0) fail("N3 and N4 must be nonnegative");
        if (N3 > N0) fail("N3 cannot exceed N0");
        if (N0 > N3 + N4) fail("N0 cannot exceed pool size N3 + N4");
        if (oversample < 1) fail("oversample must be at least 1");
        if (up_factor < 1) fail("up_factor must be at least 1");
        if (d_s < 1 || corres_dim < 1 || vote_dim < 1) fail("embedding widths must be positive");
        if (corres_sample_n < k) fail("corres_sample_n must be at least k");
        if (L_enc < 1 || L_dec < 1) fail("encoder and decoder need at least one layer");
        if (!(fold_offset_bound > 0)) fail("fold_offset_bound must be positive");
    }
};

}  // namespace tcorres
