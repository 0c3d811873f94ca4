// Latent state and token masks shared by the denoisers and the scheduler.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridstitch/tensor.hpp"

namespace hybridstitch {

/// X_t: side*side tokens by `channels`, plus the index of the step that produced it.
struct LatentGrid {
    std::size_t side = 0;
    std::size_t channels = 0;
    Grid2D data;
    std::size_t step = 0;

    LatentGrid() = default;

    LatentGrid(std::size_t side_, Grid2D data_, std::size_t step_ = 0)
        : side(side_), channels(data_.cols()), data(std::move(data_)), step(step_) {
        if (data.rows() != side * side) {
            throw ShapeError("LatentGrid: " + std::to_string(data.rows()) + " rows is not side^2 for side " +
                             std::to_string(side));
        }
    }

    std::size_t tokens() const { return side * side; }
};

/// Number of tokens a mask of `ratio` covers: round(ratio * tokens), at least 1.
inline std::size_t mask_token_count(double ratio, std::size_t tokens) {
    const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(tokens)));
    return std::clamp<std::size_t>(k, 1, tokens);
}

/// Ascending set of token indices refined by the large model.
class Mask {
public:
    Mask() = default;

    Mask(std::vector<std::size_t> indices, std::size_t total_tokens, double ratio)
        : indices_(std::move(indices)), total_(total_tokens), ratio_(ratio) {
        if (!(ratio > 0.0 && ratio <= 1.0)) {
            throw std::invalid_argument("Mask: ratio " + std::to_string(ratio) + " outside (0, 1]");
        }
        for (std::size_t i = 0; i < indices_.size(); ++i) {
            if (indices_[i] >= total_) {
                throw std::invalid_argument("Mask: index " + std::to_string(indices_[i]) + " >= token count " +
                                            std::to_string(total_));
            }
            if (i > 0 && indices_[i] <= indices_[i - 1]) {
                throw std::invalid_argument("Mask: indices must be strictly ascending");
            }
        }
    }

    /// Mask over every token.
    static Mask all(std::size_t total_tokens) {
        std::vector<std::size_t> idx(total_tokens);
        for (std::size_t i = 0; i < total_tokens; ++i) idx[i] = i;
        return Mask(std::move(idx), total_tokens, 1.0);
    }

    const std::vector<std::size_t>& indices() const { return indices_; }
    std::size_t size() const { return indices_.size(); }
    bool empty() const { return indices_.empty(); }
    std::size_t total_tokens() const { return total_; }
    double ratio() const { return ratio_; }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    std::vector<std::size_t> indices_;
    std::size_t total_ = 0;
    double ratio_ = 1.0;
};

}  // namespace hybridstitch
