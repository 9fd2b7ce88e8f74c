#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace cupid::nce {

/// B x B video-text scores; entry (a, b) pairs video a with text b.
struct ScoreGrid {
    std::size_t batch = 0;
    std::vector<double> scores;        // row-major
    std::vector<bool> positive_mask;   // row-major, diagonal always true

    /// Diagonal-only positives.
    static ScoreGrid diagonal(std::size_t batch, std::vector<double> scores);

    double score(std::size_t a, std::size_t b) const { return scores[a * batch + b]; }
    bool positive(std::size_t a, std::size_t b) const { return positive_mask[a * batch + b]; }

    void validate() const;
};

/// standard: row and column of the anchor (bidirectional in-batch negatives).
/// n_squared: every mismatched pair in the batch.
enum class NegativeMode { standard, n_squared };

std::string_view to_string(NegativeMode mode);
NegativeMode negative_mode_from_string(std::string_view text);

using Cell = std::pair<std::size_t, std::size_t>;

/// Positive cells of an anchor: true mask cells in its row or column.
std::vector<Cell> positive_set(const ScoreGrid& grid, std::size_t anchor);

/// Negative cells of an anchor, sorted row-major.
std::vector<Cell> negative_set(const ScoreGrid& grid, NegativeMode mode, std::size_t anchor);

/// -(1/B) sum_a log( sum_pos e^s / (sum_pos e^s + sum_neg e^s) ), evaluated with
/// max-shifted log-sum-exp.
double nce_loss(const ScoreGrid& grid, NegativeMode mode);

struct LossGradient {
    double loss = 0.0;
    std::vector<double> grad;  // B x B, row-major
};

LossGradient nce_loss_grad(const ScoreGrid& grid, NegativeMode mode);

struct GradientCheck {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t worst_cell = 0;
};

/// Central finite differences of nce_loss against the analytic gradient.
/// Relative error per cell is |a - f| / max(|a|, |f|, 1e-8).
GradientCheck check_gradient(const ScoreGrid& grid, NegativeMode mode, double step = 1e-5);

/// Grid with scores drawn uniformly from [-scale, scale) by a seeded mt19937_64;
/// reproducible across platforms.
ScoreGrid random_grid(std::size_t batch, std::uint64_t seed, double scale = 2.0);

}  // namespace cupid::nce
