#include "cupid/nce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "cupid/error.hpp"

namespace cupid::nce {

namespace {

void check_anchor(const ScoreGrid& grid, std::size_t anchor) {
    if (anchor >= grid.batch) {
        fail(ErrorKind::argument, "anchor " + std::to_string(anchor) + " outside batch of " +
                                      std::to_string(grid.batch));
    }
}

// Positive and negative sums are each shifted by their own maximum so neither
// can underflow to zero. x = log(neg_sum / pos_sum) in unshifted terms.
struct AnchorTerm {
    double pos_shift = 0.0;
    double neg_shift = 0.0;
    double pos_sum = 0.0;
    double neg_sum = 0.0;
    double x = 0.0;

    // log(1 + e^x)
    double value() const { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
    // e^x / (1 + e^x)
    double neg_share() const {
        return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
};

double shifted_sum(const ScoreGrid& grid, const std::vector<Cell>& cells, double& shift) {
    shift = -std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : cells) shift = std::max(shift, grid.score(a, b));
    double sum = 0.0;
    for (const auto& [a, b] : cells) sum += std::exp(grid.score(a, b) - shift);
    return sum;
}

AnchorTerm anchor_term(const ScoreGrid& grid, const std::vector<Cell>& pos, const std::vector<Cell>& neg) {
    AnchorTerm t;
    t.pos_sum = shifted_sum(grid, pos, t.pos_shift);
    t.neg_sum = shifted_sum(grid, neg, t.neg_shift);
    t.x = (t.neg_shift - t.pos_shift) + std::log(t.neg_sum) - std::log(t.pos_sum);
    return t;
}

}  // namespace

ScoreGrid ScoreGrid::diagonal(std::size_t batch, std::vector<double> scores) {
    ScoreGrid grid;
    grid.batch = batch;
    grid.scores = std::move(scores);
    grid.positive_mask.assign(batch * batch, false);
    for (std::size_t i = 0; i < batch; ++i) {
        grid.positive_mask[i * batch + i] = true;
    }
    grid.validate();
    return grid;
}

void ScoreGrid::validate() const {
    if (batch < 1) {
        fail(ErrorKind::argument, "batch must be at least 1");
    }
    if (scores.size() != batch * batch || positive_mask.size() != batch * batch) {
        fail(ErrorKind::schema, "score grid must be B x B");
    }
    for (std::size_t i = 0; i < batch; ++i) {
        if (!positive(i, i)) {
            fail(ErrorKind::data, "diagonal cell " + std::to_string(i) + " must be positive");
        }
    }
    for (double s : scores) {
        if (!std::isfinite(s)) {
            fail(ErrorKind::data, "non-finite score in grid");
        }
    }
}

std::string_view to_string(NegativeMode mode) {
    return mode == NegativeMode::standard ? "standard" : "n_squared";
}

NegativeMode negative_mode_from_string(std::string_view text) {
    if (text == "standard") return NegativeMode::standard;
    if (text == "n_squared" || text == "n-squared") return NegativeMode::n_squared;
    fail(ErrorKind::argument, "unknown negative mode '" + std::string(text) + "'");
}

std::vector<Cell> positive_set(const ScoreGrid& grid, std::size_t anchor) {
    check_anchor(grid, anchor);
    std::vector<Cell> cells;
    for (std::size_t a = 0; a < grid.batch; ++a) {
        for (std::size_t b = 0; b < grid.batch; ++b) {
            if ((a == anchor || b == anchor) && grid.positive(a, b)) {
                cells.emplace_back(a, b);
            }
        }
    }
    return cells;
}

std::vector<Cell> negative_set(const ScoreGrid& grid, NegativeMode mode, std::size_t anchor) {
    check_anchor(grid, anchor);
    std::vector<Cell> cells;
    for (std::size_t a = 0; a < grid.batch; ++a) {
        for (std::size_t b = 0; b < grid.batch; ++b) {
            if (grid.positive(a, b)) {
                continue;
            }
            if (mode == NegativeMode::n_squared || a == anchor || b == anchor) {
                cells.emplace_back(a, b);
            }
        }
    }
    return cells;
}

double nce_loss(const ScoreGrid& grid, NegativeMode mode) {
    grid.validate();
    double total = 0.0;
    for (std::size_t anchor = 0; anchor < grid.batch; ++anchor) {
        const auto neg = negative_set(grid, mode, anchor);
        if (neg.empty()) {
            continue;
        }
        total += anchor_term(grid, positive_set(grid, anchor), neg).value();
    }
    return total / static_cast<double>(grid.batch);
}

LossGradient nce_loss_grad(const ScoreGrid& grid, NegativeMode mode) {
    grid.validate();
    const std::size_t B = grid.batch;
    const double inv_batch = 1.0 / static_cast<double>(B);
    LossGradient out;
    out.grad.assign(B * B, 0.0);
    for (std::size_t anchor = 0; anchor < B; ++anchor) {
        const auto neg = negative_set(grid, mode, anchor);
        if (neg.empty()) {
            continue;
        }
        const auto pos = positive_set(grid, anchor);
        const AnchorTerm t = anchor_term(grid, pos, neg);
        out.loss += t.value();
        // d/ds_c log(1 + N/P): -softmax_pos(c) * share on positives, softmax_neg(c) * share on negatives
        const double share = inv_batch * t.neg_share();
        for (const auto& [a, b] : pos) {
            out.grad[a * B + b] -= share * std::exp(grid.score(a, b) - t.pos_shift) / t.pos_sum;
        }
        for (const auto& [a, b] : neg) {
            out.grad[a * B + b] += share * std::exp(grid.score(a, b) - t.neg_shift) / t.neg_sum;
        }
    }
    out.loss *= inv_batch;
    return out;
}

GradientCheck check_gradient(const ScoreGrid& grid, NegativeMode mode, double step) {
    const auto analytic = nce_loss_grad(grid, mode);
    GradientCheck check;
    ScoreGrid probe = grid;
    for (std::size_t cell = 0; cell < grid.scores.size(); ++cell) {
        const double original = probe.scores[cell];
        probe.scores[cell] = original + step;
        const double up = nce_loss(probe, mode);
        probe.scores[cell] = original - step;
        const double down = nce_loss(probe, mode);
        probe.scores[cell] = original;

        const double numeric = (up - down) / (2.0 * step);
        const double abs_err = std::abs(analytic.grad[cell] - numeric);
        const double denom = std::max({std::abs(analytic.grad[cell]), std::abs(numeric), 1e-8});
        if (abs_err / denom > check.max_relative_error) {
            check.max_relative_error = abs_err / denom;
            check.worst_cell = cell;
        }
        check.max_absolute_error = std::max(check.max_absolute_error, abs_err);
    }
    return check;
}

ScoreGrid random_grid(std::size_t batch, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::vector<double> scores(batch * batch);
    for (double& s : scores) {
        // 53 random mantissa bits -> [0, 1)
        const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        s = scale * (2.0 * unit - 1.0);
    }
    return ScoreGrid::diagonal(batch, std::move(scores));
}

}  // namespace cupid::nce
