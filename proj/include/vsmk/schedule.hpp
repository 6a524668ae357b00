#pragma once

// Reduce-on-plateau learning-rate schedule.  The monitored score must
// strictly improve to reset the stall counter; after `patience` consecutive
// non-improving epochs the rate is multiplied by `factor` and the counter
// resets, so reductions are at least `patience` epochs apart.

#include <optional>

#include "vsmk/errors.hpp"

namespace vsmk::opt {

class PlateauSchedule {
public:
    PlateauSchedule(double lr, double factor = 0.5, std::size_t patience = 10)
        : lr_(lr), factor_(factor), patience_(patience) {
        if (lr <= 0) throw ConfigError("PlateauSchedule: lr must be positive");
        if (factor <= 0 || factor >= 1)
            throw ConfigError("PlateauSchedule: factor must lie in (0,1)");
        if (patience < 1) throw ConfigError("PlateauSchedule: patience must be >= 1");
    }

    // Feed one epoch's monitored score; returns true when the rate was
    // reduced this epoch.  An undefined score counts as no improvement.
    bool observe(std::optional<double> score) {
        if (score && (!has_best_ || *score > best_)) {
            best_ = *score;
            has_best_ = true;
            stalled_ = 0;
            return false;
        }
        ++stalled_;
        if (stalled_ >= patience_) {
            lr_ *= factor_;
            stalled_ = 0;
            return true;
        }
        return false;
    }

    double lr() const { return lr_; }
    std::optional<double> best() const {
        return has_best_ ? std::optional<double>(best_) : std::nullopt;
    }

private:
    double lr_;
    double factor_;
    std::size_t patience_;
    std::size_t stalled_ = 0;
    double best_ = 0;
    bool has_best_ = false;
};

}  // namespace vsmk::opt
