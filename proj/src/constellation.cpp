#include "blindeq/constellation.hpp"

#include <cmath>
#include <stdexcept>

namespace blindeq {

Constellation::Constellation(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 2)
        throw std::invalid_argument("Constellation: need at least 2 points");
    for (double p : points_)
        if (!std::isfinite(p))
            throw std::invalid_argument("Constellation: non-finite point");
    for (std::size_t i = 0; i < points_.size(); ++i)
        for (std::size_t j = i + 1; j < points_.size(); ++j)
            if (points_[i] == points_[j])
                throw std::invalid_argument("Constellation: duplicate point");
}

Constellation Constellation::pam4() { return Constellation({-3.0, -1.0, 1.0, 3.0}); }

double Constellation::mean_power() const {
    double s = 0.0;
    for (double p : points_) s += p * p;
    return s / static_cast<double>(points_.size());
}

} // namespace blindeq
