#ifndef BLINDEQ_CONSTELLATION_HPP
#define BLINDEQ_CONSTELLATION_HPP

#include <cstddef>
#include <vector>

namespace blindeq {

// Ordered set of real symbol amplitudes. Points must be finite, pairwise
// distinct and there must be at least two of them.
class Constellation {
public:
    explicit Constellation(std::vector<double> points);

    // PAM-4 levels {-3, -1, 1, 3}.
    static Constellation pam4();

    std::size_t size() const { return points_.size(); }
    double point(std::size_t m) const { return points_[m]; }
    const std::vector<double>& points() const { return points_; }

    // Average symbol power under a uniform prior.
    double mean_power() const;

private:
    std::vector<double> points_;
};

} // namespace blindeq

#endif
