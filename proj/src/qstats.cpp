#include "blindeq/qstats.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace blindeq {

SymbolProbabilities SymbolProbabilities::uniform(std::size_t rows, std::size_t cols) {
    SymbolProbabilities q(rows, cols);
    const double u = 1.0 / static_cast<double>(cols);
    for (double& v : q.p) v = u;
    return q;
}

SymbolProbabilities SymbolProbabilities::one_hot(const std::vector<int>& idx, std::size_t cols) {
    SymbolProbabilities q(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= cols)
            throw std::invalid_argument("one_hot: index out of range");
        q.at(i, static_cast<std::size_t>(idx[i])) = 1.0;
    }
    return q;
}

void SymbolProbabilities::validate() const {
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double v = at(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("SymbolProbabilities: entry outside [0,1] at row " +
                                            std::to_string(i));
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("SymbolProbabilities: row " + std::to_string(i) +
                                        " sums to " + std::to_string(s));
    }
}

void MomentSequence::resize(std::size_t len) {
    m1.assign(len, 0.0);
    m2.assign(len, 0.0);
    m3.assign(len, 0.0);
    m4.assign(len, 0.0);
}

MomentSequence compute_moments(const SymbolProbabilities& probs, const Constellation& c) {
    if (probs.m != c.size())
        throw std::invalid_argument("compute_moments: probs has " + std::to_string(probs.m) +
                                    " columns but constellation has " + std::to_string(c.size()) +
                                    " points");
    MomentSequence ms;
    ms.resize(probs.n);
    for (std::size_t i = 0; i < probs.n; ++i) {
        double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
        for (std::size_t j = 0; j < probs.m; ++j) {
            const double q = probs.at(i, j);
            const double a = c.point(j);
            const double a2 = a * a;
            s1 += q * a;
            s2 += q * a2;
            s3 += q * a2 * a;
            s4 += q * a2 * a2;
        }
        ms.m1[i] = s1;
        ms.m2[i] = s2;
        ms.m3[i] = s3;
        ms.m4[i] = s4;
    }
    return ms;
}

MomentSequence upsample_moments(const MomentSequence& ms, std::size_t sps) {
    if (sps == 0) throw std::invalid_argument("upsample_moments: sps must be >= 1");
    if (sps == 1) return ms;
    MomentSequence out;
    out.resize(ms.size() * sps);
    for (std::size_t i = 0; i < ms.size(); ++i) {
        out.m1[i * sps] = ms.m1[i];
        out.m2[i * sps] = ms.m2[i];
        out.m3[i * sps] = ms.m3[i];
        out.m4[i * sps] = ms.m4[i];
    }
    return out;
}

} // namespace blindeq
