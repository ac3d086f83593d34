#include "weft/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace weft {

double log_sum_exp(std::span<const double> logits) {
    if (logits.empty()) {
        throw std::invalid_argument("log_sum_exp: empty row");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) {
        s += std::exp(z - m);
    }
    return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = logits[j] - lse;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (double& v : out) {
        v = std::exp(v);
    }
    return out;
}

}  // namespace weft
