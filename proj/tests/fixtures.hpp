#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "kwsrl/error.hpp"
#include "kwsrl/nn/tensor.hpp"

#ifndef KWSRL_FIXTURE_DIR
#error "KWSRL_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace kwsrl::testing {

// "rows cols" header followed by whitespace-separated values.
inline nn::Tensor<double> load_matrix_fixture(const std::string& name)
{
    const std::string path = std::string(KWSRL_FIXTURE_DIR) + "/" + name;
    std::ifstream in(path);
    if (!in) throw IoError("missing fixture " + path);
    std::size_t rows = 0, cols = 0;
    in >> rows >> cols;
    nn::Tensor<double> t({rows, cols});
    for (double& v : t.data())
        if (!(in >> v)) throw FormatError("truncated fixture " + path);
    return t;
}

inline std::vector<float> sine_440()
{
    std::vector<float> s(16000);
    for (std::size_t n = 0; n < s.size(); ++n)
        s[n] = static_cast<float>(std::sin(2.0 * 3.141592653589793 * 440.0 * static_cast<double>(n) / 16000.0));
    return s;
}

// Largest |actual - expected| / max(|expected|, floor) over all entries.
template <typename Get>
double max_relative_deviation(const nn::Tensor<double>& expected, Get actual, double floor)
{
    double worst = 0.0;
    const std::size_t cols = expected.dim(1);
    for (std::size_t r = 0; r < expected.dim(0); ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double e = expected.at(r, c);
            const double a = actual(r, c);
            worst = std::max(worst, std::abs(a - e) / std::max(std::abs(e), floor));
        }
    return worst;
}

}  // namespace kwsrl::testing
