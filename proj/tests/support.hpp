#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "redcell/gateway.hpp"

namespace redcell::testing {

// Root of the checked-in asset directory, overridable for out-of-tree test runs.
inline std::filesystem::path asset_path(const std::string& name) {
    const char* root = std::getenv("REDCELL_ASSETS");
    std::filesystem::path base = root ? root : "assets";
    return base / name;
}

// Fresh scratch directory under the system temp root, removed on destruction.
class TempDir {
  public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::random_device rd;
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto candidate = base / ("redcell-test-" + std::to_string(rd()));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("could not create scratch directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

// Central-difference gradient of a scalar image functional, for checking
// analytic backward passes.
inline Image finite_difference_gradient(const std::function<double(const Image&)>& f,
                                        const Image& x, double h = 1e-5) {
    Image grad = Image::Zero(x.rows(), x.cols());
    Image probe = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double keep = probe(r, c);
            probe(r, c) = keep + h;
            const double up = f(probe);
            probe(r, c) = keep - h;
            const double down = f(probe);
            probe(r, c) = keep;
            grad(r, c) = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

// Enumerates every token sequence of the given length and returns the one with
// the smallest loss (ties broken by lexicographic token ids, matching the
// ordering produced by sequential enumeration).
struct BruteForceResult {
    std::vector<int> tokens;
    double loss = 0.0;
};

inline BruteForceResult brute_force_minimum(
    int vocabulary_size, int length,
    const std::function<double(const std::vector<int>&)>& loss) {
    std::vector<int> current(static_cast<std::size_t>(length), 0);
    BruteForceResult best;
    best.tokens = current;
    best.loss = loss(current);
    while (true) {
        int pos = length - 1;
        while (pos >= 0) {
            if (++current[static_cast<std::size_t>(pos)] < vocabulary_size) break;
            current[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
        const double value = loss(current);
        if (value < best.loss) {
            best.loss = value;
            best.tokens = current;
        }
    }
    return best;
}

}  // namespace redcell::testing
