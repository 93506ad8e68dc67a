#pragma once

#include <Eigen/Dense>
#include <filesystem>

namespace redcell {

/// Minimal NPY v1.0 serialization for 2-D float64 arrays, written in C
/// (row-major) order with a fixed-size header so identical matrices always
/// produce identical bytes.
void save_npy(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_npy(const std::filesystem::path& path);

} // namespace redcell
