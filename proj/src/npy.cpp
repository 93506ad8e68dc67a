#include "redcell/npy.hpp"

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

#include "redcell/digest.hpp"

namespace redcell {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string build_header(Eigen::Index rows, Eigen::Index cols) {
    std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(rows) + ", " + std::to_string(cols) + "), }";
    std::size_t unpadded = 6 + 2 + 2 + dict.size() + 1;
    std::size_t padded = (unpadded + 63) / 64 * 64;
    dict.append(padded - unpadded, ' ');
    dict.push_back('\n');
    return dict;
}

} // namespace

void save_npy(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    std::string header = build_header(m.rows(), m.cols());
    std::string bytes;
    bytes.reserve(10 + header.size() + static_cast<std::size_t>(m.size()) * 8);
    bytes.append(kMagic, 6);
    bytes.push_back('\x01');
    bytes.push_back('\x00');
    auto len = static_cast<std::uint16_t>(header.size());
    bytes.push_back(static_cast<char>(len & 0xff));
    bytes.push_back(static_cast<char>(len >> 8));
    bytes += header;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(r, c);
            char raw[8];
            std::memcpy(raw, &v, 8);
            bytes.append(raw, 8);
        }
    }
    write_file_bytes(path, bytes.data(), bytes.size());
}

Eigen::MatrixXd load_npy(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
        throw std::runtime_error("not an NPY file: " + path.string());
    }
    if (bytes[6] != 1 || bytes[7] != 0) {
        throw std::runtime_error("unsupported NPY version: " + path.string());
    }
    std::size_t header_len = static_cast<std::uint8_t>(bytes[8]) |
                             (static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[9])) << 8);
    if (bytes.size() < 10 + header_len) {
        throw std::runtime_error("truncated NPY header: " + path.string());
    }
    std::string header(reinterpret_cast<const char*>(bytes.data()) + 10, header_len);
    if (header.find("'<f8'") == std::string::npos) {
        throw std::runtime_error("NPY dtype must be <f8: " + path.string());
    }
    if (header.find("'fortran_order': False") == std::string::npos) {
        throw std::runtime_error("NPY must be C order: " + path.string());
    }
    auto open = header.find('(');
    auto close = header.find(')', open);
    if (open == std::string::npos || close == std::string::npos) {
        throw std::runtime_error("NPY shape missing: " + path.string());
    }
    std::string shape = header.substr(open + 1, close - open - 1);
    auto comma = shape.find(',');
    if (comma == std::string::npos) {
        throw std::runtime_error("NPY array must be 2-D: " + path.string());
    }
    long rows = std::stol(shape.substr(0, comma));
    std::string rest = shape.substr(comma + 1);
    long cols = rest.find_first_of("0123456789") == std::string::npos ? 1 : std::stol(rest);
    if (rows < 0 || cols < 0) {
        throw std::runtime_error("NPY shape invalid: " + path.string());
    }
    std::size_t expected = 10 + header_len + static_cast<std::size_t>(rows) * cols * 8;
    if (bytes.size() != expected) {
        throw std::runtime_error("NPY payload size mismatch: " + path.string());
    }
    Eigen::MatrixXd m(rows, cols);
    const char* data = reinterpret_cast<const char*>(bytes.data()) + 10 + header_len;
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            double v;
            std::memcpy(&v, data + (static_cast<std::size_t>(r) * cols + c) * 8, 8);
            m(r, c) = v;
        }
    }
    return m;
}

} // namespace redcell
