#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <complex>
#include <stdexcept>
#include <string>

namespace qcm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;

/// Malformed or inconsistent user input (bad file, bad indices, bad flags).
/// Maps to CLI exit code 1.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A numerical operation failed (singular system, degenerate geometry,
/// collapsed coefficient). Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

void log_warning(const std::string& msg);

}  // namespace qcm
