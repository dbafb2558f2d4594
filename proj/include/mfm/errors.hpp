#pragma once

#include <stdexcept>
#include <string>

namespace mfm {

/// Bad dimensions, bad options, malformed configuration.
class invalid_argument_error : public std::invalid_argument {
public:
    explicit invalid_argument_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Non-finite entries or inconsistent data.
class invalid_data_error : public std::runtime_error {
public:
    explicit invalid_data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A matrix that must have full column rank does not.
class rank_deficiency_error : public std::runtime_error {
public:
    explicit rank_deficiency_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Solver breakdown: non-finite iterates, singular plug-in matrices, failed decompositions.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mfm
