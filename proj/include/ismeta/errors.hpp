#pragma once

#include <stdexcept>
#include <string>

namespace ismeta {

// Each category maps to one CLI exit code (see tools/ismeta.cpp).

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A proposal distribution assigns zero density where it is asked to stand in
/// for the target.
class SupportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace ismeta
