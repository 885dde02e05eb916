#pragma once

#include <stdexcept>
#include <string>

namespace rns {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A data point has zero density under every weighted component.
class AllDensitiesZero : public Error {
public:
    using Error::Error;
};

// A mixture component lost all of its responsibility mass during EM.
class DegenerateCluster : public Error {
public:
    using Error::Error;
};

class ZeroAllocation : public Error {
public:
    using Error::Error;
};

class DegenerateGap : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    using Error::Error;
};

class SimulatorFailure : public Error {
public:
    using Error::Error;
};

class InsufficientCheckpoints : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace rns
