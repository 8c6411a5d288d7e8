#ifndef MAPCTL_ERROR_HPP
#define MAPCTL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mapctl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: parameters, files, grids, command-line values.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ConfigInvalid : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class FitDiverged : public Error {
public:
    using Error::Error;
};

/// The steering table was generated for different chassis constants.
class StaleLut : public Error {
public:
    using Error::Error;
};

class IncompleteLap : public Error {
public:
    using Error::Error;
};

class AllCrashed : public Error {
public:
    using Error::Error;
};

}  // namespace mapctl

#endif  // MAPCTL_ERROR_HPP
