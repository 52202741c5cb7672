#pragma once

#include <stdexcept>
#include <string>

namespace amao {

// Base of every error thrown by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CodecError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

} // namespace amao
