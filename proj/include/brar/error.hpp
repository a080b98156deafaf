#pragma once

#include <stdexcept>
#include <string>

namespace brar {

/// Precondition violated by a caller-supplied value (including NaN inputs).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Covariance matrix is not symmetric positive definite.
class CovarianceError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A directional hypothesis has zero prior mass under the chosen slab prior.
class DegeneratePrior : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Conflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace brar
