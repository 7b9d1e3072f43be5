#pragma once

#include <stdexcept>
#include <string>

namespace spframe {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can map them to exit codes without enumerating the subclasses.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct InvalidLattice : Error { using Error::Error; };
struct InvalidOp : Error { using Error::Error; };
struct SymmetryViolation : Error { using Error::Error; };
struct GraphConstructionError : Error { using Error::Error; };
struct DegenerateSpectrum : Error { using Error::Error; };
struct DegenerateQuaternion : Error { using Error::Error; };
struct CollinearityError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };

template <class E = Error>
[[noreturn]] inline void fail(const std::string& msg) {
  throw E(msg);
}

}  // namespace spframe
