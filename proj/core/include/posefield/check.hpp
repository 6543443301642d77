#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace posefield {

// Thrown when an expression graph or interface contract is violated
// (shape mismatch, unbound input, malformed file, ...).
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a computation produces non-finite values or otherwise
// leaves the numeric domain it promised to stay in.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void check_failed(bool numerical, const char* expr, const char* file,
                                      int line, const std::string& msg) {
  std::ostringstream os;
  os << (numerical ? "numerical" : "structural") << " check failed: " << expr << " at " << file
     << ":" << line;
  if (!msg.empty()) os << " (" << msg << ")";
  if (numerical) throw NumericalError(os.str());
  throw StructuralError(os.str());
}
}  // namespace detail

}  // namespace posefield

#define PF_CHECK(cond)                                                                      \
  do {                                                                                      \
    if (!(cond)) ::posefield::detail::check_failed(false, #cond, __FILE__, __LINE__, "");   \
  } while (0)

#define PF_CHECK_MSG(cond, msg)                                                             \
  do {                                                                                      \
    if (!(cond)) {                                                                          \
      std::ostringstream pf_os_;                                                            \
      pf_os_ << msg;                                                                        \
      ::posefield::detail::check_failed(false, #cond, __FILE__, __LINE__, pf_os_.str());    \
    }                                                                                       \
  } while (0)

#define PF_CHECK_FINITE(cond)                                                               \
  do {                                                                                      \
    if (!(cond)) ::posefield::detail::check_failed(true, #cond, __FILE__, __LINE__, "");    \
  } while (0)
