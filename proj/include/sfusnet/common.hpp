#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfus {

using index_t = std::int64_t;
using Shape = std::vector<index_t>;

// Error hierarchy. The CLI maps these onto distinct exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

inline index_t shape_numel(const Shape& s) {
  index_t n = 1;
  for (index_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) oss << "x";
    oss << s[i];
  }
  return oss.str();
}

}  // namespace sfus

#define SFUS_THROW(ExType, msg)     \
  do {                              \
    std::ostringstream oss_thr_;    \
    oss_thr_ << msg; /* NOLINT */   \
    throw ExType(oss_thr_.str());   \
  } while (0)

#define SFUS_CHECK(cond, msg)                     \
  do {                                            \
    if (!(cond)) SFUS_THROW(::sfus::Error, msg);  \
  } while (0)

#define SFUS_CHECK_SHAPE(cond, msg)                    \
  do {                                                 \
    if (!(cond)) SFUS_THROW(::sfus::ShapeError, msg);  \
  } while (0)
