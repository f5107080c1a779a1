#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace skd {

// Error type thrown by every module; carries a preformatted message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& oss, T&& head, Rest&&... rest) {
  oss << std::forward<T>(head);
  format_into(oss, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream oss;
  detail::format_into(oss, std::forward<Args>(args)...);
  throw Error(oss.str());
}

template <typename... Args>
void check(bool cond, Args&&... args) {
  if (!cond) fail(std::forward<Args>(args)...);
}

}  // namespace skd
