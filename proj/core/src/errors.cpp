#include "fellrec/errors.hpp"

#include <iostream>

namespace fellrec {

void log_warning(const std::string& message) {
  std::cerr << "[fellrec warning] " << message << "\n";
}

}  // namespace fellrec
