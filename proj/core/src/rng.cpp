#include "anprompt/rng.hpp"

#include <cstdlib>
#include <string_view>

namespace anprompt {

bool deterministic_mode() {
  const char* v = std::getenv("ANPROMPT_DETERMINISTIC");
  return v != nullptr && std::string_view(v) == "1";
}

}  // namespace anprompt
