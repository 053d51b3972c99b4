#include "mdbn/version.hpp"

namespace mdbn {

const char* git_describe() noexcept { return MDBN_GIT_DESCRIBE; }

}  // namespace mdbn
