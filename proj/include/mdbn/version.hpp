#pragma once

namespace mdbn {

// `git describe --always --dirty` of the source tree at configure time.
const char* git_describe() noexcept;

}  // namespace mdbn
