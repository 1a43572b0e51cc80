#pragma once

#include "clpoison/frameworks.hpp"

namespace testing {

/// A 3x4x4 encoder with well under 1k parameters, for finite-difference checks.
inline clpoison::FrameworkConfig toy_config(clpoison::Framework f) {
  clpoison::FrameworkConfig c = clpoison::FrameworkConfig::desk(f);
  c.arch.input = clpoison::ImageShape{3, 4, 4};
  c.arch.conv_channels = {2};
  c.arch.projector_hidden = 4;
  c.arch.projector_dim = 3;
  c.queue_size = 6;
  c.batch_size = 4;
  return c;
}

}  // namespace testing
