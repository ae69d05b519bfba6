#include "psl/rng.hpp"

// Rng is header-only; this translation unit anchors the target.
