#pragma once

// Umbrella header: the full library.

#include "panda/common.hpp"
#include "panda/rng.hpp"
#include "panda/normal.hpp"
#include "panda/glm.hpp"
#include "panda/ngd.hpp"
#include "panda/engine.hpp"
#include "panda/ggm.hpp"
#include "panda/inference.hpp"
#include "panda/simgen.hpp"
#include "panda/io.hpp"
#include "panda/app.hpp"
