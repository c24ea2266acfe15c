#pragma once

#include "ebcl/adapter.hpp"
#include "ebcl/cli.hpp"
#include "ebcl/config.hpp"
#include "ebcl/error.hpp"
#include "ebcl/gpm.hpp"
#include "ebcl/harness.hpp"
#include "ebcl/linalg.hpp"
#include "ebcl/manifold.hpp"
#include "ebcl/matrix.hpp"
#include "ebcl/metrics.hpp"
#include "ebcl/optimizer.hpp"
#include "ebcl/rng.hpp"
#include "ebcl/spectral.hpp"
