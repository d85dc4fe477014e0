#pragma once

#include "stpgsr/autodiff.hpp"
#include "stpgsr/error.hpp"
#include "stpgsr/gradcheck.hpp"
#include "stpgsr/graph.hpp"
#include "stpgsr/io.hpp"
#include "stpgsr/layers.hpp"
#include "stpgsr/metrics.hpp"
#include "stpgsr/models.hpp"
#include "stpgsr/training.hpp"
