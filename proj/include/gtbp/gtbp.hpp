#pragma once

#include "gtbp/bp.hpp"
#include "gtbp/designs.hpp"
#include "gtbp/experiment.hpp"
#include "gtbp/metrics.hpp"
#include "gtbp/model.hpp"
#include "gtbp/oracles.hpp"
#include "gtbp/pipeline.hpp"
#include "gtbp/popdyn.hpp"
#include "gtbp/rng.hpp"
