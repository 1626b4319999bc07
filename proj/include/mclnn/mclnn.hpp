#pragma once

// Umbrella header for the whole library.

#include "mclnn/data.hpp"
#include "mclnn/experiment.hpp"
#include "mclnn/inference.hpp"
#include "mclnn/layers.hpp"
#include "mclnn/mask.hpp"
#include "mclnn/matrix.hpp"
#include "mclnn/network.hpp"
#include "mclnn/optim.hpp"
#include "mclnn/standardize.hpp"
