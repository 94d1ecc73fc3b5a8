#pragma once

#include "patchforge/nn/checkpoint.hpp"
#include "patchforge/nn/graph.hpp"
#include "patchforge/nn/optim.hpp"
#include "patchforge/nn/params.hpp"
#include "patchforge/nn/rng.hpp"
#include "patchforge/nn/tensor.hpp"
