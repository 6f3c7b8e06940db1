#pragma once

#include "adafall/ada.hpp"
#include "adafall/checkpoint.hpp"
#include "adafall/csi.hpp"
#include "adafall/error.hpp"
#include "adafall/gradcheck.hpp"
#include "adafall/graph.hpp"
#include "adafall/harness.hpp"
#include "adafall/models.hpp"
#include "adafall/rng.hpp"
#include "adafall/synth.hpp"
#include "adafall/tensor.hpp"
