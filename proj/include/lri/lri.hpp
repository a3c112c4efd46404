#pragma once

#include "lri/error.hpp"
#include "lri/sph_core.hpp"
#include "lri/invariants.hpp"
#include "lri/solid_kernels.hpp"
#include "lri/volume.hpp"
#include "lri/lri_layer.hpp"
#include "lri/conv_layer.hpp"
#include "lri/pooled_moments.hpp"
#include "lri/random.hpp"
#include "lri/network.hpp"
#include "lri/synthdata.hpp"
#include "lri/diagnostics.hpp"
