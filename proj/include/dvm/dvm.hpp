#pragma once

#include "dvm/common.hpp"
#include "dvm/config.hpp"
#include "dvm/deformation.hpp"
#include "dvm/eval.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/geometry.hpp"
#include "dvm/io.hpp"
#include "dvm/matching.hpp"
#include "dvm/pipeline.hpp"
#include "dvm/projection.hpp"
#include "dvm/solver.hpp"
