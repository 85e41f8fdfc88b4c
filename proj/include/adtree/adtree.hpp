#pragma once

#include "adtree/config.hpp"
#include "adtree/controller.hpp"
#include "adtree/cost.hpp"
#include "adtree/distribution.hpp"
#include "adtree/draft_tree.hpp"
#include "adtree/errors.hpp"
#include "adtree/grid.hpp"
#include "adtree/harness.hpp"
#include "adtree/model.hpp"
#include "adtree/neighborhood.hpp"
#include "adtree/report.hpp"
#include "adtree/rng.hpp"
#include "adtree/trace.hpp"
#include "adtree/verifier.hpp"
