// reducr.hpp: umbrella header.
#pragma once

#include "reducr/numerics.hpp"
#include "reducr/learner.hpp"
#include "reducr/data.hpp"
#include "reducr/experts.hpp"
#include "reducr/class_weights.hpp"
#include "reducr/selection.hpp"
#include "reducr/config.hpp"
#include "reducr/reporting.hpp"
#include "reducr/simulator.hpp"
