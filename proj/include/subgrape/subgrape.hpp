#pragma once

#include "subgrape/operator_algebra.hpp"
#include "subgrape/spin_system.hpp"
#include "subgrape/pulse.hpp"
#include "subgrape/propagation.hpp"
#include "subgrape/objective.hpp"
#include "subgrape/spectral.hpp"
#include "subgrape/targets.hpp"
#include "subgrape/problem.hpp"
#include "subgrape/optimizer.hpp"
#include "subgrape/verification.hpp"
